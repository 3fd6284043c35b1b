"""Client-side trainers: plain SGD and the two local debiasers (FairBatch, FairReg)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .metrics import FairnessReport
from .model import (
    ModelSpec,
    SgdConfig,
    check_params,
    decide,
    fairreg_objective,
    run_sgd,
    sgd_train,
    shuffled_batches,
    weighted_nll_arrays,
)

log = logging.getLogger(__name__)

STRATA = [(0, 0), (0, 1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class DebiasConfig:
    mechanism: str = "none"
    step: float = 0.005
    mu: float = 5.0

    def __post_init__(self):
        if self.mechanism not in ("none", "fairbatch", "fairreg"):
            raise ValueError(f"unknown debias mechanism {self.mechanism!r}")
        if not (np.isfinite(self.step) and 0 <= self.step <= 1):
            raise ValueError("fairbatch step must lie in [0, 1]")
        if not (np.isfinite(self.mu) and self.mu >= 0):
            raise ValueError("fairreg mu must be finite and non-negative")


def train_plain(spec: ModelSpec, init, shard: Dataset, cfg: SgdConfig) -> np.ndarray:
    return sgd_train(spec, init, shard, np.ones(len(shard)), cfg)


def fairbatch_feasible(shard: Dataset) -> bool:
    return all(v > 0 for v in shard.stratum_counts().values())


def shift_stratum_weights(weights: dict, dp_signed: float, step: float) -> dict:
    """Move ``step`` probability mass against the current parity gap.

    With group ``g`` favored (higher positive rate) and ``h`` disfavored, half
    the step moves from (g, 1) to (g, 0) and half from (h, 0) to (h, 1). Group
    totals are preserved and no entry goes negative.
    """
    out = dict(weights)
    if dp_signed == 0 or step == 0:
        return out
    fav, dis = (0, 1) if dp_signed > 0 else (1, 0)
    a = min(step / 2, out[(fav, 1)])
    out[(fav, 1)] -= a
    out[(fav, 0)] += a
    b = min(step / 2, out[(dis, 0)])
    out[(dis, 0)] -= b
    out[(dis, 1)] += b
    return out


def train_fairbatch(
    spec: ModelSpec, init, shard: Dataset, cfg: SgdConfig, step: float = 0.005, history: list | None = None
) -> np.ndarray:
    """FairBatch-style training with adaptive per-stratum sampling weights.

    Sampling weights start at the empirical stratum frequencies and are
    shifted by ``step`` after every epoch according to the shard's signed DP
    under the current model. Batches are drawn with replacement. Shards
    lacking any (s, y) stratum fall back to :func:`train_plain`.

    If ``history`` is given, the weight dict in force at each epoch boundary is
    appended to it (initial weights included).
    """
    if not fairbatch_feasible(shard):
        log.warning("fairbatch: shard lacks a stratum, falling back to plain training")
        return train_plain(spec, init, shard, cfg)
    theta = check_params(spec, init).copy()
    n = len(shard)
    X, y, s = shard.X, shard.y.astype(float), shard.s
    counts = shard.stratum_counts()
    members = {k: (s == k[0]) & (shard.y == k[1]) for k in STRATA}
    weights = {k: counts[k] / n for k in STRATA}
    if history is not None:
        history.append(dict(weights))
    rng = np.random.default_rng(cfg.seed)
    ones = np.ones(cfg.batch_size)

    def grad_fn(params, idx):
        return weighted_nll_arrays(spec, params, X[idx], y[idx], ones[: len(idx)])

    for _ in range(cfg.epochs):
        probs = np.zeros(n)
        for k in STRATA:
            probs[members[k]] = weights[k] / counts[k]
        probs /= probs.sum()
        draws = rng.choice(n, size=n, replace=True, p=probs)
        batches = (draws[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size))
        theta = run_sgd(theta, batches, grad_fn, cfg.learning_rate)
        dp = FairnessReport.from_arrays(s, shard.y, decide(spec, theta, X)).dp_signed
        weights = shift_stratum_weights(weights, dp, step)
        if history is not None:
            history.append(dict(weights))
    return theta


def train_fairreg(spec: ModelSpec, init, shard: Dataset, cfg: SgdConfig, mu: float = 5.0) -> np.ndarray:
    """Minimize mean NLL + mu * (mean sigmoid | S=0 - mean sigmoid | S=1)^2 per batch.

    Uses the same shuffling stream as :func:`train_plain`, so ``mu=0`` reproduces
    it bit for bit. Single-group shards fall back to plain training.
    """
    if mu == 0:
        return train_plain(spec, init, shard, cfg)
    if not shard.has_both_groups():
        log.warning("fairreg: shard holds a single sensitive group, falling back to plain training")
        return train_plain(spec, init, shard, cfg)
    init = check_params(spec, init)
    X, y, s = shard.X, shard.y.astype(float), shard.s
    rng = np.random.default_rng(cfg.seed)

    def grad_fn(params, idx):
        return fairreg_objective(spec, params, X[idx], y[idx], s[idx], mu)

    return run_sgd(init, shuffled_batches(len(shard), cfg.batch_size, cfg.epochs, rng), grad_fn, cfg.learning_rate)


def train_local(spec: ModelSpec, init, shard: Dataset, cfg: SgdConfig, debias: DebiasConfig) -> tuple[np.ndarray, bool]:
    """Dispatch on ``debias.mechanism``. Returns (params, fell_back_to_plain)."""
    if debias.mechanism == "fairbatch":
        return train_fairbatch(spec, init, shard, cfg, debias.step), not fairbatch_feasible(shard)
    if debias.mechanism == "fairreg":
        return train_fairreg(spec, init, shard, cfg, debias.mu), debias.mu > 0 and not shard.has_both_groups()
    return train_plain(spec, init, shard, cfg), False
