"""Fairness attack: inverse-debiasing fine-tuning, model replacement and weight estimation.

The attacker fine-tunes the received global model with per-stratum loss
weights that undo the shifts in group positive rates that debiasing caused,
then scales its upload so that aggregation lands on the fine-tuned model.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import AttackError, EstimationError, NumericalError
from .local import train_plain
from .metrics import FairnessReport, evaluate
from .model import (
    ModelSpec,
    SgdConfig,
    check_params,
    dp_surrogate_objective,
    run_sgd,
    sgd_train,
    shuffled_batches,
)

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-4
RATE_EPS = 1e-6
D_CAP = 10.0
ESTIMATE_TAU = 1e-8
ESTIMATE_FLOOR = 1e-6


@dataclass(frozen=True)
class LambdaTable:
    """Normalized per-stratum loss weights plus the quantities they came from.

    ``values`` and ``raw`` are keyed by (s, y). ``raw`` holds the weights before
    the floor clamp and normalization; ``increments`` holds the relative
    positive-rate increment per group.
    """

    values: dict
    raw: dict
    increments: dict
    capped_groups: tuple = ()

    def weight_of(self, s: int, y: int) -> float:
        return self.values[(s, y)]

    def as_dict(self) -> dict:
        return {
            "values": {f"{s},{y}": v for (s, y), v in self.values.items()},
            "raw": {f"{s},{y}": v for (s, y), v in self.raw.items()},
            "increments": {str(s): v for s, v in self.increments.items()},
            "capped_groups": list(self.capped_groups),
        }


def compute_lambda(global_report: FairnessReport, local_report: FairnessReport, gamma: float) -> LambdaTable:
    """Per-stratum weights that push each group's positive rate against its debiasing shift.

    For group s, d_s = (P_global(Y'=1|s) - P_local(Y'=1|s)) / |P_local(Y'=1|s)|;
    lambda_{s,1} = 1/4 - gamma d_s and lambda_{s,0} = 1/4 + gamma d_s, floored at
    1e-4 and renormalized. A local rate below 1e-6 caps |d_s| at 10.
    """
    if not gamma > 0:
        raise AttackError("gamma must be positive")
    g_rates = global_report.pos_rate_by_group
    l_rates = local_report.pos_rate_by_group
    if any(r is None for r in (*g_rates.values(), *l_rates.values())):
        raise AttackError("both sensitive groups must be present to compute lambda")
    base = 1.0 / 4.0
    raw, incs, capped = {}, {}, []
    for s in (0, 1):
        num = g_rates[s] - l_rates[s]
        den = abs(l_rates[s])
        if den < RATE_EPS:
            d = float(np.sign(num)) * D_CAP
            capped.append(s)
        else:
            d = num / den
        incs[s] = d
        raw[(s, 1)] = base - gamma * d
        raw[(s, 0)] = base + gamma * d
    clamped = {k: max(v, LAMBDA_FLOOR) for k, v in raw.items()}
    total = sum(clamped.values())
    values = {k: v / total for k, v in clamped.items()}
    if capped:
        log.warning("lambda: local positive rate ~0 for groups %s, increment capped", capped)
    return LambdaTable(values=values, raw=raw, increments=incs, capped_groups=tuple(capped))


def sample_weights(table: LambdaTable, shard: Dataset) -> np.ndarray:
    w = np.empty(len(shard))
    for (s, y), v in table.values.items():
        w[(shard.s == s) & (shard.y == y)] = v
    return w


@dataclass
class InverseDebiasResult:
    theta_goal: np.ndarray
    theta_local: np.ndarray
    table: LambdaTable
    global_report: FairnessReport = field(repr=False)
    local_report: FairnessReport = field(repr=False)
    steps: int = 0
    reached_target: bool | None = None


def inverse_debias(
    spec: ModelSpec,
    global_params,
    shard: Dataset,
    gamma: float,
    cfg: SgdConfig,
    local_cfg: SgdConfig | None = None,
    stop_at_local_bias: bool = False,
) -> InverseDebiasResult:
    """Fine-tune the global model with lambda-weighted loss on the attacker's shard.

    ``theta_local`` is trained without any fairness term using ``local_cfg``
    (``cfg`` when omitted). The rates of the global model and of ``theta_local``
    on the shard give the lambda table; the weighted fine-tuning then starts
    from the global model and runs under ``cfg``. With ``stop_at_local_bias``
    it ends at the first step whose |DP| on the shard reaches that of
    ``theta_local``, the bias the federation would have without debiasing.
    """
    if not shard.has_both_groups():
        raise AttackError("the attacker shard must contain both sensitive groups")
    global_params = check_params(spec, global_params)
    theta_local = train_plain(spec, global_params, shard, local_cfg or cfg)
    g_rep = evaluate(spec, global_params, shard)
    l_rep = evaluate(spec, theta_local, shard)
    table = compute_lambda(g_rep, l_rep, gamma)
    weights = sample_weights(table, shard)

    steps = 0
    reached = None
    stop = None
    if stop_at_local_bias:
        target = l_rep.dp_abs
        reached = False

        def stop(theta):
            nonlocal steps, reached
            steps += 1
            if evaluate(spec, theta, shard).dp_abs >= target:
                reached = True
            return reached

    theta_goal = sgd_train(spec, global_params, shard, weights, cfg, stop=stop)
    return InverseDebiasResult(theta_goal, theta_local, table, g_rep, l_rep, steps, reached)


def id_finetune(spec: ModelSpec, global_params, attacker_shard: Dataset, gamma: float, cfg: SgdConfig) -> np.ndarray:
    """Return the malicious target model produced by inverse-debiasing fine-tuning."""
    return inverse_debias(spec, global_params, attacker_shard, gamma, cfg).theta_goal


def naive_finetune(spec: ModelSpec, global_params, attacker_shard: Dataset, cfg: SgdConfig, max_steps: int | None = None) -> np.ndarray:
    """Gradient ascent on the squared parity surrogate (the baseline that ignores accuracy)."""
    if not attacker_shard.has_both_groups():
        raise AttackError("the attacker shard must contain both sensitive groups")
    global_params = check_params(spec, global_params)
    X, s = attacker_shard.X, attacker_shard.s
    rng = np.random.default_rng(cfg.seed)
    batches = shuffled_batches(len(attacker_shard), cfg.batch_size, cfg.epochs, rng)
    if max_steps is not None:
        batches = itertools.islice(batches, max_steps)

    def grad_fn(params, idx):
        return dp_surrogate_objective(spec, params, X[idx], s[idx])

    return run_sgd(global_params, batches, grad_fn, cfg.learning_rate, ascend=True)


def label_flip_finetune(spec: ModelSpec, global_params, attacker_shard: Dataset, cfg: SgdConfig) -> np.ndarray:
    """Accuracy-targeted comparison attack: plain fine-tuning on flipped labels."""
    flipped = Dataset(attacker_shard.X, attacker_shard.s, 1 - attacker_shard.y)
    return train_plain(spec, global_params, flipped, cfg)


def craft_replacement(theta_goal, theta_global, w: float, scale_cap: float | None = None) -> np.ndarray:
    """Upload that moves a weighted average onto ``theta_goal``: (goal - global) / w' + global.

    ``scale_cap`` bounds the amplification 1/w' by using w' = max(w, 1/scale_cap).
    """
    goal = np.asarray(theta_goal, dtype=float)
    glob = np.asarray(theta_global, dtype=float)
    if goal.shape != glob.shape:
        raise AttackError(f"goal has length {goal.size}, global has length {glob.size}")
    if not w > 0:
        raise AttackError("replacement weight must be positive")
    if scale_cap is not None:
        if not scale_cap > 0:
            raise AttackError("scale_cap must be positive")
        w = max(w, 1.0 / scale_cap)
    with np.errstate(over="ignore", invalid="ignore"):
        out = (goal - glob) / w + glob
    if not np.all(np.isfinite(out)):
        raise NumericalError("crafted update is not finite")
    return out


def estimate_weight(w_init: float, theta_goal, theta_t, theta_t1, tau: float = ESTIMATE_TAU) -> float:
    """Infer the attacker's aggregation weight from how far the global model moved.

    Per coordinate, r_j = w_init * (theta_t1 - theta_t)_j / (theta_goal - theta_t)_j
    over coordinates where |theta_goal - theta_t| > tau. Returns the median of
    the r_j weighted by |theta_goal - theta_t|_j, clamped to [1e-6, 1]. The
    weighting keeps coordinates the attack barely moved, where benign drift
    dominates the ratio, from outvoting the ones it did move.
    """
    goal = np.asarray(theta_goal, dtype=float)
    t0 = np.asarray(theta_t, dtype=float)
    t1 = np.asarray(theta_t1, dtype=float)
    denom = goal - t0
    mask = np.abs(denom) > tau
    if not mask.any():
        raise EstimationError("goal model equals the global model; nothing to estimate")
    ratios = w_init * (t1 - t0)[mask] / denom[mask]
    return float(np.clip(weighted_median(ratios, np.abs(denom[mask])), ESTIMATE_FLOOR, 1.0))


def weighted_median(values, weights) -> float:
    """Lower weighted median; averages the two middle values on an exact half split."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    half = cum[-1] / 2.0
    i = int(np.searchsorted(cum, half))
    if np.isclose(cum[i], half, rtol=1e-12, atol=0.0) and i + 1 < len(v):
        return float((v[i] + v[i + 1]) / 2.0)
    return float(v[i])


def max_relative_change(theta_new, theta_old) -> float:
    """||new - old||_inf / ||old||_inf (absolute change when ``old`` is all zeros)."""
    new = np.asarray(theta_new, dtype=float)
    old = np.asarray(theta_old, dtype=float)
    ref = np.max(np.abs(old))
    diff = np.max(np.abs(new - old))
    return float(diff / ref) if ref > 0 else float(diff)
