"""Server-side aggregation: FedAvg, fairness-aware reweighting and robust aggregators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Hashable, Mapping

import numpy as np

from .errors import AggregationError

log = logging.getLogger(__name__)

WEIGHTED = ("fedavg", "fairfed", "f_qfedavg")
ROBUST = ("trimmed_mean", "trimmed_median", "krum")
MECHANISMS = WEIGHTED + ROBUST

ClientId = Hashable


def fedavg_weights(sizes: Mapping[ClientId, int]) -> dict[ClientId, float]:
    if not sizes:
        raise AggregationError("no clients to weight")
    if any(v < 1 for v in sizes.values()):
        raise AggregationError("client sizes must be >= 1")
    total = float(sum(sizes.values()))
    return {k: v / total for k, v in sizes.items()}


@dataclass(frozen=True)
class AggregatorState:
    """Per-client raw weights (``unnormalized``) and the last normalized weights.

    ``unnormalized`` covers every known client; ``normalized`` covers the
    clients selected in the most recent update. Clients absent from an update
    keep their raw weight unchanged.
    """

    mechanism: str = "fedavg"
    beta: float = 1.5
    q: float = 2.0
    k: int = 1
    f: int = 1
    unnormalized: dict = field(default_factory=dict)
    normalized: dict = field(default_factory=dict)
    fell_back: bool = False

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise AggregationError(f"unknown aggregation mechanism {self.mechanism!r}")
        if self.beta < 0 or self.q <= 0 or self.k < 0 or self.f < 0:
            raise AggregationError("beta >= 0, q > 0, k >= 0 and f >= 0 are required")

    @classmethod
    def initial(cls, mechanism: str, sizes: Mapping[ClientId, int], **params) -> "AggregatorState":
        w = fedavg_weights(sizes)
        return cls(mechanism=mechanism, unnormalized=dict(w), normalized=dict(w), **params)

    def weights_for(self, selected, sizes: Mapping[ClientId, int]) -> dict[ClientId, float]:
        """Normalize the current raw weights over ``selected`` (no fairness step)."""
        raw = {i: self.unnormalized.get(i, sizes[i]) for i in selected}
        total = sum(raw.values())
        if total <= 0:
            return fedavg_weights({i: sizes[i] for i in selected})
        return {i: v / total for i, v in raw.items()}


def _normalize(state: AggregatorState, raw: dict, sizes: Mapping[ClientId, int] | None) -> AggregatorState:
    """Clamp, normalize over the selected set and store the new raw weights.

    Stored raw weights are the normalized ones rescaled to the selected set's
    previous raw mass. The round's normalized weights are unaffected; across
    rounds this stops clients that happen to be selected more often from
    drifting to a different scale than the rest.
    """
    prior_mass = sum(state.unnormalized[i] for i in raw)
    raw = {i: max(v, 0.0) for i, v in raw.items()}
    total = sum(raw.values())
    fell_back = False
    if not total > 0:
        log.warning("%s: all raw weights collapsed to zero, falling back to FedAvg", state.mechanism)
        base = sizes if sizes is not None else {i: 1 for i in raw}
        raw = fedavg_weights({i: base[i] for i in raw})
        total = 1.0
        fell_back = True
    normalized = {i: v / total for i, v in raw.items()}
    if not prior_mass > 0:
        prior_mass = 1.0
    unnorm = dict(state.unnormalized)
    unnorm.update({i: w * prior_mass for i, w in normalized.items()})
    return replace(state, unnormalized=unnorm, normalized=normalized, fell_back=fell_back)


def fairfed_update(
    state: AggregatorState,
    local_dp: Mapping[ClientId, float],
    global_dp: float,
    beta: float | None = None,
    sizes: Mapping[ClientId, int] | None = None,
) -> AggregatorState:
    """One FairFed step over the selected clients (the keys of ``local_dp``).

    gap_i = |global_dp - local_dp_i|; raw_i -= beta * (gap_i - mean gap);
    negative raw weights are clamped to zero before normalizing.
    """
    if not local_dp:
        raise AggregationError("no selected clients")
    beta = state.beta if beta is None else beta
    if any(v is None for v in local_dp.values()) or global_dp is None:
        raise AggregationError("fairfed needs defined local and global DP for every selected client")
    gaps = {i: abs(global_dp - d) for i, d in local_dp.items()}
    mean_gap = sum(gaps.values()) / len(gaps)
    raw = {i: state.unnormalized[i] - beta * (gaps[i] - mean_gap) for i in gaps}
    return _normalize(replace(state, beta=beta), raw, sizes)


FQ_CLAMP = 1.0 - 1e-6


def fqfedavg_update(
    state: AggregatorState,
    local_dp_abs: Mapping[ClientId, float],
    q: float | None = None,
    sizes: Mapping[ClientId, int] | None = None,
) -> AggregatorState:
    """raw_i *= (1 - f_i)^(q+1) / (q+1), with f_i clamped into [0, 1 - 1e-6]."""
    if not local_dp_abs:
        raise AggregationError("no selected clients")
    q = state.q if q is None else q
    if not q > 0:
        raise AggregationError("q must be positive")
    raw = {}
    for i, f in local_dp_abs.items():
        f = min(max(float(f), 0.0), FQ_CLAMP)
        raw[i] = state.unnormalized[i] * (1.0 - f) ** (q + 1) / (q + 1)
    return _normalize(replace(state, q=q), raw, sizes)


def _stack(updates) -> tuple[list, np.ndarray]:
    if isinstance(updates, Mapping):
        ids = sorted(updates)
        vecs = [updates[i] for i in ids]
    else:
        vecs = list(updates)
        ids = list(range(len(vecs)))
    if not vecs:
        raise AggregationError("no updates to aggregate")
    arr = np.array([np.asarray(v, dtype=float) for v in vecs])
    if arr.ndim != 2:
        raise AggregationError("updates must all have the same length")
    return ids, arr


def aggregate_weighted(global_params, updates: Mapping[ClientId, np.ndarray], weights: Mapping[ClientId, float]) -> np.ndarray:
    """global + sum_i w_i * (update_i - global)."""
    g = np.asarray(global_params, dtype=float)
    if set(updates) != set(weights):
        raise AggregationError("updates and weights must cover the same clients")
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise AggregationError(f"weights must sum to 1, got {total}")
    vecs = {}
    for i, u in updates.items():
        u = np.asarray(u, dtype=float)
        if u.shape != g.shape:
            raise AggregationError(f"update from client {i!r} has length {u.size}, expected {g.size}")
        vecs[i] = u
    sole = [i for i, w in weights.items() if w == 1.0]
    if sole and all(w == 0.0 for i, w in weights.items() if i != sole[0]):
        return vecs[sole[0]].copy()
    out = g.copy()
    for i in sorted(vecs):
        out += weights[i] * (vecs[i] - g)
    return out


def trimmed_mean(updates, k: int) -> np.ndarray:
    _, arr = _stack(updates)
    n = arr.shape[0]
    if k < 0 or n <= 2 * k:
        raise AggregationError(f"trimmed mean needs n > 2k (n={n}, k={k})")
    srt = np.sort(arr, axis=0)
    return srt[k : n - k].mean(axis=0)


def trimmed_median(updates) -> np.ndarray:
    """Coordinate-wise median; even counts average the two middle values."""
    _, arr = _stack(updates)
    return np.median(arr, axis=0)


def krum(updates, f: int) -> tuple[ClientId, np.ndarray]:
    """Classical Krum: pick the update closest to its n - f - 2 nearest neighbours."""
    ids, arr = _stack(updates)
    n = arr.shape[0]
    if f < 0 or n <= 2 * f + 2:
        raise AggregationError(f"krum needs n > 2f + 2 (n={n}, f={f})")
    sq = np.sum((arr[:, None, :] - arr[None, :, :]) ** 2, axis=-1)
    m = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = others[:m].sum()
    best = int(np.argmin(scores))  # ids are sorted, so argmin's first hit is the lowest id
    return ids[best], arr[best].copy()


def robust_aggregate(state: AggregatorState, updates: Mapping[ClientId, np.ndarray]) -> tuple[np.ndarray, ClientId | None]:
    if state.mechanism == "trimmed_mean":
        return trimmed_mean(updates, state.k), None
    if state.mechanism == "trimmed_median":
        return trimmed_median(updates), None
    if state.mechanism == "krum":
        cid, vec = krum(updates, state.f)
        return vec, cid
    raise AggregationError(f"{state.mechanism!r} is not a robust aggregator")
