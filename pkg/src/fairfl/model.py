"""Prediction models over flat parameter vectors.

Two families are supported: logistic regression and a perceptron with one
tanh hidden layer. Everything (prediction, loss, gradients, SGD) operates on
a single 1-D ``numpy`` array so that updates can be averaged, differenced and
scaled by the aggregation and attack code without knowing the layout.

Parameter layout
----------------
logistic: ``[w_0 .. w_{d-1}, b]``
mlp1:     ``[W1 (d+1 rows x h cols, last row is the hidden bias), w2 (h), b2]``
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError


class Family(str, Enum):
    LOGISTIC = "logistic"
    MLP1 = "mlp1"


@dataclass(frozen=True)
class ModelSpec:
    family: Family = Family.LOGISTIC
    input_dim: int = 1
    hidden_dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.family is Family.MLP1:
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise ValueError("mlp1 requires a positive hidden_dim")

    @property
    def param_count(self) -> int:
        d = self.input_dim
        if self.family is Family.LOGISTIC:
            return d + 1
        h = self.hidden_dim
        return (d + 1) * h + h + 1


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def with_seed(self, seed) -> "SgdConfig":
        return SgdConfig(self.learning_rate, self.epochs, self.batch_size, seed)


def init_params(spec: ModelSpec, seed: int = 0) -> np.ndarray:
    """Zeros for logistic; small seeded Gaussian hidden weights for mlp1."""
    if spec.family is Family.LOGISTIC:
        return np.zeros(spec.param_count)
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.param_count)
    d, h = spec.input_dim, spec.hidden_dim
    theta[: d * h] = rng.normal(0.0, 1.0 / np.sqrt(d), size=d * h)
    theta[(d + 1) * h : (d + 1) * h + h] = rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
    return theta


def check_params(spec: ModelSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise DimensionError("params", spec.param_count, int(params.size))
    return params


def _check_features(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != spec.input_dim:
        raise DimensionError("features", spec.input_dim, int(X.shape[1]))
    return X


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _forward(spec: ModelSpec, params: np.ndarray, X: np.ndarray):
    """Return output logits and whatever the backward pass needs."""
    if spec.family is Family.LOGISTIC:
        return X @ params[:-1] + params[-1], None
    d, h = spec.input_dim, spec.hidden_dim
    W1 = params[: (d + 1) * h].reshape(d + 1, h)
    w2 = params[(d + 1) * h : (d + 1) * h + h]
    b2 = params[-1]
    hidden = np.tanh(X @ W1[:d] + W1[d])
    return hidden @ w2 + b2, hidden


def _backward(spec: ModelSpec, params: np.ndarray, X: np.ndarray, dz: np.ndarray, cache) -> np.ndarray:
    """Gradient of sum_k dz_k * logit_k with respect to params."""
    if spec.family is Family.LOGISTIC:
        return np.concatenate([X.T @ dz, [dz.sum()]])
    d, h = spec.input_dim, spec.hidden_dim
    hidden = cache
    w2 = params[(d + 1) * h : (d + 1) * h + h]
    dpre = np.outer(dz, w2) * (1.0 - hidden**2)
    grad = np.empty_like(params)
    grad[: d * h] = (X.T @ dpre).ravel()
    grad[d * h : (d + 1) * h] = dpre.sum(axis=0)
    grad[(d + 1) * h : (d + 1) * h + h] = hidden.T @ dz
    grad[-1] = dz.sum()
    return grad


def predict_proba_batch(spec: ModelSpec, params, X) -> np.ndarray:
    params = check_params(spec, params)
    X = _check_features(spec, X)
    z, _ = _forward(spec, params, X)
    return sigmoid(z)


def predict_proba(spec: ModelSpec, params, features) -> float:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise DimensionError("features", spec.input_dim, int(features.size))
    return float(predict_proba_batch(spec, params, features)[0])


def decide(spec: ModelSpec, params, X) -> np.ndarray:
    """Hard decisions; a probability of exactly 0.5 maps to the positive label."""
    return (predict_proba_batch(spec, params, X) >= 0.5).astype(np.int8)


def weighted_nll_arrays(spec: ModelSpec, params, X, y, w) -> tuple[float, np.ndarray]:
    params = check_params(spec, params)
    X = _check_features(spec, X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if len(y) == 0:
        raise ValueError("batch must be non-empty")
    if np.any(w < 0):
        raise ValueError("sample weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("sample weights are all zero")
    # non-finite inputs are reported below as NumericalError, not as numpy warnings
    with np.errstate(invalid="ignore", over="ignore"):
        z, cache = _forward(spec, params, X)
        nll = np.logaddexp(0.0, z) - y * z
        loss = float(w @ nll) / total
        dz = w * (sigmoid(z) - y) / total
        grad = _backward(spec, params, X, dz, cache)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite loss or gradient")
    return loss, grad


def weighted_nll_gradient(
    spec: ModelSpec, params, batch: Sequence[tuple[Sequence[float], int, float]]
) -> tuple[float, np.ndarray]:
    """Weighted mean negative log-likelihood and its exact gradient.

    ``batch`` holds ``(features, label, sample_weight)`` triples. The loss is
    normalized by the weight total, so rescaling every weight by the same
    positive constant changes nothing.
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    X = np.array([np.asarray(b[0], dtype=float) for b in batch])
    y = np.array([b[1] for b in batch], dtype=float)
    w = np.array([b[2] for b in batch], dtype=float)
    return weighted_nll_arrays(spec, params, X, y, w)


def dp_gap_arrays(spec: ModelSpec, params, X, s) -> tuple[float, np.ndarray]:
    """Differentiable parity surrogate: mean sigmoid output of S=0 minus that of S=1.

    Returns the gap and its gradient. A group missing from the batch
    contributes a zero mean.
    """
    params = check_params(spec, params)
    X = _check_features(spec, X)
    s = np.asarray(s)
    z, cache = _forward(spec, params, X)
    p = sigmoid(z)
    g0 = s == 0
    g1 = ~g0
    n0, n1 = g0.sum(), g1.sum()
    coef = np.zeros(len(p))
    gap = 0.0
    if n0:
        gap += p[g0].mean()
        coef[g0] = 1.0 / n0
    if n1:
        gap -= p[g1].mean()
        coef[g1] = -1.0 / n1
    grad = _backward(spec, params, X, coef * p * (1.0 - p), cache)
    return float(gap), grad


def fairreg_objective(spec: ModelSpec, params, X, y, s, mu: float) -> tuple[float, np.ndarray]:
    """Mean NLL plus ``mu`` times the squared parity surrogate."""
    loss, grad = weighted_nll_arrays(spec, params, X, y, np.ones(len(y)))
    if mu == 0:
        return loss, grad
    gap, ggap = dp_gap_arrays(spec, params, X, s)
    return loss + mu * gap**2, grad + 2.0 * mu * gap * ggap


def dp_surrogate_objective(spec: ModelSpec, params, X, s) -> tuple[float, np.ndarray]:
    """Squared parity surrogate, the quantity the naive attack ascends."""
    gap, ggap = dp_gap_arrays(spec, params, X, s)
    return gap**2, 2.0 * gap * ggap


GradFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def run_sgd(
    params: np.ndarray,
    batches: Iterable[np.ndarray],
    grad_fn: GradFn,
    learning_rate: float,
    ascend: bool = False,
    stop: Callable[[np.ndarray], bool] | None = None,
) -> np.ndarray:
    """Apply one SGD step per index batch. ``grad_fn(params, idx)`` returns (loss, grad).

    ``stop``, if given, is called with the parameters after every step; a true
    result ends training early.
    """
    theta = np.array(params, dtype=float, copy=True)
    sign = 1.0 if ascend else -1.0
    for idx in batches:
        _, grad = grad_fn(theta, idx)
        theta += sign * learning_rate * grad
        if stop is not None and stop(theta):
            break
    if not np.all(np.isfinite(theta)):
        raise NumericalError("SGD diverged to non-finite parameters")
    return theta


def shuffled_batches(n: int, batch_size: int, epochs: int, rng: np.random.Generator):
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start : start + batch_size]


def sgd_train(spec: ModelSpec, init, data, weights, cfg: SgdConfig, stop=None) -> np.ndarray:
    """Shuffled mini-batch SGD on the weighted NLL, deterministic in ``cfg.seed``.

    Batches whose weights are all zero are skipped rather than raising.
    """
    init = check_params(spec, init)
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise DimensionError("weights", n, int(weights.size))
    X, y = data.X, data.y.astype(float)
    rng = np.random.default_rng(cfg.seed)

    def grad_fn(theta, idx):
        w = weights[idx]
        if not w.sum() > 0:
            return 0.0, np.zeros_like(theta)
        return weighted_nll_arrays(spec, theta, X[idx], y[idx], w)

    return run_sgd(init, shuffled_batches(n, cfg.batch_size, cfg.epochs, rng), grad_fn, cfg.learning_rate, stop=stop)
