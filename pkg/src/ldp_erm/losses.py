"""Loss functions with a declared smoothness contract.

A loss maps a parameter in [0, 1]^p and a record to a value in [0, 1]. All
evaluation is batched: ``pointwise(thetas, records)`` takes matching
``(N, p)`` and ``(N, r)`` arrays and returns ``(N,)`` losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import ContractViolationError, InputDomainError

_CHUNK = 1 << 22  # floats per batched evaluation block

Pointwise = Callable[[np.ndarray, np.ndarray], np.ndarray]
RiskFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LossSpec:
    """A loss with its dimension, record width and smoothness class.

    ``risk`` is an optional fast path computing the empirical risk of many
    parameters against a whole dataset; when absent, risk is computed by
    chunked pointwise evaluation.
    """

    name: str
    pointwise: Pointwise
    p: int
    record_dim: int
    smoothness_h: float = math.inf
    smoothness_T: float = 1.0
    convex: bool = False
    lipschitz: Optional[float] = None
    risk: Optional[RiskFn] = field(default=None, compare=False)
    params: dict = field(default_factory=dict, compare=False)

    def check_records(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.ndim == 1 and self.record_dim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[1] != self.record_dim:
            raise InputDomainError(
                f"loss {self.name!r} expects records of width {self.record_dim}, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputDomainError("records must be finite")
        return data

    def loss_matrix(self, thetas, data) -> np.ndarray:
        """``(n, G)`` losses of every record at every parameter, range-checked."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        data = self.check_records(data)
        n, G = data.shape[0], thetas.shape[0]
        out = np.empty((n, G))
        rows = max(1, _CHUNK // max(G, 1))
        for s in range(0, n, rows):
            blk = data[s:s + rows]
            th = np.broadcast_to(thetas[None, :, :], (blk.shape[0], G, self.p)).reshape(-1, self.p)
            rec = np.repeat(blk, G, axis=0)
            out[s:s + rows] = np.asarray(self.pointwise(th, rec), dtype=float).reshape(blk.shape[0], G)
        bad = ~((out >= 0) & (out <= 1))
        if np.any(bad):
            i = int(np.nonzero(bad.any(axis=1))[0][0])
            raise ContractViolationError(f"loss {self.name!r} left [0, 1] for player {i}")
        return out

    def risk_function(self, data) -> Callable[[np.ndarray], np.ndarray]:
        """Empirical risk as a function of an ``(N, p)`` batch of parameters.

        Repeated records are merged once up front, so discrete datasets cost
        one evaluation per distinct record.
        """
        data = self.check_records(data)
        if data.shape[0] == 0:
            raise InputDomainError("empirical risk needs at least one record")
        if self.risk is not None:
            return lambda thetas: np.asarray(
                self.risk(np.atleast_2d(np.asarray(thetas, dtype=float)), data), dtype=float)
        uniq, counts = np.unique(data, axis=0, return_counts=True)
        if uniq.shape[0] < data.shape[0]:
            data, w = uniq, counts / counts.sum()
        else:
            w = np.full(data.shape[0], 1.0 / data.shape[0])

        def risk(thetas):
            thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
            total = np.zeros(thetas.shape[0])
            rows = max(1, _CHUNK // max(thetas.shape[0], 1))
            for s in range(0, data.shape[0], rows):
                total += w[s:s + rows] @ self.loss_matrix(thetas, data[s:s + rows])
            return total

        return risk

    def empirical_risk(self, thetas, data) -> np.ndarray:
        """Average loss over ``data`` at each row of ``thetas``."""
        return self.risk_function(data)(thetas)


# ---------------------------------------------------------------------------
# Built-in losses
# ---------------------------------------------------------------------------

def squared_loss(p: int = 1) -> LossSpec:
    """``||theta - x||^2 / p`` for records ``x`` in [0, 1]^p. Convex, 2/sqrt(p)-Lipschitz."""

    def pointwise(th, x):
        return np.sum((th - x) ** 2, axis=1) / p

    def risk(th, x):
        if np.any(x < 0) or np.any(x > 1):
            raise ContractViolationError("squared loss records must lie in [0, 1]^p")
        mu = x.mean(axis=0)
        second = float(np.mean(np.sum(x * x, axis=1)))
        return (np.sum(th * th, axis=1) - 2.0 * th @ mu + second) / p

    return LossSpec("squared", pointwise, p, p, math.inf, 2.0 / p, True, 2.0 / math.sqrt(p), risk)


def _softplus(t):
    return np.logaddexp(0.0, t)


def logistic_loss(p: int = 1) -> LossSpec:
    """Logistic loss on the margin ``z <a, 2 theta - 1>``, affinely rescaled to [0, 1].

    Records are ``(a, z)`` with ``a`` in [-1, 1]^p and label ``z`` in {-1, +1};
    the margin then lies in [-p, p].
    """
    lo, hi = float(_softplus(-p)), float(_softplus(p))
    scale = hi - lo

    def pointwise(th, rec):
        a, z = rec[:, :p], rec[:, p]
        m = z * np.sum(a * (2.0 * th - 1.0), axis=1)
        return np.clip((_softplus(-m) - lo) / scale, 0.0, 1.0)

    # second derivative of softplus is at most 1/4 and the chain rule adds 4
    return LossSpec("logistic", pointwise, p, p + 1, math.inf, 4.0 * p / scale, True,
                    2.0 * math.sqrt(p) / scale)


def sigmoid_bump_loss(p: int = 1, sharpness: float = 30.0) -> LossSpec:
    """Non-convex ``2 sigmoid(s ||theta - x||^2) - 1`` for records ``x`` in [0, 1]^p.

    Behaves like a scaled squared loss near the record and saturates at 1
    far from it, so a dataset with several clusters has several local minima.
    """
    if not sharpness > 0:
        raise InputDomainError("sharpness must be positive")

    def pointwise(th, x):
        return 2.0 * expit(sharpness * np.sum((th - x) ** 2, axis=1)) - 1.0

    return LossSpec("sigmoid-bump", pointwise, p, p, math.inf, 2.0 * sharpness, False,
                    params={"sharpness": sharpness})


BUILTIN_LOSSES = {
    "squared": squared_loss,
    "logistic": logistic_loss,
    "sigmoid-bump": sigmoid_bump_loss,
}


def get_loss(name: str, p: int = 1, **kwargs) -> LossSpec:
    try:
        factory = BUILTIN_LOSSES[name]
    except KeyError:
        raise InputDomainError(f"unknown loss {name!r}; choose from {sorted(BUILTIN_LOSSES)}") from None
    return factory(p, **kwargs)


def synthetic_dataset(loss: LossSpec, n: int, seed: int) -> np.ndarray:
    """Reproducible records matching a built-in loss's record format."""
    rng = np.random.default_rng(seed)
    p = loss.p
    if loss.name == "squared":
        return rng.beta(2.0, 5.0, size=(n, p))
    if loss.name == "logistic":
        # features on a 21-point lattice keep the number of distinct records small
        a = rng.integers(-10, 11, size=(n, p)) / 10.0
        w = 0.5 * (np.linspace(1.0, -1.0, p) if p > 1 else np.ones(1))
        prob = expit(a @ w)
        z = np.where(rng.random(n) < prob, 1.0, -1.0)
        return np.column_stack([a, z])
    if loss.name == "sigmoid-bump":
        centers = np.array([0.25, 0.75])
        lab = (rng.random(n) < 0.45).astype(int)
        x = centers[lab][:, None] + 0.05 * rng.standard_normal((n, p))
        return np.clip(x, 0.0, 1.0)
    raise InputDomainError(f"no synthetic generator for loss {loss.name!r}")
