"""Polynomial approximation kernels.

Bernstein bases and the iterated Bernstein operator on the unit cube, the
Chebyshev-based polynomial used to approximate monotone disjunctions, and
even trigonometric (cosine) approximants on [-pi, pi]^p.

All objects here are immutable once built, so evaluation is safe to share
between threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import Chebyshev
from numpy.polynomial import polynomial as P
from scipy.special import gammaln, xlog1py, xlogy

from .errors import ConstructionError, InputDomainError

SCHEMA_VERSION = 1

# Batched evaluation works on blocks of this many points to bound memory.
_BATCH_CHUNK = 4096


@dataclass(frozen=True)
class SurrogateConfig:
    """Grid granularity ``k``, operator order ``h``, dimension ``p`` and derivative bound."""

    k: int
    h: int = 1
    p: int = 1
    smoothness_T: float = 1.0

    def __post_init__(self):
        for name in ("k", "h", "p"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InputDomainError(f"{name} must be a positive integer, got {value!r}")
        if not self.smoothness_T > 0:
            raise InputDomainError(f"smoothness_T must be positive, got {self.smoothness_T!r}")

    @property
    def n_grid(self) -> int:
        return (self.k + 1) ** self.p

    def to_dict(self) -> dict:
        return {"k": self.k, "h": self.h, "p": self.p, "smoothness_T": self.smoothness_T}


# ---------------------------------------------------------------------------
# Bernstein bases
# ---------------------------------------------------------------------------

def _check_unit(x, what="x"):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise InputDomainError(f"{what} must lie in [0, 1]")
    return x


def bernstein_basis(v: int, k: int, x: float) -> float:
    """Return ``C(k, v) x^v (1-x)^(k-v)``.

    Evaluated in log space so that degrees in the thousands neither overflow
    the binomial nor underflow intermediate powers.
    """
    if int(k) != k or k < 1:
        raise InputDomainError(f"k must be a positive integer, got {k!r}")
    if int(v) != v or not 0 <= v <= k:
        raise InputDomainError(f"v must be an integer in [0, {k}], got {v!r}")
    x = float(_check_unit(x))
    return float(bernstein_basis_all(k, np.array([x]))[0, int(v)])


def bernstein_basis_all(k: int, x) -> np.ndarray:
    """All ``k + 1`` basis values at each point of ``x``; shape ``(len(x), k + 1)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
    v = np.arange(k + 1, dtype=float)[None, :]
    log_binom = gammaln(k + 1.0) - gammaln(v + 1.0) - gammaln(k - v + 1.0)
    # xlogy(0, 0) == 0 gives the 0**0 == 1 convention at the end points.
    return np.exp(log_binom + xlogy(v, x) + xlog1py(k - v, -x))


def bernstein_derivative_all(k: int, x) -> np.ndarray:
    """d/dx of every degree-``k`` basis polynomial, via ``k (b_{v-1,k-1} - b_{v,k-1})``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if k == 1:
        return np.tile(np.array([-1.0, 1.0]), (x.size, 1))
    lower = bernstein_basis_all(k - 1, x)
    out = np.zeros((x.size, k + 1))
    out[:, 1:] += lower
    out[:, :-1] -= lower
    return k * out


@lru_cache(maxsize=256)
def iterated_weight_matrix(k: int, h: int) -> np.ndarray:
    """Matrix ``W`` with ``b^{(h)}(x) = b(x) @ W``.

    ``M[u, v] = b_{v,k}(u/k)`` is the Bernstein operator acting on grid
    values, so ``B_k^i f`` evaluated at ``x`` is ``b(x) @ M^(i-1) @ f`` and the
    iterated weights are ``sum_i C(h, i) (-1)^(i-1) M^(i-1)``.
    """
    nodes = np.arange(k + 1) / k
    m = bernstein_basis_all(k, nodes)
    w = np.zeros((k + 1, k + 1))
    power = np.eye(k + 1)
    for i in range(1, h + 1):
        w += math.comb(h, i) * (-1) ** (i - 1) * power
        power = power @ m
    w.setflags(write=False)
    return w


def iterated_basis(k: int, h: int, x) -> np.ndarray:
    """Iterated basis values ``b^{(h)}_{v,k}(x)`` for all ``v``; shape ``(len(x), k + 1)``."""
    return bernstein_basis_all(k, x) @ iterated_weight_matrix(k, h)


def iterated_basis_derivative(k: int, h: int, x) -> np.ndarray:
    return bernstein_derivative_all(k, x) @ iterated_weight_matrix(k, h)


# ---------------------------------------------------------------------------
# Multivariate surrogate
# ---------------------------------------------------------------------------

def _contract(values: np.ndarray, factors: list[np.ndarray]) -> np.ndarray:
    """sum over v of values[v_1..v_p] * prod_j factors[j][n, v_j], for every n."""
    n_pts = factors[0].shape[0]
    k1 = factors[0].shape[1]
    acc = factors[0] @ values.reshape(k1, -1)  # (N, (k+1)^(p-1))
    for fac in factors[1:]:
        acc = np.einsum("na,nab->nb", fac, acc.reshape(n_pts, k1, -1))
    return acc.reshape(n_pts)


@dataclass(frozen=True)
class BernsteinSurrogate:
    """Multivariate iterated Bernstein polynomial built from values on the grid {0, 1/k, ..., 1}^p.

    ``grid_values`` is flat in lexicographic multi-index order, i.e. the
    C-order flattening of a ``(k+1,) * p`` tensor.
    """

    config: SurrogateConfig
    grid_values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.grid_values, dtype=float).reshape(-1)
        if values.size != self.config.n_grid:
            raise InputDomainError(
                f"expected {(self.config.k + 1)}^{self.config.p} = {self.config.n_grid} grid values, "
                f"got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "grid_values", values)

    @property
    def tensor(self) -> np.ndarray:
        return self.grid_values.reshape((self.config.k + 1,) * self.config.p)

    def _points(self, theta) -> np.ndarray:
        pts = np.asarray(theta, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.config.p) if self.config.p > 1 else pts.reshape(-1, 1)
        if pts.shape[-1] != self.config.p:
            raise InputDomainError(f"points must have {self.config.p} coordinates")
        return _check_unit(pts, "theta")

    def evaluate(self, theta) -> np.ndarray:
        """Evaluate at an ``(N, p)`` batch of points in the unit cube."""
        pts = self._points(theta)
        cfg = self.config
        out = np.empty(pts.shape[0])
        for start in range(0, pts.shape[0], _BATCH_CHUNK):
            block = pts[start:start + _BATCH_CHUNK]
            factors = [iterated_basis(cfg.k, cfg.h, block[:, j]) for j in range(cfg.p)]
            out[start:start + _BATCH_CHUNK] = _contract(self.tensor, factors)
        return out

    def gradient(self, theta) -> np.ndarray:
        """Analytic partial derivatives at an ``(N, p)`` batch of points."""
        pts = self._points(theta)
        cfg = self.config
        grads = np.empty(pts.shape)
        for start in range(0, pts.shape[0], _BATCH_CHUNK):
            block = pts[start:start + _BATCH_CHUNK]
            vals = [iterated_basis(cfg.k, cfg.h, block[:, j]) for j in range(cfg.p)]
            ders = [iterated_basis_derivative(cfg.k, cfg.h, block[:, j]) for j in range(cfg.p)]
            for j in range(cfg.p):
                factors = vals[:j] + [ders[j]] + vals[j + 1:]
                grads[start:start + _BATCH_CHUNK, j] = _contract(self.tensor, factors)
        return grads

    def __call__(self, theta) -> float:
        return float(self.evaluate(np.reshape(theta, (1, self.config.p)))[0])

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "kind": "bernstein_surrogate",
            "config": self.config.to_dict(),
            "values": self.grid_values.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "BernsteinSurrogate":
        doc = json.loads(text)
        _check_doc(doc, "bernstein_surrogate")
        return cls(SurrogateConfig(**doc["config"]), np.asarray(doc["values"], dtype=float))


def iterated_bernstein_fit(grid_values, config: SurrogateConfig) -> BernsteinSurrogate:
    """Build the order-``h`` iterated Bernstein surrogate of the given grid values."""
    return BernsteinSurrogate(config, np.asarray(grid_values, dtype=float))


def eval_surrogate(s: BernsteinSurrogate, theta) -> float:
    return s(theta)


def grad_surrogate(s: BernsteinSurrogate, theta) -> np.ndarray:
    return s.gradient(np.reshape(theta, (1, s.config.p)))[0]


def unit_grid(k: int, p: int) -> np.ndarray:
    """The ``(k+1)^p`` grid points ``v / k`` in lexicographic multi-index order."""
    axes = np.meshgrid(*([np.arange(k + 1) / k] * p), indexing="ij")
    return np.stack([a.reshape(-1) for a in axes], axis=1)


# ---------------------------------------------------------------------------
# Chebyshev polynomial for disjunctions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChebyshevDisjunctionPoly:
    """Univariate ``p(x) = sum_i c_i x^i`` with ``p(0) = 0`` and ``|p(x) - 1| <= gamma`` on {1..k}."""

    k: int
    gamma: float
    coeffs: np.ndarray = field(repr=False)
    achieved_error: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def max_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def __call__(self, x):
        return P.polyval(np.asarray(x, dtype=float), self.coeffs)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "kind": "chebyshev_disjunction",
            "config": {"k": self.k, "gamma": self.gamma, "achieved_error": self.achieved_error},
            "values": self.coeffs.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ChebyshevDisjunctionPoly":
        doc = json.loads(text)
        _check_doc(doc, "chebyshev_disjunction")
        cfg = doc["config"]
        return cls(cfg["k"], cfg["gamma"], np.asarray(doc["values"]), cfg["achieved_error"])


def _disjunction_error(coeffs: np.ndarray, k: int) -> float:
    xs = np.arange(1, k + 1, dtype=float)
    return float(np.max(np.abs(P.polyval(xs, coeffs) - 1.0)))


def chebyshev_disjunction(k: int, gamma: float, max_degree: int = 200) -> ChebyshevDisjunctionPoly:
    """Smallest-degree polynomial of the form ``1 - T_t(u(x)) / T_t(u(0))`` meeting the gamma bound.

    ``u`` maps [1, k] affinely onto [-1, 1]; since ``u(0) < -1`` the Chebyshev
    polynomial is large there, so ``|p - 1| <= 1 / |T_t(u(0))|`` on [1, k].
    The bound is checked with the monomial coefficients that callers will use.
    """
    if int(k) != k or k < 1:
        raise InputDomainError(f"k must be a positive integer, got {k!r}")
    if not 0 < gamma < 1:
        raise InputDomainError(f"gamma must lie in (0, 1), got {gamma!r}")
    k = int(k)
    if k == 1:
        return ChebyshevDisjunctionPoly(1, gamma, np.array([0.0, 1.0]), 0.0)
    u0 = -(k + 1.0) / (k - 1.0)
    best = math.inf
    for t in range(1, max_degree + 1):
        cheb = Chebyshev.basis(t, domain=[1.0, float(k)])
        mono = cheb.convert(kind=np.polynomial.Polynomial).coef
        scale = float(Chebyshev.basis(t)(u0))
        coeffs = -mono / scale
        coeffs[0] = 0.0
        err = _disjunction_error(coeffs, k)
        best = min(best, err)
        if err <= gamma:
            return ChebyshevDisjunctionPoly(k, gamma, coeffs, err)
    raise ConstructionError(
        f"no degree <= {max_degree} polynomial reached gamma={gamma} for k={k}", achieved_error=best
    )


# ---------------------------------------------------------------------------
# Even trigonometric polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrigPolynomial:
    """``sum_r c_r prod_i cos(r_i theta_i)`` over ``r`` in {0..t-1}^p."""

    t: int
    p: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape((self.t,) * self.p)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def evaluate(self, theta) -> np.ndarray:
        pts = np.asarray(theta, dtype=float).reshape(-1, self.p)
        r = np.arange(self.t)
        factors = [np.cos(pts[:, j, None] * r[None, :]) for j in range(self.p)]
        return _contract(self.coeffs, factors)

    def __call__(self, theta):
        out = self.evaluate(theta)
        return float(out[0]) if out.size == 1 else out

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "kind": "trig_polynomial",
            "config": {"t": self.t, "p": self.p},
            "values": self.coeffs.reshape(-1).tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "TrigPolynomial":
        doc = json.loads(text)
        _check_doc(doc, "trig_polynomial")
        return cls(doc["config"]["t"], doc["config"]["p"], np.asarray(doc["values"]))


def cosine_nodes(n_nodes: int) -> np.ndarray:
    """Midpoint angles ``pi (j + 1/2) / n``; their cosines are the Chebyshev points."""
    return np.pi * (np.arange(n_nodes) + 0.5) / n_nodes


def trig_fit(g: Callable[[np.ndarray], np.ndarray], t: int, p: int = 1,
             nodes_per_degree: int = 4) -> TrigPolynomial:
    """Cosine-series coefficients of an even ``g`` by discrete cosine quadrature.

    ``g`` receives an ``(N, p)`` array of angles in [0, pi] and returns ``N``
    values. With ``nodes_per_degree * t`` midpoint nodes per axis the
    quadrature is exact for cosine polynomials of per-axis degree below ``t``.
    """
    if int(t) != t or t < 1:
        raise InputDomainError(f"t must be a positive integer, got {t!r}")
    if int(p) != p or p < 1:
        raise InputDomainError(f"p must be a positive integer, got {p!r}")
    n_nodes = nodes_per_degree * t
    theta = cosine_nodes(n_nodes)
    mesh = np.meshgrid(*([theta] * p), indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    values = np.asarray(g(pts), dtype=float).reshape((n_nodes,) * p)

    r = np.arange(t)
    weights = np.where(r == 0, 1.0, 2.0) / n_nodes
    analysis = weights[:, None] * np.cos(r[:, None] * theta[None, :])  # (t, n_nodes)
    coeffs = values
    for axis in range(p):
        coeffs = np.moveaxis(np.tensordot(analysis, coeffs, axes=([1], [axis])), 0, axis)
    return TrigPolynomial(t, p, coeffs)


def _check_doc(doc: dict, kind: str) -> None:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputDomainError(f"unsupported schema_version {doc.get('schema_version')!r}")
    if doc.get("kind") != kind:
        raise InputDomainError(f"expected a {kind} document, got {doc.get('kind')!r}")
