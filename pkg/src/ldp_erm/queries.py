"""Non-interactive release of query families.

Monotone disjunctions (equivalently k-way marginals) are answered from the
average of per-player monomial coefficient vectors of a Chebyshev-type
polynomial. Smooth queries on [-1, 1]^p are answered from averages of the
tensor Chebyshev basis ``prod_j T_{v_j}(x_j)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import InputDomainError, ResourceError
from .mechanisms import PrivacyParams, coordinate_reports, ldp_avg_pd_estimate
from .polyapprox import ChebyshevDisjunctionPoly, chebyshev_disjunction, trig_fit

SCHEMA_VERSION = 1
BASIS_CAP = 10 ** 6
FAMILIES = ("chebyshev-marginal", "trig-smooth")


# ---------------------------------------------------------------------------
# Monomial basis in graded lexicographic order
# ---------------------------------------------------------------------------

def _compositions(total: int, parts: int):
    """Exponent tuples summing to ``total``, lexicographically descending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class MonomialBasis:
    """All exponents ``a`` with ``|a| <= degree`` in p variables, graded lexicographic order.

    Exponents are sorted by total degree and, within a degree, by descending
    lexicographic order (``y_1^2`` before ``y_1 y_2`` before ``y_2^2``).
    """

    p: int
    degree: int
    exponents: np.ndarray = field(init=False, repr=False, compare=False)
    multinomial: np.ndarray = field(init=False, repr=False, compare=False)
    support: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dim = math.comb(self.p + self.degree, self.degree)
        if dim > BASIS_CAP:
            raise ResourceError(f"monomial basis of dimension {dim} exceeds the cap {BASIS_CAP}")
        exps = np.array([a for d in range(self.degree + 1) for a in _compositions(d, self.p)],
                        dtype=np.int64).reshape(-1, self.p)
        tot = exps.sum(axis=1)
        mult = np.array([math.factorial(int(t)) / math.prod(math.factorial(int(e)) for e in row)
                         for t, row in zip(tot, exps)])
        for name, val in (("exponents", exps), ("multinomial", mult), ("support", exps > 0)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.exponents.shape[0]

    @property
    def total_degree(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    def monomials(self, y) -> np.ndarray:
        """Values of every basis monomial at the point ``y``."""
        y = np.asarray(y, dtype=float).reshape(self.p)
        return np.prod(y[None, :] ** self.exponents, axis=1)


@lru_cache(maxsize=64)
def monomial_basis(p: int, degree: int) -> MonomialBasis:
    return MonomialBasis(int(p), int(degree))


def _check_bits(x, p: Optional[int] = None, what: str = "record") -> np.ndarray:
    x = np.asarray(x)
    if p is not None and x.shape[-1] != p:
        raise InputDomainError(f"{what} must have length {p}")
    if not np.all((x == 0) | (x == 1)):
        raise InputDomainError(f"{what} must be a 0/1 vector")
    return x.astype(np.int64)


def _disjunction_weights(poly: ChebyshevDisjunctionPoly, basis: MonomialBasis) -> np.ndarray:
    """``c_|a| * multinomial(a)`` for every basis exponent ``a``."""
    c = np.zeros(basis.degree + 1)
    c[: poly.coeffs.size] = poly.coeffs
    return c[basis.total_degree] * basis.multinomial


def encode_disjunction(x, poly: ChebyshevDisjunctionPoly, basis: Optional[MonomialBasis] = None) -> np.ndarray:
    """Monomial coefficients of ``y -> p(sum_j y_j x_j)`` for a bit vector ``x``.

    Expanding ``(sum_j x_j y_j)^d`` by the multinomial theorem, the coefficient
    of ``y^a`` is ``c_d * multinomial(a) * prod_j x_j^{a_j}``; for bits the
    product is 1 exactly when ``a`` is supported inside ``x``.
    """
    x = _check_bits(x)
    basis = basis or monomial_basis(x.size, poly.degree)
    inside = ~np.any(basis.support & (x[None, :] == 0), axis=1)
    return np.where(inside, _disjunction_weights(poly, basis), 0.0)


def encode_disjunctions(X, poly: ChebyshevDisjunctionPoly, basis: MonomialBasis) -> np.ndarray:
    """Row-wise :func:`encode_disjunction` for an ``(n, p)`` bit matrix."""
    X = _check_bits(np.atleast_2d(X), basis.p)
    hits = X @ basis.support.T.astype(np.int64)
    inside = hits == basis.support.sum(axis=1)[None, :]
    return np.where(inside, _disjunction_weights(poly, basis)[None, :], 0.0)


def disjunction_answers(data, Y) -> np.ndarray:
    """Exact fraction of records satisfying each disjunction ``OR_{j: y_j = 1} x_j``."""
    X = _check_bits(np.atleast_2d(data))
    Y = _check_bits(np.atleast_2d(Y), X.shape[1], "query")
    return ((X @ Y.T) > 0).mean(axis=0)


def enumerate_queries(p: int, k: int, max_enumerate_p: int = 12, n_samples: int = 10 ** 4,
                      rng=None) -> np.ndarray:
    """Every ``y`` with ``|y| <= k`` (in weight then lexicographic order) for small p, else a sample."""
    if p <= max_enumerate_p:
        rows = []
        for w in range(min(k, p) + 1):
            for idx in itertools.combinations(range(p), w):
                y = np.zeros(p, dtype=np.int64)
                y[list(idx)] = 1
                rows.append(y)
        return np.array(rows)
    rng = np.random.default_rng(rng)
    weights = rng.integers(0, k + 1, size=n_samples)
    out = np.zeros((n_samples, p), dtype=np.int64)
    for i, w in enumerate(weights):
        out[i, rng.choice(p, size=w, replace=False)] = 1
    return out


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSummary:
    """Released coefficient vector with the metadata needed to answer queries."""

    family: str
    coeffs: np.ndarray = field(repr=False)
    privacy: PrivacyParams
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputDomainError(f"unknown summary family {self.family!r}")
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise InputDomainError("summary coefficients must be finite")
        if c.size != self.expected_dim():
            raise InputDomainError(f"summary has {c.size} coefficients, basis needs {self.expected_dim()}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def expected_dim(self) -> int:
        p = self.meta["p"]
        if self.family == "chebyshev-marginal":
            return math.comb(p + self.meta["degree"], self.meta["degree"])
        return self.meta["t"] ** p

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "family": self.family,
            "basis_order": "graded-lex" if self.family == "chebyshev-marginal" else "lex-multi-index",
            "privacy": self.privacy.to_dict(),
            "meta": self.meta,
            "coeffs": self.coeffs.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CoefficientSummary":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise InputDomainError(f"unsupported schema_version {doc.get('schema_version')!r}")
        return cls(doc["family"], np.asarray(doc["coeffs"], dtype=float),
                   PrivacyParams(**doc["privacy"]), doc["meta"])


def _shifted_average(entry: Callable, n: int, dim: int, bound: float, epsilon: float, rng) -> np.ndarray:
    """Average of vectors with entries in [-bound, bound] via the coordinate-sampling average.

    Entries are shifted into [0, 2 bound] on the player side. With infinite
    epsilon the exact average is returned.
    """
    if math.isinf(epsilon):
        rows = np.arange(n)
        return np.array([np.mean(entry(rows, np.full(n, j))) for j in range(dim)])
    reports = coordinate_reports(lambda i, j: entry(i, j) + bound, n, dim, 2.0 * bound, epsilon, rng)
    return ldp_avg_pd_estimate(reports) - bound


def release_marginals(data, p: int, k: int, epsilon: float, alpha: float, rng=None) -> CoefficientSummary:
    """Release the averaged coefficient vector answering all disjunctions of width <= k.

    The polynomial targets ``gamma = alpha / 2``. The range bound of the
    coefficient vectors is the largest ``|c_|a|| * multinomial(a)``, attained
    by the all-ones record, so it does not depend on the data.
    """
    X = _check_bits(np.atleast_2d(data), p)
    if not 1 <= k <= p:
        raise InputDomainError("need 1 <= k <= p")
    privacy = PrivacyParams(epsilon, alpha=alpha)
    poly = chebyshev_disjunction(k, alpha / 2.0)
    basis = monomial_basis(p, poly.degree)
    weights = _disjunction_weights(poly, basis)
    bound = float(np.max(np.abs(weights)))
    need = basis.support.sum(axis=1)
    supp = basis.support

    def entry(rows, cols):
        inside = np.sum(X[rows] * supp[cols], axis=1) == need[cols]
        return np.where(inside, weights[cols], 0.0)

    avg = _shifted_average(entry, X.shape[0], basis.dim, bound, epsilon, np.random.default_rng(rng))
    meta = {"p": p, "k": k, "gamma": alpha / 2.0, "degree": poly.degree, "n": int(X.shape[0]),
            "range_bound": bound, "poly_coeffs": poly.coeffs.tolist(),
            "poly_error": poly.achieved_error}
    return CoefficientSummary("chebyshev-marginal", avg, privacy, meta)


def answer_marginal(summary: CoefficientSummary, y) -> float:
    """Evaluate the released polynomial at the query bit vector ``y``."""
    if summary.family != "chebyshev-marginal":
        raise InputDomainError(f"expected a chebyshev-marginal summary, got {summary.family!r}")
    y = _check_bits(y, summary.meta["p"], "query")
    if y.sum() > summary.meta["k"]:
        raise InputDomainError(f"query weight {int(y.sum())} exceeds k = {summary.meta['k']}")
    basis = monomial_basis(summary.meta["p"], summary.meta["degree"])
    return float(basis.monomials(y) @ summary.coeffs)


def answer_marginals(summary: CoefficientSummary, Y) -> np.ndarray:
    return np.array([answer_marginal(summary, y) for y in np.atleast_2d(Y)])


# ---------------------------------------------------------------------------
# Smooth queries
# ---------------------------------------------------------------------------

def _check_cube(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputDomainError("need a non-empty (n, p) array of points")
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 1):
        raise InputDomainError("points must lie in [-1, 1]^p")
    return x


def trig_basis_values(data, t: int) -> np.ndarray:
    """``prod_j cos(v_j arccos x_j)`` for every record and multi-index v in {0..t-1}^p (lex order)."""
    X = _check_cube(np.atleast_2d(data))
    p = X.shape[1]
    if t ** p > BASIS_CAP:
        raise ResourceError(f"t^p = {t ** p} exceeds the cap {BASIS_CAP}")
    ang = np.arccos(X)
    out = np.ones((X.shape[0], 1))
    for j in range(p):
        fac = np.cos(ang[:, j, None] * np.arange(t)[None, :])
        out = (out[:, :, None] * fac[:, None, :]).reshape(X.shape[0], -1)
    return out


def release_smooth(data, t: int, epsilon: float, rng=None) -> CoefficientSummary:
    """Release averages of the ``t^p`` basis values; each lies in [-1, 1]."""
    X = _check_cube(np.atleast_2d(data))
    n, p = X.shape
    if int(t) != t or t < 1:
        raise InputDomainError("t must be a positive integer")
    if t ** p > BASIS_CAP:
        raise ResourceError(f"t^p = {t ** p} exceeds the cap {BASIS_CAP}")
    ang = np.arccos(X)
    digits = np.array(np.unravel_index(np.arange(t ** p), (t,) * p)).T  # (t^p, p)

    def entry(rows, cols):
        return np.prod(np.cos(ang[rows] * digits[cols]), axis=1)

    avg = _shifted_average(entry, n, t ** p, 1.0, epsilon, np.random.default_rng(rng))
    return CoefficientSummary("trig-smooth", avg, PrivacyParams(epsilon), {"p": p, "t": int(t), "n": n})


@dataclass(frozen=True)
class SmoothQuery:
    """A query ``f`` on [-1, 1]^p taking an ``(N, p)`` array, with its smoothness class."""

    f: Callable[[np.ndarray], np.ndarray]
    p: int = 1
    h: Optional[int] = None
    T: Optional[float] = None
    name: str = "query"

    def __call__(self, x):
        return np.asarray(self.f(np.atleast_2d(np.asarray(x, dtype=float))), dtype=float)

    def exact_answer(self, data) -> float:
        return float(np.mean(self(_check_cube(np.atleast_2d(data)))))


def gaussian_kernel_query(x0=0.0, sigma: float = 0.5, p: int = 1) -> SmoothQuery:
    """``x -> exp(-||x - x0||^2 / (2 sigma^2))``, with values in (0, 1]."""
    c = np.broadcast_to(np.asarray(x0, dtype=float), (p,))
    if not sigma > 0:
        raise InputDomainError("sigma must be positive")

    def f(x):
        return np.exp(-np.sum((x - c) ** 2, axis=1) / (2.0 * sigma ** 2))

    return SmoothQuery(f, p, None, None, f"gauss(x0={x0}, sigma={sigma})")


def smooth_fit(query: SmoothQuery, t: int):
    """Cosine-series approximant of ``theta -> f(cos theta)``."""
    return trig_fit(lambda th: query(np.cos(th)), t, query.p)


def trig_approx_error(query: SmoothQuery, t: int, per_axis: Optional[int] = None) -> float:
    """Measured sup error of the degree-t approximant on a dense angle grid."""
    per_axis = per_axis or {1: 20001, 2: 401}.get(query.p, 41)
    fit = smooth_fit(query, t)
    th = np.linspace(0.0, np.pi, per_axis)
    pts = np.stack([m.reshape(-1) for m in np.meshgrid(*([th] * query.p), indexing="ij")], axis=1)
    return float(np.max(np.abs(fit.evaluate(pts) - query(np.cos(pts)))))


def answer_smooth(summary: CoefficientSummary, query, t: Optional[int] = None) -> float:
    """Dot product of the query's cosine coefficients with the released averages."""
    if summary.family != "trig-smooth":
        raise InputDomainError(f"expected a trig-smooth summary, got {summary.family!r}")
    if not isinstance(query, SmoothQuery):
        query = SmoothQuery(query, summary.meta["p"])
    if query.p != summary.meta["p"]:
        raise InputDomainError(f"query dimension {query.p} does not match summary p = {summary.meta['p']}")
    if t is not None and t != summary.meta["t"]:
        raise InputDomainError(f"degree {t} does not match the summary degree {summary.meta['t']}")
    fit = smooth_fit(query, summary.meta["t"])
    return float(fit.coeffs.reshape(-1) @ summary.coeffs)
