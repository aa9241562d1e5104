"""Independent reference computations used to check the library.

Each oracle uses a different algorithm (or library) from the code under
test, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy import integrate, optimize, special, stats
from scipy.fft import dct


def bernstein_exact(v: int, k: int, x: Fraction) -> Fraction:
    """Exact rational ``C(k, v) x^v (1 - x)^(k - v)``."""
    x = Fraction(x)
    return math.comb(k, v) * x ** v * (1 - x) ** (k - v)


def de_casteljau(values, x: float) -> float:
    """Bernstein polynomial with coefficients ``values`` at ``x`` by repeated linear interpolation."""
    b = [float(c) for c in values]
    for r in range(1, len(b)):
        b = [(1 - x) * b[i] + x * b[i + 1] for i in range(len(b) - 1)]
    return b[0]


def bernstein_operator_on_nodes(values) -> np.ndarray:
    """``(B_k f)(u / k)`` for u = 0..k, i.e. the Bernstein operator applied to grid data."""
    k = len(values) - 1
    return np.array([de_casteljau(values, u / k) for u in range(k + 1)])


def iterated_h2(values, x: float) -> float:
    """``(2 B - B o B) f`` at x, composing the operator explicitly."""
    once = bernstein_operator_on_nodes(values)
    return 2.0 * de_casteljau(values, x) - de_casteljau(once, x)


def cosine_coefficients_dct(g, t: int, n_nodes: int) -> np.ndarray:
    """Cosine-series coefficients of ``g`` on [0, pi] via scipy's type-II DCT at midpoint nodes."""
    theta = np.pi * (np.arange(n_nodes) + 0.5) / n_nodes
    c = dct(g(theta), type=2) / n_nodes
    c[0] /= 2.0
    return c[:t]


def laplace_quantile(u, scale):
    return stats.laplace.ppf(u, scale=scale)


def basis_pursuit_lp(A, b, nonneg: bool = False) -> np.ndarray:
    """``min ||w||_1 s.t. A w = b`` as a linear program (split w = w+ - w-)."""
    m, p = A.shape
    if nonneg:
        res = optimize.linprog(np.ones(p), A_eq=A, b_eq=b, bounds=[(0, None)] * p, method="highs")
        return res.x
    res = optimize.linprog(np.ones(2 * p), A_eq=np.hstack([A, -A]), b_eq=b,
                           bounds=[(0, None)] * (2 * p), method="highs")
    return res.x[:p] - res.x[p:]


def chi_mean(p: int) -> float:
    """``E ||g||_2`` for standard gaussian g in R^p."""
    return math.sqrt(2.0) * math.exp(special.gammaln((p + 1) / 2.0) - special.gammaln(p / 2.0))


def expected_max_abs_gaussian(p: int) -> float:
    """``E max_i |g_i|`` by integrating the survival function of the maximum."""
    val, _ = integrate.quad(lambda t: 1.0 - (2.0 * stats.norm.cdf(t) - 1.0) ** p, 0.0, 20.0, limit=200)
    return val


def laplace_interval_mass_quad(lo: float, hi: float, scale: float) -> float:
    val, _ = integrate.quad(lambda z: math.exp(-abs(z) / scale) / (2.0 * scale), lo, hi, points=[0.0])
    return val


def dense_grid_argmin(f, lo: float = 0.0, hi: float = 1.0, resolution: float = 1e-4):
    """Global minimizer of a scalar function on [lo, hi] by exhaustive evaluation."""
    xs = np.linspace(lo, hi, int(round((hi - lo) / resolution)) + 1)
    vals = f(xs)
    i = int(np.argmin(vals))
    return float(xs[i]), float(vals[i])
