"""Private empirical risk minimization over a perturbed Bernstein surrogate.

The server never sees records. It fits an iterated Bernstein surrogate to
noisy grid estimates of the empirical risk and minimizes that surrogate over
the constraint set. Non-private oracles measure how much risk this costs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .constraints import ConstraintSet
from .errors import InputDomainError, ResourceError
from .losses import LossSpec
from .polyapprox import BernsteinSurrogate, unit_grid
from .protocol import GRID_CAP, ProtocolConfig, comm_stats, run_protocol

N_STARTS = 32
ORACLE_RESOLUTION = 1e-4

Objective = Callable[[np.ndarray], np.ndarray]


def build_grid(k: int, p: int, cap: int = GRID_CAP) -> np.ndarray:
    """The ``(k+1)^p`` points ``(v_1/k, ..., v_p/k)`` in lexicographic multi-index order."""
    if int(k) != k or k < 1 or int(p) != p or p < 1:
        raise InputDomainError("build_grid needs integers k >= 1 and p >= 1")
    if (k + 1) ** p > cap:
        raise ResourceError(f"grid of (k+1)^p = {(k + 1) ** p} points exceeds the cap {cap}")
    return unit_grid(int(k), int(p))


def auto_k(n: int, p: int, h: int, epsilon: float, beta: float = 0.05,
           mechanism: str = "full-grid") -> int:
    """Grid granularity from the rate-optimal choice, every unspecified constant set to 1.

    Full-grid and discretized mechanisms use
    ``(sqrt(p n) eps / (2^((h+1)p) sqrt(log 1/beta)))^(1/(h+p))``; the one-bit
    mechanism uses ``(sqrt(p n) eps / (2^((p+1)p) sqrt(log 1/beta)))^(1/(2p))``.
    """
    if not math.isfinite(epsilon):
        raise InputDomainError("automatic k needs a finite epsilon")
    if mechanism == "partitioned-one-bit":
        base = math.sqrt(p * n) * epsilon / (2.0 ** ((p + 1) * p) * math.sqrt(math.log(1 / beta)))
        expo = 1.0 / (2 * p)
    else:
        base = math.sqrt(p * n) * epsilon / (2.0 ** ((h + 1) * p) * math.sqrt(math.log(1 / beta)))
        expo = 1.0 / (h + p)
    return max(1, int(round(base ** expo)))


def resolve_config(mechanism: str, epsilon: float, n: int, k: Union[int, str] = "auto", h: int = 1,
                   p: int = 1, seed: int = 0, **kwargs) -> ProtocolConfig:
    if k == "auto":
        k = auto_k(n, p, h, epsilon, kwargs.get("beta", 0.05), mechanism)
    return ProtocolConfig(mechanism, epsilon, int(k), h, p, seed=seed, **kwargs)


# ---------------------------------------------------------------------------
# Minimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MinimizeResult:
    theta: np.ndarray
    value: float
    converged: bool
    method: str
    n_starts: int


def _best(points: np.ndarray, values: np.ndarray) -> int:
    """Index of the smallest value; ties go to the lexicographically smallest point."""
    keys = [points[:, j] for j in range(points.shape[1] - 1, -1, -1)] + [values]
    return int(np.lexsort(keys)[0])


def projected_gradient(f: Objective, grad: Objective, C: ConstraintSet, starts: np.ndarray,
                       max_iter: int = 500, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray, bool]:
    """Projected gradient from every start at once, with per-start backtracking.

    Accepts a step when ``f(x+) <= f(x) + <g, x+ - x> + ||x+ - x||^2 / (2 eta)``,
    which guarantees monotone descent.
    """
    X = C.project(starts)
    fx = f(X)
    g = grad(X)
    eta = np.ones(X.shape[0])
    active = np.ones(X.shape[0], dtype=bool)
    for _ in range(max_iter):
        idx_all = np.nonzero(active)[0]
        if idx_all.size == 0:
            break
        pending = idx_all.copy()
        moved = np.zeros(X.shape[0])
        for _ in range(60):
            if pending.size == 0:
                break
            cand = C.project(X[pending] - eta[pending, None] * g[pending])
            fc = f(cand)
            D = cand - X[pending]
            bound = (fx[pending] + np.sum(g[pending] * D, axis=1)
                     + np.sum(D * D, axis=1) / (2 * eta[pending]) + 1e-15 * np.abs(fx[pending]))
            ok = fc <= bound
            acc = pending[ok]
            X[acc] = cand[ok]
            fx[acc] = fc[ok]
            moved[acc] = np.linalg.norm(D[ok], axis=1)
            eta[pending[~ok]] *= 0.5
            pending = pending[~ok]
        stalled = moved[idx_all] <= tol
        active[idx_all[stalled]] = False
        upd = idx_all[~stalled]
        if upd.size:
            g[upd] = grad(X[upd])
            eta[upd] = np.minimum(eta[upd] * 2.0, 1e6)
    return X, fx, not active.any()


def zoom_grid_search(f: Objective, C: ConstraintSet, resolution: float = ORACLE_RESOLUTION,
                     keep: int = 3) -> tuple[np.ndarray, float]:
    """Coarse grid over C's bounding box, then repeated local refinement down to ``resolution``.

    The ``keep`` best coarse cells are refined independently so that a
    second basin close in value is not discarded early.
    """
    p = C.p
    if p > 2:
        raise InputDomainError("grid search is only used for p <= 2")
    lo, hi = C.bounding_box()
    coarse = 1001 if p == 1 else 201
    axes = [np.linspace(lo[j], hi[j], coarse) for j in range(p)]
    pts = C.project(np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=1))
    vals = f(pts)
    order = np.lexsort([pts[:, j] for j in range(p - 1, -1, -1)] + [vals])
    step = (hi - lo) / (coarse - 1)
    best_pt, best_val = pts[order[0]], vals[order[0]]
    seeds, seen = [], set()
    for i in order:
        key = tuple(np.round(pts[i] / np.maximum(step, 1e-300)).astype(int))
        if key in seen:
            continue
        seen.add(key)
        seeds.append(pts[i])
        if len(seeds) == keep:
            break
    for center in seeds:
        s = step.copy()
        c = center
        while np.max(s) > resolution:
            s = s / 10.0
            local = [np.clip(c[j] + s[j] * np.arange(-20, 21), lo[j], hi[j]) for j in range(p)]
            grid = C.project(np.stack([a.reshape(-1) for a in np.meshgrid(*local, indexing="ij")], axis=1))
            gv = f(grid)
            b = _best(grid, gv)
            c = grid[b]
            if gv[b] < best_val or (gv[b] == best_val and tuple(c) < tuple(best_pt)):
                best_pt, best_val = c, gv[b]
    return best_pt, float(best_val)


def minimize_over(f: Objective, grad: Objective, C: ConstraintSet, seed: int = 0,
                  n_starts: int = N_STARTS, grid_fallback: bool = True, max_iter: int = 500,
                  resolution: float = ORACLE_RESOLUTION) -> MinimizeResult:
    """Multi-start projected gradient, plus zoom-grid search when p <= 2.

    Candidates are merged by (value, lexicographic point), so the result does
    not depend on the order in which starts finish.
    """
    rng = np.random.default_rng([seed, 0x5EED])
    starts = C.start_points(n_starts, rng)
    X, fx, converged = projected_gradient(f, grad, C, starts, max_iter=max_iter)
    method = "multistart-pgd"
    if grid_fallback and C.p <= 2:
        gp, _ = zoom_grid_search(f, C, resolution)
        Xg, fg, _ = projected_gradient(f, grad, C, gp[None, :], max_iter=max_iter)
        X = np.vstack([X, gp[None, :], Xg])
        fx = np.concatenate([fx, f(gp[None, :]), fg])
        method = "multistart-pgd+grid"
    b = _best(X, fx)
    return MinimizeResult(X[b].copy(), float(fx[b]), bool(converged), method, int(starts.shape[0]))


def finite_difference_gradient(f: Objective, step: float = 1e-6) -> Objective:
    def grad(X):
        X = np.atleast_2d(X)
        N, p = X.shape
        E = np.eye(p) * step
        pts = np.concatenate([X[:, None, :] + E[None], X[:, None, :] - E[None]], axis=1)
        v = f(pts.reshape(-1, p)).reshape(N, 2 * p)
        return (v[:, :p] - v[:, p:]) / (2 * step)
    return grad


@dataclass(frozen=True)
class OracleResult:
    theta: np.ndarray
    value: float
    method: str


def oracle_minimize(loss: LossSpec, data, C: ConstraintSet, seed: int = 0) -> OracleResult:
    """Non-private minimizer of the empirical risk.

    p <= 2 uses zoom-grid search at resolution 1e-4 polished by a short run
    of projected gradient; larger p uses 32-start projected gradient with
    5000 iterations.
    """
    f = loss.risk_function(data)
    grad = finite_difference_gradient(f)
    if C.p <= 2:
        res = minimize_over(f, grad, C, seed, n_starts=4, max_iter=200)
        return OracleResult(res.theta, res.value, "grid+pgd")
    res = minimize_over(f, grad, C, seed, n_starts=N_STARTS, grid_fallback=False, max_iter=5000)
    return OracleResult(res.theta, res.value, "multistart-pgd")


# ---------------------------------------------------------------------------
# Risk measurement
# ---------------------------------------------------------------------------

def _check_member(theta, C: ConstraintSet) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(C.p)
    if not C.contains(theta, tol=1e-9):
        raise InputDomainError("theta is not in the constraint set")
    return theta


def excess_empirical_risk(theta, data, loss: LossSpec, C: ConstraintSet,
                          oracle: Optional[OracleResult] = None) -> float:
    """``L(theta; D) - min_C L(.; D)`` with the oracle minimum."""
    theta = _check_member(theta, C)
    oracle = oracle or oracle_minimize(loss, data, C)
    return float(loss.empirical_risk(theta[None, :], data)[0] - oracle.value)


def excess_population_risk(theta, sampler: Callable[[int, np.random.Generator], np.ndarray],
                           loss: LossSpec, C: ConstraintSet, eval_n: int = 10 ** 5,
                           seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of ``L_P(theta) - min_C L_P``.

    Both terms use one fresh sample; the minimizer is the oracle minimizer of
    that sample.
    """
    if eval_n < 100:
        raise InputDomainError("eval_n must be at least 100")
    theta = _check_member(theta, C)
    fresh = loss.check_records(sampler(eval_n, np.random.default_rng([seed, 0xF2E5])))
    star = oracle_minimize(loss, fresh, C)
    diff = (loss.loss_matrix(np.vstack([theta, star.theta]), fresh) @ np.array([1.0, -1.0]))
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(fresh.shape[0]))


def evaluation_points(C: ConstraintSet, extra=None, per_axis: Optional[int] = None) -> np.ndarray:
    p = C.p
    per_axis = per_axis or {1: 1001, 2: 101, 3: 21}.get(p, 5)
    lo, hi = C.bounding_box()
    axes = [np.linspace(lo[j], hi[j], per_axis) for j in range(p)]
    pts = C.project(np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=1))
    if extra is not None:
        pts = np.vstack([pts, np.atleast_2d(extra)])
    return pts


def sup_grid_error(surrogate: BernsteinSurrogate, data, loss: LossSpec, C: ConstraintSet,
                   extra=None, per_axis: Optional[int] = None) -> float:
    """``max |surrogate - empirical risk|`` over a dense grid of C plus ``extra`` points."""
    pts = np.clip(evaluation_points(C, extra, per_axis), 0.0, 1.0)
    return float(np.max(np.abs(surrogate.evaluate(pts) - loss.empirical_risk(pts, data))))


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

@dataclass
class ERMResult:
    theta_priv: np.ndarray
    surrogate: BernsteinSurrogate
    err_empirical: Optional[float]
    sup_grid_error: Optional[float]
    comm: dict
    config: dict
    minimizer: dict
    mu: float = 0.0
    err_population: Optional[float] = None
    err_population_se: Optional[float] = None
    oracle_theta: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta_priv": self.theta_priv.tolist(),
            "err_empirical": self.err_empirical,
            "err_population": self.err_population,
            "err_population_se": self.err_population_se,
            "sup_grid_error": self.sup_grid_error,
            "oracle_theta": None if self.oracle_theta is None else self.oracle_theta.tolist(),
            "comm": self.comm,
            "config": self.config,
            "minimizer": self.minimizer,
            "mu": self.mu,
            "flags": list(self.flags),
            "surrogate": json.loads(self.surrogate.to_json()),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def private_erm(data, loss: LossSpec, C: ConstraintSet, config: ProtocolConfig, *,
                measure: bool = True, mu: float = 0.0, n_starts: int = N_STARTS) -> ERMResult:
    """Run the protocol, minimize the surrogate (plus ``mu/2 ||theta||^2``) over C and measure.

    With ``measure`` set, the result carries the excess empirical risk and
    the sup distance between surrogate and empirical risk over a dense grid
    of C that includes the private and oracle minimizers.
    """
    if not (loss.p == C.p == config.p):
        raise InputDomainError(f"dimensions disagree: loss {loss.p}, constraint {C.p}, config {config.p}")
    if not C.inside_unit_cube():
        raise InputDomainError("the constraint set must lie inside the unit cube")
    run = run_protocol(data, loss, config)
    sur = run.surrogate

    def f(X):
        return sur.evaluate(X) + 0.5 * mu * np.sum(X * X, axis=1)

    def grad(X):
        return sur.gradient(X) + mu * X

    res = minimize_over(f, grad, C, seed=config.seed, n_starts=n_starts)
    flags = []
    if not res.converged:
        flags.append("minimizer-not-converged")
    if not run.filled.all():
        flags.append(f"empty-cells:{int((~run.filled).sum())}")
    out = ERMResult(
        theta_priv=res.theta, surrogate=sur, err_empirical=None, sup_grid_error=None,
        comm=comm_stats(run.transcript), config=config.to_dict(),
        minimizer={"method": res.method, "value": res.value, "converged": res.converged,
                   "n_starts": res.n_starts},
        mu=float(mu), flags=flags)
    if measure:
        oracle = oracle_minimize(loss, data, C)
        out.oracle_theta = oracle.theta
        out.err_empirical = excess_empirical_risk(res.theta, data, loss, C, oracle)
        out.sup_grid_error = sup_grid_error(sur, data, loss, C, np.vstack([res.theta, oracle.theta]))
    return out


def private_erm_regularized(data, loss: LossSpec, C: ConstraintSet, config: ProtocolConfig,
                            mu: Union[float, str] = "auto", **kwargs) -> ERMResult:
    """As :func:`private_erm` with a server-side ridge term; ``"auto"`` means ``mu = n^(-1/12)``."""
    if not loss.convex:
        raise InputDomainError("ridge regularization is defined for convex losses")
    n = loss.check_records(data).shape[0]
    if mu == "auto":
        mu = n ** (-1.0 / 12.0)
    mu = float(mu)
    if not mu >= 0:
        raise InputDomainError("mu must be non-negative")
    return private_erm(data, loss, C, config, mu=mu, **kwargs)
