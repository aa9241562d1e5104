"""High-dimensional generalized linear ERM by random projection.

Players compress their feature vectors with a shared-seed subgaussian
matrix, the low-dimensional problem is solved with the Bernstein mechanism,
and the server lifts the low-dimensional solution back by minimizing the
gauge of the constraint set subject to the projection constraint.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .constraints import ConstraintSet
from .errors import InfeasibleError, InputDomainError
from .erm import projected_gradient
from .losses import LossSpec
from .protocol import ProtocolConfig, comm_stats, run_protocol

PROJECTION_TAGS = ("gaussian", "rademacher", "orthogonal")
LINKS = ("logistic", "squared")
M_CAP = 3


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionMatrix:
    """``Phi = G / sqrt(m)`` with i.i.d. entries regenerated from ``(seed, m, p, tag)``.

    ``gaussian`` draws N(0, 1) entries and ``rademacher`` draws +-1. The
    ``orthogonal`` tag gives ``sqrt(p/m)`` times m orthonormal rows, which is
    an exact isometry when m = p.
    """

    m: int
    p: int
    tag: str = "gaussian"
    seed: int = 0
    matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tag not in PROJECTION_TAGS:
            raise InputDomainError(f"unknown projection tag {self.tag!r}; choose from {PROJECTION_TAGS}")
        if int(self.m) != self.m or int(self.p) != self.p or not 1 <= self.m <= self.p:
            raise InputDomainError(f"need integers 1 <= m <= p, got m={self.m}, p={self.p}")
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), zlib.crc32(self.tag.encode())]))
        if self.tag == "gaussian":
            mat = rng.standard_normal((self.m, self.p)) / math.sqrt(self.m)
        elif self.tag == "rademacher":
            mat = (2.0 * rng.integers(0, 2, size=(self.m, self.p)) - 1.0) / math.sqrt(self.m)
        else:
            q, r = np.linalg.qr(rng.standard_normal((self.p, self.m)))
            mat = (q * np.sign(np.diag(r))).T * math.sqrt(self.p / self.m)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def apply(self, Y) -> np.ndarray:
        """Project the rows of ``Y`` (each player's own matrix-vector product)."""
        return np.atleast_2d(np.asarray(Y, dtype=float)) @ self.matrix.T

    def to_dict(self) -> dict:
        return {"seed": self.seed, "m": self.m, "p": self.p, "tag": self.tag}

    @classmethod
    def from_dict(cls, doc: dict) -> "ProjectionMatrix":
        return cls(doc["m"], doc["p"], doc.get("tag", "gaussian"), doc["seed"])


def gen_projection(m: int, p: int, tag: str = "gaussian", seed: int = 0) -> ProjectionMatrix:
    return ProjectionMatrix(m, p, tag, seed)


@dataclass(frozen=True)
class JLCheck:
    passed: bool
    max_distortion: float


def jl_check(phi, points, gamma: float) -> JLCheck:
    """Check ``| ||Phi a||^2 - ||a||^2 | <= gamma ||a||^2`` on every point (0/0 counts as 0)."""
    mat = phi.matrix if isinstance(phi, ProjectionMatrix) else np.asarray(phi, dtype=float)
    S = np.atleast_2d(np.asarray(points, dtype=float))
    if S.shape[0] == 0:
        raise InputDomainError("jl_check needs a non-empty point set")
    orig = np.sum(S * S, axis=1)
    proj = np.sum((S @ mat.T) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.where(orig > 0, np.abs(proj - orig) / orig, np.where(proj > 0, np.inf, 0.0))
    worst = float(np.max(dist))
    return JLCheck(worst <= gamma, worst)


def jl_projection_dim(width: float, gamma: float, beta: float = 0.05, psi: float = 1.0,
                         C: float = 1.0, p: Optional[int] = None) -> int:
    """``ceil(C psi^4 / gamma^2 * max(width, log(1/beta))^2)``, optionally capped at p."""
    m = math.ceil(C * psi ** 4 / gamma ** 2 * max(width, math.log(1.0 / beta)) ** 2)
    return max(1, min(m, p) if p is not None else m)


def gaussian_width_mc(C, trials: int = 10 ** 4, seed: int = 0, chunk: int = 1000) -> tuple[float, float]:
    """Monte Carlo ``E sup_{a in C} <a, g>`` and its standard error.

    ``C`` is a :class:`ConstraintSet` or an ``(N, p)`` array of points (a finite
    set). Each chunk of trials draws from its own substream.
    """
    if isinstance(C, ConstraintSet):
        p, support = C.p, C.support
    else:
        pts = np.atleast_2d(np.asarray(C, dtype=float))
        if pts.size == 0:
            raise InputDomainError("point set is empty")
        p = pts.shape[1]

        def support(G):
            return np.max(G @ pts.T, axis=1)
    if trials < 2:
        raise InputDomainError("need at least two trials")
    vals = []
    for b, s in enumerate(range(0, trials, chunk)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        vals.append(support(rng.standard_normal((min(chunk, trials - s), p))))
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def lipschitz_fraction(phi: ProjectionMatrix, Y, bound: float = 2.0) -> float:
    """Fraction of records whose projected margin ``u -> <Phi y, u>`` is ``bound``-Lipschitz."""
    return float(np.mean(np.linalg.norm(phi.apply(Y), axis=1) <= bound))


# ---------------------------------------------------------------------------
# Generalized linear losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GLMLoss:
    """``f(margin, z)`` with margins clipped to ``[-B, B]`` and values rescaled into [0, 1].

    ``logistic``: ``log(1 + exp(-z m)) - log(1 + exp(-B))`` divided by ``B``
    (the range over ``|m| <= B, |z| <= 1``), which is ``1 / B``-Lipschitz.
    ``squared``: ``((m - z) / (B + 1))^2``, which is ``2 / (B + 1)``-Lipschitz.
    Both are convex in the margin on ``[-B, B]`` and 1-Lipschitz for B >= 1.
    """

    link: str = "logistic"
    margin_bound: float = 1.0

    def __post_init__(self):
        if self.link not in LINKS:
            raise InputDomainError(f"unknown link {self.link!r}; choose from {LINKS}")
        if not self.margin_bound > 0:
            raise InputDomainError("margin bound must be positive")

    def __call__(self, margin, z) -> np.ndarray:
        B = self.margin_bound
        m = np.clip(np.asarray(margin, dtype=float), -B, B)
        z = np.asarray(z, dtype=float)
        if self.link == "logistic":
            raw = np.logaddexp(0.0, -z * m) - np.logaddexp(0.0, -B)
            return np.clip(raw / B, 0.0, 1.0)
        return np.clip(((m - z) / (B + 1.0)) ** 2, 0.0, 1.0)

    def derivative(self, margin, z) -> np.ndarray:
        """d f / d margin (zero where the margin is clipped)."""
        B = self.margin_bound
        m = np.asarray(margin, dtype=float)
        z = np.asarray(z, dtype=float)
        inside = np.abs(m) < B
        mc = np.clip(m, -B, B)
        if self.link == "logistic":
            d = -z / (1.0 + np.exp(z * mc)) / B
        else:
            d = 2.0 * (mc - z) / (B + 1.0) ** 2
        return np.where(inside, d, 0.0)

    def lipschitz_estimate(self, samples: int = 2001) -> float:
        """Largest finite-difference slope over a margin grid and labels in {-1, 0, 1}."""
        m = np.linspace(-self.margin_bound, self.margin_bound, samples)
        worst = 0.0
        for z in (-1.0, 0.0, 1.0):
            v = self(m, z)
            worst = max(worst, float(np.max(np.abs(np.diff(v)) / np.diff(m))))
        return worst

    def with_bound(self, bound: float) -> "GLMLoss":
        return GLMLoss(self.link, bound)

    def to_dict(self) -> dict:
        return {"link": self.link, "margin_bound": self.margin_bound}


def check_glm_records(Y, z) -> tuple[np.ndarray, np.ndarray]:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    if Y.shape[0] != z.size or Y.shape[0] == 0:
        raise InputDomainError("need matching non-empty features and labels")
    if np.any(np.linalg.norm(Y, axis=1) > 1.0 + 1e-12):
        raise InputDomainError("feature vectors must have Euclidean norm at most 1")
    if np.any(np.abs(z) > 1.0):
        raise InputDomainError("labels must lie in [-1, 1]")
    return Y, z


def glm_risk(W, Y, z, loss: GLMLoss) -> np.ndarray:
    """Empirical risk at each row of ``W``."""
    W = np.atleast_2d(W)
    return loss(Y @ W.T, z[:, None]).mean(axis=0)


def glm_oracle(Y, z, loss: GLMLoss, C: ConstraintSet, iters: int = 3000) -> tuple[np.ndarray, float]:
    """Non-private constrained minimizer by accelerated projected gradient (the loss is convex)."""
    Y, z = check_glm_records(Y, z)
    n = Y.shape[0]
    lip = (2.0 / loss.margin_bound if loss.link == "logistic" else 2.0 / (loss.margin_bound + 1) ** 2)
    lip = lip * float(np.linalg.norm(Y, 2) ** 2) / n + 1e-12
    w = C.project(np.zeros(C.p))
    v, t = w.copy(), 1.0
    for _ in range(iters):
        g = Y.T @ loss.derivative(Y @ v, z) / n
        w_new = C.project(v - g / lip)
        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        v = w_new + (t - 1.0) / t_new * (w_new - w)
        if np.linalg.norm(w_new - w) < 1e-13:
            w = w_new
            break
        w, t = w_new, t_new
    return w, float(glm_risk(w, Y, z, loss)[0])


def planted_sparse_model(p: int, n: int, s: int = 3, seed: int = 0, link: str = "squared",
                         noise: float = 0.1, off_support_scale: float = 0.1, scale: float = 0.5):
    """Records ``(y_i, z_i)`` from a planted s-sparse parameter inside the unit l1 ball.

    The planted vector has l1 norm ``scale``. Features put unit-variance Gaussian mass on the support and
    ``off_support_scale`` elsewhere, then are normalized to unit norm. Labels
    are ``<w0, y> + noise`` clipped to [-1, 1] for the squared link and
    logistic draws in {-1, 1} otherwise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A]))
    support = rng.choice(p, size=s, replace=False)
    w0 = np.zeros(p)
    w0[support] = rng.choice([-1.0, 1.0], size=s) * scale / s
    X = off_support_scale * rng.standard_normal((n, p))
    X[:, support] = rng.standard_normal((n, s))
    Y = X / np.linalg.norm(X, axis=1, keepdims=True)
    margin = Y @ w0
    if link == "squared":
        z = np.clip(margin + noise * rng.standard_normal(n), -1.0, 1.0)
    else:
        z = np.where(rng.random(n) < 1.0 / (1.0 + np.exp(-4.0 * margin)), 1.0, -1.0)
    return Y, z, w0


# ---------------------------------------------------------------------------
# Recovery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryResult:
    w: np.ndarray
    gap: float
    residual: float
    iterations: int
    converged: bool


def recover_minkowski(wbar, phi, C: ConstraintSet, tol: float = 1e-8, max_iter: int = 50000,
                      rho: float = 1.0) -> RecoveryResult:
    """Minimize the gauge of C subject to ``Phi w = wbar`` by ADMM with duality-gap stopping.

    For an origin-centered l1 ball this is basis pursuit; for the simplex the
    gauge is ``sum w`` on the non-negative orthant. Each iterate is mapped to
    the exact affine solution set before the gap is measured, so the
    returned point satisfies the constraint to solver precision.
    """
    if C.kind not in ("l1", "simplex"):
        raise InputDomainError(f"recovery is implemented for l1 balls and simplices, not {C.kind!r}")
    if C.kind == "l1" and np.any(C._c != 0):
        raise InputDomainError("recovery needs an origin-centered l1 ball")
    mat = phi.matrix if isinstance(phi, ProjectionMatrix) else np.asarray(phi, dtype=float)
    wbar = np.asarray(wbar, dtype=float).reshape(-1)
    m, p = mat.shape
    if wbar.size != m:
        raise InputDomainError(f"wbar has length {wbar.size}, expected {m}")
    gram = mat @ mat.T
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise InfeasibleError("projection matrix is rank deficient") from None

    def solve(b):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, b))

    def affine(v):
        return v - mat.T @ solve(mat @ v - wbar)

    scale = C.radius
    nonneg = C.kind == "simplex"
    if not np.any(wbar):
        return RecoveryResult(np.zeros(p), 0.0, 0.0, 0, True)

    def gauge(v):
        return float(np.sum(np.abs(v)) / scale)

    x = affine(np.zeros(p))
    zv = x.copy()
    u = np.zeros(p)
    gap = math.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        x = affine(zv - u)
        v = x + u
        thresh = 1.0 / (rho * scale)
        zv = np.maximum(v - thresh, 0.0) if nonneg else np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
        u = u + x - zv
        if it % 25 == 0:
            # dual candidate from the scaled multiplier, rescaled to be feasible
            g = rho * u * scale
            nu = solve(mat @ g)
            at = mat.T @ nu
            worst = np.max(at) if nonneg else np.max(np.abs(at))
            nu = nu / max(1.0, float(worst))
            dual = float(nu @ wbar) / scale
            primal_pt = affine(zv)
            if nonneg and np.min(primal_pt) < -1e-9:
                continue
            gap = gauge(primal_pt) - dual
            if abs(gap) <= tol * max(1.0, gauge(primal_pt)):
                converged = True
                break
    w = affine(zv)
    if nonneg:
        if np.min(w) < -1e-6:
            raise InfeasibleError("no non-negative solution of Phi w = wbar was found")
        w = np.maximum(w, 0.0)
    residual = float(np.linalg.norm(mat @ w - wbar))
    return RecoveryResult(w, float(gap), residual, it, converged)


def project_onto_image(u, phi, C: ConstraintSet, iters: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """Nearest point of ``Phi C`` to ``u`` by Frank-Wolfe over w in C.

    Linear minimization over an l1 ball or simplex picks a signed vertex, so
    each step costs one matrix-vector product. Returns ``(w, Phi w)``.
    """
    if C.kind not in ("l1", "simplex"):
        raise InputDomainError("the image projection oracle supports l1 balls and simplices")
    mat = phi.matrix if isinstance(phi, ProjectionMatrix) else np.asarray(phi, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.zeros(C.p) if C.kind == "l1" else np.full(C.p, C.radius / C.p)
    for t in range(iters):
        r = mat @ w - u
        g = mat.T @ r
        if C.kind == "l1":
            j = int(np.argmax(np.abs(g)))
            s = np.zeros(C.p)
            s[j] = -C.radius * np.sign(g[j]) if g[j] != 0 else 0.0
        else:
            j = int(np.argmin(g))
            s = np.zeros(C.p)
            s[j] = C.radius
        d = s - w
        if -g @ d <= 1e-14:
            break
        Ad = mat @ d
        step = min(1.0, max(0.0, -(r @ Ad) / max(Ad @ Ad, 1e-300)))
        w = w + step * d
    return w, mat @ w


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def auto_m(n: int, width: float, epsilon: float, beta: float = 0.05, psi: float = 1.0,
           p: Optional[int] = None, cap: int = M_CAP) -> tuple[int, int]:
    """Projection dimension from the rate-optimal setting with constants 1.

    Returns ``(m_used, m_formula)``; ``m_used`` is capped at ``cap`` (and p)
    so the low-dimensional grid stays tractable.
    """
    if not epsilon > 0:
        raise InputDomainError("epsilon must be positive")
    if not math.isfinite(epsilon):
        # no noise means zero target distortion, so the formula asks for every dimension
        m_formula = p if p is not None else cap
        return max(1, min(m_formula, cap)), m_formula
    a = width + math.sqrt(math.log(n))
    gamma = psi * math.sqrt(a) * math.log(1 / beta) * math.log(n / beta) ** 0.25 / (math.sqrt(n) * epsilon)
    m_formula = max(1, math.ceil(psi ** 4 * a ** 2 * math.log(n / beta) / gamma ** 2))
    m_used = min(m_formula, cap, p if p is not None else m_formula)
    return max(1, m_used), m_formula


@dataclass
class HighDimResult:
    w_priv: np.ndarray
    w_bar: np.ndarray
    w_low: np.ndarray
    projection: dict
    width: Optional[tuple]
    jl: Optional[JLCheck]
    excess_risk: Optional[float]
    oracle_risk: Optional[float]
    recovery: dict
    comm: dict
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "w_priv": self.w_priv.tolist(), "w_bar": self.w_bar.tolist(),
            "w_low": self.w_low.tolist(), "projection": self.projection,
            "gaussian_width": None if self.width is None else list(self.width),
            "jl": None if self.jl is None else {"passed": self.jl.passed,
                                                "max_distortion": self.jl.max_distortion},
            "excess_risk": self.excess_risk, "oracle_risk": self.oracle_risk,
            "recovery": self.recovery, "comm": self.comm, "flags": self.flags, "meta": self.meta,
        }, sort_keys=True)


def _image_radius(mat: np.ndarray, C: ConstraintSet) -> float:
    """``max_{w in C} ||Phi w||_inf``, attained at a vertex of the l1 ball or simplex."""
    return float(C.radius * np.max(np.abs(mat)))


def low_dim_loss(loss: GLMLoss, m: int, radius: float) -> LossSpec:
    """Loss on theta in [0, 1]^m for projected records ``(Phi y, z)``.

    theta maps to ``u = radius * (2 theta - 1)``, a box containing Phi C, and
    the link is rescaled to the margin bound ``2 * loss.margin_bound``
    (the projected margin stays below it when Phi is 2-Lipschitz on the data).
    """
    low = loss.with_bound(2.0 * loss.margin_bound)

    def pointwise(th, rec):
        u = radius * (2.0 * th - 1.0)
        return low(np.sum(rec[:, :m] * u, axis=1), rec[:, m])

    return LossSpec(f"glm-{loss.link}-projected", pointwise, m, m + 1, math.inf, 1.0, True)


def dr_erm(Y, z, loss: GLMLoss, C: ConstraintSet, epsilon: float, m: Union[int, str] = "auto",
           k: int = 4, h: int = 2, seed: int = 0, tag: str = "gaussian",
           mechanism: str = "full-grid", measure: bool = True, width_trials: int = 2000,
           n_starts: int = 16) -> HighDimResult:
    """Dimension-reduced private ERM for generalized linear losses over an l1 ball or simplex.

    1. players compute ``(Phi y_i, z_i)`` with the shared-seed matrix;
    2. the Bernstein mechanism builds a surrogate of the projected risk on a
       box containing ``Phi C``;
    3. the server minimizes the surrogate over ``Phi C`` by parametrizing
       ``u = Phi w`` with ``w`` in C (exact projections onto C);
    4. ``w_priv`` minimizes the gauge of C subject to ``Phi w = w_bar``.
    """
    if C.kind not in ("l1", "simplex"):
        raise InputDomainError(f"dr_erm supports l1 balls and simplices, not {C.kind!r}")
    Y, z = check_glm_records(Y, z)
    n, p = Y.shape
    if C.p != p:
        raise InputDomainError(f"constraint dimension {C.p} does not match features {p}")
    flags = []
    width = gaussian_width_mc(C, width_trials, seed) if measure or m == "auto" else None
    if m == "auto":
        m, m_formula = auto_m(n, width[0], epsilon, p=p)
        if m < m_formula:
            flags.append(f"m-capped:{m_formula}->{m}")
    phi = gen_projection(int(m), p, tag, seed)
    mat = phi.matrix
    radius = _image_radius(mat, C)
    records = np.column_stack([phi.apply(Y), z])
    lowloss = low_dim_loss(loss, phi.m, radius)
    run = run_protocol(records, lowloss, ProtocolConfig(mechanism, epsilon, k, h, phi.m, seed=seed))
    sur = run.surrogate

    def theta_of(W):
        return np.clip((W @ mat.T / radius + 1.0) / 2.0, 0.0, 1.0)

    def f(W):
        return sur.evaluate(theta_of(W))

    def grad(W):
        return sur.gradient(theta_of(W)) @ mat / (2.0 * radius)

    starts = C.start_points(n_starts, np.random.default_rng([seed, 0xD2]))
    W, fw, conv = projected_gradient(f, grad, C, starts, max_iter=1000)
    order = np.lexsort([W[:, j] for j in range(p - 1, -1, -1)] + [fw])
    w_low = W[order[0]]
    if not conv:
        flags.append("low-dim-minimizer-not-converged")
    w_bar = mat @ w_low
    try:
        rec = recover_minkowski(w_bar, mat, C)
        w_priv = rec.w
        recovery = {"method": "admm", "gap": rec.gap, "residual": rec.residual,
                    "iterations": rec.iterations, "converged": rec.converged}
        if not rec.converged:
            flags.append("recovery-gap-not-reached")
    except InfeasibleError as exc:
        w_priv = np.linalg.lstsq(mat, w_bar, rcond=None)[0]
        recovery = {"method": "lstsq-fallback", "error": str(exc),
                    "residual": float(np.linalg.norm(mat @ w_priv - w_bar))}
        flags.append("recovery-infeasible")
    jl = excess = oracle_risk = None
    if measure:
        jl = jl_check(phi, Y, 0.5)
        _, oracle_risk = glm_oracle(Y, z, loss, C)
        excess = float(glm_risk(w_priv, Y, z, loss)[0] - oracle_risk)
    return HighDimResult(w_priv, w_bar, w_low, phi.to_dict(), width, jl, excess, oracle_risk,
                         recovery, comm_stats(run.transcript), flags,
                         {"k": k, "h": h, "m": phi.m, "epsilon": epsilon, "mechanism": mechanism,
                          "low_dim_solver": "bernstein-surrogate", "image_radius": radius})
