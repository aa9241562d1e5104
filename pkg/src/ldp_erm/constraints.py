"""Convex constraint sets with exact Euclidean projections."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputDomainError

KINDS = ("box", "l2", "l1", "simplex")


def _project_simplex_rows(V: np.ndarray, radius: float) -> np.ndarray:
    """Project each row onto ``{w >= 0, sum w = radius}`` (sort-and-threshold)."""
    N, p = V.shape
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - radius
    ind = np.arange(1, p + 1)
    cond = U - css / ind > 0
    rho = p - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(N), rho] / (rho + 1)
    return np.maximum(V - tau[:, None], 0.0)


def _project_l1_rows(V: np.ndarray, radius: float) -> np.ndarray:
    A = np.abs(V)
    inside = A.sum(axis=1) <= radius
    out = V.copy()
    if not np.all(inside):
        P = _project_simplex_rows(A[~inside], radius)
        out[~inside] = np.sign(V[~inside]) * P
    return out


@dataclass(frozen=True)
class ConstraintSet:
    """A box, Euclidean ball, l1 ball or scaled probability simplex in R^p.

    Parameters
    ----------
    kind : {"box", "l2", "l1", "simplex"}
    p : int
        Ambient dimension.
    radius : float
        Ball radius, or simplex total mass. Ignored for boxes.
    center : array_like, optional
        Ball center (defaults to the origin). Ignored for boxes and simplices.
    lo, hi : array_like, optional
        Box bounds (default the unit cube).
    """

    kind: str
    p: int
    radius: float = 1.0
    center: Optional[tuple] = None
    lo: Optional[tuple] = None
    hi: Optional[tuple] = None
    _c: np.ndarray = field(init=False, repr=False, compare=False)
    _lo: np.ndarray = field(init=False, repr=False, compare=False)
    _hi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputDomainError(f"unknown constraint kind {self.kind!r}; choose from {KINDS}")
        if int(self.p) != self.p or self.p < 1:
            raise InputDomainError(f"dimension must be a positive integer, got {self.p!r}")
        if not self.radius > 0:
            raise InputDomainError("radius must be positive")
        c = np.zeros(self.p) if self.center is None else np.asarray(self.center, dtype=float)
        lo = np.zeros(self.p) if self.lo is None else np.broadcast_to(np.asarray(self.lo, float), (self.p,))
        hi = np.ones(self.p) if self.hi is None else np.broadcast_to(np.asarray(self.hi, float), (self.p,))
        if c.shape != (self.p,):
            raise InputDomainError("center has the wrong dimension")
        if np.any(lo > hi):
            raise InputDomainError("box needs lo <= hi")
        for name, val in (("_c", c), ("_lo", lo.copy()), ("_hi", hi.copy())):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    # -- constructors -----------------------------------------------------
    @classmethod
    def box(cls, p: int, lo=0.0, hi=1.0) -> "ConstraintSet":
        lo_t = tuple(np.broadcast_to(np.asarray(lo, float), (p,)).tolist())
        hi_t = tuple(np.broadcast_to(np.asarray(hi, float), (p,)).tolist())
        return cls("box", p, lo=lo_t, hi=hi_t)

    @classmethod
    def l2_ball(cls, p: int, radius: float = 1.0, center=None) -> "ConstraintSet":
        return cls("l2", p, radius, None if center is None else tuple(np.asarray(center, float).tolist()))

    @classmethod
    def l1_ball(cls, p: int, radius: float = 1.0, center=None) -> "ConstraintSet":
        return cls("l1", p, radius, None if center is None else tuple(np.asarray(center, float).tolist()))

    @classmethod
    def simplex(cls, p: int, radius: float = 1.0) -> "ConstraintSet":
        return cls("simplex", p, radius)

    @classmethod
    def from_dict(cls, doc: dict) -> "ConstraintSet":
        doc = dict(doc)
        for key in ("center", "lo", "hi"):
            if doc.get(key) is not None:
                doc[key] = tuple(np.broadcast_to(np.asarray(doc[key], float), (doc["p"],)).tolist())
        return cls(**doc)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "radius": self.radius,
                "center": self.center, "lo": self.lo, "hi": self.hi}

    # -- geometry ---------------------------------------------------------
    def project(self, X) -> np.ndarray:
        """Euclidean projection of each row of ``X`` (or a single point) onto the set."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.p:
            raise InputDomainError(f"points must have dimension {self.p}")
        if self.kind == "box":
            out = np.clip(X, self._lo, self._hi)
        elif self.kind == "l2":
            D = X - self._c
            nrm = np.linalg.norm(D, axis=1, keepdims=True)
            scale = np.minimum(1.0, self.radius / np.maximum(nrm, 1e-300))
            out = self._c + D * scale
        elif self.kind == "l1":
            out = self._c + _project_l1_rows(X - self._c, self.radius)
        else:
            out = _project_simplex_rows(X, self.radius)
        return out[0] if single else out

    def contains(self, X, tol: float = 1e-9):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "box":
            ok = np.all((X >= self._lo - tol) & (X <= self._hi + tol), axis=1)
        elif self.kind == "l2":
            ok = np.linalg.norm(X - self._c, axis=1) <= self.radius + tol
        elif self.kind == "l1":
            ok = np.abs(X - self._c).sum(axis=1) <= self.radius + tol
        else:
            ok = np.all(X >= -tol, axis=1) & (np.abs(X.sum(axis=1) - self.radius) <= tol)
        return bool(ok[0]) if ok.size == 1 else ok

    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self._hi - self._lo))
        if self.kind == "simplex":
            return self.radius * math.sqrt(2.0) if self.p > 1 else 0.0
        return 2.0 * self.radius

    def support(self, U) -> np.ndarray:
        """``max_{w in C} <u, w>`` for each row ``u`` of ``U``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.kind == "box":
            return np.sum(np.maximum(U * self._lo, U * self._hi), axis=1)
        if self.kind == "l2":
            return U @ self._c + self.radius * np.linalg.norm(U, axis=1)
        if self.kind == "l1":
            return U @ self._c + self.radius * np.max(np.abs(U), axis=1)
        return self.radius * np.max(U, axis=1)

    def gauge(self, W) -> np.ndarray:
        """Minkowski functional ``inf {t > 0 : w in t C}``.

        Balls use their origin-centered version. The simplex uses the hull of
        the simplex and the origin, so the gauge is ``sum w / radius`` on the
        non-negative orthant and infinite elsewhere.
        """
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if self.kind == "l2":
            return np.linalg.norm(W, axis=1) / self.radius
        if self.kind == "l1":
            return np.abs(W).sum(axis=1) / self.radius
        if self.kind == "simplex":
            return np.where(np.all(W >= -1e-12, axis=1), W.sum(axis=1) / self.radius, np.inf)
        half = (self._hi - self._lo) / 2.0
        mid = (self._hi + self._lo) / 2.0
        if np.any(np.abs(mid) > 1e-12):
            raise InputDomainError("box gauge needs a box centered at the origin")
        return np.max(np.abs(W) / half, axis=1)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return self._lo.copy(), self._hi.copy()
        if self.kind == "simplex":
            return np.zeros(self.p), np.full(self.p, self.radius)
        return self._c - self.radius, self._c + self.radius

    def inside_unit_cube(self) -> bool:
        lo, hi = self.bounding_box()
        return bool(np.all(lo >= -1e-12) and np.all(hi <= 1 + 1e-12))

    def start_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Deterministic extreme points plus seeded random interior points, all inside the set."""
        lo, hi = self.bounding_box()
        pts = [(lo + hi) / 2.0]
        if self.kind == "box" and self.p <= 6:
            corners = np.array(np.meshgrid(*[[0.0, 1.0]] * self.p, indexing="ij")).reshape(self.p, -1).T
            pts.extend(lo + corners * (hi - lo))
        elif self.kind in ("l1", "simplex", "l2"):
            eye = np.eye(self.p) * self.radius
            base = self._c if self.kind != "simplex" else np.zeros(self.p)
            pts.extend(base + eye[: min(self.p, count // 4 + 1)])
        need = max(0, count - len(pts))
        if need:
            pts.extend(lo + rng.random((need, self.p)) * (hi - lo))
        return self.project(np.array(pts[: max(count, 1)]))
