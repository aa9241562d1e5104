"""Client-side randomizers and server-side estimators.

Every randomizer here consumes uniforms from a seeded stream and turns them
into noise by inverse-CDF transforms, so a player's message is a pure
function of (input, parameters, stream position).
"""

from __future__ import annotations

import json
import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import laplace as _laplace

from .errors import DegenerateInputError, InputDomainError

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Parameters and randomness plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget ``epsilon``, failure probability ``beta`` and optional target error ``alpha``.

    ``epsilon = math.inf`` is accepted and means the noise-free limit.
    """

    epsilon: float
    beta: float = 0.05
    alpha: Optional[float] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InputDomainError(f"epsilon must be positive, got {self.epsilon!r}")
        if not 0 < self.beta < 1:
            raise InputDomainError(f"beta must lie in (0, 1), got {self.beta!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise InputDomainError(f"alpha must be positive, got {self.alpha!r}")

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "beta": self.beta, "alpha": self.alpha}


class _DrawCounter:
    """Counts noise draws so tests can prove a code path never randomizes."""

    def __init__(self):
        self.count = 0

    def add(self, k: int) -> None:
        self.count += int(k)

    def reset(self) -> None:
        self.count = 0


NOISE_DRAWS = _DrawCounter()


def _stream_key(tag) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode())
    return int(tag)


def stream(seed: int, tag, offset: int = 0) -> np.random.Generator:
    """Generator for the named substream of ``seed``, advanced by ``offset`` doubles."""
    bit_gen = np.random.PCG64(np.random.SeedSequence([int(seed), _stream_key(tag)]))
    if offset:
        bit_gen.advance(int(offset))
    return np.random.Generator(bit_gen)


def player_stream(seed: int, tag, player: int, draws_per_player: int) -> np.random.Generator:
    """Player ``player``'s private substream.

    Players own consecutive blocks of ``draws_per_player`` uniforms of the
    tagged stream, so drawing all players at once in index order or each
    player separately yields bit-identical values.
    """
    return stream(seed, tag, offset=player * draws_per_player)


def open_uniform(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniforms on the open interval (0, 1), one stream double each."""
    return rng.random(size) + 2.0 ** -54


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Laplace noise and averaging
# ---------------------------------------------------------------------------

def laplace_from_uniform(u, scale: float):
    """Inverse Laplace CDF applied to uniforms in (0, 1)."""
    c = np.asarray(u, dtype=float) - 0.5
    return -scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def laplace_sample(scale: float, rng, size=None):
    """Draw Laplace(0, scale) noise by inverse CDF, one uniform per sample."""
    if not scale > 0 or not math.isfinite(scale):
        raise InputDomainError(f"Laplace scale must be positive and finite, got {scale!r}")
    rng = _as_rng(rng)
    u = open_uniform(rng, size)
    NOISE_DRAWS.add(np.size(u))
    out = laplace_from_uniform(u, scale)
    return float(out) if size is None else out


def _check_range(values: np.ndarray, b: float, what: str = "values") -> None:
    if not b > 0:
        raise InputDomainError(f"range bound b must be positive, got {b!r}")
    if values.size and (np.any(~np.isfinite(values)) or values.min() < 0 or values.max() > b):
        raise InputDomainError(f"{what} must lie in [0, {b}]")


def ldp_avg_1d(values, b: float, epsilon: float, rng) -> float:
    """Each player sends ``v_i + Lap(b / epsilon)``; the server averages the reports."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise InputDomainError("need at least one player")
    _check_range(v, b)
    if math.isinf(epsilon):
        return float(np.mean(v))
    z = v + laplace_sample(b / epsilon, rng, size=v.size)
    return float(np.mean(z))


@dataclass(frozen=True)
class CoordinateReports:
    """Wire form of the coordinate-sampling average: one (coordinate, value) pair per player."""

    coordinate: np.ndarray
    value: np.ndarray
    p: int
    b: float


def coordinate_reports(entry, n: int, p: int, b: float, epsilon: float, rng) -> CoordinateReports:
    """Player side of the p-dimensional average, computing only the sampled entries.

    Each player picks one coordinate ``j`` uniformly (independently of her
    data) and reports ``p * v_j + Lap(p * b / epsilon)``. ``entry(rows, cols)``
    returns ``v[rows, cols]``, so a player never materializes her full vector.
    """
    if n < 1 or p < 1:
        raise InputDomainError("need at least one player and one coordinate")
    rng = _as_rng(rng)
    coord = rng.integers(0, p, size=n)
    v = np.asarray(entry(np.arange(n), coord), dtype=float)
    _check_range(v, b, "coordinates")
    value = p * v
    if not math.isinf(epsilon):
        value = value + laplace_sample(p * b / epsilon, rng, size=n)
    return CoordinateReports(coord, value, p, b)


def ldp_avg_pd_reports(vectors, b: float, epsilon: float, rng) -> CoordinateReports:
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputDomainError("need a non-empty (n, p) array of vectors")
    _check_range(x, b, "coordinates")
    return coordinate_reports(lambda i, j: x[i, j], x.shape[0], x.shape[1], b, epsilon, rng)


def ldp_avg_pd_estimate(reports: CoordinateReports) -> np.ndarray:
    """Server side: per-coordinate average of ``report / p``.

    Coordinates nobody sampled (possible only when n is tiny) fall back to
    the range midpoint ``b / 2`` with a warning.
    """
    p = reports.p
    counts = np.bincount(reports.coordinate, minlength=p)
    sums = np.bincount(reports.coordinate, weights=reports.value, minlength=p)
    est = np.full(p, reports.b / 2.0)
    filled = counts > 0
    est[filled] = sums[filled] / (p * counts[filled])
    if not np.all(filled):
        warnings.warn(f"{int(np.sum(~filled))} coordinate(s) received no report", RuntimeWarning)
    return est


def ldp_avg_pd(vectors, b: float, epsilon: float, rng) -> np.ndarray:
    """epsilon-LDP estimate of the mean of n vectors in [0, b]^p with O(1) work per player."""
    return ldp_avg_pd_estimate(ldp_avg_pd_reports(vectors, b, epsilon, rng))


# ---------------------------------------------------------------------------
# One-bit randomizer
# ---------------------------------------------------------------------------

def one_bit_noise_epsilon(epsilon: float) -> float:
    """Laplace parameter used inside the one-bit randomizer for an end-to-end budget ``epsilon``.

    With reference noise Lap(1/e0) the bit probability is ``r / 2`` with
    ``r`` in [e^-e0, e^e0]. The bit-1 likelihood ratio is at most e^e0 but the
    bit-0 ratio reaches ``1 / (2 - e^e0)``, which exceeds e^e0 for every
    e0 > 0. Choosing ``e0 = ln(2 - e^-epsilon)`` makes the bit-0 ratio equal
    to e^epsilon exactly and keeps the bit-1 ratio below it.
    """
    return math.log(2.0 - math.exp(-epsilon))


def _check_one_bit_epsilon(epsilon: float) -> None:
    if not 0 < epsilon <= LN2 + 1e-15:
        raise InputDomainError(f"the one-bit randomizer needs 0 < epsilon <= ln 2, got {epsilon!r}")


def one_bit_probability(v, y, epsilon: float, calibrated: bool = True):
    """Probability of sending bit 1: ``exp(e0 (|y| - |y - v|)) / 2``.

    ``calibrated=False`` uses ``e0 = epsilon`` (the uncorrected form, whose
    bit-0 likelihood ratio is unbounded at epsilon = ln 2).
    """
    _check_one_bit_epsilon(epsilon)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v > 1):
        raise InputDomainError("one-bit inputs must lie in [0, 1]")
    e0 = one_bit_noise_epsilon(epsilon) if calibrated else epsilon
    y = np.asarray(y, dtype=float)
    p = 0.5 * np.exp(e0 * (np.abs(y) - np.abs(y - v)))
    return float(p) if p.ndim == 0 else p


def one_bit_randomize(v, y, epsilon: float, rng=None, calibrated: bool = True, u=None):
    """Sample Bernoulli(p(v, y)); pass ``u`` to supply the uniform directly."""
    p = one_bit_probability(v, y, epsilon, calibrated)
    if u is None:
        u = open_uniform(_as_rng(rng), np.shape(p) or None)
    NOISE_DRAWS.add(np.size(u))
    bit = (np.asarray(u) < p).astype(np.uint8)
    return int(bit) if bit.ndim == 0 else bit


@dataclass(frozen=True)
class PublicStrings:
    """The n public Laplace strings ``y_i``, regenerated bit-exactly from (seed, n, epsilon)."""

    seed: int
    n: int
    epsilon: float
    calibrated: bool = True
    values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_one_bit_epsilon(self.epsilon)
        if self.n < 1:
            raise InputDomainError("need at least one public string")
        e0 = one_bit_noise_epsilon(self.epsilon) if self.calibrated else self.epsilon
        u = open_uniform(stream(self.seed, "public-strings"), self.n)
        vals = laplace_from_uniform(u, 1.0 / e0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n": self.n, "epsilon": self.epsilon, "calibrated": self.calibrated}

    @classmethod
    def from_dict(cls, doc: dict) -> "PublicStrings":
        return cls(doc["seed"], doc["n"], doc["epsilon"], doc.get("calibrated", True))


@dataclass(frozen=True)
class OneBitReport:
    bit: int
    player_index: int
    public_string_index: int

    def __post_init__(self):
        if self.bit not in (0, 1):
            raise InputDomainError(f"bit must be 0 or 1, got {self.bit!r}")


def one_bit_estimate(reports: Sequence[OneBitReport], publics: PublicStrings) -> float:
    """Unbiased mean estimate ``(2 / |I|) * sum_i b_i y_i`` over the reporting subset I.

    ``E[b y | v] = v / 2`` because ``p(y) f(y) = f(y - v) / 2``.
    """
    if len(reports) == 0:
        raise DegenerateInputError("cannot estimate a mean from an empty subset")
    bits = np.fromiter((r.bit for r in reports), dtype=float, count=len(reports))
    idx = np.fromiter((r.public_string_index for r in reports), dtype=np.int64, count=len(reports))
    return float(2.0 * np.dot(bits, publics.values[idx]) / len(reports))


def pack_bits(bits) -> bytes:
    """Pack 0/1 values, 8 per byte, big-endian within each byte."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n)


def reports_to_json(reports: Sequence[OneBitReport]) -> str:
    return json.dumps([
        {"bit": r.bit, "player_index": r.player_index, "public_string_index": r.public_string_index}
        for r in reports
    ])


def reports_from_json(text: str) -> list[OneBitReport]:
    return [OneBitReport(**d) for d in json.loads(text)]


# ---------------------------------------------------------------------------
# Discretized randomizer
# ---------------------------------------------------------------------------

def default_grid_step(n: int, epsilon: float, d: int, beta: float) -> float:
    """``(1 / (n eps)) * sqrt(d / n * log(d / beta))`` with the leading constant set to 1."""
    return 1.0 / (n * epsilon) * math.sqrt(d / n * math.log(d / beta))


def clamp_radius(n: int, epsilon: float) -> float:
    """Tail radius ``(10 / eps) log(2n)``; Laplace mass beyond it is ``(2n)^-10``."""
    return 10.0 / epsilon * math.log(2.0 * n)


@dataclass(frozen=True)
class DiscreteGrid:
    """Output alphabet ``{j * step}`` covering ``[-radius, 1 + radius]``."""

    step: float
    radius: float

    def __post_init__(self):
        if not 0 < self.step < 1:
            raise InputDomainError(f"grid step must lie in (0, 1), got {self.step!r}")
        if not self.radius >= 0:
            raise InputDomainError(f"radius must be non-negative, got {self.radius!r}")

    @property
    def j_low(self) -> int:
        return -math.ceil(self.radius / self.step - 1e-9)

    @property
    def j_high(self) -> int:
        return math.ceil((1.0 + self.radius) / self.step - 1e-9)

    @property
    def cardinality(self) -> int:
        return self.j_high - self.j_low + 1

    @property
    def bits(self) -> int:
        return max(1, math.ceil(math.log2(self.cardinality)))

    def value(self, index):
        return (np.asarray(index, dtype=float) + self.j_low) * self.step

    def index_of(self, z):
        """Clamp to the grid's range, then round to the nearest grid point."""
        z = np.clip(np.asarray(z, dtype=float), self.j_low * self.step, self.j_high * self.step)
        return (np.floor(z / self.step + 0.5).astype(np.int64) - self.j_low)


def discretized_randomize(v, epsilon: float, grid: DiscreteGrid, rng=None, u=None):
    """Grid index of ``v + Lap(1 / epsilon)`` after clamping and rounding."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v > 1):
        raise InputDomainError("discretized inputs must lie in [0, 1]")
    if u is None:
        u = open_uniform(_as_rng(rng), v.shape or None)
    NOISE_DRAWS.add(np.size(u))
    idx = grid.index_of(v + laplace_from_uniform(u, 1.0 / epsilon))
    return int(idx) if idx.ndim == 0 else idx


def _interval_mass(lo, hi, scale):
    """P(lo <= L < hi) for L ~ Laplace(0, scale), accurate in both tails."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    left = _laplace.cdf(hi, scale=scale) - _laplace.cdf(lo, scale=scale)
    right = _laplace.sf(lo, scale=scale) - _laplace.sf(hi, scale=scale)
    return np.where(hi <= 0, left, np.where(lo >= 0, right, 1.0 - _laplace.cdf(lo, scale=scale)
                                            - _laplace.sf(hi, scale=scale)))


def discretized_output_masses(v: float, epsilon: float, grid: DiscreteGrid) -> np.ndarray:
    """Exact probability of every output index for input ``v``."""
    j = np.arange(grid.j_low, grid.j_high + 1)
    lo = (j - 0.5) * grid.step
    hi = (j + 0.5) * grid.step
    lo[0] = -np.inf
    hi[-1] = np.inf
    return _interval_mass(lo - v, hi - v, 1.0 / epsilon)


def discretized_estimate(indices, grid: DiscreteGrid) -> float:
    idx = np.asarray(indices)
    if idx.size == 0:
        raise DegenerateInputError("cannot estimate a mean from an empty subset")
    return float(np.mean(grid.value(idx)))


# ---------------------------------------------------------------------------
# Exhaustive privacy checks
# ---------------------------------------------------------------------------

def max_likelihood_ratio(probs: np.ndarray) -> float:
    """Largest ``P[o | v] / P[o | v']`` over rows v, v' and columns o; 0/0 counts as 1."""
    probs = np.asarray(probs, dtype=float)
    hi = probs.max(axis=0)
    lo = probs.min(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(hi == 0, 1.0, hi / lo)
    return float(np.max(ratio))


def one_bit_ratio(epsilon: float, vs, ys, calibrated: bool = True) -> float:
    """Worst likelihood ratio of the one-bit output over an input grid and public-string grid."""
    vs = np.asarray(vs, dtype=float)
    worst = 1.0
    for y in np.asarray(ys, dtype=float):
        p1 = one_bit_probability(vs, y, epsilon, calibrated)
        worst = max(worst, max_likelihood_ratio(np.stack([p1, 1.0 - p1], axis=1)))
    return worst


def discretized_ratio(epsilon: float, grid: DiscreteGrid, vs) -> float:
    masses = np.stack([discretized_output_masses(v, epsilon, grid) for v in vs])
    return max_likelihood_ratio(masses)


def laplace_ratio(epsilon: float, b: float, vs, zs) -> float:
    """Worst density ratio of ``v + Lap(b / epsilon)`` over input and output grids."""
    vs = np.asarray(vs, dtype=float)[:, None]
    zs = np.asarray(zs, dtype=float)[None, :]
    log_dens = -np.abs(zs - vs) * epsilon / b
    return float(np.exp(np.max(log_dens.max(axis=0) - log_dens.min(axis=0))))
