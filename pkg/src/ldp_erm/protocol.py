"""Non-interactive protocol simulation: player reports, transcripts and server estimates.

Three mechanisms produce grid estimates of the empirical risk:

``full-grid``
    every player reports a noisy loss at every grid point (budget split d ways).
``partitioned-one-bit``
    players are split into d groups; each sends one bit about one grid point.
``discretized``
    as above, but each player sends a clamped and rounded Laplace report.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractViolationError, DegenerateInputError, InputDomainError, ResourceError
from .losses import LossSpec
from .mechanisms import (
    NOISE_DRAWS,
    DiscreteGrid,
    PrivacyParams,
    PublicStrings,
    clamp_radius,
    default_grid_step,
    laplace_from_uniform,
    one_bit_probability,
    open_uniform,
    player_stream,
    stream,
)
from .polyapprox import BernsteinSurrogate, SurrogateConfig, unit_grid

MECHANISMS = ("full-grid", "partitioned-one-bit", "discretized")
GRID_CAP = 10 ** 7
TRANSCRIPT_MAGIC = b"LDPT"
TRANSCRIPT_VERSION = 1
_BLOCK_FLOATS = 1 << 21


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything the server publishes before players respond."""

    mechanism: str
    epsilon: float
    k: int
    h: int = 1
    p: int = 1
    beta: float = 0.05
    seed: int = 0
    grid_step: Optional[float] = None
    expected_bits: bool = False
    calibrated: bool = True
    smoothness_T: float = 1.0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise InputDomainError(f"unknown mechanism {self.mechanism!r}; choose from {MECHANISMS}")
        PrivacyParams(self.epsilon, self.beta)
        SurrogateConfig(self.k, self.h, self.p, self.smoothness_T)
        if self.mechanism == "partitioned-one-bit" and not self.epsilon <= math.log(2) + 1e-15:
            raise InputDomainError("the one-bit mechanism needs epsilon <= ln 2")
        if self.mechanism == "discretized" and math.isinf(self.epsilon):
            raise InputDomainError("the discretized mechanism needs a finite epsilon")

    @property
    def surrogate_config(self) -> SurrogateConfig:
        return SurrogateConfig(self.k, self.h, self.p, self.smoothness_T)

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.beta)

    @property
    def d(self) -> int:
        return (self.k + 1) ** self.p

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise InputDomainError(f"unknown protocol config keys: {sorted(extra)}")
        doc = dict(doc)
        if isinstance(doc.get("epsilon"), str):
            doc["epsilon"] = float(doc["epsilon"])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ProtocolConfig":
        """Load from ``.toml`` or ``.json``."""
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            with open(path, "rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        return cls.from_dict(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# Public randomness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Assignment of n players to d grid cells, i.i.d. uniform from the public seed."""

    n: int
    d: int
    seed: int
    cell: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise InputDomainError("partition needs n >= 1 and d >= 1")
        cell = stream(self.seed, "partition").integers(0, self.d, size=self.n)
        cell.setflags(write=False)
        object.__setattr__(self, "cell", cell)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.cell, minlength=self.d)

    def members(self, j: int) -> np.ndarray:
        return np.nonzero(self.cell == j)[0]


def partition_players(n: int, d: int, seed: int) -> Partition:
    if n < d:
        raise InputDomainError(f"need at least as many players as cells, got n = {n} < d = {d}")
    if n < d * max(1.0, math.log(d)):
        warnings.warn(f"n = {n} is below d log d = {d * math.log(max(d, 2)):.0f}; "
                      "some grid cells may receive no players", RuntimeWarning)
    return Partition(n, d, seed)


@dataclass(frozen=True)
class PublicContext:
    config: ProtocolConfig
    n: int
    grid: np.ndarray
    partition: Optional[Partition]
    publics: Optional[PublicStrings]
    discrete: Optional[DiscreteGrid]

    @property
    def draws_per_player(self) -> int:
        return self.config.d if self.config.mechanism == "full-grid" else 1


def public_context(config: ProtocolConfig, n: int) -> PublicContext:
    if config.d > GRID_CAP:
        raise ResourceError(f"grid of (k+1)^p = {config.d} points exceeds the cap {GRID_CAP}")
    grid = unit_grid(config.k, config.p)
    partition = publics = discrete = None
    if config.mechanism != "full-grid":
        partition = partition_players(n, config.d, config.seed)
    if config.mechanism == "partitioned-one-bit":
        publics = PublicStrings(config.seed, n, config.epsilon, config.calibrated)
    if config.mechanism == "discretized":
        step = config.grid_step or default_grid_step(n, config.epsilon, config.d, config.beta)
        discrete = DiscreteGrid(min(step, 0.5), clamp_radius(n, config.epsilon))
    return PublicContext(config, n, grid, partition, publics, discrete)


# ---------------------------------------------------------------------------
# Transcripts
# ---------------------------------------------------------------------------

@dataclass
class Transcript:
    """All player messages in player order.

    ``payload`` is ``(n, d)`` float64 for the full-grid mechanism, ``(n,)``
    uint8 bits for the one-bit mechanism and ``(n,)`` int64 grid indices for
    the discretized mechanism.
    """

    mechanism: str
    n: int
    d: int
    payload: np.ndarray
    message_bits: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def total_bits(self) -> int:
        return int(np.sum(self.message_bits))

    def __eq__(self, other):
        return (isinstance(other, Transcript) and self.mechanism == other.mechanism
                and self.n == other.n and self.d == other.d and self.config == other.config
                and np.array_equal(self.payload, other.payload)
                and np.array_equal(self.message_bits, other.message_bits))

    def _encoding(self) -> str:
        if np.issubdtype(self.payload.dtype, np.floating):
            return "f8"
        return "bits" if self.mechanism == "partitioned-one-bit" else "index"

    def to_bytes(self) -> bytes:
        enc = self._encoding()
        width = int(self.message_bits[0]) if self.n else 0
        header = json.dumps({"mechanism": self.mechanism, "n": self.n, "d": self.d,
                             "config": self.config, "encoding": enc, "message_bits": width,
                             "shape": list(self.payload.shape)}, sort_keys=True).encode()
        if enc == "f8":
            body = np.ascontiguousarray(self.payload, dtype="<f8").tobytes()
        elif enc == "bits":
            body = np.packbits(self.payload.astype(np.uint8)).tobytes()
        else:
            shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
            as_bits = (self.payload[:, None].astype(np.uint64) >> shifts) & np.uint64(1)
            body = np.packbits(as_bits.astype(np.uint8).reshape(-1)).tobytes()
        return (TRANSCRIPT_MAGIC + struct.pack("<BI", TRANSCRIPT_VERSION, len(header))
                + header + body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        if data[:4] != TRANSCRIPT_MAGIC:
            raise InputDomainError("not a transcript: bad magic")
        version, hlen = struct.unpack("<BI", data[4:9])
        if version != TRANSCRIPT_VERSION:
            raise InputDomainError(f"unsupported transcript version {version}")
        head = json.loads(data[9:9 + hlen])
        body = data[9 + hlen:]
        n, width, enc = head["n"], head["message_bits"], head["encoding"]
        if enc == "f8":
            payload = np.frombuffer(body, dtype="<f8").reshape(head["shape"]).astype(float)
        elif enc == "bits":
            payload = np.unpackbits(np.frombuffer(body, np.uint8), count=n)
        else:
            bits = np.unpackbits(np.frombuffer(body, np.uint8), count=n * width).reshape(n, width)
            payload = bits.astype(np.int64) @ (1 << np.arange(width - 1, -1, -1, dtype=np.int64))
        return cls(head["mechanism"], n, head["d"], payload, np.full(n, width, dtype=np.int64),
                   head["config"])

    def to_json(self) -> str:
        """Human-readable form for debugging; round-trips exactly."""
        return json.dumps({"mechanism": self.mechanism, "n": self.n, "d": self.d,
                           "config": self.config, "encoding": self._encoding(),
                           "payload": self.payload.tolist(),
                           "message_bits": self.message_bits.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Transcript":
        doc = json.loads(text)
        dtype = {"f8": float, "bits": np.uint8, "index": np.int64}[doc["encoding"]]
        return cls(doc["mechanism"], doc["n"], doc["d"], np.asarray(doc["payload"], dtype=dtype),
                   np.asarray(doc["message_bits"], dtype=np.int64), doc["config"])


def comm_stats(transcript: Transcript) -> dict:
    bits = transcript.message_bits
    return {
        "total_bits": int(bits.sum()),
        "max_player_bits": int(bits.max()) if bits.size else 0,
        "mean_player_bits": float(bits.mean()) if bits.size else 0.0,
        "n_messages": int(bits.size),
    }


# ---------------------------------------------------------------------------
# Player side
# ---------------------------------------------------------------------------

def _checked_losses(loss: LossSpec, thetas: np.ndarray, records: np.ndarray, first_player: int = 0,
                    per_player: int = 1):
    vals = np.asarray(loss.pointwise(thetas, records), dtype=float)
    bad = ~((vals >= 0) & (vals <= 1))
    if np.any(bad):
        i = first_player + int(np.argmax(bad)) // per_player
        raise ContractViolationError(f"loss {loss.name!r} returned a value outside [0, 1] for player {i}")
    return vals


def _full_grid_block(ctx: PublicContext, loss: LossSpec, data: np.ndarray, start: int,
                     uniforms: Optional[np.ndarray]) -> np.ndarray:
    d, p = ctx.config.d, ctx.config.p
    m = data.shape[0]
    th = np.broadcast_to(ctx.grid[None], (m, d, p)).reshape(-1, p)
    rec = np.repeat(data, d, axis=0)
    vals = _checked_losses(loss, th, rec, start, d).reshape(m, d)
    if uniforms is None:
        return vals
    return vals + laplace_from_uniform(uniforms, d / ctx.config.epsilon)


def _partitioned_payload(ctx: PublicContext, loss: LossSpec, data: np.ndarray, players: np.ndarray,
                         uniforms: Optional[np.ndarray]) -> np.ndarray:
    cfg = ctx.config
    cells = ctx.partition.cell[players]
    vals = _checked_losses(loss, ctx.grid[cells], data, int(players[0]) if players.size else 0)
    if cfg.mechanism == "partitioned-one-bit":
        y = ctx.publics.values[players]
        if cfg.expected_bits:
            return vals  # noise-free limit: E[b] stands in for b
        prob = one_bit_probability(vals, y, cfg.epsilon, cfg.calibrated)
        return (uniforms < prob).astype(np.uint8)
    return ctx.discrete.index_of(vals + laplace_from_uniform(uniforms, 1.0 / cfg.epsilon))


def _message_bits(ctx: PublicContext) -> int:
    cfg = ctx.config
    if cfg.mechanism == "full-grid":
        return 64 * cfg.d
    if cfg.mechanism == "partitioned-one-bit":
        return 64 if cfg.expected_bits else 1
    return ctx.discrete.bits


def _noisy(cfg: ProtocolConfig) -> bool:
    return not (math.isinf(cfg.epsilon) or (cfg.mechanism == "partitioned-one-bit" and cfg.expected_bits))


def player_report(i: int, record, loss: LossSpec, ctx: PublicContext):
    """Message of player ``i`` computed from her own substream only."""
    rec = loss.check_records(np.atleast_2d(np.asarray(record, dtype=float)))
    cfg = ctx.config
    m = ctx.draws_per_player
    u = None
    if _noisy(cfg):
        u = open_uniform(player_stream(cfg.seed, cfg.mechanism, i, m), (1, m))
        NOISE_DRAWS.add(m)
    if cfg.mechanism == "full-grid":
        return _full_grid_block(ctx, loss, rec, i, u)[0]
    return _partitioned_payload(ctx, loss, rec, np.array([i]), None if u is None else u[:, 0])[0]


def collect_reports(data, loss: LossSpec, ctx: PublicContext) -> Transcript:
    """All players' messages, generated in blocks from the shared stream."""
    data = loss.check_records(data)
    cfg = ctx.config
    n = data.shape[0]
    m = ctx.draws_per_player
    rng = stream(cfg.seed, cfg.mechanism) if _noisy(cfg) else None
    block = max(1, _BLOCK_FLOATS // m)
    parts = []
    for s in range(0, n, block):
        blk = data[s:s + block]
        u = None
        if rng is not None:
            u = open_uniform(rng, (blk.shape[0], m))
            NOISE_DRAWS.add(u.size)
        if cfg.mechanism == "full-grid":
            parts.append(_full_grid_block(ctx, loss, blk, s, u))
        else:
            parts.append(_partitioned_payload(ctx, loss, blk, np.arange(s, s + blk.shape[0]),
                                              None if u is None else u[:, 0]))
    payload = np.concatenate(parts, axis=0)
    bits = np.full(n, _message_bits(ctx), dtype=np.int64)
    return Transcript(cfg.mechanism, n, cfg.d, payload, bits, cfg.to_dict())


# ---------------------------------------------------------------------------
# Server side
# ---------------------------------------------------------------------------

def fill_missing(values: np.ndarray, filled: np.ndarray, k: int, p: int) -> np.ndarray:
    """Fill unestimated grid cells with the mean of their filled axis neighbours, repeatedly."""
    shape = (k + 1,) * p
    vals = np.where(filled, values, 0.0).reshape(shape).copy()
    have = filled.reshape(shape).copy()
    if not have.any():
        return np.full(values.shape, 0.5)
    while not have.all():
        total = np.zeros(shape)
        count = np.zeros(shape)
        for ax in range(p):
            for shift in (1, -1):
                src = [slice(None)] * p
                dst = [slice(None)] * p
                if shift == 1:
                    src[ax], dst[ax] = slice(0, -1), slice(1, None)
                else:
                    src[ax], dst[ax] = slice(1, None), slice(0, -1)
                total[tuple(dst)] += np.where(have[tuple(src)], vals[tuple(src)], 0.0)
                count[tuple(dst)] += have[tuple(src)]
        newly = (~have) & (count > 0)
        vals[newly] = total[newly] / count[newly]
        have |= newly
    return vals.reshape(-1)


def server_estimates(transcript: Transcript, ctx: PublicContext) -> tuple[np.ndarray, np.ndarray]:
    """Grid estimates of the empirical risk and a mask of cells estimated from data."""
    cfg = ctx.config
    d = cfg.d
    if transcript.n != ctx.n or transcript.d != d:
        raise InputDomainError("transcript does not match the public context")
    if cfg.mechanism == "full-grid":
        return transcript.payload.mean(axis=0), np.ones(d, dtype=bool)
    cell = ctx.partition.cell
    if cfg.mechanism == "partitioned-one-bit":
        if cfg.expected_bits:
            contrib = transcript.payload.astype(float)
        else:
            contrib = 2.0 * transcript.payload.astype(float) * ctx.publics.values
    else:
        contrib = ctx.discrete.value(transcript.payload)
    counts = np.bincount(cell, minlength=d)
    sums = np.bincount(cell, weights=contrib, minlength=d)
    filled = counts > 0
    est = np.zeros(d)
    est[filled] = sums[filled] / counts[filled]
    if not filled.all():
        warnings.warn(f"{int((~filled).sum())} grid cell(s) have no players; "
                      "filled from neighbouring cells", RuntimeWarning)
        est = fill_missing(est, filled, cfg.k, cfg.p)
    return est, filled


@dataclass
class ProtocolRun:
    config: ProtocolConfig
    context: PublicContext
    transcript: Transcript
    grid_estimates: np.ndarray
    filled: np.ndarray
    surrogate: BernsteinSurrogate


def run_protocol(data, loss: LossSpec, config: ProtocolConfig) -> ProtocolRun:
    """Simulate all players, then build the server's surrogate of the empirical risk."""
    data = loss.check_records(data)
    if data.shape[0] == 0:
        raise DegenerateInputError("need at least one player")
    if loss.p != config.p:
        raise InputDomainError(f"loss dimension {loss.p} does not match config p = {config.p}")
    ctx = public_context(config, data.shape[0])
    transcript = collect_reports(data, loss, ctx)
    est, filled = server_estimates(transcript, ctx)
    sur = BernsteinSurrogate(config.surrogate_config, est)
    return ProtocolRun(config, ctx, transcript, est, filled, sur)
