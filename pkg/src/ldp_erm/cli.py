"""Command-line experiment driver.

Every stochastic subcommand requires ``--seed``. Runs emit CSV rows with a
versioned schema comment on the first line; sweeps also write a manifest
JSON next to the CSV. Output bytes depend only on the configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from typing import Optional, Sequence

import numpy as np

from .constraints import ConstraintSet
from .erm import GRID_CAP, excess_population_risk, oracle_minimize, private_erm, resolve_config
from .errors import InputDomainError, ResourceError
from .highdim import GLMLoss, dr_erm, planted_sparse_model
from .losses import BUILTIN_LOSSES, get_loss, synthetic_dataset
from .mechanisms import NOISE_DRAWS
from .protocol import MECHANISMS
from .queries import (CoefficientSummary, answer_marginals, answer_smooth, disjunction_answers,
                      enumerate_queries, gaussian_kernel_query, release_marginals, release_smooth)

CSV_SCHEMA = "ldp-erm-results/1"
COLUMNS = ("command", "seed", "n", "epsilon", "k", "h", "p", "mechanism", "loss", "constraint",
           "theta_priv", "err_empirical", "err_population", "sup_grid_error", "max_error",
           "total_bits", "config_hash", "error")
COMMANDS = ("erm", "erm-onebit", "release-marginals", "release-smooth", "highdim")
ORACLE_CAP = 10 ** 7
DEFAULT_BANDWIDTHS = (0.25, 0.35, 0.5, 0.75, 1.0)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Parameters of one subcommand; list fields are swept as a cross product."""

    command: str
    n: list
    epsilon: list
    seeds: list
    mechanism: str = "full-grid"
    k: object = "auto"
    h: int = 1
    p: int = 1
    loss: str = "squared"
    constraint: str = "box"
    alpha: float = 0.5
    t: int = 8
    m: object = "auto"
    link: str = "squared"
    sparsity: int = 3
    bandwidths: list = field(default_factory=lambda: list(DEFAULT_BANDWIDTHS))
    population_n: int = 0
    out: Optional[str] = None
    summary_out: Optional[str] = None
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise InputDomainError(f"unknown command {self.command!r}; choose from {COMMANDS}")
        for name in ("n", "epsilon", "seeds"):
            vals = getattr(self, name)
            if not isinstance(vals, list) or not vals:
                raise InputDomainError(f"{name} must be a non-empty list")
        if any(int(v) != v or v < 1 for v in self.n):
            raise InputDomainError("every n must be a positive integer")
        if any(not float(e) > 0 for e in self.epsilon):
            raise InputDomainError("every epsilon must be positive")
        if any(int(s) != s for s in self.seeds):
            raise InputDomainError("seeds must be integers")
        if self.mechanism not in MECHANISMS:
            raise InputDomainError(f"unknown mechanism {self.mechanism!r}")
        if self.k != "auto" and (int(self.k) != self.k or self.k < 1):
            raise InputDomainError("k must be a positive integer or 'auto'")
        if self.loss not in BUILTIN_LOSSES:
            raise InputDomainError(f"unknown loss {self.loss!r}")
        if self.command == "highdim" and self.constraint not in ("l1", "simplex"):
            raise InputDomainError("highdim needs an l1 or simplex constraint")
        if self.workers < 1:
            raise InputDomainError("workers must be at least 1")
        if self.summary_out is not None:
            if self.command not in ("release-marginals", "release-smooth"):
                raise InputDomainError("summary_out applies to release-marginals and release-smooth")
            if len(self.n) * len(self.epsilon) * len(self.seeds) != 1:
                raise InputDomainError("summary_out needs a single (n, epsilon, seed) point")
        for path in (self.out, self.summary_out):
            if path is not None:
                parent = os.path.dirname(os.path.abspath(path))
                if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
                    raise InputDomainError(f"output directory {parent!r} is not writable")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise InputDomainError(f"unknown config keys: {sorted(extra)}")
        doc = dict(doc)
        for name in ("n", "epsilon", "seeds", "bandwidths"):
            if name in doc and not isinstance(doc[name], list):
                doc[name] = [doc[name]]
        doc["epsilon"] = [_parse_eps(e) for e in doc.get("epsilon", [])]
        return cls(**doc).validate()

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            raw = fh.read()
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            doc = tomllib.loads(raw.decode())
        else:
            doc = json.loads(raw)
        return cls.from_dict(doc)

    def points(self) -> list[dict]:
        """Per-run parameter dicts in deterministic (n, epsilon, seed) order."""
        base = {k: v for k, v in self.to_dict().items() if k not in ("n", "epsilon", "seeds", "out", "workers")}
        return [dict(base, n=int(n), epsilon=float(e), seed=int(s))
                for n in self.n for e in self.epsilon for s in self.seeds]


def _parse_eps(value) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    return float(value)


def config_hash(point: dict) -> str:
    """Hash of a run's parameters without its seed, so (hash, seed) names a run."""
    body = {k: v for k, v in point.items() if k not in ("seed", "summary_out")}
    text = json.dumps(body, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def _constraint(kind: str, p: int) -> ConstraintSet:
    if kind == "box":
        return ConstraintSet.box(p)
    if kind == "l2":
        return ConstraintSet.l2_ball(p, 0.5, np.full(p, 0.5))
    if kind == "l1":
        return ConstraintSet.l1_ball(p)
    if kind == "simplex":
        return ConstraintSet.simplex(p)
    raise InputDomainError(f"unknown constraint kind {kind!r}")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.ndarray):
        return " ".join(repr(float(v)) for v in x.reshape(-1))
    return str(x)


def _bernoulli_bits(n: int, p: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0xB175])
    probs = np.linspace(0.1, 0.4, p)
    return (rng.random((n, p)) < probs).astype(np.int64)


def _smooth_data(n: int, p: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5300])
    return 2.0 * rng.beta(2.0, 5.0, size=(n, p)) - 1.0


def _run_erm(pt: dict, row: dict):
    mech = "partitioned-one-bit" if pt["command"] == "erm-onebit" else pt["mechanism"]
    loss = get_loss(pt["loss"], pt["p"])
    C = _constraint(pt["constraint"], pt["p"])
    data = synthetic_dataset(loss, pt["n"], pt["seed"])
    cfg = resolve_config(mech, pt["epsilon"], pt["n"], pt["k"], pt["h"], pt["p"], pt["seed"])
    res = private_erm(data, loss, C, cfg)
    row.update(mechanism=mech, k=cfg.k, theta_priv=res.theta_priv, err_empirical=res.err_empirical,
               sup_grid_error=res.sup_grid_error, total_bits=res.comm["total_bits"])
    if pt["population_n"]:
        def sampler(m, rng):
            return synthetic_dataset(loss, m, int(rng.integers(2 ** 62)))
        row["err_population"] = excess_population_risk(res.theta_priv, sampler, loss, C,
                                                       pt["population_n"], pt["seed"])[0]


def _save_summary(summary: CoefficientSummary, pt: dict):
    if pt.get("summary_out"):
        with open(pt["summary_out"], "w") as fh:
            fh.write(summary.to_json() + "\n")


def _run_marginals(pt: dict, row: dict):
    X = _bernoulli_bits(pt["n"], pt["p"], pt["seed"])
    k = 2 if pt["k"] == "auto" else int(pt["k"])
    summary = release_marginals(X, pt["p"], k, pt["epsilon"], pt["alpha"], rng=[pt["seed"], 0x3A])
    Y = enumerate_queries(pt["p"], k, rng=pt["seed"])
    err = np.abs(answer_marginals(summary, Y) - disjunction_answers(X, Y))
    row.update(k=k, max_error=float(err.max()))
    _save_summary(summary, pt)


def _run_smooth(pt: dict, row: dict):
    X = _smooth_data(pt["n"], pt["p"], pt["seed"])
    summary = release_smooth(X, pt["t"], pt["epsilon"], rng=[pt["seed"], 0x3B])
    worst = 0.0
    for sigma in pt["bandwidths"]:
        q = gaussian_kernel_query(0.0, float(sigma), pt["p"])
        worst = max(worst, abs(answer_smooth(summary, q) - q.exact_answer(X)))
    row.update(max_error=worst)
    _save_summary(summary, pt)


def _run_highdim(pt: dict, row: dict):
    Y, z, _ = planted_sparse_model(pt["p"], pt["n"], pt["sparsity"], pt["seed"], pt["link"])
    C = _constraint(pt["constraint"], pt["p"])
    k = 4 if pt["k"] == "auto" else int(pt["k"])
    m = pt["m"] if pt["m"] == "auto" else int(pt["m"])
    res = dr_erm(Y, z, GLMLoss(pt["link"]), C, pt["epsilon"], m, k=k, h=pt["h"], seed=pt["seed"],
                 mechanism=pt["mechanism"])
    row.update(k=k, theta_priv=res.w_priv, err_empirical=res.excess_risk,
               total_bits=res.comm["total_bits"])


_RUNNERS = {"erm": _run_erm, "erm-onebit": _run_erm, "release-marginals": _run_marginals,
            "release-smooth": _run_smooth, "highdim": _run_highdim}


def run_point(pt: dict) -> dict:
    """Execute one run; failures become an ``error`` entry instead of raising."""
    row = {c: None for c in COLUMNS}
    row.update(command=pt["command"], seed=pt["seed"], n=pt["n"], epsilon=pt["epsilon"], k=pt["k"],
               h=pt["h"], p=pt["p"], mechanism=pt["mechanism"], loss=pt["loss"],
               constraint=pt["constraint"], config_hash=config_hash(pt))
    try:
        _RUNNERS[pt["command"]](pt, row)
    except Exception as exc:  # noqa: BLE001 - recorded in the row, the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def run_sweep(config: ExperimentConfig) -> list[dict]:
    """Run every point; rows come back in config order whatever the completion order."""
    pts = config.validate().points()
    if config.workers == 1 or len(pts) == 1:
        return [run_point(pt) for pt in pts]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(run_point, pts))


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={CSV_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def manifest(config: ExperimentConfig) -> dict:
    return {
        "schema": CSV_SCHEMA,
        "config": {k: v for k, v in config.to_dict().items() if k not in ("out", "workers")},
        "config_hashes": sorted({config_hash(pt) for pt in config.points()}),
        "versions": {"artifact": _version(), "numpy": np.__version__,
                     "scipy": metadata.version("scipy")},
    }


def _emit(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Oracle mode
# ---------------------------------------------------------------------------

def run_oracle(task: str, n: int, p: int, seed: int, loss: str = "squared", constraint: str = "box",
               k: int = 2, t: int = 8, bandwidths=DEFAULT_BANDWIDTHS) -> dict:
    """Exact non-private answers; fails if any randomizer is touched."""
    before = NOISE_DRAWS.count
    if task == "erm":
        spec = get_loss(loss, p)
        per_axis = {1: 10001, 2: 10001}.get(p, 0)
        if p > 2 or n * per_axis > ORACLE_CAP * 10 or per_axis ** p > GRID_CAP * 10:
            raise ResourceError(f"dense-grid oracle is limited to p <= 2 and n * grid <= {ORACLE_CAP * 10}")
        data = synthetic_dataset(spec, n, seed)
        res = oracle_minimize(spec, data, _constraint(constraint, p), seed)
        out = {"task": task, "theta": res.theta.tolist(), "value": res.value, "method": res.method}
    elif task == "marginals":
        X = _bernoulli_bits(n, p, seed)
        Y = enumerate_queries(p, k, rng=seed)
        if n * Y.shape[0] > ORACLE_CAP:
            raise ResourceError(f"n * queries exceeds the cap {ORACLE_CAP}")
        out = {"task": task, "queries": Y.tolist(), "answers": disjunction_answers(X, Y).tolist()}
    elif task == "smooth":
        X = _smooth_data(n, p, seed)
        if n * len(bandwidths) > ORACLE_CAP:
            raise ResourceError(f"n * queries exceeds the cap {ORACLE_CAP}")
        out = {"task": task, "bandwidths": list(bandwidths),
               "answers": [gaussian_kernel_query(0.0, float(s), p).exact_answer(X) for s in bandwidths]}
    else:
        raise InputDomainError(f"unknown oracle task {task!r}")
    if NOISE_DRAWS.count != before:
        raise AssertionError("oracle mode drew randomizer noise")
    out["noise_draws"] = NOISE_DRAWS.count - before
    return out


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _int_or_auto(text: str):
    return text if text == "auto" else int(text)


def _add_common(sp, many: bool = False):
    nargs = "+" if many else None
    sp.add_argument("--seed", type=int, nargs=nargs, required=not many, help="random seed(s)")
    sp.add_argument("--n", type=int, nargs=nargs, default=[10 ** 4] if many else 10 ** 4)
    sp.add_argument("--epsilon", type=_parse_eps, nargs=nargs, default=[1.0] if many else 1.0)
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--k", type=_int_or_auto, default="auto")
    sp.add_argument("--h", type=int, default=1)
    sp.add_argument("--out", help="CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldp-erm", description="Locally private ERM and query release experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("erm", "erm-onebit"):
        sp = sub.add_parser(name, help=f"private ERM with the {'one-bit' if name == 'erm-onebit' else 'chosen'} mechanism")
        _add_common(sp)
        if name == "erm":
            sp.add_argument("--mechanism", choices=MECHANISMS, default="full-grid")
        sp.add_argument("--loss", choices=sorted(BUILTIN_LOSSES), default="squared")
        sp.add_argument("--constraint", choices=("box", "l2", "simplex"), default="box")
        sp.add_argument("--population-n", type=int, default=0, help="fresh sample size for population risk")

    sp = sub.add_parser("release-marginals", help="release disjunction marginals")
    _add_common(sp)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--summary-out", help="write the released summary JSON here")

    sp = sub.add_parser("release-smooth", help="release smooth-query coefficients")
    _add_common(sp)
    sp.add_argument("--t", type=int, default=8)
    sp.add_argument("--bandwidths", type=float, nargs="+", default=list(DEFAULT_BANDWIDTHS))
    sp.add_argument("--summary-out", help="write the released summary JSON here")

    sp = sub.add_parser("highdim", help="dimension-reduced ERM for generalized linear losses")
    _add_common(sp)
    sp.add_argument("--m", type=_int_or_auto, default="auto")
    sp.add_argument("--constraint", choices=("l1", "simplex"), default="l1")
    sp.add_argument("--link", choices=("squared", "logistic"), default="squared")
    sp.add_argument("--sparsity", type=int, default=3, help="planted model support size")
    sp.add_argument("--mechanism", choices=MECHANISMS, default="full-grid")

    sp = sub.add_parser("oracle", help="exact non-private answers")
    sp.add_argument("task", choices=("erm", "marginals", "smooth"))
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--n", type=int, default=10 ** 4)
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--loss", choices=sorted(BUILTIN_LOSSES), default="squared")
    sp.add_argument("--constraint", choices=("box", "l2", "simplex"), default="box")
    sp.add_argument("--bandwidths", type=float, nargs="+", default=list(DEFAULT_BANDWIDTHS))
    sp.add_argument("--out")

    sp = sub.add_parser("sweep", help="cross product of (n, epsilon, seed) from a TOML/JSON config or flags")
    sp.add_argument("--config", help="TOML or JSON ExperimentConfig")
    sp.add_argument("--run", choices=COMMANDS, default="erm", help="subcommand to sweep when no config is given")
    _add_common(sp, many=True)
    sp.add_argument("--mechanism", choices=MECHANISMS, default="full-grid")
    sp.add_argument("--loss", choices=sorted(BUILTIN_LOSSES), default="squared")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("answer", help="answer queries from a saved summary JSON")
    sp.add_argument("summary")
    sp.add_argument("--query", action="append", default=[],
                    help="bit string such as 101000 for marginals, or a bandwidth for smooth summaries")
    sp.add_argument("--queries", help="file with one query per line (same syntax as --query; # comments)")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    def lst(v):
        return v if isinstance(v, list) else [v]
    doc = {"command": args.command if args.command != "sweep" else args.run,
           "n": lst(args.n), "epsilon": lst(args.epsilon), "seeds": lst(args.seed),
           "k": args.k, "h": args.h, "p": args.p, "out": args.out}
    for name in ("mechanism", "loss", "constraint", "alpha", "t", "m", "link", "sparsity",
                 "bandwidths", "population_n", "workers", "summary_out"):
        if hasattr(args, name):
            doc[name] = getattr(args, name)
    return ExperimentConfig.from_dict(doc)


def _parse_smooth_query(text: str, p: int):
    """``0.5`` or ``gauss:0.5`` (bandwidth, centered at 0) or ``gauss:0.5:0.2`` (bandwidth, center)."""
    parts = text.split(":")
    if parts[0] == "gauss":
        parts = parts[1:]
    if not 1 <= len(parts) <= 2:
        raise InputDomainError(f"cannot parse smooth query {text!r}")
    center = float(parts[1]) if len(parts) == 2 else 0.0
    return gaussian_kernel_query(center, float(parts[0]), p)


def _answer(args) -> int:
    with open(args.summary) as fh:
        summary = CoefficientSummary.from_json(fh.read())
    queries = list(args.query)
    if args.queries:
        with open(args.queries) as fh:
            queries += [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not queries:
        raise InputDomainError("give --query or --queries")
    lines = []
    for q in queries:
        if summary.family == "chebyshev-marginal":
            if set(q) - {"0", "1"}:
                raise InputDomainError(f"marginal queries are bit strings, got {q!r}")
            y = np.array([int(c) for c in q])
            lines.append(f"{q},{float(answer_marginals(summary, y)[0])!r}")
        else:
            ans = answer_smooth(summary, _parse_smooth_query(q, summary.meta["p"]))
            lines.append(f"{q},{ans!r}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "answer":
            return _answer(args)
        if args.command == "oracle":
            res = run_oracle(args.task, args.n, args.p, args.seed, args.loss, args.constraint,
                             args.k, bandwidths=args.bandwidths)
            _emit(json.dumps(res, sort_keys=True) + "\n", args.out)
            return 0
        if args.command == "sweep" and args.config:
            config = ExperimentConfig.from_file(args.config)
            if args.out:
                config.out = args.out
            config.validate()
        else:
            if args.seed is None:
                raise InputDomainError("--seed is required (or give --config)")
            config = _config_from_args(args)
    except (InputDomainError, ResourceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = run_sweep(config)
    _emit(rows_to_csv(rows), config.out)
    if args.command == "sweep" and config.out:
        with open(os.path.splitext(config.out)[0] + ".manifest.json", "w") as fh:
            fh.write(json.dumps(manifest(config), sort_keys=True, indent=2) + "\n")
    failed = [r for r in rows if r["error"]]
    for r in failed:
        print(f"run failed (seed={r['seed']}, n={r['n']}): {r['error']}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
