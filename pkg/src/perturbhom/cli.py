"""Command-line front-end: ``perturbhom {ahom,a1,sweep,selftest}``.

Experiments are described by one JSON document (``--config FILE``);
individual flags override its fields.  Result rows are appended to
``output_path`` as CSV; a JSON summary goes to standard output.

Exit codes: 0 ok, 1 selftest failure, 2 config error, 3 solver failure,
4 cross-check failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .environment import DistributionSpec
from .homogenize import (
    a1_cross_check,
    a1_mc,
    a1_regularized_mc,
    ahom_periodic_mc,
    expansion_fit,
    validate_grid,
)
from .lattice import TorusGeometry
from .selftest import format_table, run_selftest
from .solver import SolverConfig, SolverError

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_SOLVER, EXIT_CROSS_CHECK = 0, 1, 2, 3, 4
CSV_COLUMNS = ("label", "d", "n", "p", "mean", "std_error", "n_samples", "seed", "wall_time_s", "config_hash")
MAX_TOLERANCE = 1e-4
CROSS_CHECK_MAX_N = 4
CROSS_CHECK_LIMIT = 1e-6
THREADS_ENV = "PERTURBHOM_THREADS"

log = logging.getLogger("perturbhom")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field (and line)."""


@dataclass
class ExperimentConfig:
    command: str
    d: int
    n: int
    xi: list[float]
    dist0: DistributionSpec
    dist1: DistributionSpec
    p: list[float] = field(default_factory=list)
    p_grid: list[float] = field(default_factory=list)
    p_bar: float = 0.0
    mu: float | None = None
    samples: int = 100
    a1_samples: int | None = None
    seed: int = 0
    tolerance: float = 1e-10
    share_streams: bool = False
    cross_check: bool = False
    output_path: str | None = None
    cache_dir: str | None = None
    threads: int | None = None

    @property
    def geom(self) -> TorusGeometry:
        return TorusGeometry(self.d, self.n)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(rel_tolerance=self.tolerance)

    def result_fields(self) -> dict:
        """Fields that determine the numbers produced (not where they go or how fast)."""
        out = asdict(self)
        out["dist0"] = self.dist0.to_dict()
        out["dist1"] = self.dist1.to_dict()
        for key in ("output_path", "cache_dir", "threads", "cross_check"):
            out.pop(key)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.result_fields(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


FIELDS = {
    "d", "n", "xi", "dist0", "dist1", "p", "p_grid", "p_bar", "mu", "samples", "a1_samples",
    "seed", "tolerance", "share_streams", "output_path", "cache_dir", "threads",
}


class _Locator:
    """Maps field names to line numbers of the JSON source for diagnostics.

    Fields overridden on the command line are blamed on the flag instead.
    """

    def __init__(self, source: str | None = None, text: str | None = None, flags=()):
        self.source = source
        self.text = text
        self.flags = set(flags)

    def with_flags(self, flags) -> "_Locator":
        return _Locator(self.source, self.text, flags)

    def __call__(self, key: str, message: str) -> ConfigError:
        if key in self.flags:
            return ConfigError(f"command line: field '{key}': {message}")
        where = ""
        if self.source:
            where = self.source
            m = re.search(rf'"{re.escape(key)}"\s*:', self.text or "")
            if m:
                where += f":{self.text.count(chr(10), 0, m.start()) + 1}"
            where += ": "
        return ConfigError(f"{where}field '{key}': {message}")


def load_config_file(path) -> tuple[dict, _Locator]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    return data, _Locator(str(path), text)


def _int(data, key, err, lo=None, hi=None, default=None, optional=False):
    v = data.get(key, default)
    if v is None:
        if optional:
            return None
        raise err(key, "is required")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise err(key, f"must be an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise err(key, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise err(key, f"must be <= {hi}, got {v}")
    return v


def _real(data, key, err, default=None, optional=False):
    v = data.get(key, default)
    if v is None:
        if optional:
            return None
        raise err(key, "is required")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise err(key, f"must be a finite number, got {v!r}")
    return float(v)


def _reals(data, key, err):
    v = data.get(key)
    if v is None:
        return []
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list):
        raise err(key, f"must be a number or a list of numbers, got {v!r}")
    return [_real({key: x}, key, err) for x in v]


def _dist(data, key, err):
    v = data.get(key)
    if v is None:
        raise err(key, "is required")
    if isinstance(v, str):
        try:
            v = json.loads(v)
        except json.JSONDecodeError:
            raise err(key, f"is not valid JSON: {v!r}") from None
    if not isinstance(v, dict):
        raise err(key, "must be an object with a 'kind'")
    try:
        return DistributionSpec.from_dict(v)
    except (ValueError, TypeError) as exc:
        raise err(key, str(exc)) from None


def build_config(command: str, data: dict, locate: _Locator | None = None) -> ExperimentConfig:
    """Validate the merged field dictionary; raises ``ConfigError`` on the first problem."""
    err = locate or _Locator()
    for key in data:
        if key not in FIELDS:
            raise err(key, "unknown field")
    d = _int(data, "d", err, lo=1)
    n = _int(data, "n", err, lo=1)
    xi = _reals(data, "xi", err) or [1.0] + [0.0] * (d - 1)
    if len(xi) != d:
        raise err("xi", f"must have {d} components, got {len(xi)}")
    if not any(xi):
        raise err("xi", "must be nonzero")
    cfg = ExperimentConfig(
        command=command, d=d, n=n, xi=xi,
        dist0=_dist(data, "dist0", err), dist1=_dist(data, "dist1", err),
        p=_reals(data, "p", err), p_grid=_reals(data, "p_grid", err),
        p_bar=_real(data, "p_bar", err, default=0.0),
        mu=_real(data, "mu", err, optional=True),
        samples=_int(data, "samples", err, lo=1, default=100),
        a1_samples=_int(data, "a1_samples", err, lo=2, optional=True),
        seed=_int(data, "seed", err, lo=0, hi=2**64 - 1, default=0),
        tolerance=_real(data, "tolerance", err, default=1e-10),
        share_streams=bool(data.get("share_streams", False)),
        output_path=data.get("output_path"),
        cache_dir=data.get("cache_dir"),
        threads=_int(data, "threads", err, lo=1, optional=True),
    )
    if not 0 < cfg.tolerance <= MAX_TOLERANCE:
        raise err("tolerance", f"must lie in (0, {MAX_TOLERANCE:g}], got {cfg.tolerance:g}")
    if not 0 <= cfg.p_bar < 1:
        raise err("p_bar", f"must lie in [0, 1), got {cfg.p_bar}")
    if cfg.mu is not None and cfg.mu < 0:
        raise err("mu", f"must be >= 0, got {cfg.mu}")
    for key in ("output_path", "cache_dir"):
        v = getattr(cfg, key)
        if v is not None and not isinstance(v, str):
            raise err(key, "must be a path string")
    if command == "ahom":
        if not cfg.p:
            raise err("p", "is required (a number or a list)")
        for p in cfg.p:
            if not 0 <= p <= 1:
                raise err("p", f"values must lie in [0, 1], got {p}")
    elif command == "a1":
        if cfg.samples < 2:
            raise err("samples", "must be >= 2 for a standard error")
    elif command == "sweep":
        if cfg.samples < 2:
            raise err("samples", "must be >= 2 for a standard error")
        try:
            validate_grid(cfg.p_grid, cfg.p_bar)
        except ValueError as exc:
            raise err("p_grid", str(exc)) from None
    return cfg


def resolve_threads(configured: int | None) -> int:
    if configured:
        return configured
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}: must be a positive integer, got {env!r}") from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV}: must be a positive integer, got {env!r}")
        return value
    try:
        import psutil
        cores = psutil.cpu_count(logical=False)
    except ImportError:
        cores = None
    return cores or os.cpu_count() or 1


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


class ResultWriter:
    """Appends RFC-4180 rows; header when the file is new or empty."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.path = Path(cfg.output_path) if cfg.output_path else None
        self.hash = cfg.config_hash()

    def write(self, label, p, est, wall):
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        new = not self.path.exists() or self.path.stat().st_size == 0
        row = [label, self.cfg.d, self.cfg.n, float(p), float(est.mean), float(est.std_error),
               est.n_samples, est.seed, float(wall), self.hash]
        with self.path.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            if new:
                w.writerow(CSV_COLUMNS)
            w.writerow([_fmt(v) for v in row])


def _estimate_json(est) -> dict:
    return {"label": est.label, "mean": est.mean, "std_error": est.std_error,
            "n_samples": est.n_samples, "seed": est.seed}


def _common(cfg: ExperimentConfig, threads: int) -> dict:
    return dict(geom=cfg.geom, xi=cfg.xi, samples=cfg.samples, seed=cfg.seed, cfg=cfg.solver,
                threads=threads, share_streams=cfg.share_streams, cache_dir=cfg.cache_dir)


def cmd_ahom(cfg: ExperimentConfig, threads: int, out=None) -> int:
    writer = ResultWriter(cfg)
    rows = []
    for p in cfg.p:
        t = time.perf_counter()
        est = ahom_periodic_mc(cfg.dist0, cfg.dist1, p, **_common(cfg, threads))
        writer.write(est.label, p, est, time.perf_counter() - t)
        rows.append(_estimate_json(est) | {"p": p})
    _summary(out, cfg, {"estimates": rows})
    return EXIT_OK


def cmd_a1(cfg: ExperimentConfig, threads: int, out=None) -> int:
    writer = ResultWriter(cfg)
    extra = {}
    t = time.perf_counter()
    if cfg.mu:
        if cfg.n < 3 / math.sqrt(cfg.mu):
            log.warning("n=%d is below 3/sqrt(mu)=%.1f; the regularized corrector feels the "
                        "periodic box", cfg.n, 3 / math.sqrt(cfg.mu))
        kw = _common(cfg, threads)
        est = a1_regularized_mc(cfg.dist0, cfg.dist1, cfg.p_bar, kw.pop("geom"), cfg.mu, **kw)
    else:
        est = a1_mc(cfg.dist0, cfg.dist1, cfg.p_bar, **_common(cfg, threads))
    writer.write(est.label, cfg.p_bar, est, time.perf_counter() - t)
    if cfg.cross_check:
        dev = a1_cross_check(cfg.dist0, cfg.dist1, cfg.p_bar, **_common(cfg, threads))
        extra["cross_check"] = {"max_disagreement": dev, "limit": CROSS_CHECK_LIMIT,
                                "passed": dev <= CROSS_CHECK_LIMIT}
    _summary(out, cfg, {"estimate": _estimate_json(est)} | extra)
    if cfg.cross_check and extra["cross_check"]["max_disagreement"] > CROSS_CHECK_LIMIT:
        print(f"cross-check failed: per-sample disagreement "
              f"{extra['cross_check']['max_disagreement']:.3e} > {CROSS_CHECK_LIMIT:.0e}", file=sys.stderr)
        return EXIT_CROSS_CHECK
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, threads: int, out=None) -> int:
    writer = ResultWriter(cfg)
    t = time.perf_counter()
    report = expansion_fit(cfg.dist0, cfg.dist1, cfg.p_bar, cfg.p_grid, a1_samples=cfg.a1_samples,
                           **_common(cfg, threads))
    wall = time.perf_counter() - t
    writer.write(report.baseline.label, cfg.p_bar, report.baseline, wall)
    for p, diff in zip(report.p_grid, report.differences):
        writer.write(diff.label, p, diff, wall)
    writer.write(report.a1_reference.label, cfg.p_bar, report.a1_reference, wall)
    _summary(out, cfg, {"report": report.to_dict(), "slope_agrees": report.slope_agrees()})
    return EXIT_OK


def _summary(out, cfg, payload):
    out = out or sys.stdout
    doc = {"command": cfg.command, "config_hash": cfg.config_hash(),
           "config": cfg.result_fields()} | payload
    json.dump(doc, out, indent=2, default=float)
    out.write("\n")


COMMANDS = {"ahom": cmd_ahom, "a1": cmd_a1, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perturbhom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("ahom", "Monte Carlo estimate of xi . A_hom xi at each p"),
                        ("a1", "Monte Carlo estimate of the first-order coefficient"),
                        ("sweep", "first-order expansion check over a p grid")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--d", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--xi", type=float, nargs="+")
        sp.add_argument("--dist0", help="JSON object, e.g. '{\"kind\": \"point_mass\", \"value\": 1}'")
        sp.add_argument("--dist1", help="JSON object for the replacement law")
        sp.add_argument("--p", type=float, nargs="+")
        sp.add_argument("--p-grid", dest="p_grid", type=float, nargs="+")
        sp.add_argument("--p-bar", dest="p_bar", type=float)
        sp.add_argument("--mu", type=float)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--a1-samples", dest="a1_samples", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tolerance", type=float)
        sp.add_argument("--share-streams", dest="share_streams", action="store_true", default=None)
        sp.add_argument("--output", dest="output_path")
        sp.add_argument("--cache-dir", dest="cache_dir")
        sp.add_argument("--threads", type=int)
        if name == "a1":
            sp.add_argument("--cross-check", dest="cross_check", action="store_true",
                            help=f"compare two per-sample forms (n <= {CROSS_CHECK_MAX_N})")
    st = sub.add_parser("selftest", help="run the fixed-seed invariant suite")
    st.add_argument("--tolerance", type=float, default=None,
                    help="solver tolerance for the run (thresholds stay fixed)")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    data, locate = {}, _Locator()
    if args.config:
        data, locate = load_config_file(args.config)
    overrides = {k: v for k, v in vars(args).items() if k in FIELDS and v is not None}
    locate = locate.with_flags(overrides)
    cfg = build_config(args.command, data | overrides, locate)
    cfg.cross_check = bool(getattr(args, "cross_check", False))
    if cfg.cross_check and cfg.n > CROSS_CHECK_MAX_N:
        raise locate("n", f"--cross-check needs n <= {CROSS_CHECK_MAX_N}, got {cfg.n}")
    return cfg


def cmd_selftest(tolerance: float | None = None, out=None) -> int:
    try:
        cfg = SolverConfig() if tolerance is None else SolverConfig(rel_tolerance=tolerance)
    except ValueError as exc:
        print(f"error: --tolerance: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = run_selftest(cfg)
    out = out or sys.stdout
    out.write(format_table(results) + "\n")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"selftest failed: {failed[0].name}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s: %(message)s", level=logging.INFO)
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(args.tolerance)
    try:
        cfg = _config_from_args(args)
        threads = resolve_threads(cfg.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, threads)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
