"""Command-line entry point.

Subcommands: ``solve`` a cone-program file, ``stuff`` a random network into
one, ``benchmark`` stuffing and solving over random networks, and
``experiment`` for the feasibility, network-power and max-min suites.
Tables go out as CSV (with a versioned header comment) or JSON.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import apps
from .exceptions import ConicSplitterError, ParseError, SolverStatusError
from .io import format_cone_program, read_cone_program, result_json
from .network import ChannelModelConfig, PowerModelConfig, db_to_linear, generate_network
from .solver import SolverOptions, Status, solve
from .stuffing import NetworkShape, build_template, get_template, stuff

logger = logging.getLogger(__name__)

TABLE_VERSION = 1
EXIT_CODES = {
    Status.OPTIMAL: 0,
    Status.PRIMAL_INFEASIBLE: 2,
    Status.DUAL_INFEASIBLE: 3,
    Status.ITERATION_LIMIT: 4,
    Status.INDETERMINATE: 4,
}
THREADS_ENV = "CONIC_SPLITTER_THREADS"

EXPERIMENTS = ("feasibility_sweep", "network_power", "maxmin")
# desk-scale defaults per experiment: shape, region half-width, sweep, trials
EXPERIMENT_DEFAULTS = {
    "feasibility_sweep": dict(shape=(10, 10, 1), region=1000.0, sweep="0,2,4,6,8,10", trials=20),
    "network_power": dict(shape=(10, 10, 2), region=1000.0, sweep="0,2,4,6,8", trials=10),
    "maxmin": dict(shape=(11, 10, 1), region=2000.0, sweep="0,5,10,15,20", trials=5),
}

COLUMNS = {
    "benchmark": ["seed", "L", "K", "N", "gamma_dB", "status", "objective", "iterations",
                  "modeling_ms", "solving_ms"],
    "feasibility_sweep": ["gamma_dB", "trials", "feasible", "failures", "probability",
                          "iterations", "modeling_ms", "solving_ms"],
    "network_power": ["gamma_dB", "trials", "feasible", "failures", "network_power_W",
                      "normalized_network_power", "transmit_power_W", "active_raus",
                      "modeling_ms", "solving_ms"],
    "maxmin": ["SNR_dB", "scheme", "trials", "failures", "min_rate_bps_hz", "gamma",
               "iterations", "modeling_ms", "solving_ms"],
}
TIMING_COLUMNS = ("modeling_ms", "solving_ms")


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 so that 2 stays reserved for PrimalInfeasible
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    subcommand: str
    inputs: list[Path] = field(default_factory=list)
    shapes: list[tuple[int, int, int]] = field(default_factory=list)
    sweep: list[float] = field(default_factory=list)
    kind: str | None = None
    trials: int = 1
    seed: int = 0
    region: float | None = None
    tol: float = 0.01
    options: SolverOptions = field(default_factory=lambda: apps.DEFAULT_OPTIONS)
    warm_start: bool = False
    rebuild: bool = False
    workers: int = 1
    out: Path | None = None
    fmt: str = "csv"

    def validate(self):
        if self.trials < 1:
            raise ValueError("--trials must be >= 1")
        if self.seed < 0:
            raise ValueError("--seed must be non-negative")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if self.region is not None and self.region <= 0:
            raise ValueError("--region must be positive")
        if self.tol <= 0:
            raise ValueError("--tol must be positive")
        for L, K, N in self.shapes:
            if min(L, K, N) < 1:
                raise ValueError(f"shape {L},{K},{N} must be positive")
        if self.fmt not in ("csv", "json"):
            raise ValueError("--format must be csv or json")


def parse_shape(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must be L,K,N integers, got {text!r}") from None
    if len(parts) == 2:
        parts = parts + (1,)
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"shape must be L,K,N positive integers, got {text!r}")
    return parts


def parse_floats(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or not all(math.isfinite(v) for v in values):
        raise argparse.ArgumentTypeError(f"expected finite numbers, got {text!r}")
    return values


def _add_solver_flags(p):
    p.add_argument("--eps", type=float, default=None, help="convergence tolerance")
    p.add_argument("--eps-infeas", type=float, default=None, help="infeasibility tolerance")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--equilibrate", action=argparse.BooleanOptionalAction, default=True,
                   help="Ruiz scaling of the data")


def _add_table_flags(p):
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=0, help="base seed; trial i uses seed + i")
    p.add_argument("--region", type=float, default=None, help="region half-width in meters")
    p.add_argument("--workers", type=int, default=1,
                   help=f"worker processes (overridden by ${THREADS_ENV})")
    p.add_argument("--out", type=Path, default=None, help="output file (default stdout)")
    p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conic-splitter",
                     description="Matrix stuffing and HSDE cone solving for beamforming networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve a cone-program file, JSON result on stdout")
    p.add_argument("path", type=Path)
    _add_solver_flags(p)
    p.add_argument("--indent", type=int, default=None)

    p = sub.add_parser("stuff", help="write the power-minimization program of a random network")
    p.add_argument("--shape", type=parse_shape, default=(2, 2, 1))
    p.add_argument("--gamma-db", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region", type=float, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("benchmark", help="modeling and solving times over random networks")
    p.add_argument("--shape", type=parse_shape, action="append", default=None,
                   help="L,K,N; repeat for a sweep (default 5,5,2)")
    p.add_argument("--gamma-db", type=float, default=5.0)
    p.add_argument("--rebuild", action="store_true",
                   help="regenerate the template every trial instead of stuffing")
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction, default=False,
                   help="warm start each trial from the previous one of the same shape")
    _add_solver_flags(p)
    _add_table_flags(p)

    p = sub.add_parser("experiment", help="feasibility, network-power and max-min suites")
    p.add_argument("kind", choices=EXPERIMENTS)
    p.add_argument("--shape", type=parse_shape, default=None)
    p.add_argument("--gamma-db", type=parse_floats, default=None,
                   help="comma-separated target SINRs (feasibility_sweep, network_power)")
    p.add_argument("--snr-db", type=parse_floats, default=None,
                   help="comma-separated transmit SNRs (maxmin)")
    p.add_argument("--tol", type=float, default=0.01, help="bisection tolerance in SINR")
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction, default=True,
                   help="warm start bisection probes (maxmin)")
    _add_solver_flags(p)
    _add_table_flags(p)
    return parser


def _solver_options(args, base: SolverOptions) -> SolverOptions:
    changes = {"equilibrate": args.equilibrate}
    if args.eps is not None:
        changes["eps"] = args.eps
    if args.eps_infeas is not None:
        changes["eps_infeas"] = args.eps_infeas
    if args.max_iters is not None:
        changes["max_iters"] = args.max_iters
    return replace(base, **changes)


def _workers(flag: int) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"${THREADS_ENV} must be an integer, got {env!r}") from None
    return flag


def make_config(args) -> RunConfig:
    cfg = RunConfig(args.subcommand)
    if args.subcommand == "solve":
        cfg.inputs = [args.path]
        cfg.options = _solver_options(args, apps.DEFAULT_OPTIONS)
    elif args.subcommand == "stuff":
        cfg.shapes = [args.shape]
        cfg.sweep = [args.gamma_db]
        cfg.seed, cfg.region, cfg.out = args.seed, args.region, args.out
    else:
        cfg.seed, cfg.region, cfg.out, cfg.fmt = args.seed, args.region, args.out, args.fmt
        cfg.workers = _workers(args.workers)
        cfg.warm_start = args.warm_start
        if args.subcommand == "benchmark":
            cfg.shapes = args.shape or [(5, 5, 2)]
            cfg.sweep = [args.gamma_db]
            cfg.trials = args.trials if args.trials is not None else 3
            cfg.rebuild = args.rebuild
            cfg.options = _solver_options(args, apps.DEFAULT_OPTIONS)
        else:
            d = EXPERIMENT_DEFAULTS[args.kind]
            cfg.kind = args.kind
            cfg.shapes = [args.shape or d["shape"]]
            given = args.snr_db if args.kind == "maxmin" else args.gamma_db
            cfg.sweep = given or parse_floats(d["sweep"])
            cfg.trials = args.trials if args.trials is not None else d["trials"]
            cfg.region = args.region if args.region is not None else d["region"]
            cfg.tol = args.tol
            base = apps.DEFAULT_OPTIONS if args.kind == "network_power" else apps.PROBE_OPTIONS
            cfg.options = _solver_options(args, base)
    cfg.validate()
    return cfg


# -- channel models ---------------------------------------------------------------

def channel_config(region: float | None) -> ChannelModelConfig:
    return ChannelModelConfig() if region is None else ChannelModelConfig(half_width=region)


def snr_channel_config(region: float, snr_db: float) -> ChannelModelConfig:
    """Path loss referenced to 1 km with unit noise, so the budget is the SNR."""
    return ChannelModelConfig(half_width=region, pl_intercept_db=0.0, noise_power_dbm=30.0,
                              max_power_w=float(db_to_linear(snr_db)))


# -- per-trial work (top level so worker processes can pickle it) -------------------

def _benchmark_trial(job, opts, rebuild, region):
    seed, shape_t, gamma_db = job
    shape = NetworkShape.uniform(*shape_t)
    inst = generate_network(channel_config(region), shape, gamma_db, seed=seed)
    t0 = time.perf_counter()
    template = build_template(shape, inst.field) if rebuild else get_template(shape, inst.field)
    program = stuff(template, apps.normalize_instance(inst)[0])
    t1 = time.perf_counter()
    perm = template.kkt_perm()
    result = solve(program, opts, perm=perm)
    t2 = time.perf_counter()
    return result, 1e3 * (t1 - t0), 1e3 * (t2 - t1)


def _feasibility_trial(seed, shape_t, region, sweep, opts):
    shape = NetworkShape.uniform(*shape_t)
    inst = generate_network(channel_config(region), shape, 0.0, seed=seed)
    out = []
    for g in sweep:
        sub = inst.with_gamma(float(db_to_linear(g)))
        t0 = time.perf_counter()
        template = get_template(shape, sub.field)
        program = apps.feasibility_program(stuff(template, apps.normalize_instance(sub)[0]))
        t1 = time.perf_counter()
        result = solve(program, opts, perm=template.kkt_perm())
        t2 = time.perf_counter()
        status = result.status
        if status == Status.ITERATION_LIMIT:
            logger.warning("seed %d, gamma %g dB: iteration limit, counted as infeasible", seed, g)
        out.append({"status": status, "feasible": status == Status.OPTIMAL,
                    "failed": status == Status.INDETERMINATE, "iterations": result.iterations,
                    "modeling_ms": 1e3 * (t1 - t0), "solving_ms": 1e3 * (t2 - t1)})
    return out


def _network_power_trial(seed, shape_t, region, sweep, opts):
    shape = NetworkShape.uniform(*shape_t)
    inst = generate_network(channel_config(region), shape, 0.0, seed=seed)
    out = []
    for g in sweep:
        row = {"feasible": False, "failed": False, "modeling_ms": math.nan,
               "solving_ms": math.nan}
        try:
            rep = apps.group_sparse_beamforming(inst.with_gamma(float(db_to_linear(g))),
                                                PowerModelConfig(), opts, apps.PROBE_OPTIONS)
        except SolverStatusError as exc:
            logger.warning("seed %d, gamma %g dB: %s", seed, g, exc)
            row["failed"] = True
            out.append(row)
            continue
        row.update(modeling_ms=1e3 * rep.modeling_time, solving_ms=1e3 * rep.solving_time)
        if rep.feasible:
            row.update(feasible=True, network_power=rep.network_power,
                       normalized=rep.normalized_power, transmit=rep.transmit_power,
                       active=len(rep.active))
        out.append(row)
    return out


def _maxmin_trial(seed, shape_t, region, sweep, opts, tol, warm_start):
    shape = NetworkShape.uniform(*shape_t)
    out = []
    for snr in sweep:
        inst = generate_network(snr_channel_config(region, snr), shape, 0.0, seed=seed)
        rows = {}
        for scheme in ("optimal",) + apps.SCHEMES:
            try:
                if scheme == "optimal":
                    r = apps.max_min_rate(inst, tol=tol, opts=opts, warm_start=warm_start)
                else:
                    r = apps.baseline_max_min(inst, scheme, tol=tol, opts=opts,
                                              warm_start=warm_start)
            except ConicSplitterError as exc:
                logger.warning("seed %d, SNR %g dB, %s: %s", seed, snr, scheme, exc)
                rows[scheme] = {"failed": True}
                continue
            rows[scheme] = {"failed": False, "gamma": r.gamma, "rate": r.min_rate,
                            "iterations": r.iterations, "modeling_ms": 1e3 * r.modeling_time,
                            "solving_ms": 1e3 * r.solving_time}
        out.append(rows)
    return out


def _run_jobs(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _mean(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(values)) if values else math.nan


# -- table builders ------------------------------------------------------------------

def run_benchmark(cfg: RunConfig) -> list[dict]:
    rows = []
    gamma_db = cfg.sweep[0]
    for shape_t in cfg.shapes:
        seeds = [cfg.seed + i for i in range(cfg.trials)]
        if cfg.warm_start:
            # each trial depends on the previous one, so this stays serial
            results, prev = [], None
            for s in seeds:
                shape = NetworkShape.uniform(*shape_t)
                inst = generate_network(channel_config(cfg.region), shape, gamma_db, seed=s)
                t0 = time.perf_counter()
                template = (build_template(shape, inst.field) if cfg.rebuild
                            else get_template(shape, inst.field))
                program = stuff(template, apps.normalize_instance(inst)[0])
                t1 = time.perf_counter()
                r = solve(program, cfg.options, warm_start=prev, perm=template.kkt_perm())
                t2 = time.perf_counter()
                prev = r if r.status == Status.OPTIMAL else prev
                results.append((r, 1e3 * (t1 - t0), 1e3 * (t2 - t1)))
        else:
            fn = partial(_benchmark_trial, opts=cfg.options, rebuild=cfg.rebuild,
                         region=cfg.region)
            results = _run_jobs(fn, [(s, shape_t, gamma_db) for s in seeds], cfg.workers)
        for s, (r, tm, ts) in zip(seeds, results):
            L, K, N = shape_t
            rows.append({"seed": s, "L": L, "K": K, "N": N, "gamma_dB": gamma_db,
                         "status": str(r.status), "objective": r.objective,
                         "iterations": r.iterations, "modeling_ms": tm, "solving_ms": ts})
    return rows


def run_experiment(cfg: RunConfig) -> list[dict]:
    seeds = [cfg.seed + i for i in range(cfg.trials)]
    shape_t = cfg.shapes[0]
    if cfg.kind == "feasibility_sweep":
        fn = partial(_feasibility_trial, shape_t=shape_t, region=cfg.region, sweep=cfg.sweep,
                     opts=cfg.options)
        per_seed = _run_jobs(fn, seeds, cfg.workers)
        rows = []
        for j, g in enumerate(cfg.sweep):
            cells = [ps[j] for ps in per_seed]
            feasible = sum(c["feasible"] for c in cells)
            rows.append({"gamma_dB": g, "trials": len(cells), "feasible": feasible,
                         "failures": sum(c["failed"] for c in cells),
                         "probability": feasible / len(cells),
                         "iterations": _mean([c["iterations"] for c in cells]),
                         "modeling_ms": _mean([c["modeling_ms"] for c in cells]),
                         "solving_ms": _mean([c["solving_ms"] for c in cells])})
        return rows
    if cfg.kind == "network_power":
        fn = partial(_network_power_trial, shape_t=shape_t, region=cfg.region, sweep=cfg.sweep,
                     opts=cfg.options)
        per_seed = _run_jobs(fn, seeds, cfg.workers)
        rows = []
        for j, g in enumerate(cfg.sweep):
            cells = [ps[j] for ps in per_seed]
            ok = [c for c in cells if c["feasible"]]
            rows.append({"gamma_dB": g, "trials": len(cells), "feasible": len(ok),
                         "failures": sum(c["failed"] for c in cells),
                         "network_power_W": _mean([c["network_power"] for c in ok]),
                         "normalized_network_power": _mean([c["normalized"] for c in ok]),
                         "transmit_power_W": _mean([c["transmit"] for c in ok]),
                         "active_raus": _mean([c["active"] for c in ok]),
                         "modeling_ms": _mean([c["modeling_ms"] for c in cells]),
                         "solving_ms": _mean([c["solving_ms"] for c in cells])})
        return rows
    fn = partial(_maxmin_trial, shape_t=shape_t, region=cfg.region, sweep=cfg.sweep,
                 opts=cfg.options, tol=cfg.tol, warm_start=cfg.warm_start)
    per_seed = _run_jobs(fn, seeds, cfg.workers)
    rows = []
    for j, snr in enumerate(cfg.sweep):
        for scheme in ("optimal",) + apps.SCHEMES:
            cells = [ps[j][scheme] for ps in per_seed]
            ok = [c for c in cells if not c["failed"]]
            rows.append({"SNR_dB": snr, "scheme": scheme, "trials": len(cells),
                         "failures": len(cells) - len(ok),
                         "min_rate_bps_hz": _mean([c["rate"] for c in ok]),
                         "gamma": _mean([c["gamma"] for c in ok]),
                         "iterations": _mean([c["iterations"] for c in ok]),
                         "modeling_ms": _mean([c["modeling_ms"] for c in ok]),
                         "solving_ms": _mean([c["solving_ms"] for c in ok])})
    return rows


# -- output -------------------------------------------------------------------------

def _cell(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def format_table(kind: str, rows: list[dict], fmt: str = "csv") -> str:
    columns = COLUMNS[kind]
    if fmt == "json":
        clean = [{k: (None if isinstance(r[k], float) and math.isnan(r[k]) else r[k])
                  for k in columns} for r in rows]
        return json.dumps({"table": kind, "version": TABLE_VERSION, "columns": columns,
                           "rows": clean}, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# conic-splitter {kind} v{TABLE_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r[k]) for k in columns])
    return buf.getvalue()


def read_table(text: str) -> tuple[str, list[dict]]:
    """Inverse of :func:`format_table` for CSV output; values stay strings."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# conic-splitter "):
        raise ValueError("missing versioned header comment")
    kind = lines[0].split()[2]
    return kind, list(csv.DictReader(lines[1:]))


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# -- commands ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, indent=None) -> int:
    try:
        program = read_cone_program(cfg.inputs[0])
    except ParseError as exc:
        print(f"{cfg.inputs[0]}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot read {cfg.inputs[0]}: {exc}", file=sys.stderr)
        return 1
    result = solve(program, cfg.options)
    print(result_json(result, indent=indent))
    return EXIT_CODES[result.status]


def cmd_stuff(cfg: RunConfig) -> int:
    shape = NetworkShape.uniform(*cfg.shapes[0])
    inst = generate_network(channel_config(cfg.region), shape, cfg.sweep[0], seed=cfg.seed)
    program = stuff(get_template(shape, inst.field), apps.normalize_instance(inst)[0])
    _emit(format_cone_program(program), cfg.out)
    return 0


def cmd_benchmark(cfg: RunConfig) -> int:
    _emit(format_table("benchmark", run_benchmark(cfg), cfg.fmt), cfg.out)
    return 0


def cmd_experiment(cfg: RunConfig) -> int:
    _emit(format_table(cfg.kind, run_experiment(cfg), cfg.fmt), cfg.out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        if cfg.subcommand == "solve":
            return cmd_solve(cfg, args.indent)
        if cfg.subcommand == "stuff":
            return cmd_stuff(cfg)
        if cfg.subcommand == "benchmark":
            return cmd_benchmark(cfg)
        return cmd_experiment(cfg)
    except ConicSplitterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
