"""Command line entry point: ``evreserve {ingest,fit,simulate,sweep,report}``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 solver limit reached without a usable solution.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional

from .config import BENCHMARKS, ConfigError, RunConfig, load_config, with_overrides
from .fleet_data import DataError
from .forecast import save_models
from .metrics_report import ReportError, average_results, emit, read_sweep_csv, summarize
from .optimizer import SolverLimitError
from .smpc import prepare_data, run_simulation, write_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting, so main() owns exit codes."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}")


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of integers: {text!r}")


def _names(text: str) -> list:
    names = [x.strip() for x in text.split(",") if x.strip()]
    bad = [n for n in names if n not in BENCHMARKS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown benchmark(s): {', '.join(bad)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run configuration (defaults: synthetic fleet)")
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument("--seed", type=int, help="override the simulation seed")
    common.add_argument("--cvar-denominator", choices=("standard", "paper"),
                        help="CVaR tail weight 1/alpha (standard) or 1/(1+alpha) (paper)")
    common.add_argument("--shared-penalty-variable", action="store_true",
                        help="one penalty variable per scenario and settlement for both directions")
    p = _Parser(prog="evreserve", description="Reserve scheduling for aggregated EV fleets.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common], help="validate data and write the fleet envelope")
    sub.add_parser("fit", parents=[common], help="fit boundary regression models")
    sub.add_parser("simulate", parents=[common], help="run one simulation")
    sw = sub.add_parser("sweep", parents=[common], help="run a fleet size / omega / benchmark sweep")
    sw.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                    help="parallel worker processes (default: logical cores)")
    sw.add_argument("--fleet-sizes", type=_ints, help="comma separated fleet sizes")
    sw.add_argument("--omegas", type=_floats, help="comma separated risk weights in [0, 1]")
    sw.add_argument("--benchmarks", type=_names, help="comma separated benchmark names")
    sub.add_parser("report", parents=[common], help="render charts from <out>/sweep.csv")
    return p


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return with_overrides(cfg, seed=args.seed,
                          fleet_sizes=getattr(args, "fleet_sizes", None),
                          omegas=getattr(args, "omegas", None),
                          benchmarks=getattr(args, "benchmarks", None),
                          cvar_denominator=args.cvar_denominator,
                          shared_penalty_variable=args.shared_penalty_variable)


def _check_inputs(cfg: RunConfig) -> None:
    sim = cfg.simulation
    for path in (sim.sessions_csv, sim.prices_csv, sim.weather_csv):
        if path and not os.path.isfile(path):
            raise DataError(f"input file not found: {path}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, cfg: RunConfig, command: str, extra: Optional[dict] = None) -> None:
    files = {}
    for root, _, names in os.walk(out_dir):
        for name in names:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out_dir).replace(os.sep, "/")
            if rel != "manifest.json":
                files[rel] = _sha256(path)
    manifest = {"command": command, "config_sha256": cfg.digest(), "seed": cfg.simulation.seed,
                "files": dict(sorted(files.items()))}
    manifest.update(extra or {})
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_ingest(cfg: RunConfig, out: str) -> None:
    data = prepare_data(cfg.simulation)
    data.envelope.to_csv(os.path.join(out, "envelope.csv"))
    _write_manifest(out, cfg, "ingest", {"n_ev": data.n_ev, "settlements": data.envelope.n - 1})


def _cmd_fit(cfg: RunConfig, out: str) -> None:
    data = prepare_data(cfg.simulation)
    save_models(data.models, os.path.join(out, "models.csv"))
    _write_manifest(out, cfg, "fit", {"train_days": cfg.simulation.n_train - 1})


def _cmd_simulate(cfg: RunConfig, out: str) -> None:
    log = run_simulation(cfg.simulation)
    write_log(log, out, int(round(24 / cfg.simulation.market.dt)))
    _write_manifest(out, cfg, "simulate", {"algorithm": log.algorithm})


def _run_labels(cfg: RunConfig) -> list:
    """``(algorithm, omega)`` pairs simulated for every fleet size."""
    sim = cfg.simulation
    if sim.forecast_only:
        return [("smpc", sim.market.omega)]
    return [("smpc", float(o)) for o in cfg.sweep.omegas] + [(b, 0.0) for b in cfg.sweep.benchmarks]


def _run_group(task):
    """Prepare one fleet once and simulate every labelled run on it."""
    sim, labels, out_dir, per_day = task
    data = prepare_data(sim)
    logs = []
    for alg, omega in labels:
        cfg = replace(sim, algorithm=alg, market=replace(sim.market, omega=omega))
        log = run_simulation(cfg, data)
        tag = alg if alg != "smpc" else f"smpc_omega{omega:g}"
        write_log(log, os.path.join(out_dir, "runs", f"n{sim.n_ev}_seed{sim.seed}", tag), per_day)
        logs.append(log)
    return logs


def _cmd_sweep(cfg: RunConfig, out: str, workers: int) -> None:
    sim = cfg.simulation
    per_day = int(round(24 / sim.market.dt))
    seeds = list(cfg.sweep.seeds) or [sim.seed]
    labels = _run_labels(cfg)
    tasks = [(replace(sim, n_ev=int(n), seed=int(s)), labels, out, per_day)
             for s in seeds for n in cfg.sweep.fleet_sizes]
    if workers <= 1 or len(tasks) == 1:
        groups = [_run_group(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            groups = list(pool.map(_run_group, tasks))  # map keeps submission order
    results = []
    for logs in groups:
        results.extend(summarize(logs, delivery_offset=sim.market.delivery_start))
    emit(average_results(results), out, formats=("csv",))
    _write_manifest(out, cfg, "sweep", {"seeds": seeds,
                                        "fleet_sizes": [int(n) for n in cfg.sweep.fleet_sizes],
                                        "runs": [f"{a}:{o:g}" for a, o in labels]})


def _cmd_report(out: str) -> None:
    path = os.path.join(out, "sweep.csv")
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")
    emit(read_sweep_csv(path), out, formats=("svg",))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if getattr(args, "workers", 1) < 1:
        print(f"{parser.format_usage()}evreserve: error: --workers must be at least 1",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.config and not os.path.isfile(args.config):
            raise DataError(f"config file not found: {args.config}")
        cfg = _load(args)
        _check_inputs(cfg)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "ingest":
            _cmd_ingest(cfg, args.out)
        elif args.command == "fit":
            _cmd_fit(cfg, args.out)
        elif args.command == "simulate":
            _cmd_simulate(cfg, args.out)
        elif args.command == "sweep":
            _cmd_sweep(cfg, args.out, args.workers)
        else:
            _cmd_report(args.out)
    except SolverLimitError as exc:
        print(f"evreserve: solver limit: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, ConfigError, ReportError, FileNotFoundError, ValueError) as exc:
        print(f"evreserve: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
