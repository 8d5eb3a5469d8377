"""Command line interface.

::

    rectiflow scenario list
    rectiflow run --config cfg.json [--seed S] [--out report.json] [--set key=value ...]
    rectiflow sweep --config cfg.json --param schedule.value --values 0,0.05,0.1
    rectiflow metrics --coupling pairs.txt --baseline discrete_exact

``--threads N`` (or the ``RECTIFLOW_THREADS`` environment variable) caps the
worker pools of the numerical libraries.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64


def _parse_value(text: str):
    """Interpret a command-line value as JSON when possible, else as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _limit_threads(n: int | None) -> None:
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RECTIFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"RECTIFLOW_THREADS must be an integer, got {env!r}")
    return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rectiflow", description=__doc__.split("\n\n")[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap on worker threads (default: $RECTIFLOW_THREADS or library default)")
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scenario", help="scenario registry")
    sc_sub = sc.add_subparsers(dest="action", required=True)
    sc_sub.add_parser("list", help="list registered scenarios")

    def add_run_flags(q):
        q.add_argument("--config", required=True, help="JSON experiment config")
        q.add_argument("--seed", type=int, default=None, help="override the master seed")
        q.add_argument("--out", default=None, help="report path (overrides 'output')")
        q.add_argument("--format", choices=("json", "csv"), default=None)
        q.add_argument("--n_particles", type=int, default=None)
        q.add_argument("--K", type=int, default=None)
        q.add_argument("--eps", type=float, default=None)
        q.add_argument("--field_source", choices=("closed_form", "kernel"), default=None)
        q.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (dotted paths allowed)")

    run = sub.add_parser("run", help="run one experiment")
    add_run_flags(run)

    sw = sub.add_parser("sweep", help="run an experiment for several values of one key")
    add_run_flags(sw)
    sw.add_argument("--param", required=True, help="dotted config key, e.g. schedule.value")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out-dir", default=None, help="directory for per-value reports")

    mt = sub.add_parser("metrics", help="cost and optimality gap of a stored coupling")
    mt.add_argument("--coupling", required=True, help="particle file")
    mt.add_argument("--baseline", required=True,
                    choices=("discrete_exact", "gaussian_closed_form", "quantile_1d"))
    return p


def _load_config(args):
    from .experiment import ExperimentConfig

    cfg = ExperimentConfig.load(args.config)
    overrides = {}
    for key in ("seed", "n_particles", "K", "eps", "field_source", "format"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    if args.out is not None:
        overrides["output"] = args.out
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v)
    return cfg.with_overrides(**overrides) if overrides else cfg


def _summary(report) -> dict:
    last = report.steps[-1] if report.steps else None
    return {
        "steps": len(report.steps),
        "aborted_at": report.aborted_at,
        "final_transport_cost": None if last is None else last.transport_cost,
        "final_transport_distance": None if last is None else last.transport_distance,
    }


def _cmd_run(args) -> int:
    from .errors import NonRectifiableError
    from .experiment import run_experiment

    cfg = _load_config(args)
    try:
        report = run_experiment(cfg)
    except NonRectifiableError as exc:
        print(json.dumps({"status": "partial", "error": str(exc), "t_star": exc.t_star,
                          "step": exc.step, "seed": cfg.seed, "output": cfg.output}))
        return EXIT_PARTIAL
    print(json.dumps({"status": "ok", "output": cfg.output, **_summary(report)}))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .errors import NonRectifiableError
    from .experiment import run_experiment

    base = _load_config(args)
    values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for val in values:
        over = {args.param: val}
        if out_dir is not None:
            suffix = "csv" if base.format == "csv" else "json"
            over["output"] = str(out_dir / f"{args.param}={val}.{suffix}")
        cfg = base.with_overrides(**over)
        try:
            report = run_experiment(cfg)
            row = {"param": args.param, "value": val, "status": "ok", **_summary(report)}
        except NonRectifiableError as exc:
            status = EXIT_PARTIAL
            row = {"param": args.param, "value": val, "status": "partial", "error": str(exc)}
        print(json.dumps(row), flush=True)
    return status


def _cmd_metrics(args) -> int:
    from .couplings import load_particles
    from .ot import transport_cost
    from .rectification import optimality_gap

    pc = load_particles(args.coupling)
    cost = transport_cost(pc)
    gap = optimality_gap(pc, args.baseline)
    print(json.dumps({"n": pc.n, "d": pc.d, "transport_cost": cost,
                      "transport_distance": cost ** 0.5, "baseline": args.baseline,
                      "baseline_cost": cost - gap, "optimality_gap": gap}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _limit_threads(_threads(args))
    from .errors import RectiflowError

    try:
        if args.command == "scenario":
            from .scenarios import list_scenarios

            for name, desc in list_scenarios():
                print(f"{name:22s} {desc}")
            return EXIT_OK
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "metrics":
            return _cmd_metrics(args)
    except RectiflowError as exc:
        print(f"rectiflow: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"rectiflow: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    parser.print_usage(sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
