"""Command-line entry point.

Exit status is 0 on success, 1 when a run aborts or a verification fails and
2 for unusable arguments or configs.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

from .config import ConfigError, load_config
from .experiments import (
    PREDICT_COLUMNS,
    RunAborted,
    compare,
    predict_grid,
    run,
    sweep,
)
from .oracle import pinned_grid, verify_oracle, verify_reduction

log = logging.getLogger("cocodlab")


def _list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


def _add_config_args(p, required=True):
    p.add_argument("--config", required=required, help="INI experiment file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config value (repeatable; KEY or SECTION.KEY)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cocodlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one config and write trace.csv / summary.csv")
    _add_config_args(p, required=False)
    p.add_argument("--output", help="output directory (default: run.output)")

    p = sub.add_parser("verify-oracle", help="compare the engine against the sequential reference")
    _add_config_args(p, required=False)
    p.add_argument("--grid", action="store_true", help="check the pinned grid instead of one config")
    p.add_argument("--reduction", action="store_true", help="also cross-check S-SGD against Local-SGD k=1")

    p = sub.add_parser("sweep", help="one summary row per value of an axis")
    _add_config_args(p)
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True, type=_list(str))
    p.add_argument("--output", help="output directory (default: run.output)")

    p = sub.add_parser("compare", help="loss curves of several variants, by step and by time")
    p.add_argument("--configs", required=True, type=_list(str))
    p.add_argument("--seeds", type=_list(int), help="average over these seeds")
    p.add_argument("--output", help="output directory (default: first config's run.output)")

    p = sub.add_parser("predict", help="predicted time speedups over a parameter grid (CSV on stdout)")
    p.add_argument("--n", type=_list(int), required=True)
    p.add_argument("--tcomp", type=_list(float), required=True)
    p.add_argument("--tcomm", type=_list(float), required=True)
    p.add_argument("--a", type=_list(float), default=[1.0])
    p.add_argument("--k", type=_list(int), default=[1])
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    trace, summary = run(cfg, args.output)
    log.info("%s: %d steps, final loss %.6g, sim time %.6g s, %d comm rounds",
             summary["variant"], trace.steps, summary["final_loss"],
             summary["total_sim_time_s"], summary["comm_rounds"])
    print(f"wrote {args.output or cfg.output}/trace.csv and summary.csv")
    return 0


def _cmd_verify(args) -> int:
    if args.grid:
        configs = pinned_grid()
    else:
        configs = [load_config(args.config, args.overrides)]
    ok = True
    for cfg in configs:
        report = verify_oracle(cfg)
        print(f"N={cfg.workers} k={cfg.period} caps={cfg.caps}: {report.summary()}")
        ok &= report.passed
        if args.reduction:
            red = verify_reduction(cfg)
            print(f"N={cfg.workers}: {red.summary()}")
            ok &= red.passed
    return 0 if ok else 1


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = args.output or cfg.output
    rows = sweep(cfg, args.axis, args.values, out)
    print(f"wrote {len(rows)} rows to {out}/sweep.csv")
    return 0


def _cmd_compare(args) -> int:
    cfgs = [load_config(p) for p in args.configs]
    out = args.output or cfgs[0].output
    _, _, labels = compare(cfgs, args.seeds, out)
    print(f"compared {', '.join(labels)}; wrote {out}/compare_by_step.csv and compare_by_time.csv")
    return 0


def _cmd_predict(args) -> int:
    rows = predict_grid(args.n, args.tcomp, args.tcomm, args.a, args.k)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(PREDICT_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in PREDICT_COLUMNS])
    return 0


COMMANDS = {
    "run": _cmd_run,
    "verify-oracle": _cmd_verify,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "predict": _cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command in ("run", "verify-oracle") and not args.config and not getattr(args, "grid", False):
        if not args.overrides:
            parser.error(f"{args.command}: give --config and/or --set")
    try:
        return COMMANDS[args.command](args)
    except RunAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
