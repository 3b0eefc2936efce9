"""Command line entry point.

  fairdpfed run <config.json | preset-name> [--out DIR] [--seed N] [--workers N]
  fairdpfed compare <run-dir> [<run-dir> ...] [--out DIR]
  fairdpfed sweep <config.json | preset-name> --param KEY --values a,b,c [--out DIR]

Exit codes: 0 success, 2 config error, 3 simulation abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

from .federation import SimulationError
from .harness import (
    ConfigError,
    ExperimentConfig,
    PRESETS,
    compare_runs,
    config_from_dict,
    load_summary,
    parse_config,
    preset_config,
    run_experiment,
)


def _load_config(source: str) -> ExperimentConfig:
    if source in PRESETS:
        return preset_config(source)
    return parse_config(source)


def _with_seed(cfg: ExperimentConfig, seed) -> ExperimentConfig:
    if seed is None:
        return cfg
    return dataclasses.replace(cfg, fed=dataclasses.replace(cfg.fed, seed=seed))


def _cmd_run(args) -> int:
    cfg = _with_seed(_load_config(args.config), args.seed)
    out = Path(args.out or "runs/run")
    summary = run_experiment(cfg, out, workers=args.workers)
    if not args.quiet:
        print(f"run complete: {out}")
        print(
            f"A_Fed={summary.A_Fed:.4f} A_Cen={summary.A_Cen:.4f} "
            f"delta_acc={summary.delta_acc:.4f} "
            f"per_group_gap={summary.per_group_gap:.4f} "
            f"eps_total={summary.eps_total_nominal:.4g}"
        )
    return 0


def _cmd_compare(args) -> int:
    named = [(Path(d).name or str(d), load_summary(d)) for d in args.run_dirs]
    text, csv_text = compare_runs(named)
    if not args.quiet:
        print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(csv_text)
    return 0


def _sweep_value(raw: str):
    if raw == "inf":
        return math.inf
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def _cmd_sweep(args) -> int:
    base = _with_seed(_load_config(args.config), args.seed)
    out_root = Path(args.out or "runs/sweep")
    fed_fields = {f.name for f in dataclasses.fields(base.fed)}
    if args.param not in fed_fields:
        raise ConfigError(
            f"sweep parameter {args.param!r} is not a federation key "
            f"({sorted(fed_fields)})"
        )
    named = []
    for raw in args.values.split(","):
        value = _sweep_value(raw)
        cfg = dataclasses.replace(
            base, fed=dataclasses.replace(base.fed, **{args.param: value})
        )
        run_dir = out_root / f"{args.param}={raw}"
        summary = run_experiment(cfg, run_dir, workers=args.workers)
        named.append((f"{args.param}={raw}", summary))
    text, csv_text = compare_runs(named)
    if not args.quiet:
        print(text, end="")
    (out_root / "comparison.csv").write_text(csv_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairdpfed", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout report")
    parser.add_argument("--workers", type=int, default=1,
                        help="intra-round client workers (does not affect results)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config", help="config file path or preset name")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate finished runs")
    p_cmp.add_argument("run_dirs", nargs="+", help="run directories with summary.json")
    p_cmp.set_defaults(func=_cmd_compare)

    p_swp = sub.add_parser("sweep", help="sweep one federation parameter")
    p_swp.add_argument("config", help="base config file path or preset name")
    p_swp.add_argument("--param", required=True, help="federation key to sweep")
    p_swp.add_argument("--values", required=True, help="comma-separated values")
    p_swp.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation abort: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
