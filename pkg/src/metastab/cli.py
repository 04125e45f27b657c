"""Command-line entry point: ``metastab <mode> [--config file] [flags]``.

Flags override config-file values.  Exit codes: 0 success, 2 invalid
configuration, 3 completed with partial replica failures.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    MODES,
    ConfigError,
    ExperimentConfig,
    run_experiment,
    write_report,
)
from .landscape import DeltaTooLarge, EpsTooLarge, FewerThanThreeRoots


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metastab",
        description="Numerical laboratory for metastability of the dilute mean-field Ising chain",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.add_argument("--config", help="TOML or JSON config file")
        sp.add_argument("--N", type=int)
        sp.add_argument("--N-list", type=str, help="comma-separated sizes (cw mode)")
        sp.add_argument("--beta", type=float)
        sp.add_argument("--h", type=float)
        sp.add_argument("--p", type=float)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--seed", dest="master_seed", type=int)
        sp.add_argument("--s", type=float)
        sp.add_argument("--c1", type=float)
        sp.add_argument("--c2", type=float)
        sp.add_argument("--m1", type=float)
        sp.add_argument("--m2", type=float)
        sp.add_argument("--from", dest="m1", type=float)
        sp.add_argument("--to", dest="m2", type=float)
        sp.add_argument("--g", type=str, help="uniform | indicator:a,b")
        sp.add_argument("--trajectories", type=int)
        sp.add_argument("--step-cap", dest="step_cap", type=int)
        sp.add_argument("--start-level", dest="start_level", type=float)
        sp.add_argument("--target-level", dest="target_level", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--v-file", dest="v_file",
                        help="bounds mode: file with one test-function value per grid level")
        sp.add_argument("--out", type=str, help="output prefix (writes PREFIX.csv/.json)")
    return parser


def _assemble_config(args: argparse.Namespace) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        base = ExperimentConfig.from_file(args.config).to_dict()
    base["mode"] = args.mode
    for key, value in vars(args).items():
        if key in ("config", "mode") or value is None:
            continue
        if key == "N_list":
            base["N_list"] = [int(x) for x in value.split(",")]
        else:
            base[key] = value
    return ExperimentConfig.from_dict(base)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _assemble_config(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        report = run_experiment(cfg)
    except (ConfigError, FewerThanThreeRoots, DeltaTooLarge, EpsTooLarge, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    prefix = cfg.out or f"metastab_{cfg.mode.replace('-', '_')}"
    csv_path, json_path = write_report(report, prefix)
    print(report.full_json())
    print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    return 3 if report.n_failed else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
