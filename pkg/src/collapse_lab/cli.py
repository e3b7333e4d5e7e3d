"""Command-line experiment runner.

    collapse-lab run <config.json> [--seed N] [--out DIR] [--strict]
    collapse-lab presets

``run`` also accepts a built-in preset name in place of a path.  Exit
status: 0 when every check passes, 1 on a check failure, 2 on a
configuration or I/O error.  The COLLAPSE_LAB_THREADS environment
variable caps trajectory workers; results are identical for any value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .core import ValidationError
from .decoherence import StepSizeError
from .experiments import ConfigError, load_config, load_preset, preset_names, run_experiment
from .report import emit_report

PRESET_BLURBS = {
    "collide": "collision conservation laws and the cross-section sum rule",
    "decohere": "off-diagonal decay at the collision rate, constant diagonal",
    "cascade": "cascade closed form vs integrator plus frontier fluctuation statistics",
    "reduce": "hitting probabilities vs initial weights, Monte Carlo vs Fokker-Planck",
    "epr": "joint outcome frequencies and the local block covariance structure",
}


def _build_parser():
    parser = argparse.ArgumentParser(prog="collapse-lab",
                                     description="stochastic collapse experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a config file or preset name")
    run.add_argument("config", help="path to a config JSON, or a preset name")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--strict", action="store_true",
                     help="escalate accuracy warnings to errors")
    sub.add_parser("presets", help="list the built-in experiment presets")
    return parser


def _cmd_presets():
    for name in preset_names():
        print(f"{name:10s} {PRESET_BLURBS.get(name, '')}")
    return 0


def _cmd_run(args):
    try:
        if os.path.exists(args.config):
            config = load_config(args.config)
        elif args.config in preset_names():
            config = load_preset(args.config)
        else:
            raise ConfigError(f"{args.config!r} is neither a file nor a preset name")
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out is not None:
            config["output_dir"] = args.out
        out_dir = config.get("output_dir", "collapse-lab-out")
        report, tables = run_experiment(config, strict=args.strict)
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValidationError, StepSizeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        emit_report(report, out_dir, tables)
    except OSError as e:
        print(f"error writing {out_dir}: {e}", file=sys.stderr)
        return 2
    for check in report.checks:
        mark = "PASS" if check.passed else "FAIL"
        print(f"[{mark}] {check.name}: measured {check.measured} (expected {check.expected})")
    status = "pass" if report.overall_pass else "FAIL"
    print(f"{report.kind}: {status} in {report.duration_s:.2f} s; report written to "
          f"{os.path.join(out_dir, 'report.json')}")
    return 0 if report.overall_pass else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "presets":
        return _cmd_presets()
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
