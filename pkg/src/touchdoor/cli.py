"""Command-line front end for training, evaluation, calibration, and reports.

    touchdoor train --config cfg.json [--seed N] [--workers N]
                    [--deterministic] [--out DIR]
    touchdoor eval RUN_DIR [--domain {nominal,train,transfer}] [--episodes N]
                    [--seed N] [--steps N] [--out DIR]
    touchdoor calibrate [PROFILES.json] [--out DIR]
    touchdoor report RUN_DIR [RUN_DIR ...] [--out DIR] [--seed N]

Exit status 0 on success, 2 on a configuration or contract error.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import CalibrationError, ConfigError, ContractError, TrainingDiverged


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="touchdoor",
        description="Tactile door-opening workbench: train, evaluate, "
                    "calibrate, and report.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run every seed x condition arm")
    p_train.add_argument("--config", required=True, help="run configuration JSON")
    p_train.add_argument("--seed", type=int, default=None,
                         help="train only this seed instead of the config's list")
    p_train.add_argument("--workers", type=int, default=None,
                         help="collection threads (overrides the config)")
    p_train.add_argument("--deterministic", action="store_true",
                         help="single-worker sequential mode; reruns are bit-identical")
    p_train.add_argument("--out", default=None, help="output root (overrides the config)")

    p_eval = sub.add_parser("eval", help="roll a trained policy without exploration noise")
    p_eval.add_argument("run_dir", help="training run directory")
    p_eval.add_argument("--domain", choices=harness.EVAL_DOMAINS, default="transfer")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=1000)
    p_eval.add_argument("--steps", type=int, default=None,
                        help="per-episode step budget (default: the environment's)")
    p_eval.add_argument("--out", default=None,
                        help="where to write eval files (default: the run directory)")

    p_cal = sub.add_parser("calibrate", help="fit tactile thresholds from rig presses")
    p_cal.add_argument("profiles", nargs="?", default=None,
                       help="press profiles JSON; default is the built-in "
                            "3 positions x 4 weights grid")
    p_cal.add_argument("--out", default="calibration")

    p_rep = sub.add_parser("report", help="aggregate runs into comparison artifacts")
    p_rep.add_argument("run_dirs", nargs="+", help="completed run directories")
    p_rep.add_argument("--out", default="report")
    p_rep.add_argument("--seed", type=int, default=0, help="bootstrap resampling seed")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = harness.load_config(args.config)
            run_dirs = harness.cmd_train(cfg, seed=args.seed, workers=args.workers,
                                         deterministic=args.deterministic,
                                         out=args.out)
            for d in run_dirs:
                print(d)
        elif args.command == "eval":
            summary = harness.cmd_eval(args.run_dir, domain=args.domain,
                                       episodes=args.episodes, seed=args.seed,
                                       max_steps=args.steps, out=args.out)
            print(f"{summary['condition']} on {summary['domain']}: "
                  f"final angle {summary['final_angle_deg_mean']:.2f} "
                  f"+- {summary['final_angle_deg_std']:.2f} deg over "
                  f"{summary['episodes']} episodes")
        elif args.command == "calibrate":
            result = harness.cmd_calibrate(args.profiles, out=args.out)
            print(f"scale {result.scale:.17g}, thresholds written to {args.out}")
        elif args.command == "report":
            report = harness.cmd_report(args.run_dirs, out=args.out, seed=args.seed)
            for domain, imp in report["improvement"].items():
                if imp["improvement_pct"] is not None:
                    lo, hi = imp["interval_90_pct"]
                    print(f"{domain}: improvement {imp['improvement_pct']:.1f}% "
                          f"[{lo:.1f}%, {hi:.1f}%]")
            print(f"report written to {args.out}")
    except (ConfigError, ContractError, CalibrationError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0
