#!/usr/bin/env python3
"""Run the desk-scale comparison experiment end to end.

Trains both conditions (with and without tactile input) on three seeds,
2000 episodes x 300 steps per run, evaluates every run on all three domains,
and writes the aggregate report. Artifacts land under runs/headline/.

Completed runs are skipped on rerun, so the script can be restarted after an
interruption. Expect a few hours of wall time on one desktop core.
"""

from __future__ import annotations

import time
from pathlib import Path

from touchdoor import harness

ROOT = Path(__file__).resolve().parent.parent
CONFIG = ROOT / "configs" / "headline.json"
OUT = ROOT / "runs" / "headline"
EVAL_EPISODES = 10
EVAL_SEED = 1000


def main() -> None:
    cfg = harness.load_config(CONFIG)
    print(f"config {CONFIG} hash {harness.config_hash(cfg)[:12]}", flush=True)
    start = time.time()
    run_dirs = []
    for seed in cfg.seeds:
        for condition in cfg.conditions():
            mark = time.time()
            run_dir = harness.train_single_run(cfg, seed, condition, OUT)
            run_dirs.append(run_dir)
            print(f"[{time.time() - start:7.0f}s] {run_dir.name} trained "
                  f"({time.time() - mark:.0f}s)", flush=True)
            for domain in harness.EVAL_DOMAINS:
                summary = harness.cmd_eval(run_dir, domain=domain,
                                           episodes=EVAL_EPISODES, seed=EVAL_SEED)
                print(f"    {domain}: {summary['final_angle_deg_mean']:.2f} "
                      f"+- {summary['final_angle_deg_std']:.2f} deg", flush=True)
    report = harness.cmd_report(run_dirs, out=OUT / "report")
    for domain, imp in report["improvement"].items():
        print(f"{domain}: improvement {imp['improvement_pct']} "
              f"interval {imp['interval_90_pct']}", flush=True)
    print(f"done in {time.time() - start:.0f}s", flush=True)


if __name__ == "__main__":
    main()
