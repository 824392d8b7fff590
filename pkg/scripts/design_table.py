"""Per-design summary: plan size, TPG size, makespans and Monte Carlo success.

Open loop uses a Pick-only failure rate calibrated so a 14-step plan succeeds
20% of the time. Closed loop adds runtime checks with operator recovery.

    python scripts/design_table.py --trials 500
"""

from __future__ import annotations

import argparse
import time

from skillgraph import world as W
from skillgraph.executor import ExecutionConfig, FailureModel, Recovery, compare_modes, run_batch
from skillgraph.planner import Planner
from skillgraph.skills import default_library
from skillgraph.taskspec import DESIGNS, load_design
from skillgraph.tpg import build_tpg


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    lib, z0 = default_library(), W.default_world()
    p = 1 - 0.2 ** (1 / 14)
    open_cfg = ExecutionConfig(failure_model=FailureModel.pick_only(p), recovery=Recovery("none"))
    closed_cfg = ExecutionConfig(failure_model=FailureModel.pick_only(p), checks_enabled=True)
    seeds = range(a.seed, a.seed + a.trials)

    print(f"{'design':<8} {'steps':>5} {'plan s':>7} {'nodes':>5} {'seq s':>7} {'async s':>7} {'open':>6} {'closed':>6}")
    for name in DESIGNS:
        t0 = time.perf_counter()
        plan = Planner(lib, weight=10.0, max_expansions=1500).plan(load_design(name), z0)
        dt = time.perf_counter() - t0
        nodes = len(build_tpg(plan, z0, lib).nodes)
        seq, asy = compare_modes(plan, z0, library=lib)
        ok_open = run_batch(plan, z0, open_cfg, seeds, lib).successes / a.trials
        ok_closed = run_batch(plan, z0, closed_cfg, seeds, lib).successes / a.trials
        print(f"{name:<8} {len(plan.grounded):>5} {dt:7.2f} {nodes:>5} {seq:7.1f} {asy:7.1f} {ok_open:6.3f} {ok_closed:6.3f}")


if __name__ == "__main__":
    main()
