"""Execute, learn risk from the logs, insert checks, execute again.

One brick of the Faucet plan is made unreliable. The first batch is logged,
a risk model is estimated from it, checks are inserted where the estimated
risk exceeds the threshold, and the same seeds are rerun. A paired sign test
compares the two batches.

    python scripts/closed_loop_demo.py --trials 200
"""

from __future__ import annotations

import argparse
from dataclasses import replace

from skillgraph import world as W
from skillgraph.adapt import estimate_risk, insert_checks, sign_test
from skillgraph.datalog import LogStore
from skillgraph.executor import ExecutionConfig, FailureModel, execute
from skillgraph.planner import Planner
from skillgraph.skills import default_library
from skillgraph.taskspec import load_design


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--p", type=float, default=0.5, help="failure probability of the weak brick")
    ap.add_argument("--threshold", type=float, default=0.3)
    ap.add_argument("--log", help="keep the learning log in this directory")
    a = ap.parse_args()

    lib, z0 = default_library(), W.default_world()
    plan = Planner(lib, weight=10.0, max_expansions=1500).plan(load_design("Faucet"), z0)
    weak = plan.grounded[0].brick
    cfg = ExecutionConfig(failure_model=FailureModel(per_brick={weak: a.p}), log_conditions=False)

    store = LogStore(a.log) if a.log else LogStore()
    before = []
    for s in range(a.trials):
        tr = execute(plan, z0, replace(cfg, seed=s), library=lib, run_id=f"base-{s}")
        before.append(tr.success)
        store.add_trace(tr, plan, channels=False)
    risk = estimate_risk(store)
    adapted = insert_checks(plan, risk, a.threshold, lib)
    after = [execute(adapted, z0, replace(cfg, seed=s), library=lib).success for s in range(a.trials)]
    wins, losses, pval = sign_test(zip(before, after))
    checks = sum(len(g.checks) for g in adapted.grounded)
    print(f"weak brick {weak}: estimated risk {risk.probability('Pick', plan.grounded[0].robot, weak):.3f}")
    print(f"inserted {checks} checks at threshold {a.threshold}")
    print(f"success before {sum(before)}/{a.trials}, after {sum(after)}/{a.trials}")
    print(f"sign test: {wins} wins, {losses} losses, one-sided p = {pval:.3g}")


if __name__ == "__main__":
    main()
