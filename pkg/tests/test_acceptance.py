"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
from __future__ import annotations

import math
import random
import time

import pytest

from skillgraph.adapt import BanditState, bandit_select, bandit_update, correct_bias, BiasEstimator, estimate_risk, reallocate
from skillgraph.datalog import LogStore, replay as log_replay
from skillgraph.executor import ExecutionConfig, FailureModel, Recovery, compare_modes, execute, run_batch
from skillgraph.planner import NoFeasiblePlan, Planner
from skillgraph.skills import bind, feasible_edge
from skillgraph.tpg import build_tpg, makespan, tpg_from_edges

from .conftest import DESIGN_SIZES
from .oracles import all_paths_makespan, brute_force_min, desk_instance, truncated_geometric_mean
from .scenarios import cost_spread, make_scenario
from .test_adapt import synthetic_store
from .test_datalog import random_config
from .test_skills import CANONICAL, FROZEN_ADJACENCY, SEVEN, _oracle_edge
from .test_tpg import disjoint_plan


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line even under output capture, then re-raise on failure."""

    def report(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return report


def test_criterion_1_open_loop_survival(verdict, faucet_plan, z0, library):
    n_steps = len(faucet_plan.grounded)
    p = 1 - 0.2 ** (1 / n_steps)
    cfg = ExecutionConfig(failure_model=FailureModel.pick_only(p), recovery=Recovery("none"))
    t0 = time.perf_counter()
    s = run_batch(faucet_plan, z0, cfg, range(10_000), library)
    elapsed = time.perf_counter() - t0
    rate = s.successes / s.n
    expected = truncated_geometric_mean(1 - p, n_steps)
    ok = abs(rate - 0.2) <= 0.02 and abs(s.mean_survival - expected) <= 1.0 and elapsed <= 60.0
    verdict("1 open-loop", ok, f"success {rate:.4f} survival {s.mean_survival:.3f} vs {expected:.3f} in {elapsed:.1f} s")


def test_criterion_2_checks_and_recovery(verdict, golden_plans, z0, library):
    cfg = ExecutionConfig(failure_model=FailureModel.pick_only(0.2), checks_enabled=True)
    parts, ok = [], True
    for name, plan in sorted(golden_plans.items()):
        s = run_batch(plan, z0, cfg, range(200), library)
        ok &= s.successes == 200 and s.mean_survival == DESIGN_SIZES[name]
        parts.append(f"{name} {s.successes}/200")
    verdict("2 closed-loop", ok, ", ".join(parts))


def test_criterion_3_async_makespan(verdict, golden_plans, z0, library):
    parts, ok = [], True
    for name, plan in sorted(golden_plans.items()):
        seq, asy = compare_modes(plan, z0, library=library)
        ok &= asy <= seq + 1e-9
        parts.append(f"{name} {asy:.1f}/{seq:.1f}")
    tpg = build_tpg(disjoint_plan(), z0, library)
    lanes = {r: sum(tpg.node(n).duration for n in ids) for r, ids in tpg.lanes.items()}
    ok &= makespan(tpg) <= 1.05 * max(lanes.values())
    rng = random.Random(0)
    for _ in range(300):
        n = rng.randint(1, 12)
        names = [f"v{i}" for i in range(n)]
        d = {v: rng.randint(1, 50) / 10 for v in names}
        edges = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.2]
        t = tpg_from_edges(d, {v: rng.choice(["r1", "r2"]) for v in names}, edges)
        ok &= math.isclose(makespan(t), all_paths_makespan(d, [(e.src, e.dst) for e in t.edges]))
    verdict("3 async", ok, ", ".join(parts) + f"; disjoint {makespan(tpg):.1f} vs lane {max(lanes.values()):.1f}")


def test_criterion_4_planner_optimality(verdict, library):
    rng = random.Random(4)
    checked = mismatches = 0
    while checked < 50:
        task, z = desk_instance(rng)
        expected = brute_force_min(task, z, library)
        if expected is None:
            continue
        checked += 1
        mismatches += not math.isclose(Planner(library).plan(task, z).total_cost, expected, abs_tol=1e-9)
    verdict("4 optimality", mismatches == 0, f"{checked - mismatches}/{checked} match brute force")


def test_criterion_5_reallocation(verdict, library):
    moved = 0
    for seed in range(20):
        sc = make_scenario(seed, library)
        plan = reallocate(sc.task, sc.history, 10 * max(cost_spread(sc, library), 1.0), sc.z0, library)
        moved += plan.grounded[sc.step - 1].brick == "b2"
    refused = 0
    for seed in range(100, 120):
        sc = make_scenario(seed, library, with_alternative=False)
        try:
            reallocate(sc.task, sc.history, 100.0, sc.z0, library)
        except NoFeasiblePlan:
            refused += 1
    verdict("5 reallocation", moved == 20 and refused == 20, f"{moved}/20 reallocated, {refused}/20 infeasible")


def test_criterion_6_adaptation(verdict):
    est = estimate_risk(synthetic_store(0.2, 10_000, seed=6)).probability("Pick", "r1", "b1")
    risk_ok = abs(est - 0.2) <= 0.02

    shares = []
    for seed in range(20):
        rng = random.Random(seed)
        s = BanditState().with_arms("c", ["a", "b"])
        picks = []
        for _ in range(1000):
            arm = bandit_select(s, "c")
            picks.append(arm)
            s = bandit_update(s, "c", arm, float(rng.random() < (0.6 if arm == "a" else 0.4)))
        shares.append(picks[-100:].count("a") / 100)
    ucb = sum(shares) / len(shares)

    rng = random.Random(60)
    sigma, n = 0.5, 200
    b = BiasEstimator()
    for _ in range(n):
        b = correct_bias(b, (rng.gauss(1.5, sigma), rng.gauss(-0.5, sigma)))
    tol = 3 * sigma / math.sqrt(n)
    bias_ok = abs(b.mean[0] - 1.5) <= tol and abs(b.mean[1] + 0.5) <= tol
    verdict(
        "6 adaptation",
        risk_ok and ucb >= 0.9 and bias_ok,
        f"risk {est:.4f}, best-arm share {ucb:.3f}, bias ({b.mean[0]:.3f}, {b.mean[1]:.3f})",
    )


def test_criterion_7_reproducibility(verdict, tmp_path, golden_plans, z0, library):
    plan = golden_plans["Fish"]
    cfg = ExecutionConfig(seed=11, mode="async", failure_model=FailureModel.pick_only(0.1), checks_enabled=True)
    traces_ok = execute(plan, z0, cfg, library=library, run_id="a").export() == execute(plan, z0, cfg, library=library, run_id="a").export()
    bcfg = ExecutionConfig(failure_model=FailureModel.pick_only(0.1))
    batch_ok = run_batch(plan, z0, bcfg, range(20), library).to_json() == run_batch(plan, z0, bcfg, range(20), library).to_json()

    rng = random.Random(7)
    replays = 0
    for i in range(100):
        p = golden_plans[rng.choice(sorted(golden_plans))]
        tr = execute(p, z0, random_config(rng, i), library=library, run_id=f"s{i}")
        d = tmp_path / f"log{i}"
        LogStore(d).add_trace(tr, p, channels=False)
        replays += log_replay(LogStore.open(d), f"s{i}", z0, library) == tr.final_state

    seven = [bind(library[n], CANONICAL[n]) for n in SEVEN]
    got = [[int(feasible_edge(a, b, z0)) for b in seven] for a in seven]
    oracle = [[int(_oracle_edge(a, b, z0)) for b in seven] for a in seven]
    edges_ok = got == oracle == FROZEN_ADJACENCY
    verdict(
        "7 reproducibility",
        traces_ok and batch_ok and replays == 100 and edges_ok,
        f"traces {traces_ok}, batch {batch_ok}, replays {replays}/100, 49-pair edges {edges_ok}",
    )
