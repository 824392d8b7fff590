from __future__ import annotations

import math
import random
import statistics
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillgraph import world as W
from skillgraph.adapt import (
    ArmStats,
    BanditState,
    BiasEstimator,
    FailureHistory,
    NoArms,
    RiskEstimate,
    RiskModel,
    apply,
    bandit_reward,
    bandit_select,
    bandit_update,
    congestion_bucket,
    contexts_used,
    correct_bias,
    estimate_risk,
    insert_checks,
    offsets_from_store,
    penalized_evaluators,
    reallocate,
    sign_test,
    update_evaluators,
)
from skillgraph.datalog import LogStore, RunRecord
from skillgraph.executor import ExecutionConfig, FailureModel, execute
from skillgraph.planner import NoFeasiblePlan, Planner, PlanNode, expand_grounded, replay
from skillgraph.taskspec import AssemblyStep, TaskSpec

from .scenarios import cost_spread, make_scenario
from .test_datalog import _rec


def synthetic_store(p: float, n: int, seed: int, robot: str = "r1") -> LogStore:
    rng = random.Random(seed)
    recs = [_rec("failed" if rng.random() < p else "success", 1000, robot=robot) for _ in range(n)]
    store = LogStore()
    store.append_run(recs, RunRecord("x", "-", "sequential", seed, "Completed", n, 0, 0))
    return store


class TestRisk:
    def test_prior(self):
        assert RiskEstimate.laplace(0, 0).probability == 0.5
        assert RiskModel().probability("Pick", "r1", "b1") == 0.5

    def test_arithmetic(self):
        assert RiskEstimate.laplace(8, 2).probability == pytest.approx(0.3)

    def test_backoff(self):
        m = RiskModel.from_counts({("Pick", "r1", "b1"): (8, 2), ("Pick", "r1", "b2"): (8, 0)})
        assert m.probability("Pick", "r1", "b1") == pytest.approx(0.3)
        assert m.probability("Pick", "r1", "b9") == pytest.approx(3 / 18)
        assert m.probability("Pick", "r2", "b1") == pytest.approx(3 / 18)
        assert m.probability("PlaceDown", "r1", "b1") == 0.5

    def test_monte_carlo_n1000(self):
        est = estimate_risk(synthetic_store(0.2, 1000, seed=1)).probability("Pick", "r1", "b1")
        assert abs(est - 0.2) <= 0.04

    def test_ignores_forced_and_aborted_records(self):
        store = LogStore()
        recs = [_rec("success", 1), _rec("recovered", 1), _rec("aborted", 0), _rec("failed", 1)]
        store.append_run(recs, RunRecord("x", "-", "sequential", 0, "Completed", 4, 0, 0))
        e = estimate_risk(store).estimates[("Pick", "r1", "b1")]
        assert (e.attempts, e.failures) == (2, 1)

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=3, max_size=3))
    def test_merge_is_associative(self, triples):
        ms = [RiskModel.from_counts({("Pick", "r1", "b1"): (a + f, f)}) for a, f in triples]
        left = ms[0].merge(ms[1]).merge(ms[2])
        right = ms[0].merge(ms[1].merge(ms[2]))
        assert left == right

    def test_json_round_trip(self):
        m = RiskModel.from_counts({("Pick", "r1", "b1"): (8, 2)})
        assert RiskModel.from_json(m.to_json()) == m

    def test_from_real_logs(self, z0, library, faucet_plan):
        store = LogStore()
        cfg = ExecutionConfig(failure_model=FailureModel.pick_only(0.2), log_conditions=False)
        for s in range(30):
            store.add_trace(execute(faucet_plan, z0, replace(cfg, seed=s), library=library, run_id=f"r{s}"), faucet_plan, channels=False)
        m = estimate_risk(store)
        assert 0.1 < m.probability("Pick") < 0.3
        assert m.probability("PlaceDown") < 0.05


class TestEvaluators:
    def _cost(self, evals, verb="Pick", nominal=10.0):
        return evals[verb].cost("r1", verb, ["b1", "2x4"], "r1", nominal)

    def test_zero_risk_keeps_cost(self, library):
        evals = update_evaluators(RiskModel.from_probabilities({("Pick", "r1", "b1"): 0.0}), {}, library)
        assert self._cost(evals) == 10.0
        assert evals["Pick"].success("r1", "Pick", ["b1"], "r1") == 1.0

    def test_half_risk_doubles_cost(self, library):
        evals = update_evaluators(RiskModel.from_probabilities({("Pick", "r1", "b1"): 0.5}), {}, library)
        assert self._cost(evals) == pytest.approx(20.0)
        assert evals["Pick"].success("r1", "Pick", ["b1"], "r1") == pytest.approx(0.5)

    def test_cap(self, library):
        evals = update_evaluators(RiskModel.from_probabilities({("Pick", "r1", "b1"): 0.9}), {}, library, max_cost=25.0)
        assert self._cost(evals) == pytest.approx(25.0)

    def test_planner_prefers_lower_risk(self, library, z0):
        z = replace(z0, bricks={k: z0.bricks[k] for k in ("b1", "b2")}, robots={"r1": z0.robots["r1"]})
        task = TaskSpec((AssemblyStep(1, "2x4", W.Placement(6, 6, 0)),))
        base = Planner(library).plan(task, z)
        risky = base.grounded[0].brick
        risk = RiskModel.from_probabilities({("Pick", "r1", risky): 0.6, ("Pick", "r1", "*"): 0.05})
        evals = update_evaluators(risk, {}, library)
        adapted = Planner(library, evals).plan(task, z)
        # exhaustive comparison over the two groundings under the updated costs
        cands = Planner(library, evals).enumerate_candidates(PlanNode((), z, 0.0, 0.0), task.steps[0])
        best = min(cands, key=lambda g: (g.expected_duration, g.brick))
        assert adapted.grounded[0].brick == best.brick != risky


class TestInsertChecks:
    def _count_checks(self, plan, library):
        return sum(a.verb == "Check" for g in plan.grounded for a in expand_grounded(g, library))

    def test_threshold_one_is_identity(self, faucet_plan, library):
        risk = RiskModel.from_probabilities({("Pick", "*", "*"): 0.9})
        assert insert_checks(faucet_plan, risk, 1.0, library) == faucet_plan

    def test_threshold_zero_checks_every_pick_and_place(self, faucet_plan, library):
        out = insert_checks(faucet_plan, RiskModel(), 0.0, library)
        n = sum(a.verb in ("Pick", "PlaceDown", "PlaceUp") for g in faucet_plan.grounded for a in expand_grounded(g, library))
        assert self._count_checks(out, library) == n

    def test_mixed_risk_counting_oracle(self, faucet_plan, library):
        rng = random.Random(0)
        probs = {("Pick", g.robot, g.brick): rng.random() for g in faucet_plan.grounded}
        probs[("PlaceDown", "*", "*")] = 0.1
        probs[("PlaceUp", "*", "*")] = 0.7
        risk = RiskModel.from_probabilities(probs)
        out = insert_checks(faucet_plan, risk, 0.5, library)
        expected = 0
        for g in faucet_plan.grounded:
            for a in expand_grounded(g, library):
                if a.verb in ("Pick", "PlaceDown", "PlaceUp"):
                    expected += risk.probability(a.verb, a.bindings["robot"], g.brick) > 0.5
        assert self._count_checks(out, library) == expected > 0

    def test_checked_plan_stays_sound(self, faucet_plan, library, z0):
        out = insert_checks(faucet_plan, RiskModel(), 0.0, library)
        assert replay(out, z0, library).bricks == replay(faucet_plan, z0, library).bricks
        for mode in ("sequential", "async"):
            assert execute(out, z0, ExecutionConfig(mode=mode), library=library).success
        assert out.total_cost > faucet_plan.total_cost

    def test_bad_threshold(self, faucet_plan):
        with pytest.raises(ValueError):
            insert_checks(faucet_plan, RiskModel(), 1.5)


class TestReallocate:
    @pytest.mark.parametrize("seed", range(5))
    def test_uses_redundant_brick(self, seed, library):
        sc = make_scenario(seed, library)
        pen = 10 * max(cost_spread(sc, library), 1.0)
        p = reallocate(sc.task, sc.history, pen, sc.z0, library)
        assert p.grounded[sc.step - 1].brick == "b2"
        assert contexts_used(p, sc.history) == 0

    @pytest.mark.parametrize("seed", range(3))
    def test_no_alternative(self, seed, library):
        sc = make_scenario(100 + seed, library, with_alternative=False)
        with pytest.raises(NoFeasiblePlan):
            reallocate(sc.task, sc.history, 100.0, sc.z0, library)

    def test_empty_history_and_zero_penalty(self, library):
        sc = make_scenario(0, library)
        assert reallocate(sc.task, FailureHistory(), 50.0, sc.z0, library) == sc.baseline
        assert reallocate(sc.task, sc.history, 0.0, sc.z0, library) == sc.baseline

    @pytest.mark.parametrize("seed", range(4))
    def test_monotone_in_penalty(self, seed, library):
        sc = make_scenario(seed, library)
        used = []
        for pen in (0.0, 0.05, 0.2, 1.0, 5.0, 50.0):
            evals = penalized_evaluators(sc.history, pen, None, library)
            used.append(contexts_used(Planner(library, evals).plan(sc.task, sc.z0), sc.history))
        assert all(a >= b for a, b in zip(used, used[1:]))
        assert used[0] >= 1 and used[-1] == 0

    def test_history_is_traceable(self, library):
        sc = make_scenario(1, library)
        assert all(e.record_id >= 0 and e.run_id == "history" and e.brick == "b4" for e in sc.history.entries)

    def test_negative_penalty(self):
        with pytest.raises(ValueError):
            penalized_evaluators(FailureHistory(), -1.0)


class TestBias:
    def test_identity_without_observations(self):
        assert apply(BiasEstimator(), (3.0, 4.0)) == (3.0, 4.0)

    def test_constant_offset(self):
        est = BiasEstimator()
        for _ in range(7):
            est = correct_bias(est, (2.0, 0.0))
        assert est.mean == pytest.approx((2.0, 0.0)) and est.count == 7
        assert apply(est, (10.0, 5.0)) == pytest.approx((8.0, 5.0))

    @pytest.mark.parametrize("seed", range(5))
    def test_noisy_offsets(self, seed):
        rng = random.Random(seed)
        bias, sigma, n = (1.5, -0.5), 0.5, 200
        est = BiasEstimator()
        for _ in range(n):
            est = correct_bias(est, (rng.gauss(bias[0], sigma), rng.gauss(bias[1], sigma)))
        tol = 3 * sigma / math.sqrt(n)
        assert abs(est.mean[0] - bias[0]) <= tol and abs(est.mean[1] - bias[1]) <= tol

    def test_correction_then_bias_restores_target(self):
        rng = random.Random(3)
        est = BiasEstimator()
        for _ in range(200):
            est = correct_bias(est, (rng.gauss(1.5, 0.5), rng.gauss(-0.5, 0.5)))
        cx, cy = apply(est, (10.0, 10.0))
        assert (cx + 1.5, cy - 0.5) == pytest.approx((10.0, 10.0), abs=3 * 0.5 / math.sqrt(200))

    def test_offsets_come_from_logs(self, z0, library, faucet_plan):
        store = LogStore()
        cfg = ExecutionConfig(seed=0, noise_mean=(1.0, 0.0), noise_sigma=0.2)
        store.add_trace(execute(faucet_plan, z0, cfg, library=library, run_id="r"), faucet_plan, channels=False)
        offs = offsets_from_store(store)
        assert len(offs) == len(faucet_plan.grounded)
        assert statistics.fmean(o[0] for o in offs) == pytest.approx(1.0, abs=0.2)

    def test_bias_correction_lowers_failures(self, z0, library, faucet_plan):
        fm = FailureModel(per_offset_mm=0.1)
        cfg = ExecutionConfig(failure_model=fm, noise_mean=(1.5, -0.5), noise_sigma=0.2, log_conditions=False)
        plain = sum(execute(faucet_plan, z0, replace(cfg, seed=s), library=library).success for s in range(60))
        fixed = sum(
            execute(faucet_plan, z0, replace(cfg, seed=s, bias_correction=(1.5, -0.5)), library=library).success
            for s in range(60)
        )
        assert fixed > plain


class TestBandit:
    def test_one_arm(self):
        s = BanditState().with_arms("ctx", ["only"])
        for _ in range(5):
            arm = bandit_select(s, "ctx")
            assert arm == "only"
            s = bandit_update(s, "ctx", arm, 0.3)

    def test_unpulled_first(self):
        s = BanditState().with_arms("ctx", ["a", "b", "c"])
        s = bandit_update(s, "ctx", "a", 1.0)
        seen = ["a"]
        for _ in range(2):
            arm = bandit_select(s, "ctx")
            assert arm not in seen
            seen.append(arm)
            s = bandit_update(s, "ctx", arm, 0.0)

    def test_deterministic_rewards(self):
        s = BanditState().with_arms("ctx", ["good", "bad"])
        picks = []
        for _ in range(100):
            arm = bandit_select(s, "ctx")
            picks.append(arm)
            s = bandit_update(s, "ctx", arm, 0.9 if arm == "good" else 0.1)
        assert picks.count("good") / 100 >= 0.9

    def test_incremental_mean(self):
        s = BanditState().with_arms("c", ["a"])
        for r in (0.2, 0.4, 0.9):
            s = bandit_update(s, "c", "a", r)
        assert s.arms["c"]["a"] == ArmStats(3, pytest.approx(0.5))

    def test_errors(self):
        with pytest.raises(NoArms):
            bandit_select(BanditState(), "missing")
        s = BanditState().with_arms("c", ["a"])
        with pytest.raises(NoArms):
            bandit_update(s, "c", "zzz", 0.5)
        with pytest.raises(ValueError):
            bandit_update(s, "c", "a", 1.5)

    def test_json_round_trip(self):
        s = BanditState().with_arms(("Pick", "busy"), ["fast", "safe"])
        s = bandit_update(s, ("Pick", "busy"), "fast", 0.7)
        assert BanditState.from_json(s.to_json()) == s

    def test_reward_and_context(self):
        assert bandit_reward(True, 5.0, 10.0) == 0.5
        assert bandit_reward(False, 1.0, 10.0) == 0.0
        assert bandit_reward(True, 50.0, 10.0) == 0.0
        assert congestion_bucket(1, 2) == "free" and congestion_bucket(2, 3) == "busy" and congestion_bucket(2, 2) == "full"


def _binom_tail(n: int, k: int) -> float:
    return sum(math.comb(n, i) for i in range(k, n + 1)) * 0.5**n


@given(st.lists(st.tuples(st.booleans(), st.booleans()), max_size=40))
def test_sign_test_matches_binomial_tail(pairs):
    w, l, p = sign_test(pairs)
    assert w == sum(b and not a for a, b in pairs)
    assert l == sum(a and not b for a, b in pairs)
    assert p == (pytest.approx(_binom_tail(w + l, w)) if w + l else 1.0)


def test_closed_loop_improvement(z0, library, faucet_plan):
    """Execute, estimate from logs, insert checks, execute again: strictly better at n=200."""
    weak = faucet_plan.grounded[0].brick
    fm = FailureModel(per_brick={weak: 0.5})
    cfg = ExecutionConfig(failure_model=fm, log_conditions=False)
    store = LogStore()
    base = []
    for s in range(200):
        tr = execute(faucet_plan, z0, replace(cfg, seed=s), library=library, run_id=f"b{s}")
        base.append(tr.success)
        if s < 50:
            store.add_trace(tr, faucet_plan, channels=False)
    risk = estimate_risk(store)
    adapted_plan = insert_checks(faucet_plan, risk, 0.3, library)
    adapted = [execute(adapted_plan, z0, replace(cfg, seed=s), library=library).success for s in range(200)]
    wins, losses, p = sign_test(zip(base, adapted))
    assert sum(adapted) > sum(base)
    assert p < 0.05
