"""Closed-loop adaptation from execution logs.

Failure rates estimated from logged attempts feed three planning-level levers
(evaluator updates, selective check insertion, penalty-based reallocation) and
two execution-level ones (a running-mean pose-bias corrector and a UCB1 bandit
over policy variants).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

from . import world as W
from .datalog import LogStore, SkillLogRecord
from .planner import Plan, Planner, expand_grounded
from .skills import Evaluator, SkillLibrary, default_library
from .taskspec import TaskSpec

PRIOR = 0.5
CHECKED_VERBS = ("Pick", "PlaceDown", "PlaceUp")
META_NAMES = ("PickPlace", "PickPlacewSupport", "PickHandoverPlace")

RiskKey = tuple[str, str, str]  # (verb, robot or "*", brick / bucket or "*")


class AdaptError(Exception):
    pass


class NoArms(AdaptError):
    pass


# --- risk estimation -----------------------------------------------------------------


@dataclass(frozen=True)
class RiskEstimate:
    attempts: int
    failures: int
    probability: float

    @classmethod
    def laplace(cls, attempts: int, failures: int) -> "RiskEstimate":
        if not 0 <= failures <= attempts:
            raise ValueError("need 0 <= failures <= attempts")
        return cls(attempts, failures, (failures + 1) / (attempts + 2))


@dataclass(frozen=True)
class RiskModel:
    estimates: Mapping[RiskKey, RiskEstimate] = field(default_factory=dict)

    def probability(self, verb: str, robot: str = "*", context: str = "*") -> float:
        """Most specific observed context wins; unseen verbs get the 0.5 prior."""
        for key in ((verb, robot, context), (verb, robot, "*"), (verb, "*", "*")):
            e = self.estimates.get(key)
            if e is not None:
                return e.probability
        return PRIOR

    @classmethod
    def from_counts(cls, counts: Mapping[RiskKey, tuple[int, int]]) -> "RiskModel":
        """Build from (attempts, failures) at the most specific level, filling the backoff levels."""
        agg: dict[RiskKey, list[int]] = {}
        for (verb, robot, ctx), (a, f) in counts.items():
            for key in {(verb, robot, ctx), (verb, robot, "*"), (verb, "*", "*")}:
                acc = agg.setdefault(key, [0, 0])
                acc[0] += a
                acc[1] += f
        return cls({k: RiskEstimate.laplace(a, f) for k, (a, f) in sorted(agg.items())})

    @classmethod
    def from_probabilities(cls, probs: Mapping[RiskKey, float]) -> "RiskModel":
        """Explicit probabilities, e.g. from prior knowledge; counts are left at zero."""
        for p in probs.values():
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        return cls({k: RiskEstimate(0, 0, float(p)) for k, p in probs.items()})

    def merge(self, other: "RiskModel") -> "RiskModel":
        """Associative merge of count-based estimates (per-run partials)."""
        keys = set(self.estimates) | set(other.estimates)
        out = {}
        for k in sorted(keys):
            a = self.estimates.get(k, RiskEstimate(0, 0, PRIOR))
            b = other.estimates.get(k, RiskEstimate(0, 0, PRIOR))
            out[k] = RiskEstimate.laplace(a.attempts + b.attempts, a.failures + b.failures)
        return RiskModel(out)

    def to_json(self) -> dict:
        return {
            "estimates": [
                {"verb": v, "robot": r, "context": c, "attempts": e.attempts, "failures": e.failures, "probability": e.probability}
                for (v, r, c), e in sorted(self.estimates.items())
            ]
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "RiskModel":
        return cls(
            {
                (e["verb"], e["robot"], e["context"]): RiskEstimate(int(e["attempts"]), int(e["failures"]), float(e["probability"]))
                for e in d.get("estimates", [])
            }
        )


def _attempt_context(r: SkillLogRecord) -> str:
    return r.entities.get("object", "*")


def estimate_risk(store: LogStore, verbs: Optional[Sequence[str]] = None) -> RiskModel:
    """Laplace-smoothed failure rates from the store's executed attempts.

    Operator-forced retries and aborted starts are not attempts of the skill
    itself and are left out.
    """
    counts: dict[RiskKey, list[int]] = {}
    for r in store.records:
        if r.outcome not in ("success", "failed"):
            continue
        if verbs is not None and r.verb not in verbs:
            continue
        acc = counts.setdefault((r.verb, r.robot, _attempt_context(r)), [0, 0])
        acc[0] += 1
        acc[1] += r.outcome == "failed"
    return RiskModel.from_counts({k: (a, f) for k, (a, f) in counts.items()})


def update_evaluators(
    risk: RiskModel,
    evals: Mapping[str, Evaluator],
    library: Optional[SkillLibrary] = None,
    max_cost: float = math.inf,
) -> dict[str, Evaluator]:
    """Write 1 - p into success models and 1 / (1 - p) retry inflation into costs."""
    library = library or default_library()
    by_verb: dict[str, list[str]] = {}
    for name, sk in library.atomic.items():
        by_verb.setdefault(sk.verb, []).append(name)
    out = dict(evals)
    for (verb, robot, ctx), est in sorted(risk.estimates.items()):
        p = est.probability
        for name in by_verb.get(verb, []):
            ev = out.get(name, library.atomic[name].evaluator)
            key = (robot, verb, ctx, "*")
            succ = dict(ev.success_model)
            succ[key] = 1.0 - p
            factor = dict(ev.risk_factor)
            factor[key] = math.inf if p >= 1.0 else 1.0 / (1.0 - p)
            cap = min(ev.max_cost, max_cost)
            if math.isinf(cap) and p >= 1.0:
                raise AdaptError(f"{verb}/{robot}/{ctx}: certain failure needs a finite max_cost")
            out[name] = replace(ev, success_model=succ, risk_factor=factor, max_cost=cap)
    return out


def insert_checks(
    plan: Plan,
    risk: RiskModel,
    threshold: float,
    library: Optional[SkillLibrary] = None,
) -> Plan:
    """Follow every Pick/Place atom whose risk exceeds ``threshold`` with a Check atom."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    library = library or default_library()
    check_time = library.atomic["Check"].policy.nominal_duration
    grounded = []
    for g in plan.grounded:
        base = replace(g, checks=())
        picks = []
        for i, atom in enumerate(expand_grounded(base, library)):
            if atom.verb in CHECKED_VERBS:
                if risk.probability(atom.verb, atom.bindings["robot"], g.brick) > threshold:
                    picks.append(i)
        extra = len(picks) - len(g.checks)
        grounded.append(replace(g, checks=tuple(picks), expected_duration=g.expected_duration + extra * check_time))
    total = plan.total_cost + sum(b.expected_duration - a.expected_duration for a, b in zip(plan.grounded, grounded))
    return Plan(tuple(grounded), total, plan.design_name)


# --- failure history & reallocation -------------------------------------------------------


@dataclass(frozen=True)
class FailureEntry:
    robot: str
    step: int
    brick: str
    verb: str
    t_ms: int = 0
    record_id: int = -1
    run_id: str = ""


@dataclass(frozen=True)
class FailureHistory:
    entries: tuple[FailureEntry, ...] = ()

    @classmethod
    def from_store(cls, store: LogStore, verbs: Sequence[str] = CHECKED_VERBS) -> "FailureHistory":
        return cls(
            tuple(
                FailureEntry(r.robot, r.step, r.entities["object"], r.verb, r.start_ms, r.record_id, r.run_id)
                for r in store.records
                if r.outcome == "failed" and r.verb in verbs and "object" in r.entities
            )
        )

    def contexts(self) -> set[tuple[str, int, str]]:
        return {(e.robot, e.step, e.brick) for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


def penalized_evaluators(
    history: FailureHistory,
    penalty: float,
    evals: Optional[Mapping[str, Evaluator]] = None,
    library: Optional[SkillLibrary] = None,
) -> dict[str, Evaluator]:
    """Add ``penalty`` seconds to every meta evaluator for each failing (robot, step, brick)."""
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    library = library or default_library()
    out = dict(evals or {})
    for name in library.meta:
        ev = out.get(name, library.meta[name].skill.evaluator)
        pens = dict(ev.penalties)
        for ctx in sorted(history.contexts()):
            pens[ctx] = pens.get(ctx, 0.0) + penalty
        out[name] = replace(ev, penalties=pens)
    return out


def contexts_used(plan: Plan, history: FailureHistory) -> int:
    ctx = history.contexts()
    return sum((g.robot, g.step_index, g.brick) in ctx for g in plan.grounded)


def reallocate(
    task: TaskSpec,
    history: FailureHistory,
    penalty: float,
    z0: W.WorldState,
    library: Optional[SkillLibrary] = None,
    evaluators: Optional[Mapping[str, Evaluator]] = None,
    **planner_kwargs: Any,
) -> Plan:
    """Re-plan with failure-history penalties.

    If the penalized optimum still uses a failing context, the contexts are
    excluded outright to see whether any alternative exists; when none does,
    ``NoFeasiblePlan`` is raised. Otherwise the penalized optimum is returned.
    """
    library = library or default_library()
    if penalty == 0 or not history.entries:
        return Planner(library, evaluators, **planner_kwargs).plan(task, z0)
    evals = penalized_evaluators(history, penalty, evaluators, library)
    plan = Planner(library, evals, **planner_kwargs).plan(task, z0)
    if contexts_used(plan, history):
        kw = dict(planner_kwargs)
        kw["exclude"] = set(kw.get("exclude", ())) | history.contexts()
        Planner(library, evals, **kw).plan(task, z0)  # raises NoFeasiblePlan when no alternative exists
    return plan


# --- pose bias correction ----------------------------------------------------------


@dataclass(frozen=True)
class BiasEstimator:
    mean: tuple[float, float] = (0.0, 0.0)
    count: int = 0
    applied: bool = False

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("count must be >= 0")


def correct_bias(est: BiasEstimator, observed: Sequence[float]) -> BiasEstimator:
    """Incremental running mean of observed (x, y) offsets in millimetres."""
    n = est.count + 1
    mx = est.mean[0] + (float(observed[0]) - est.mean[0]) / n
    my = est.mean[1] + (float(observed[1]) - est.mean[1]) / n
    return BiasEstimator((mx, my), n, est.applied)


def apply(est: BiasEstimator, target: Sequence[float]) -> tuple[float, float]:
    """Shift a target pose against the accumulated bias."""
    return (float(target[0]) - est.mean[0], float(target[1]) - est.mean[1])


def offsets_from_store(store: LogStore, verb: str = "Pick") -> list[tuple[float, float]]:
    return [tuple(r.observation["offset_mm"]) for r in store.records if r.verb == verb and "offset_mm" in r.observation]


# --- bandit ------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmStats:
    pulls: int = 0
    mean: float = 0.0


@dataclass(frozen=True)
class BanditState:
    arms: Mapping[Any, Mapping[str, ArmStats]] = field(default_factory=dict)
    # Hoeffding radius at confidence 1/N for rewards in [0, 1]
    c: float = math.sqrt(0.5)

    def with_arms(self, context: Any, arms: Iterable[str]) -> "BanditState":
        table = {k: dict(v) for k, v in self.arms.items()}
        cur = table.setdefault(context, {})
        for a in arms:
            cur.setdefault(a, ArmStats())
        return replace(self, arms=table)

    def to_json(self) -> dict:
        return {
            "c": self.c,
            "contexts": [
                {"context": list(ctx) if isinstance(ctx, tuple) else ctx, "arms": {a: [s.pulls, s.mean] for a, s in arms.items()}}
                for ctx, arms in self.arms.items()
            ],
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "BanditState":
        arms = {}
        for e in d.get("contexts", []):
            ctx = tuple(e["context"]) if isinstance(e["context"], list) else e["context"]
            arms[ctx] = {a: ArmStats(int(p), float(m)) for a, (p, m) in e["arms"].items()}
        return cls(arms, float(d.get("c", math.sqrt(0.5))))


def bandit_select(state: BanditState, context: Any) -> str:
    """UCB1: any unpulled arm first (registration order), else the highest upper bound."""
    arms = state.arms.get(context)
    if not arms:
        raise NoArms(f"no arms registered for context {context!r}")
    for a, s in arms.items():
        if s.pulls == 0:
            return a
    total = sum(s.pulls for s in arms.values())
    log_n = math.log(total)
    return max(arms, key=lambda a: arms[a].mean + state.c * math.sqrt(log_n / arms[a].pulls))


def bandit_update(state: BanditState, context: Any, arm: str, reward: float) -> BanditState:
    if not 0.0 <= reward <= 1.0:
        raise ValueError("reward must lie in [0, 1]")
    arms = state.arms.get(context)
    if not arms or arm not in arms:
        raise NoArms(f"arm {arm!r} not registered for context {context!r}")
    s = arms[arm]
    n = s.pulls + 1
    new = dict(arms)
    new[arm] = ArmStats(n, s.mean + (reward - s.mean) / n)
    table = dict(state.arms)
    table[context] = new
    return replace(state, arms=table)


def bandit_reward(success: bool, runtime: float, max_runtime: float, runtime_weight: float = 1.0) -> float:
    """success x (1 - w x normalized runtime), clipped to [0, 1]."""
    if max_runtime <= 0:
        raise ValueError("max_runtime must be > 0")
    norm = min(max(runtime / max_runtime, 0.0), 1.0)
    return float(success) * max(0.0, 1.0 - runtime_weight * norm)


def congestion_bucket(active_robots: int, n_robots: int) -> str:
    if n_robots <= 1 or active_robots <= 1:
        return "free"
    return "busy" if active_robots < n_robots else "full"


# --- statistics ----------------------------------------------------------------


def sign_test(pairs: Iterable[tuple[bool, bool]]) -> tuple[int, int, float]:
    """One-sided exact sign test that the second member beats the first.

    Returns (wins, losses, p-value) over discordant pairs.
    """
    wins = losses = 0
    for a, b in pairs:
        if b and not a:
            wins += 1
        elif a and not b:
            losses += 1
    n = wins + losses
    if n == 0:
        return 0, 0, 1.0
    p = sum(math.comb(n, k) for k in range(wins, n + 1)) / 2**n
    return wins, losses, p


def save_json(obj: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")
