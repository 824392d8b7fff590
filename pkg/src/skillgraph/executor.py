"""Seeded discrete-event execution of plans, sequentially or over the TPG.

Every atom's pre-condition is checked against the true state when it starts and
its effect lands when it ends. Injected failures leave the effect unapplied and
drop the involved brick back to its store. With checks on (or an inserted Check
atom downstream) the failure is detected and the recovery policy runs; with
checks off the corruption propagates until a later pre-condition fails or the
final structure disagrees with the plan.

Times inside traces are integer milliseconds.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from . import world as W
from .planner import Plan, atom_context
from .skills import Skill, SkillLibrary, default_library
from .tpg import Tpg, TpgNode, build_tpg, makespan

EVENT_KINDS = ("start", "end", "check_pass", "check_fail", "failure_injected", "pause", "recover", "abort")
# verbs whose failure loses the brick
_BRICK_VERBS = ("Pick", "PlaceDown", "PlaceUp", "Handover")


class ExecutionError(Exception):
    pass


class InvalidInput(ExecutionError):
    pass


class EngineInvariantViolation(ExecutionError):
    pass


@dataclass(frozen=True)
class FailureModel:
    """Per-atom failure probability: base + wear + position + brick + misalignment, clamped."""

    # (verb, robot) -> probability; robot may be "*"
    base: Mapping[tuple[str, str], float] = field(default_factory=dict)
    per_brick_wear: float = 0.0
    wear_cap: float = 1.0
    per_position: Mapping[str, float] = field(default_factory=dict)
    # brick id -> additive probability on that brick's Pick/Place atoms
    per_brick: Mapping[str, float] = field(default_factory=dict)
    # additive probability per millimetre of residual pose offset, on Pick
    per_offset_mm: float = 0.0

    def __post_init__(self) -> None:
        vals = [*self.base.values(), *self.per_position.values(), *self.per_brick.values()]
        if any(not 0.0 <= p <= 1.0 for p in vals):
            raise ValueError("failure probabilities must lie in [0, 1]")
        if self.per_brick_wear < 0 or self.per_offset_mm < 0 or not 0 <= self.wear_cap <= 1:
            raise ValueError("wear and offset rates must be >= 0, wear_cap in [0, 1]")

    def probability(
        self,
        z: W.WorldState,
        atom: Skill,
        bias_correction: tuple[float, float] = (0.0, 0.0),
    ) -> float:
        robot = atom.bindings.get("robot", "*")
        p = self.base.get((atom.verb, robot), self.base.get((atom.verb, "*"), 0.0))
        bid = atom.bindings.get("brick")
        brick = z.bricks.get(bid) if isinstance(bid, str) else None
        if brick is not None and atom.verb in _BRICK_VERBS:
            p += min(self.per_brick_wear * brick.wear_count, self.wear_cap)
            p += self.per_brick.get(brick.id, 0.0)
            if self.per_offset_mm and atom.verb == "Pick":
                ox = brick.offset[0] - bias_correction[0]
                oy = brick.offset[1] - bias_correction[1]
                p += self.per_offset_mm * math.hypot(ox, oy)
        if self.per_position:
            p += self.per_position.get(atom_context(z, atom)[3], 0.0)
        return min(1.0, max(0.0, p))

    @classmethod
    def pick_only(cls, p: float) -> "FailureModel":
        return cls(base={("Pick", "*"): p})

    def to_json(self) -> dict:
        return {
            "base": {f"{v}|{r}": p for (v, r), p in sorted(self.base.items())},
            "per_brick_wear": self.per_brick_wear,
            "wear_cap": self.wear_cap,
            "per_position": dict(sorted(self.per_position.items())),
            "per_brick": dict(sorted(self.per_brick.items())),
            "per_offset_mm": self.per_offset_mm,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "FailureModel":
        return cls(
            base={tuple(k.split("|")): float(v) for k, v in (d.get("base") or {}).items()},
            per_brick_wear=float(d.get("per_brick_wear", 0.0)),
            wear_cap=float(d.get("wear_cap", 1.0)),
            per_position={k: float(v) for k, v in (d.get("per_position") or {}).items()},
            per_brick={k: float(v) for k, v in (d.get("per_brick") or {}).items()},
            per_offset_mm=float(d.get("per_offset_mm", 0.0)),
        )


@dataclass(frozen=True)
class Recovery:
    kind: str = "operator"
    success: float = 1.0
    time: float = 30.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "operator"):
            raise ValueError(f"unknown recovery {self.kind!r}")
        if not 0.0 <= self.success <= 1.0 or self.time < 0:
            raise ValueError("recovery success must be in [0, 1] and time >= 0")


@dataclass(frozen=True)
class ExecutionConfig:
    mode: str = "sequential"
    seed: int = 0
    failure_model: FailureModel = field(default_factory=FailureModel)
    checks_enabled: bool = False
    recovery: Recovery = field(default_factory=Recovery)
    speed_scale: float = 1.0
    check_false_negative: float = 0.0
    check_false_positive: float = 0.0
    # skill name -> policy variant
    variants: Mapping[str, str] = field(default_factory=dict)
    noise_mean: tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    bias_correction: tuple[float, float] = (0.0, 0.0)
    # evaluate atom-level pre/post results for logging (slower)
    log_conditions: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("sequential", "async"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.speed_scale <= 0:
            raise ValueError("speed_scale must be > 0")
        for p in (self.check_false_negative, self.check_false_positive):
            if not 0.0 <= p <= 1.0:
                raise ValueError("check error rates must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class TraceEvent:
    t_ms: int
    node: str
    kind: str
    detail: str = ""
    robot: str = ""

    def line(self) -> str:
        return f"{self.t_ms}\t{self.robot}\t{self.node}\t{self.kind}\t{self.detail}"

    @classmethod
    def parse(cls, line: str) -> "TraceEvent":
        t, robot, node, kind, detail = line.rstrip("\n").split("\t", 4)
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        return cls(int(t), node, kind, detail, robot)


@dataclass(frozen=True)
class Outcome:
    status: str
    step: Optional[int] = None

    @property
    def completed(self) -> bool:
        return self.status == "Completed"

    def __str__(self) -> str:
        return "Completed" if self.completed else f"AbortedAt({self.step})"


COMPLETED = Outcome("Completed")


@dataclass(frozen=True)
class Attempt:
    """One executed attempt of one TPG node, in effect-application order."""

    node: str
    skill: str
    verb: str
    robot: str
    step: int
    bindings: Mapping[str, Any]
    policy_parameters: Mapping[str, Any]
    variant: Optional[str]
    start_ms: int
    end_ms: int
    outcome: str  # success | failed | recovered | aborted
    effect: str  # nominal | dropped | forced | none
    retry_group: Optional[int] = None
    pre_results: tuple = ()
    post_results: tuple = ()
    observation: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ExecutionTrace:
    run_id: str
    plan_digest: str
    mode: str
    seed: int
    events: tuple[TraceEvent, ...]
    attempts: tuple[Attempt, ...]
    final_state: W.WorldState
    outcome: Outcome
    n_steps: int
    survival_length: int
    wall_ms: int
    initial_state: Optional[W.WorldState] = None

    @property
    def success(self) -> bool:
        return self.outcome.completed

    def summary(self) -> "OutcomeSummary":
        return OutcomeSummary(self.success, self.survival_length, self.wall_ms / 1000)

    def export(self) -> str:
        """One event per line: ``t_ms<TAB>robot<TAB>node<TAB>kind<TAB>detail``."""
        robots = ",".join(sorted(self.final_state.robots))
        head = f"# run={self.run_id} mode={self.mode} seed={self.seed} outcome={self.outcome} robots={robots}\n"
        return head + "".join(e.line() + "\n" for e in self.events)


def parse_trace_events(text: str) -> tuple[dict[str, str], list[TraceEvent]]:
    """Header fields and events of an exported trace."""
    header: dict[str, str] = {}
    events = []
    for ln in text.splitlines():
        if not ln.strip():
            continue
        if ln.startswith("#"):
            for part in ln[1:].split():
                if "=" in part:
                    k, v = part.split("=", 1)
                    header[k] = v
            continue
        events.append(TraceEvent.parse(ln))
    return header, events


@dataclass(frozen=True)
class OutcomeSummary:
    success: bool
    survival_length: int
    wall_makespan: float


def plan_digest(plan: Plan) -> str:
    return hashlib.sha256(json.dumps(plan.to_json(), sort_keys=True).encode()).hexdigest()[:16]


def encode_bindings(b: Mapping[str, Any]) -> dict:
    out = {}
    for k, v in b.items():
        if isinstance(v, W.Placement):
            out[k] = {"placement": v.to_list()}
        elif isinstance(v, tuple):
            out[k] = list(v)
        else:
            out[k] = v
    return out


def decode_bindings(b: Mapping[str, Any]) -> dict:
    out = {}
    for k, v in b.items():
        if isinstance(v, Mapping) and "placement" in v:
            out[k] = W.Placement.from_list(v["placement"])
        elif isinstance(v, list):
            out[k] = tuple(v)
        else:
            out[k] = v
    return out


def _ms(seconds: float) -> int:
    return int(round(seconds * 1000))


class _Run:
    """Mutable state of one execution; the public API stays functional."""

    def __init__(self, tpg: Tpg, plan: Plan, z0: W.WorldState, cfg: ExecutionConfig, library: SkillLibrary):
        self.tpg = tpg
        self.plan = plan
        self.cfg = cfg
        self.library = library
        self.rng = random.Random(cfg.seed)
        self.z = z0
        self.events: list[TraceEvent] = []
        self.attempts: list[Attempt] = []
        self.preds = tpg.predecessors()
        self.completed: set[str] = set()
        self.retry_groups = 0
        # robot -> (failed node, retry group) awaiting a downstream Check atom
        self.pending: dict[str, tuple[TpgNode, int, int]] = {}
        # failed node id -> (time, step) for failures nobody has recovered
        self.unrec: dict[str, tuple[int, int]] = {}
        self.placed_at: dict[int, int] = {}
        self.abort: Optional[Outcome] = None
        self.robot_of = {n.id: n.robot for n in tpg.nodes}
        self.place_step = {n.id: n.step_index for n in tpg.nodes if n.atom.policy.effect_id == "place"}

    # -- helpers -------------------------------------------------------------

    def ev(self, t: int, node: str, kind: str, detail: str = "") -> None:
        self.events.append(TraceEvent(t, node, kind, detail, self.robot_of[node]))

    def results(self, cond, atom: Skill) -> tuple:
        if not self.cfg.log_conditions:
            return ()
        return tuple(cond.atom_results(self.z, atom.bindings))

    def attempt(self, n: TpgNode, start: int, end: int, outcome: str, effect: str, group=None, pre=(), post=()):
        atom = n.atom
        obs: dict[str, Any] = {}
        bid = atom.bindings.get("brick")
        if isinstance(bid, str) and bid in self.z.bricks:
            obs["offset_mm"] = list(self.z.bricks[bid].offset)
        self.attempts.append(
            Attempt(
                node=n.id,
                skill=atom.name,
                verb=atom.verb,
                robot=n.robot,
                step=n.step_index,
                bindings=encode_bindings(atom.bindings),
                policy_parameters=dict(atom.policy.parameters),
                variant=self.cfg.variants.get(atom.name),
                start_ms=start,
                end_ms=end,
                outcome=outcome,
                effect=effect,
                retry_group=group,
                pre_results=pre,
                post_results=post,
                observation=obs,
            )
        )

    def duration_ms(self, n: TpgNode) -> int:
        variant = self.cfg.variants.get(n.atom.name)
        try:
            d = W.atom_duration(self.z, n.atom, variant)
        except KeyError:
            d = n.duration
        return max(1, _ms(d / self.cfg.speed_scale))

    def unrecovered(self, t: int, step: int, key: str = "") -> None:
        self.unrec.setdefault(key or f"@{t}", (t, step))

    @property
    def first_unrecovered(self) -> Optional[tuple[int, int]]:
        return min(self.unrec.values()) if self.unrec else None

    # -- node lifecycle ------------------------------------------------------

    def start(self, n: TpgNode, t: int):
        """Returns the in-flight record or None after an abort."""
        atom = n.atom
        bad = atom.pre.first_failure(self.z, atom.bindings)
        if bad is not None:
            if self.cfg.checks_enabled:
                self.ev(t, n.id, "check_fail", f"pre {bad}")
            self.ev(t, n.id, "abort", f"PreconditionViolated {atom.name}: {bad}")
            self.attempt(n, t, t, "aborted", "none", pre=self.results(atom.pre, atom))
            self.unrecovered(t, n.step_index)
            self.abort = Outcome("AbortedAt", n.step_index)
            return None
        pre = self.results(atom.pre, atom)
        dur = self.duration_ms(n)
        self.ev(t, n.id, "start", atom.name)
        p = self.cfg.failure_model.probability(self.z, atom, self.cfg.bias_correction)
        variant = self.cfg.variants.get(atom.name)
        if variant is not None:
            p = 1.0 - (1.0 - p) * atom.policy.variant(variant).success
        failed = p > 0.0 and self.rng.random() < p
        return {"node": n, "start": t, "end": t + dur, "failed": failed, "pre": pre, "phase": "run"}

    def finish(self, fl: dict, t: int) -> Optional[int]:
        """Complete an in-flight node at time ``t``; returns a later end time while recovering."""
        n: TpgNode = fl["node"]
        atom = n.atom
        if fl["phase"] == "recover":
            return self._recovered(fl, t)

        if atom.policy.effect_id == "check":
            return self._check_atom(fl, t)

        if not fl["failed"]:
            self.z = W.apply_effect(self.z, atom, check=False, clock=t / 1000)
            post = self.results(atom.post, atom)
            self.attempt(n, fl["start"], t, "success", "nominal", pre=fl["pre"], post=post)
            self.ev(t, n.id, "end", atom.name)
            if self.cfg.checks_enabled:
                if atom.post.evaluate(self.z, atom.bindings):
                    self.ev(t, n.id, "check_pass", "post")
                else:
                    self.ev(t, n.id, "check_fail", "post")
                    self.ev(t, n.id, "abort", "post-condition violated")
                    self.unrecovered(t, n.step_index)
                    self.abort = Outcome("AbortedAt", n.step_index)
                    return None
            if n.id in self.place_step:
                self.placed_at[n.step_index] = t
            return None

        # injected failure: effect not applied, brick back to store
        self.ev(t, n.id, "failure_injected", atom.name)
        bid = atom.bindings.get("brick")
        effect = "none"
        if atom.verb in _BRICK_VERBS and isinstance(bid, str) and bid in self.z.bricks:
            self.z = W.drop_brick(self.z, bid, clock=t / 1000)
            effect = "dropped"
        self.retry_groups += 1
        group = self.retry_groups
        post = self.results(atom.post, atom)
        self.attempt(n, fl["start"], t, "failed", effect, group, pre=fl["pre"], post=post)
        self.ev(t, n.id, "end", atom.name)
        if self.cfg.checks_enabled:
            self.ev(t, n.id, "check_fail", "post")
            return self._begin_recovery(fl, t, n, group)
        self.pending[n.robot] = (n, group, t)
        self.unrecovered(t, n.step_index, n.id)
        return None

    def _begin_recovery(self, fl: dict, t: int, failed: Optional[TpgNode], group: int) -> Optional[int]:
        """Pause for the operator; ``failed=None`` is a false alarm with nothing to restore."""
        rec = self.cfg.recovery
        step = failed.step_index if failed is not None else fl["node"].step_index
        self.ev(t, fl["node"].id, "pause", failed.atom.name if failed is not None else "false alarm")
        if rec.kind == "none" or self.rng.random() >= rec.success:
            self.ev(t, fl["node"].id, "abort", "recovery failed" if rec.kind != "none" else "no recovery")
            self.unrecovered(t, step)
            self.abort = Outcome("AbortedAt", step)
            return None
        fl.update(phase="recover", failed_node=failed, group=group, pause_at=t)
        return t + _ms(rec.time)

    def _recovered(self, fl: dict, t: int) -> None:
        failed: TpgNode = fl["failed_node"]
        if failed is None:
            # false alarm: operator confirms, nothing to restore
            self.ev(t, fl["node"].id, "recover", "no-op")
            return None
        atom = failed.atom
        pre = self.results(atom.pre, atom)
        try:
            self.z = W.apply_effect(self.z, atom, check=False, clock=t / 1000)
        except W.WorldError as e:
            self.ev(t, fl["node"].id, "abort", f"recovery effect: {e}")
            self.abort = Outcome("AbortedAt", failed.step_index)
            self.unrecovered(t, failed.step_index)
            return None
        post = self.results(atom.post, atom)
        self.attempt(failed, fl["pause_at"], t, "recovered", "forced", fl["group"], pre=pre, post=post)
        self.ev(t, fl["node"].id, "recover", atom.name)
        if failed.id in self.place_step:
            self.placed_at[failed.step_index] = t
        self.unrec.pop(failed.id, None)
        return None

    def _check_atom(self, fl: dict, t: int) -> Optional[int]:
        n: TpgNode = fl["node"]
        self.attempt(n, fl["start"], t, "success", "none", pre=fl["pre"])
        self.ev(t, n.id, "end", n.atom.name)
        checked = n.atom.bindings.get("checked")
        pend = self.pending.get(n.robot)
        if pend is not None and pend[0].step_index == n.step_index and pend[0].body_index == checked:
            if self.rng.random() < self.cfg.check_false_negative:
                self.ev(t, n.id, "check_pass", "missed")
                return None
            del self.pending[n.robot]
            self.ev(t, n.id, "check_fail", pend[0].atom.name)
            return self._begin_recovery(fl, t, pend[0], pend[1])
        if self.cfg.check_false_positive and self.rng.random() < self.cfg.check_false_positive:
            self.ev(t, n.id, "check_fail", "false alarm")
            return self._begin_recovery(fl, t, None, 0)
        self.ev(t, n.id, "check_pass", "post")
        return None


def _as_tpg(plan_or_tpg: Union[Plan, Tpg], z0: W.WorldState, plan: Optional[Plan], library: SkillLibrary):
    if isinstance(plan_or_tpg, Tpg):
        if plan is None:
            raise InvalidInput("executing a TPG needs its plan for structure checks")
        return plan_or_tpg, plan
    if not isinstance(plan_or_tpg, Plan):
        raise InvalidInput(f"expected a Plan or Tpg, got {type(plan_or_tpg).__name__}")
    try:
        return build_tpg(plan_or_tpg, z0, library), plan_or_tpg
    except (W.WorldError, KeyError) as e:
        raise InvalidInput(f"plan does not replay from the initial state: {e}") from e


def execute(
    plan_or_tpg: Union[Plan, Tpg],
    z0: W.WorldState,
    cfg: ExecutionConfig = ExecutionConfig(),
    *,
    plan: Optional[Plan] = None,
    library: Optional[SkillLibrary] = None,
    run_id: Optional[str] = None,
) -> ExecutionTrace:
    """Run one seeded execution; failures are trace events, not exceptions."""
    library = library or default_library()
    tpg, plan = _as_tpg(plan_or_tpg, z0, plan, library)
    if cfg.noise_sigma or cfg.noise_mean != (0.0, 0.0):
        z0 = inject_runtime_state_noise(z0, cfg)
    run = _Run(tpg, plan, z0, cfg, library)
    nodes = {n.id: n for n in tpg.nodes}
    if cfg.mode == "sequential":
        queues = {"*": tuple(n.id for n in sorted(tpg.nodes, key=lambda n: n.seq))}
        lane_of = {n.id: "*" for n in tpg.nodes}
    else:
        queues = dict(tpg.lanes)
        lane_of = {nid: r for r, ids in queues.items() for nid in ids}
    ptr = {r: 0 for r in queues}
    busy: dict[str, bool] = {r: False for r in queues}
    heap: list = []
    t = 0
    while run.abort is None:
        for r in sorted(queues):
            if busy[r] or ptr[r] >= len(queues[r]):
                continue
            nid = queues[r][ptr[r]]
            if not run.preds[nid] <= run.completed:
                continue
            fl = run.start(nodes[nid], t)
            if fl is None:
                break
            busy[r] = True
            ptr[r] += 1
            heapq.heappush(heap, (fl["end"], nodes[nid].seq, nid, fl))
        if run.abort is not None or not heap:
            break
        t = heap[0][0]
        while heap and heap[0][0] == t and run.abort is None:
            _, seq, nid, fl = heapq.heappop(heap)
            later = run.finish(fl, t)
            if later is not None:
                heapq.heappush(heap, (later, seq, nid, fl))
            elif run.abort is None:
                run.completed.add(nid)
                busy[lane_of[nid]] = False
    if run.abort is None and len(run.completed) != len(tpg.nodes):
        raise EngineInvariantViolation(
            f"dispatch stalled with {len(tpg.nodes) - len(run.completed)} nodes unfinished"
        )

    z = run.z
    outcome = run.abort
    if outcome is None:
        outcome = COMPLETED
        for g in plan.grounded:
            b = z.bricks.get(g.brick)
            loc = b.location if b is not None else None
            if not (isinstance(loc, W.OnPlate) and (loc.x, loc.y, loc.level) == (g.target.x, g.target.y, g.target.level)):
                step = run.first_unrecovered[1] if run.first_unrecovered else g.step_index
                outcome = Outcome("AbortedAt", step)
                break
    if outcome.completed:
        survival = len(plan.grounded)
    else:
        cutoff = run.first_unrecovered[0] if run.first_unrecovered else t
        survival = sum(1 for when in run.placed_at.values() if when <= cutoff)
    wall = max((e.t_ms for e in run.events), default=0)
    return ExecutionTrace(
        run_id=run_id or f"{cfg.mode}-{cfg.seed}",
        plan_digest=plan_digest(plan),
        mode=cfg.mode,
        seed=cfg.seed,
        events=tuple(run.events),
        attempts=tuple(run.attempts),
        final_state=z,
        outcome=outcome,
        n_steps=len(plan.grounded),
        survival_length=survival,
        wall_ms=wall,
        initial_state=z0,
    )


def compare_modes(plan: Plan, z0: W.WorldState, cfg: ExecutionConfig = ExecutionConfig(), library: Optional[SkillLibrary] = None) -> tuple[float, float]:
    """(sequential seconds, async seconds) for a zero-failure run."""
    fm = cfg.failure_model
    if fm.base or fm.per_brick or fm.per_position or fm.per_brick_wear or fm.per_offset_mm:
        raise InvalidInput("compare_modes needs a zero-failure configuration")
    tpg = build_tpg(plan, z0, library)
    return tpg.sequential_duration() / cfg.speed_scale, makespan(tpg) / cfg.speed_scale


def inject_runtime_state_noise(z: W.WorldState, cfg: ExecutionConfig) -> W.WorldState:
    """Attach seeded millimetre pose offsets to every brick still in a store."""
    if cfg.noise_sigma == 0 and cfg.noise_mean == (0.0, 0.0):
        return z
    rng = random.Random(f"noise:{cfg.seed}")
    mx, my = cfg.noise_mean
    bricks = dict(z.bricks)
    for bid in sorted(bricks):
        b = bricks[bid]
        if isinstance(b.location, W.InStore):
            dx = rng.gauss(mx, cfg.noise_sigma)
            dy = rng.gauss(my, cfg.noise_sigma)
            bricks[bid] = replace(b, offset=(dx, dy))
    return replace(z, bricks=bricks)


# --- batches -----------------------------------------------------------------


@dataclass(frozen=True)
class BatchSummary:
    n: int
    successes: int
    mean_survival: float
    makespan_mean: float
    makespan_min: float
    makespan_max: float
    seeds: tuple[int, ...] = ()

    @property
    def success_rate(self) -> float:
        return self.successes / self.n if self.n else 0.0

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "mean_survival": self.mean_survival,
            "makespan_mean": self.makespan_mean,
            "makespan_min": self.makespan_min,
            "makespan_max": self.makespan_max,
        }

    def table(self) -> str:
        d = self.to_json()
        return "\n".join(f"{k:>14}  {v:.6g}" if isinstance(v, float) else f"{k:>14}  {v}" for k, v in d.items()) + "\n"


def summarize_outcomes(outcomes: Iterable[tuple[int, OutcomeSummary]]) -> BatchSummary:
    """Order-independent aggregate of (seed, outcome) pairs."""
    items = sorted(outcomes, key=lambda kv: kv[0])
    if not items:
        return BatchSummary(0, 0, 0.0, 0.0, 0.0, 0.0)
    spans = [o.wall_makespan for _, o in items]
    # math.fsum keeps the means independent of input order
    return BatchSummary(
        n=len(items),
        successes=sum(o.success for _, o in items),
        mean_survival=math.fsum(o.survival_length for _, o in items) / len(items),
        makespan_mean=math.fsum(spans) / len(spans),
        makespan_min=min(spans),
        makespan_max=max(spans),
        seeds=tuple(s for s, _ in items),
    )


def run_batch(
    plan: Plan,
    z0: W.WorldState,
    cfg: ExecutionConfig,
    seeds: Sequence[int],
    library: Optional[SkillLibrary] = None,
) -> BatchSummary:
    library = library or default_library()
    tpg = build_tpg(plan, z0, library)
    cfg = replace(cfg, log_conditions=False)
    out = []
    for s in seeds:
        tr = execute(tpg, z0, replace(cfg, seed=s), plan=plan, library=library)
        out.append((s, tr.summary()))
    return summarize_outcomes(out)
