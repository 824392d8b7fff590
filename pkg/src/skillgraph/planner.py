"""Best-first grounding of assembly steps to (meta skill, robot, brick, grasp).

Search nodes hold a partial grounded sequence and the simulated world after
executing it. Costs come from the atoms' evaluators, falling back to their
simulated durations; the heuristic is admissible when evaluator costs are not
below the nominal durations.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from . import world as W
from .skills import Evaluator, Skill, SkillGraph, SkillLibrary, default_library, expand_meta
from .taskspec import AssemblyStep, Inventory, TaskSpec, ground_relative, validate_inventory

GRASPS = {"parallel": "side-grasp", "suction": "top-suction"}
META_ORDER = ("PickPlace", "PickPlacewSupport", "PickHandoverPlace")


class PlanningError(Exception):
    pass


class NoFeasiblePlan(PlanningError):
    def __init__(self, step_index: int, reason: str = ""):
        self.step_index = step_index
        super().__init__(f"no feasible grounding for step {step_index}" + (f": {reason}" if reason else ""))


class BudgetExhausted(PlanningError):
    def __init__(self, expansions: int):
        self.expansions = expansions
        super().__init__(f"node-expansion budget exhausted after {expansions} expansions")


@dataclass(frozen=True)
class GroundedSkill:
    step_index: int
    meta: str
    robot: str
    brick: str
    grasp_config: str
    expected_duration: float
    target: W.Placement
    partner: Optional[str] = None
    handover: Optional[W.Cell] = None
    # body positions after which a post-condition check atom runs
    checks: tuple[int, ...] = ()

    def bindings(self) -> dict:
        b: dict[str, Any] = {"robot": self.robot, "brick": self.brick, "target": self.target}
        if self.partner is not None:
            b["partner"] = self.partner
        if self.handover is not None:
            b["handover"] = self.handover
        return b

    def to_json(self) -> dict:
        d = {
            "step": self.step_index,
            "meta": self.meta,
            "robot": self.robot,
            "brick": self.brick,
            "grasp": self.grasp_config,
            "expected_duration": self.expected_duration,
            "target": self.target.to_list(),
        }
        if self.partner is not None:
            d["partner"] = self.partner
        if self.handover is not None:
            d["handover"] = list(self.handover)
        if self.checks:
            d["checks"] = list(self.checks)
        return d

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "GroundedSkill":
        return cls(
            step_index=int(d["step"]),
            meta=d["meta"],
            robot=d["robot"],
            brick=d["brick"],
            grasp_config=d["grasp"],
            expected_duration=float(d["expected_duration"]),
            target=W.Placement.from_list(d["target"]),
            partner=d.get("partner"),
            handover=tuple(d["handover"]) if d.get("handover") is not None else None,
            checks=tuple(d.get("checks", ())),
        )


@dataclass(frozen=True)
class Plan:
    grounded: tuple[GroundedSkill, ...]
    total_cost: float
    design_name: str = ""

    def __len__(self) -> int:
        return len(self.grounded)

    def to_json(self) -> dict:
        return {
            "design_name": self.design_name,
            "total_cost": self.total_cost,
            "grounded": [g.to_json() for g in self.grounded],
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "Plan":
        return cls(
            tuple(GroundedSkill.from_json(g) for g in d["grounded"]),
            float(d["total_cost"]),
            d.get("design_name", ""),
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Plan":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class PlanNode:
    prefix: tuple[GroundedSkill, ...]
    sim_state: W.WorldState
    g_cost: float
    h_cost: float
    placed: dict = field(default_factory=dict)

    @property
    def f(self) -> float:
        return self.g_cost + self.h_cost


def expand_grounded(g: GroundedSkill, library: SkillLibrary) -> list[Skill]:
    """Atoms of a grounded step, with check atoms spliced in after ``g.checks``."""
    atoms = [_with_grasp(a, g.grasp_config) for a in expand_meta(library.meta[g.meta], g.bindings(), library)]
    if not g.checks:
        return atoms
    check = library.atomic["Check"]
    from .skills import bind

    out = []
    for i, a in enumerate(atoms):
        out.append(a)
        if i in g.checks:
            out.append(bind(check, {"robot": a.bindings["robot"], "brick": g.brick, "checked": i}))
    return out


def _with_grasp(atom: Skill, grasp: str) -> Skill:
    params = atom.policy.parameters
    if params.get("grasp") != "auto":
        return atom
    return replace(atom, policy=replace(atom.policy, parameters={**params, "grasp": grasp}))


def atom_context(z: W.WorldState, atom: Skill) -> tuple[str, str, list[str], str]:
    """(robot, verb, object keys, position bucket) used for evaluator lookups."""
    b = atom.bindings
    robot = b.get("robot", "*")
    objs: list[str] = []
    cell: Optional[W.Cell] = None
    if "brick" in b and b["brick"] in z.bricks:
        br = z.bricks[b["brick"]]
        objs = [br.id, br.brick_type]
        if br.store is not None:
            cell = br.store
    if "target" in b:
        t = b["target"]
        cell = t.cell if isinstance(t, W.Placement) else tuple(t[:2])
    elif "cell" in b:
        cell = tuple(b["cell"])
    if cell is None and robot in z.robots:
        cell = z.robots[robot].eef_cell
    bucket = W.position_bucket(z, cell) if cell is not None else "none"
    return robot, atom.verb, objs, bucket


class Planner:
    def __init__(
        self,
        library: Optional[SkillLibrary] = None,
        evaluators: Optional[Mapping[str, Evaluator]] = None,
        *,
        weight: float = 1.0,
        max_expansions: int = 200_000,
        exclude: Iterable[tuple[str, int, str]] = (),
        metas: Sequence[str] = META_ORDER,
    ):
        self.library = library or default_library()
        self.evaluators = dict(evaluators or {})
        self.weight = weight
        self.max_expansions = max_expansions
        self.exclude = frozenset(exclude)
        self.metas = tuple(m for m in metas if m in self.library.meta)
        self.popped_f: list[float] = []
        self.expansions = 0

    def evaluator(self, name: str) -> Evaluator:
        if name in self.evaluators:
            return self.evaluators[name]
        return self.library[name].evaluator

    def min_step_cost(self) -> float:
        return min(self.library.meta_nominal(m) for m in self.metas)

    def heuristic(self, node: PlanNode, task: TaskSpec) -> float:
        remaining = len(task.steps) - len(node.prefix)
        return remaining * self.min_step_cost()

    def atom_cost(self, z: W.WorldState, atom: Skill, nominal: Optional[float] = None) -> float:
        if nominal is None:
            nominal = W.atom_duration(z, atom)
        robot, verb, objs, bucket = atom_context(z, atom)
        return self.evaluator(atom.name).cost(robot, verb, objs, bucket, nominal)

    def simulate(self, z: W.WorldState, g: GroundedSkill) -> tuple[W.WorldState, float]:
        """Replay a grounded step; raises PreconditionViolated if any atom is infeasible."""
        meta = self.library.meta[g.meta]
        if not meta.skill.pre.evaluate(z, g.bindings()):
            raise W.PreconditionViolated(meta.skill.pre.first_failure(z, g.bindings()) or "pre", g.meta)
        cost = self.evaluator(g.meta).penalty(g.robot, g.step_index, g.brick)
        for atom in expand_grounded(g, self.library):
            bad = atom.pre.first_failure(z, atom.bindings)
            if bad is not None:
                raise W.PreconditionViolated(bad, atom.name)
            dt = W.atom_duration(z, atom)
            cost += self.atom_cost(z, atom, dt)
            z = W.apply_effect(z, atom, check=False, duration=dt)
        if not meta.skill.post.evaluate(z, g.bindings()):
            raise W.PreconditionViolated("meta post-condition", g.meta)
        return z, cost

    def _raw_candidates(self, z: W.WorldState, step: AssemblyStep, target: W.Placement):
        robots = sorted(z.robots)
        bricks = z.store_bricks(step.brick_type)
        for meta in self.metas:
            for robot in robots:
                grasp = GRASPS[z.robots[robot].gripper_kind]
                partners: list[Optional[str]] = [None]
                if meta != "PickPlace":
                    partners = [p for p in robots if p != robot]
                for partner in partners:
                    for brick in bricks:
                        if (robot, step.index, brick) in self.exclude:
                            continue
                        yield GroundedSkill(
                            step_index=step.index,
                            meta=meta,
                            robot=robot,
                            brick=brick,
                            grasp_config=grasp,
                            expected_duration=0.0,
                            target=target,
                            partner=partner,
                            handover=z.handover_cell if meta == "PickHandoverPlace" else None,
                        )

    def expand(self, node: PlanNode, step: AssemblyStep) -> list[tuple[GroundedSkill, W.WorldState]]:
        try:
            target = ground_relative(step, node.placed)
        except Exception:
            return []
        out = []
        if not W.check_stability(node.sim_state, step.brick_type, target):
            return out
        for cand in self._raw_candidates(node.sim_state, step, target):
            if cand.meta == "PickHandoverPlace" and cand.handover is None:
                continue
            try:
                z2, cost = self.simulate(node.sim_state, cand)
            except (W.WorldError, KeyError):
                continue
            out.append((replace(cand, expected_duration=cost), z2))
        return out

    def enumerate_candidates(self, node: PlanNode, step: AssemblyStep) -> list[GroundedSkill]:
        return [g for g, _ in self.expand(node, step)]

    def plan(self, task: TaskSpec, z0: W.WorldState) -> Plan:
        self.popped_f = []
        self.expansions = 0
        if not task.steps:
            return Plan((), 0.0, task.design_name)
        report = validate_inventory(task, Inventory.from_world(z0))
        if not report.ok:
            seen: dict[str, int] = {}
            inv = Inventory.from_world(z0)
            for s in task.steps:
                seen[s.brick_type] = seen.get(s.brick_type, 0) + 1
                if seen[s.brick_type] > inv.count(s.brick_type):
                    raise NoFeasiblePlan(s.index, f"inventory deficit {dict(report.deficits)}")

        n = len(task.steps)
        root = PlanNode((), z0, 0.0, 0.0, {})
        root.h_cost = self.heuristic(root, task)
        counter = 0
        frontier: list = []

        def push(node: PlanNode) -> None:
            nonlocal counter
            last = node.prefix[-1] if node.prefix else None
            key = (
                round(node.g_cost + self.weight * node.h_cost, 9),
                n - len(node.prefix),
                last.robot if last else "",
                last.brick if last else "",
                counter,
            )
            counter += 1
            heapq.heappush(frontier, (key, node))

        push(root)
        deepest = 0
        while frontier:
            key, node = heapq.heappop(frontier)
            self.popped_f.append(node.f)
            depth = len(node.prefix)
            if depth == n:
                return Plan(node.prefix, node.g_cost, task.design_name)
            if self.expansions >= self.max_expansions:
                raise BudgetExhausted(self.expansions)
            self.expansions += 1
            step = task.steps[depth]
            for g, z2 in self.expand(node, step):
                placed = dict(node.placed)
                placed[step.index] = g.target
                child = PlanNode(node.prefix + (g,), z2, node.g_cost + g.expected_duration, 0.0, placed)
                child.h_cost = self.heuristic(child, task)
                push(child)
                deepest = max(deepest, depth + 1)
        raise NoFeasiblePlan(task.steps[min(deepest, n - 1)].index)


def _library_of(graph: Union[SkillGraph, SkillLibrary, None]) -> SkillLibrary:
    if isinstance(graph, SkillLibrary):
        return graph
    if isinstance(graph, SkillGraph) and graph.library is not None:
        return graph.library
    return default_library()


def plan(
    task: TaskSpec,
    graph: Union[SkillGraph, SkillLibrary, None],
    z0: W.WorldState,
    evaluators: Optional[Mapping[str, Evaluator]] = None,
    **kwargs: Any,
) -> Plan:
    return Planner(_library_of(graph), evaluators, **kwargs).plan(task, z0)


def enumerate_candidates(
    node: PlanNode,
    step: AssemblyStep,
    graph: Union[SkillGraph, SkillLibrary, None] = None,
    evaluators: Optional[Mapping[str, Evaluator]] = None,
) -> list[GroundedSkill]:
    return Planner(_library_of(graph), evaluators).enumerate_candidates(node, step)


def heuristic(node: PlanNode, task: TaskSpec, graph: Union[SkillGraph, SkillLibrary, None] = None) -> float:
    return Planner(_library_of(graph)).heuristic(node, task)


def replay(plan_: Plan, z0: W.WorldState, library: Optional[SkillLibrary] = None) -> W.WorldState:
    """Apply every atom of the plan from ``z0``, raising on any violated pre-condition."""
    library = library or default_library()
    z = z0
    for g in plan_.grounded:
        for atom in expand_grounded(g, library):
            z = W.apply_effect(z, atom)
    return z
