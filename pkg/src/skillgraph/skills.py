"""Skills, meta skills, evaluators and the Skill Graph.

A skill is the tuple (verb, nouns, policy, pre, post, evaluator). Abstract
skills declare noun *slots* with categories; ``concretize`` binds each slot to
an instance and resolves category-dependent policy parameters (grasp type).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence, Union

from . import world as W
from .conditions import Condition, ConditionError

ATOMIC_VERBS = (
    "Transit",
    "Pick",
    "PlaceUp",
    "PlaceDown",
    "SupportUp",
    "SupportDown",
    "Handover",
    "Detect",
)
_verbs: list[str] = list(ATOMIC_VERBS)


def register_verb(name: str) -> None:
    if name not in _verbs:
        _verbs.append(name)


def known_verbs() -> tuple[str, ...]:
    return tuple(_verbs)


class SkillError(Exception):
    pass


class UnresolvedNoun(SkillError):
    pass


class MissingBinding(SkillError):
    pass


class LibraryError(SkillError):
    pass


@dataclass(frozen=True)
class NounSet:
    """Instances a skill may bind to.

    ``categories`` maps instance ids to a category label (gripper kind for
    robots, brick type for objects). ``sites`` lists candidate values for
    non-entity slots, keyed by slot kind (``target`` placements, ``cell``).
    """

    robots: tuple[str, ...] = ()
    objects: tuple[str, ...] = ()
    environment: str = "plate"
    categories: Mapping[str, str] = field(default_factory=dict)
    sites: Mapping[str, tuple] = field(default_factory=dict)

    @classmethod
    def from_world(cls, z: W.WorldState, sites: Optional[Mapping[str, Sequence]] = None) -> "NounSet":
        cats = {rid: r.gripper_kind for rid, r in z.robots.items()}
        cats.update({bid: b.brick_type for bid, b in z.bricks.items()})
        return cls(
            robots=tuple(sorted(z.robots)),
            objects=tuple(sorted(z.bricks)),
            categories=cats,
            sites={k: tuple(v) for k, v in (sites or {}).items()},
        )


@dataclass(frozen=True)
class Variant:
    name: str
    duration_multiplier: float = 1.0
    success: float = 1.0

    def __post_init__(self) -> None:
        if self.duration_multiplier <= 0:
            raise ValueError("duration multiplier must be positive")
        if not 0.0 <= self.success <= 1.0:
            raise ValueError("variant success must be a probability")


@dataclass(frozen=True)
class PolicySpec:
    effect_id: str
    nominal_duration: float
    parameters: Mapping[str, Any] = field(default_factory=dict)
    variants: tuple[Variant, ...] = (Variant("default"),)

    def __post_init__(self) -> None:
        if self.nominal_duration <= 0:
            raise ValueError("nominal_duration must be > 0")
        if not self.variants:
            raise ValueError("policy needs at least one implementation variant")

    def variant(self, name: Optional[str]) -> Variant:
        if name is None:
            return self.variants[0]
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(name)


ContextKey = tuple[str, str, str, str]  # (robot, verb, object, position bucket)


def _lookup(table: Mapping[ContextKey, float], robot: str, verb: str, objects: Sequence[str], bucket: str):
    if not table:
        return None
    for r in (robot, "*"):
        for v in (verb, "*"):
            for o in (*objects, "*"):
                for b in (bucket, "*"):
                    val = table.get((r, v, o, b))
                    if val is not None:
                        return val
    return None


@dataclass(frozen=True)
class Evaluator:
    """Per-context cost and success model.

    Keys are ``(robot, verb, object, bucket)`` where any field may be ``"*"``;
    the object field matches a brick id or brick type. ``default_cost=None``
    falls back to the simulated duration passed in as ``nominal``.
    """

    cost_model: Mapping[ContextKey, float] = field(default_factory=dict)
    success_model: Mapping[ContextKey, float] = field(default_factory=dict)
    default_cost: Optional[float] = None
    default_success: float = 1.0
    # multiplicative retry inflation written by risk updates
    risk_factor: Mapping[ContextKey, float] = field(default_factory=dict)
    # (robot, step index, brick) -> additive seconds, from failure history
    penalties: Mapping[tuple[str, int, str], float] = field(default_factory=dict)
    max_cost: float = math.inf

    def __post_init__(self) -> None:
        for p in (*self.success_model.values(), self.default_success):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"success probability {p} outside [0, 1]")
        for c in self.cost_model.values():
            if c < 0:
                raise ValueError("costs must be >= 0")
        if self.default_cost is not None and self.default_cost < 0:
            raise ValueError("costs must be >= 0")

    def cost(self, robot: str, verb: str, objects: Sequence[str], bucket: str, nominal: float) -> float:
        base = _lookup(self.cost_model, robot, verb, objects, bucket)
        if base is None:
            base = self.default_cost if self.default_cost is not None else nominal
        factor = _lookup(self.risk_factor, robot, verb, objects, bucket)
        if factor is None:
            return float(base)
        return float(min(base * factor, max(base, self.max_cost)))

    def success(self, robot: str, verb: str, objects: Sequence[str], bucket: str) -> float:
        p = _lookup(self.success_model, robot, verb, objects, bucket)
        return float(self.default_success if p is None else p)

    def penalty(self, robot: str, step: int, brick: str) -> float:
        if not self.penalties:
            return 0.0
        total = 0.0
        for key in ((robot, step, brick), ("*", step, brick), (robot, step, "*")):
            total += self.penalties.get(key, 0.0)
        return total

    def to_json(self) -> dict:
        def enc(t):
            return {"|".join(str(p) for p in k): v for k, v in sorted(t.items(), key=lambda kv: tuple(map(str, kv[0])))}

        return {
            "cost_model": enc(self.cost_model),
            "success_model": enc(self.success_model),
            "default_cost": self.default_cost,
            "default_success": self.default_success,
            "risk_factor": enc(self.risk_factor),
            "penalties": enc(self.penalties),
            "max_cost": None if math.isinf(self.max_cost) else self.max_cost,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "Evaluator":
        def dec(t, n=4):
            out = {}
            for k, v in (t or {}).items():
                parts = k.split("|")
                if len(parts) != n:
                    raise LibraryError(f"evaluator key {k!r} needs {n} '|'-separated fields")
                out[tuple(parts)] = float(v)
            return out

        pens = {}
        for k, v in (d.get("penalties") or {}).items():
            r, s, b = k.split("|")
            pens[(r, int(s), b)] = float(v)
        mc = d.get("max_cost")
        return cls(
            cost_model=dec(d.get("cost_model")),
            success_model=dec(d.get("success_model")),
            default_cost=d.get("default_cost"),
            default_success=float(d.get("default_success", 1.0)),
            risk_factor=dec(d.get("risk_factor")),
            penalties=pens,
            max_cost=math.inf if mc is None else float(mc),
        )


@dataclass(frozen=True)
class Slot:
    name: str
    kind: str  # robot | object | target | cell
    category: str = "*"

    def __post_init__(self) -> None:
        if self.kind not in ("robot", "object", "target", "cell"):
            raise ValueError(f"unknown slot kind {self.kind!r}")


@dataclass(frozen=True)
class Skill:
    name: str
    verb: str
    slots: tuple[Slot, ...]
    policy: PolicySpec
    pre: Condition
    post: Condition
    evaluator: Evaluator = field(default_factory=Evaluator)
    kind: str = "atomic"
    bindings: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("atomic", "meta"):
            raise ValueError("kind must be atomic or meta")
        if self.verb not in _verbs and self.kind == "atomic":
            raise SkillError(f"unknown verb {self.verb!r}")

    @property
    def is_concrete(self) -> bool:
        return all(s.name in self.bindings for s in self.slots)

    @property
    def nouns(self) -> NounSet:
        robots = tuple(self.bindings[s.name] for s in self.slots if s.kind == "robot" and s.name in self.bindings)
        objs = tuple(self.bindings[s.name] for s in self.slots if s.kind == "object" and s.name in self.bindings)
        return NounSet(robots=robots, objects=objs)

    def pre_holds(self, z: W.WorldState) -> bool:
        return self.pre.evaluate(z, self.bindings)

    def post_holds(self, z: W.WorldState) -> bool:
        return self.post.evaluate(z, self.bindings)

    def label(self) -> str:
        args = []
        for s in self.slots:
            v = self.bindings.get(s.name)
            if v is None:
                continue
            if isinstance(v, W.Placement):
                v = f"({v.x},{v.y},{v.level})"
            elif isinstance(v, tuple):
                v = "(" + ",".join(map(str, v)) + ")"
            args.append(str(v))
        return f"{self.name}({','.join(args)})"


@dataclass(frozen=True)
class BodyStep:
    skill: str
    bind: Mapping[str, Any]


@dataclass(frozen=True)
class MetaSkill:
    skill: Skill
    body: tuple[BodyStep, ...]

    def __post_init__(self) -> None:
        if self.skill.kind != "meta":
            raise SkillError("meta skill must wrap a skill with kind='meta'")
        if not self.body:
            raise SkillError("meta skill body must be nonempty")

    @property
    def name(self) -> str:
        return self.skill.name


@dataclass(frozen=True)
class SkillLibrary:
    atomic: Mapping[str, Skill]
    meta: Mapping[str, MetaSkill] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Skill:
        if name in self.atomic:
            return self.atomic[name]
        return self.meta[name].skill

    def skills(self) -> list[Skill]:
        return list(self.atomic.values()) + [m.skill for m in self.meta.values()]

    def meta_nominal(self, name: str) -> float:
        """Lower bound on a meta skill's duration: sum of body nominal durations."""
        return sum(self.atomic[st.skill].policy.nominal_duration for st in self.meta[name].body)


# --- operations --------------------------------------------------------------

_GRASP_BY_GRIPPER = {"parallel": "side-grasp", "suction": "top-suction"}


def _category_ok(nouns: NounSet, inst: str, category: str) -> bool:
    return category == "*" or nouns.categories.get(inst) == category


def _slot_values(slot: Slot, nouns: NounSet) -> list:
    if slot.kind == "robot":
        return [r for r in nouns.robots if _category_ok(nouns, r, slot.category)]
    if slot.kind == "object":
        return [o for o in nouns.objects if _category_ok(nouns, o, slot.category)]
    return list(nouns.sites.get(slot.kind, ()))


def _resolve_params(skill: Skill, bindings: Mapping[str, Any], nouns: Optional[NounSet]) -> PolicySpec:
    params = dict(skill.policy.parameters)
    robot = bindings.get("robot")
    if robot is not None and "grasp" in params and params["grasp"] == "auto":
        kind = nouns.categories.get(robot) if nouns is not None else None
        if kind is None:
            kind = params.get("gripper")
        # stays "auto" until a gripper category is known
        if kind is not None:
            params["grasp"] = _GRASP_BY_GRIPPER.get(kind, "side-grasp")
    if params == dict(skill.policy.parameters):
        return skill.policy
    return replace(skill.policy, parameters=params)


def iter_bindings(skill: Skill, nouns: NounSet) -> Iterator[dict]:
    """All slot assignments drawn from ``nouns``; distinct robots per skill."""
    free = [s for s in skill.slots if s.name not in skill.bindings]
    pools = [_slot_values(s, nouns) for s in free]
    for combo in itertools.product(*pools):
        b = dict(skill.bindings)
        b.update({s.name: v for s, v in zip(free, combo)})
        robots = [b[s.name] for s in skill.slots if s.kind == "robot"]
        if len(set(robots)) != len(robots):
            continue
        yield b


def bind(skill: Skill, bindings: Mapping[str, Any], nouns: Optional[NounSet] = None) -> Skill:
    """Concretize with explicit slot values."""
    b = dict(skill.bindings)
    b.update(bindings)
    return replace(skill, bindings=b, policy=_resolve_params(skill, b, nouns))


def concretize(skill: Skill, nouns: NounSet) -> Skill:
    """Bind every unbound slot to the first matching instance in ``nouns``."""
    if skill.is_concrete and skill.policy.parameters.get("grasp") != "auto":
        return skill
    for b in iter_bindings(skill, nouns):
        return bind(skill, b, nouns)
    missing = [s for s in skill.slots if s.name not in skill.bindings and not _slot_values(s, nouns)]
    what = ", ".join(f"{s.name}:{s.category}" for s in missing) or "distinct robot instances"
    raise UnresolvedNoun(f"{skill.name}: no instance for {what}")


def feasible_edge(s_i: Skill, s_j: Skill, z: W.WorldState) -> bool:
    """True iff applying ``s_i``'s effect at ``z`` yields a state where ``s_j`` may start.

    When ``s_i``'s own pre-condition fails at ``z`` the forced effect image is
    used, and the image must also satisfy ``s_i``'s post-condition.
    """
    if s_i.kind != "atomic":
        raise SkillError("feasible_edge works on atomic skills; expand meta skills first")
    try:
        image = W.apply_effect(z, s_i, check=s_i.pre_holds(z))
    except (W.WorldError, ConditionError, KeyError):
        return False
    try:
        return s_i.post_holds(image) and s_j.pre_holds(image)
    except (W.WorldError, ConditionError, KeyError):
        return False


@dataclass(frozen=True)
class SkillGraph:
    nodes: tuple[Skill, ...]
    edges: frozenset
    binding: NounSet
    library: Optional[SkillLibrary] = None

    def successors(self, i: int) -> list[int]:
        return sorted(j for a, j in self.edges if a == i)

    def adjacency(self) -> list[list[int]]:
        n = len(self.nodes)
        return [[1 if (i, j) in self.edges else 0 for j in range(n)] for i in range(n)]


def build_graph(
    library: Union[SkillLibrary, Sequence[Skill]],
    nouns: NounSet,
    z0: W.WorldState,
) -> SkillGraph:
    """Concretize every skill over all valid bindings and connect feasible pairs.

    Meta skills appear as nodes but are connected through their first and last
    body atoms, so they behave like atomic nodes externally.
    """
    lib = library if isinstance(library, SkillLibrary) else None
    skills = library.skills() if isinstance(library, SkillLibrary) else list(library)
    nodes: list[Skill] = []
    for s in skills:
        found = False
        for b in iter_bindings(s, nouns):
            nodes.append(bind(s, b, nouns))
            found = True
        if not found and s.slots:
            concretize(s, nouns)  # raises UnresolvedNoun with a useful message
    edges = set()
    atomic_view = [_edge_ends(n, lib) for n in nodes]
    for i, (_, last_i) in enumerate(atomic_view):
        for j, (first_j, _) in enumerate(atomic_view):
            if last_i is None or first_j is None:
                continue
            if feasible_edge(last_i, first_j, z0):
                edges.add((i, j))
    return SkillGraph(tuple(nodes), frozenset(edges), nouns, lib)


def _edge_ends(s: Skill, lib: Optional[SkillLibrary]):
    if s.kind == "atomic":
        return s, s
    if lib is None or s.name not in lib.meta:
        return None, None
    try:
        body = expand_meta(lib.meta[s.name], s.bindings, lib)
    except SkillError:
        return None, None
    return body[0], body[-1]


def _bind_expr(expr: Any, bindings: Mapping[str, Any], meta: str) -> Any:
    if isinstance(expr, str) and expr.startswith("?"):
        try:
            return bindings[expr[1:]]
        except KeyError:
            raise MissingBinding(f"{meta}: no binding for {expr}") from None
    if isinstance(expr, (list, tuple)) and expr and expr[0] == "xy":
        v = _bind_expr(expr[1], bindings, meta)
        return v.cell if isinstance(v, W.Placement) else tuple(v[:2])
    return expr


def expand_meta(meta: MetaSkill, bindings: Mapping[str, Any], library: SkillLibrary) -> list[Skill]:
    """Ordered concrete atoms of a meta skill under ``bindings``."""
    b = dict(meta.skill.bindings)
    b.update(bindings)
    missing = [s.name for s in meta.skill.slots if s.name not in b]
    if missing:
        raise MissingBinding(f"{meta.name}: missing {', '.join(missing)}")
    out = []
    for st in meta.body:
        template = library.atomic[st.skill]
        vals = {k: _bind_expr(v, b, meta.name) for k, v in st.bind.items()}
        out.append(bind(template, vals))
    return out


# --- library files -----------------------------------------------------------


def _slot_from_json(d: Any) -> Slot:
    if isinstance(d, str):
        name, _, kind = d.partition(":")
        kind, _, cat = kind.partition("/")
        return Slot(name, kind or "robot", cat or "*")
    return Slot(d["name"], d["kind"], d.get("category", "*"))


def _skill_from_json(d: Mapping[str, Any], kind: str) -> Skill:
    pol = d["policy"]
    variants = tuple(
        Variant(v["name"], float(v.get("duration_multiplier", 1.0)), float(v.get("success", 1.0)))
        for v in pol.get("variants", [{"name": "default"}])
    )
    try:
        return Skill(
            name=d["name"],
            verb=d.get("verb", d["name"]),
            slots=tuple(_slot_from_json(s) for s in d.get("nouns", [])),
            policy=PolicySpec(
                effect_id=pol.get("effect", "meta" if kind == "meta" else ""),
                nominal_duration=float(pol.get("nominal_duration", 1.0)),
                parameters=dict(pol.get("parameters", {})),
                variants=variants,
            ),
            pre=Condition.parse(d.get("pre", ["true"])),
            post=Condition.parse(d.get("post", ["true"])),
            evaluator=Evaluator.from_json(d.get("evaluator", {})),
            kind=kind,
        )
    except (ValueError, KeyError, ConditionError) as e:
        raise LibraryError(f"skill {d.get('name')!r}: {e}") from e


def library_from_dict(doc: Mapping[str, Any]) -> SkillLibrary:
    for v in doc.get("verbs", []):
        register_verb(v)
    atomic = {}
    for d in doc.get("atomic", []):
        s = _skill_from_json(d, "atomic")
        if s.name in atomic:
            raise LibraryError(f"duplicate skill {s.name}")
        atomic[s.name] = s
    meta = {}
    for d in doc.get("meta", []):
        s = _skill_from_json(d, "meta")
        body = tuple(BodyStep(b["skill"], dict(b.get("bind", {}))) for b in d.get("body", []))
        for st in body:
            if st.skill not in atomic:
                raise LibraryError(f"{s.name}: body references unknown atomic skill {st.skill}")
        try:
            meta[s.name] = MetaSkill(s, body)
        except SkillError as e:
            raise LibraryError(str(e)) from e
    return SkillLibrary(atomic, meta)


def load_library(path: Union[str, Path, None] = None) -> SkillLibrary:
    if path is None:
        text = resources.files("skillgraph").joinpath("data/library.json").read_text(encoding="utf-8")
        return library_from_dict(json.loads(text))
    with open(path, encoding="utf-8") as f:
        return library_from_dict(json.load(f))


_default: Optional[SkillLibrary] = None


def default_library() -> SkillLibrary:
    global _default
    if _default is None:
        _default = load_library()
    return _default
