"""Assembly task documents: parsing, relative-constraint grounding, inventory checks.

This is the boundary where an upstream extraction pipeline (e.g. a video to
JSON model) hands over a task. The document schema is::

    {"design_name": "Faucet",
     "steps": [{"index": 1, "brick_type": "2x4", "orientation": 0,
                "target": {"abs": [x, y, level]}},
               {"index": 2, "brick_type": "2x2",
                "target": {"relative": {"anchor": 1, "relation": "ShiftedLeft"}},
                "meta_hint": "PickPlace"}]}
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .world import Placement, WorldState, footprint_dims, parse_brick_type

RELATIONS = ("AlignedCenter", "ShiftedLeft", "ShiftedRight", "ShiftedFront", "ShiftedBack")
META_SKILLS = ("PickPlace", "PickPlacewSupport", "PickHandoverPlace")


class TaskError(Exception):
    pass


class SchemaViolation(TaskError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class UnknownRelation(SchemaViolation):
    pass


class UnknownMetaSkillName(SchemaViolation):
    pass


class UnplacedAnchor(TaskError):
    pass


@dataclass(frozen=True)
class RelativeConstraint:
    anchor: int
    relation: str


@dataclass(frozen=True)
class AssemblyStep:
    index: int
    brick_type: str
    target: Union[Placement, RelativeConstraint]
    orientation: int = 0
    meta_hint: Optional[str] = None


@dataclass(frozen=True)
class TaskSpec:
    steps: tuple[AssemblyStep, ...]
    design_name: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    def demand(self) -> Counter:
        return Counter(s.brick_type for s in self.steps)


@dataclass(frozen=True)
class Inventory:
    available: Mapping[str, tuple[tuple[str, tuple[int, int]], ...]] = field(default_factory=dict)

    def count(self, brick_type: str) -> int:
        return len(self.available.get(brick_type, ()))

    @classmethod
    def from_world(cls, z: WorldState) -> "Inventory":
        out: dict[str, list] = {}
        for bid in z.store_bricks():
            b = z.bricks[bid]
            out.setdefault(b.brick_type, []).append((bid, tuple(b.store or (b.location.x, b.location.y))))
        return cls({k: tuple(v) for k, v in sorted(out.items())})

    def to_json(self) -> dict:
        return {
            "available": {
                t: [{"id": i, "store": list(p)} for i, p in items] for t, items in self.available.items()
            }
        }


@dataclass(frozen=True)
class InventoryReport:
    ok: bool
    deficits: Mapping[str, int]


# --- parsing -----------------------------------------------------------------


def _req(d: Mapping, key: str, path: str) -> Any:
    if not isinstance(d, Mapping):
        raise SchemaViolation(path, "expected an object")
    if key not in d:
        raise SchemaViolation(f"{path}.{key}", "required field missing")
    return d[key]


def _int(v: Any, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaViolation(path, f"expected integer, got {v!r}")
    return v


def parse_task(document: Union[str, bytes, Mapping[str, Any]]) -> TaskSpec:
    """Validate a task document (JSON text or decoded mapping)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaViolation("$", f"invalid JSON: {e}") from e
    if not isinstance(document, Mapping):
        raise SchemaViolation("$", "expected an object")
    name = document.get("design_name", "")
    if not isinstance(name, str):
        raise SchemaViolation("$.design_name", "expected string")
    raw_steps = _req(document, "steps", "$")
    if not isinstance(raw_steps, list):
        raise SchemaViolation("$.steps", "expected a list")
    if not raw_steps:
        raise SchemaViolation("$.steps", "a task needs at least one step")
    steps = []
    for i, s in enumerate(raw_steps):
        path = f"$.steps[{i}]"
        idx = _int(_req(s, "index", path), f"{path}.index")
        if idx != i + 1:
            raise SchemaViolation(f"{path}.index", f"indices must be contiguous from 1, expected {i + 1}")
        bt = _req(s, "brick_type", path)
        try:
            parse_brick_type(bt if isinstance(bt, str) else "")
        except ValueError:
            raise SchemaViolation(f"{path}.brick_type", f"bad brick type {bt!r}") from None
        orient = _int(s.get("orientation", 0), f"{path}.orientation")
        if orient not in (0, 90):
            raise SchemaViolation(f"{path}.orientation", "must be 0 or 90")
        hint = s.get("meta_hint")
        if hint is not None and hint not in META_SKILLS:
            raise UnknownMetaSkillName(f"{path}.meta_hint", f"unknown meta skill {hint!r}")
        tgt = _req(s, "target", path)
        if not isinstance(tgt, Mapping) or len(tgt) != 1 or not ({"abs", "relative"} & set(tgt)):
            raise SchemaViolation(f"{path}.target", "expected exactly one of 'abs' or 'relative'")
        if "abs" in tgt:
            v = tgt["abs"]
            if not isinstance(v, list) or len(v) != 3:
                raise SchemaViolation(f"{path}.target.abs", "expected [x, y, level]")
            x, y, lv = (_int(a, f"{path}.target.abs") for a in v)
            if lv < 0:
                raise SchemaViolation(f"{path}.target.abs", "level must be >= 0")
            target: Union[Placement, RelativeConstraint] = Placement(x, y, lv, orient)
        else:
            r = tgt["relative"]
            rp = f"{path}.target.relative"
            anchor = _int(_req(r, "anchor", rp), f"{rp}.anchor")
            rel = _req(r, "relation", rp)
            if rel not in RELATIONS:
                raise UnknownRelation(f"{rp}.relation", f"unknown relation {rel!r}")
            if not 1 <= anchor < idx:
                raise SchemaViolation(f"{rp}.anchor", "anchor must refer to an earlier step")
            target = RelativeConstraint(anchor, rel)
        steps.append(AssemblyStep(idx, bt, target, orient, hint))
    return TaskSpec(tuple(steps), name)


def serialize_task(task: TaskSpec) -> dict:
    steps = []
    for s in task.steps:
        d: dict[str, Any] = {"index": s.index, "brick_type": s.brick_type}
        if s.orientation:
            d["orientation"] = s.orientation
        if isinstance(s.target, Placement):
            d["target"] = {"abs": [s.target.x, s.target.y, s.target.level]}
        else:
            d["target"] = {"relative": {"anchor": s.target.anchor, "relation": s.target.relation}}
        if s.meta_hint:
            d["meta_hint"] = s.meta_hint
        steps.append(d)
    return {"design_name": task.design_name, "steps": steps}


def load_task(path: Union[str, Path]) -> TaskSpec:
    with open(path, encoding="utf-8") as f:
        return parse_task(f.read())


DESIGNS = ("Faucet", "Fish", "Vessel", "Guitar")


def load_design(name: str) -> TaskSpec:
    """One of the packaged golden designs, by name (case-insensitive)."""
    from .world import data_path

    return load_task(data_path(f"{name.lower()}.json"))


def parse_inventory(document: Union[str, Mapping[str, Any]]) -> Inventory:
    if isinstance(document, str):
        document = json.loads(document)
    avail = _req(document, "available", "$")
    out = {}
    for t, items in avail.items():
        try:
            parse_brick_type(t)
        except ValueError:
            raise SchemaViolation(f"$.available.{t}", "bad brick type") from None
        out[t] = tuple((it["id"], tuple(it["store"])) for it in items)
    return Inventory(out)


# --- grounding ---------------------------------------------------------------


def ground_relative(step: AssemblyStep, placed: Mapping[int, Any]) -> Placement:
    """Resolve a step target to an absolute placement one level above its anchor.

    Shifted relations move by half of this step's brick footprint along the
    named axis: left/right along x, front/back along y.
    """
    if isinstance(step.target, Placement):
        return step.target
    rc = step.target
    if rc.anchor not in placed:
        raise UnplacedAnchor(f"step {step.index}: anchor step {rc.anchor} not placed")
    a = placed[rc.anchor]
    ax, ay, al = (a.x, a.y, a.level) if isinstance(a, Placement) else tuple(a)[:3]
    dx, dy = footprint_dims(step.brick_type, step.orientation)
    shift = {
        "AlignedCenter": (0, 0),
        "ShiftedLeft": (-(dx // 2), 0),
        "ShiftedRight": (dx // 2, 0),
        "ShiftedFront": (0, -(dy // 2)),
        "ShiftedBack": (0, dy // 2),
    }[rc.relation]
    return Placement(ax + shift[0], ay + shift[1], al + 1, step.orientation)


def resolve_targets(task: TaskSpec) -> dict[int, Placement]:
    placed: dict[int, Placement] = {}
    for s in task.steps:
        placed[s.index] = ground_relative(s, placed)
    return placed


def validate_inventory(task: TaskSpec, inv: Inventory) -> InventoryReport:
    deficits = {}
    for t, n in sorted(task.demand().items()):
        have = inv.count(t)
        if n > have:
            deficits[t] = n - have
    return InventoryReport(not deficits, deficits)
