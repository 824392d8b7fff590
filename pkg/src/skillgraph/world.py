"""Discretized LEGO world: plate, bricks, robots, and deterministic skill effects.

A ``WorldState`` is an immutable snapshot. Effects never mutate; they return a
new state. Plate cells are integer stud coordinates ``(x, y)``; a placed brick
occupies its footprint cells at one ``level``. Store positions share the plate
coordinate frame but live outside the plate grid, so robot regions may extend
past the plate edges to reach them.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Optional, Union

if TYPE_CHECKING:
    from .skills import Skill

Cell = tuple[int, int]


class WorldError(Exception):
    pass


class PreconditionViolated(WorldError):
    """Raised when a skill is applied in a state that fails its pre-condition."""

    def __init__(self, atom: str, skill: str = ""):
        self.atom = atom
        self.skill = skill
        super().__init__(f"{skill}: {atom}" if skill else atom)


class UnknownRobot(WorldError, KeyError):
    pass


class UnknownBrick(WorldError, KeyError):
    pass


# --- locations ---------------------------------------------------------------


@dataclass(frozen=True)
class OnPlate:
    x: int
    y: int
    level: int


@dataclass(frozen=True)
class InHand:
    robot: str


@dataclass(frozen=True)
class InStore:
    x: int
    y: int


Location = Union[OnPlate, InHand, InStore]

_TYPE_RE = re.compile(r"^([1-9][0-9]*)x([1-9][0-9]*)$")


def parse_brick_type(brick_type: str) -> tuple[int, int]:
    m = _TYPE_RE.match(brick_type)
    if not m:
        raise ValueError(f"bad brick type {brick_type!r}, expected e.g. '2x4'")
    return int(m.group(1)), int(m.group(2))


def footprint_dims(brick_type: str, orientation: int = 0) -> tuple[int, int]:
    """Stud extent ``(dx, dy)``; the long side runs along x at orientation 0."""
    a, b = parse_brick_type(brick_type)
    short, long_ = min(a, b), max(a, b)
    if orientation % 180 == 0:
        return long_, short
    return short, long_


@dataclass(frozen=True)
class Placement:
    """Target pose of a brick: lower-left footprint corner, stack level, yaw."""

    x: int
    y: int
    level: int
    orientation: int = 0

    @property
    def cell(self) -> Cell:
        return (self.x, self.y)

    def to_list(self) -> list[int]:
        return [self.x, self.y, self.level, self.orientation]

    @classmethod
    def from_list(cls, v: Iterable[int]) -> "Placement":
        v = list(v)
        if len(v) == 3:
            v.append(0)
        x, y, level, orientation = (int(a) for a in v)
        return cls(x, y, level, orientation)


def footprint_cells(brick_type: str, placement: Placement) -> list[Cell]:
    dx, dy = footprint_dims(brick_type, placement.orientation)
    return [
        (placement.x + i, placement.y + j) for j in range(dy) for i in range(dx)
    ]


@dataclass(frozen=True)
class BrickInstance:
    id: str
    brick_type: str
    location: Location
    orientation: int = 0
    wear_count: int = 0
    store: Optional[Cell] = None
    # sub-cell pose offset in millimeters, set by runtime noise injection
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.wear_count < 0:
            raise ValueError("wear_count must be >= 0")
        if self.orientation not in (0, 90):
            raise ValueError("orientation must be 0 or 90")

    @property
    def width(self) -> int:
        return min(parse_brick_type(self.brick_type))


@dataclass(frozen=True)
class Region:
    """Union of half-open rectangles ``(x0, y0, x1, y1)``."""

    rects: tuple[tuple[int, int, int, int], ...] = ()

    def contains(self, cell: Cell) -> bool:
        x, y = cell
        return any(x0 <= x < x1 and y0 <= y < y1 for x0, y0, x1, y1 in self.rects)

    def __contains__(self, cell: Cell) -> bool:
        return self.contains(cell)


@dataclass(frozen=True)
class RobotState:
    id: str
    region: Region
    eef_cell: Cell
    gripper_kind: str = "parallel"
    max_grip_width: int = 2
    holding: Optional[str] = None
    supporting: bool = False

    def __post_init__(self) -> None:
        if self.gripper_kind not in ("parallel", "suction"):
            raise ValueError(f"unknown gripper kind {self.gripper_kind!r}")

    def can_grip(self, brick: BrickInstance) -> bool:
        if self.gripper_kind == "suction":
            return True
        return brick.width <= self.max_grip_width


@dataclass(frozen=True)
class WorldState:
    width: int = 48
    height: int = 48
    bricks: Mapping[str, BrickInstance] = field(default_factory=dict)
    robots: Mapping[str, RobotState] = field(default_factory=dict)
    # (x, y, level) -> brick id
    grid: Mapping[tuple[int, int, int], str] = field(default_factory=dict)
    clock: float = 0.0
    detected: frozenset = frozenset()
    handover_cell: Optional[Cell] = None

    def robot(self, rid: str) -> RobotState:
        try:
            return self.robots[rid]
        except KeyError:
            raise UnknownRobot(rid) from None

    def brick(self, bid: str) -> BrickInstance:
        try:
            return self.bricks[bid]
        except KeyError:
            raise UnknownBrick(bid) from None

    def in_plate(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def occupied(self, x: int, y: int, level: int) -> bool:
        return (x, y, level) in self.grid

    def brick_cells(self, bid: str) -> list[Cell]:
        """Cells the brick currently covers (hand -> holder's end effector)."""
        b = self.brick(bid)
        loc = b.location
        if isinstance(loc, InStore):
            return [(loc.x, loc.y)]
        if isinstance(loc, InHand):
            return [self.robot(loc.robot).eef_cell]
        return footprint_cells(b.brick_type, Placement(loc.x, loc.y, loc.level, b.orientation))

    def store_bricks(self, brick_type: Optional[str] = None) -> list[str]:
        return sorted(
            bid
            for bid, b in self.bricks.items()
            if isinstance(b.location, InStore)
            and (brick_type is None or b.brick_type == brick_type)
        )


# --- queries -----------------------------------------------------------------


def reachable(z: WorldState, robot: str, cell: Cell) -> bool:
    return z.robot(robot).region.contains(tuple(cell))


def region_label(z: WorldState, cell: Cell) -> tuple[str, ...]:
    return tuple(rid for rid in sorted(z.robots) if z.robots[rid].region.contains(cell))


def position_bucket(z: WorldState, cell: Cell) -> str:
    label = region_label(z, cell)
    if len(label) > 1:
        return "shared"
    if len(label) == 1:
        return label[0]
    return "none"


def supported_studs(z: WorldState, brick_type: str, placement: Placement) -> int:
    if placement.level == 0:
        return len(footprint_cells(brick_type, placement))
    below = placement.level - 1
    return sum(1 for x, y in footprint_cells(brick_type, placement) if (x, y, below) in z.grid)


def check_stability(z: WorldState, brick_type: str, placement: Placement) -> bool:
    """Majority-stud rule: ground level, or at least half the studs rest on bricks."""
    cells = footprint_cells(brick_type, placement)
    if placement.level < 0 or not all(z.in_plate(c) for c in cells):
        return False
    if placement.level == 0:
        return True
    return supported_studs(z, brick_type, placement) >= math.ceil(len(cells) / 2)


def is_overhang(z: WorldState, brick_type: str, placement: Placement) -> bool:
    """Stable but not fully supported; such placements need a supporting arm."""
    if placement.level == 0:
        return False
    return supported_studs(z, brick_type, placement) < len(footprint_cells(brick_type, placement))


def footprint_free(z: WorldState, brick_type: str, placement: Placement) -> bool:
    return not any(
        (x, y, placement.level) in z.grid for x, y in footprint_cells(brick_type, placement)
    )


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def sweep(a: Cell, b: Cell) -> list[Cell]:
    """Straight-line cell sweep from ``a`` to ``b`` inclusive, one cell per move."""
    n = chebyshev(a, b)
    if n == 0:
        return [tuple(a)]
    return [
        (round(a[0] + (b[0] - a[0]) * i / n), round(a[1] + (b[1] - a[1]) * i / n))
        for i in range(n + 1)
    ]


# --- trajectories ------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    segments: tuple[tuple[frozenset, float], ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("trajectory needs at least one segment")
        if any(d <= 0 for _, d in self.segments):
            raise ValueError("segment durations must be positive")

    @property
    def duration(self) -> float:
        return sum(d for _, d in self.segments)

    @property
    def cells(self) -> frozenset:
        out: set = set()
        for cells, _ in self.segments:
            out |= cells
        return frozenset(out)


def occupancy(traj: Trajectory, start: float) -> list[tuple[Cell, tuple[float, float]]]:
    """Per-cell occupied time intervals, segments laid end to end from ``start``."""
    if start < 0:
        raise ValueError("start must be >= 0")
    out = []
    t = start
    for cells, d in traj.segments:
        for c in sorted(cells):
            out.append((c, (t, t + d)))
        t += d
    return out


def _variant_multiplier(skill: "Skill", variant: Optional[str]) -> float:
    variants = skill.policy.variants
    if variant is None:
        return variants[0].duration_multiplier
    for v in variants:
        if v.name == variant:
            return v.duration_multiplier
    raise KeyError(f"{skill.name} has no variant {variant!r}")


def _moves(path: list[Cell]) -> list[Cell]:
    # a zero-length move still costs one step in place
    return path[1:] if len(path) > 1 else path


def atom_trajectory(z: WorldState, skill: "Skill", variant: Optional[str] = None) -> Trajectory:
    """Occupied cells and timing of one atomic skill started in state ``z``.

    Transit is split into one segment per change of region label along its sweep;
    every other atom is a single segment.
    """
    b = skill.bindings
    pol = skill.policy
    eff = pol.effect_id
    mult = _variant_multiplier(skill, variant)
    cell_time = float(pol.parameters.get("cell_time", 0.0))
    nominal = pol.nominal_duration * mult

    if eff == "transit":
        start = z.robot(b["robot"]).eef_cell
        path = sweep(start, tuple(b["cell"]))
        moves = _moves(path)
        segments: list[tuple[frozenset, float]] = []
        prev = path[0]
        cur_cells = {prev}
        cur_label = None
        count = 0
        for c in moves:
            lab = region_label(z, c)
            if cur_label is not None and lab != cur_label:
                segments.append((frozenset(cur_cells), nominal * count))
                cur_cells = {prev}
                count = 0
            cur_label = lab
            cur_cells.add(c)
            count += 1
            prev = c
        segments.append((frozenset(cur_cells), nominal * count))
        return Trajectory(tuple(segments))

    if eff == "pick":
        start = z.robot(b["robot"]).eef_cell
        brick = z.brick(b["brick"])
        goal = z.brick_cells(brick.id)[0] if not isinstance(brick.location, InHand) else start
        path = sweep(start, goal)
        return Trajectory(((frozenset(path), nominal + cell_time * mult * (len(path) - 1)),))

    if eff == "place":
        brick = z.brick(b["brick"])
        tgt = _placement(b["target"])
        cells = set(footprint_cells(brick.brick_type, tgt))
        cells.add(z.robot(b["robot"]).eef_cell)
        return Trajectory(((frozenset(cells), nominal),))

    if eff == "support_up":
        start = z.robot(b["robot"]).eef_cell
        path = sweep(start, _placement(b["target"]).cell)
        return Trajectory(((frozenset(path), nominal + cell_time * mult * (len(path) - 1)),))

    if eff == "support_down":
        return Trajectory(((frozenset([z.robot(b["robot"]).eef_cell]), nominal),))

    if eff == "handover":
        giver = z.robot(b["robot"]).eef_cell
        recv = z.robot(b["partner"]).eef_cell
        path = sweep(recv, giver)
        return Trajectory(((frozenset(path), nominal + cell_time * mult * (len(path) - 1)),))

    # perception atoms occupy no workspace cells
    return Trajectory(((frozenset(), nominal),))


def atom_duration(z: WorldState, skill: "Skill", variant: Optional[str] = None) -> float:
    """Same value as ``atom_trajectory(...).duration`` without building cell sets."""
    b = skill.bindings
    pol = skill.policy
    eff = pol.effect_id
    nominal = pol.nominal_duration * _variant_multiplier(skill, variant)
    if eff == "transit":
        return nominal * max(1, chebyshev(z.robot(b["robot"]).eef_cell, tuple(b["cell"])))
    if eff in ("pick", "support_up", "handover"):
        cell_time = float(pol.parameters.get("cell_time", 0.0)) * _variant_multiplier(skill, variant)
        if eff == "pick":
            brick = z.brick(b["brick"])
            start = z.robot(b["robot"]).eef_cell
            goal = start if isinstance(brick.location, InHand) else z.brick_cells(brick.id)[0]
        elif eff == "support_up":
            start = z.robot(b["robot"]).eef_cell
            goal = _placement(b["target"]).cell
        else:
            start = z.robot(b["partner"]).eef_cell
            goal = z.robot(b["robot"]).eef_cell
        return nominal + cell_time * chebyshev(start, goal)
    return nominal


# --- effects -----------------------------------------------------------------


def _placement(v: Any) -> Placement:
    if isinstance(v, Placement):
        return v
    return Placement.from_list(v)


def _with(z: WorldState, **changes: Any) -> WorldState:
    """``dataclasses.replace`` for states without re-running ``__init__`` (hot path)."""
    out = object.__new__(WorldState)
    out.__dict__.update(z.__dict__)
    out.__dict__.update(changes)
    return out


def _set_robot(robots: Mapping[str, RobotState], r: RobotState) -> dict:
    out = dict(robots)
    out[r.id] = r
    return out


def _release(z: WorldState, bid: str) -> tuple[dict, dict, dict]:
    """Detach a brick from wherever it is; returns fresh (bricks, robots, grid)."""
    bricks = dict(z.bricks)
    robots = dict(z.robots)
    grid = dict(z.grid)
    b = bricks[bid]
    loc = b.location
    if isinstance(loc, InHand):
        r = robots[loc.robot]
        robots[r.id] = replace(r, holding=None)
    elif isinstance(loc, OnPlate):
        for x, y in footprint_cells(b.brick_type, Placement(loc.x, loc.y, loc.level, b.orientation)):
            grid.pop((x, y, loc.level), None)
    return bricks, robots, grid


def apply_effect(
    z: WorldState,
    skill: "Skill",
    *,
    check: bool = True,
    clock: Optional[float] = None,
    variant: Optional[str] = None,
    duration: Optional[float] = None,
) -> WorldState:
    """Apply an atomic skill's canonical effect.

    With ``check`` the pre-condition is evaluated first and a failing atom raises
    ``PreconditionViolated``. ``check=False`` produces the forced effect image
    (used for edge feasibility and operator recovery); overlap is still refused.
    The clock advances by the atom's duration unless ``clock`` pins it.
    """
    if skill.kind != "atomic":
        raise WorldError(f"{skill.name} is not atomic")
    if check:
        bad = skill.pre.first_failure(z, skill.bindings)
        if bad is not None:
            raise PreconditionViolated(bad, skill.name)
    dt = atom_duration(z, skill, variant) if duration is None else duration
    nz = _effect(z, skill)
    new_clock = z.clock + dt if clock is None else max(z.clock, clock)
    return _with(nz, clock=new_clock)


def _effect(z: WorldState, skill: "Skill") -> WorldState:
    b = skill.bindings
    eff = skill.policy.effect_id

    if eff == "transit":
        r = z.robot(b["robot"])
        return _with(z, robots=_set_robot(z.robots, replace(r, eef_cell=tuple(b["cell"]))))

    if eff in ("detect", "check"):
        if eff == "detect" and "brick" in b:
            return _with(z, detected=z.detected | {b["brick"]})
        return z

    if eff == "pick":
        r = z.robot(b["robot"])
        brick = z.brick(b["brick"])
        if r.holding is not None and r.holding != brick.id:
            raise PreconditionViolated("holding(robot)=false", skill.name)
        cell = z.brick_cells(brick.id)[0]
        bricks, robots, grid = _release(z, brick.id)
        bricks[brick.id] = replace(
            brick, location=InHand(r.id), wear_count=brick.wear_count + 1
        )
        robots[r.id] = replace(robots[r.id], holding=brick.id, eef_cell=cell)
        return _with(z, bricks=bricks, robots=robots, grid=grid)

    if eff == "place":
        r = z.robot(b["robot"])
        brick = z.brick(b["brick"])
        tgt = _placement(b["target"])
        cells = footprint_cells(brick.brick_type, tgt)
        bricks, robots, grid = _release(z, brick.id)
        for x, y in cells:
            other = grid.get((x, y, tgt.level))
            if other is not None and other != brick.id:
                raise PreconditionViolated(f"occupied({x},{y},{tgt.level})", skill.name)
            if not z.in_plate((x, y)):
                raise PreconditionViolated(f"in_plate({x},{y})", skill.name)
        for x, y in cells:
            grid[(x, y, tgt.level)] = brick.id
        bricks[brick.id] = replace(
            brick, location=OnPlate(tgt.x, tgt.y, tgt.level), orientation=tgt.orientation
        )
        robots[r.id] = replace(robots[r.id], holding=None, eef_cell=tgt.cell)
        return _with(z, bricks=bricks, robots=robots, grid=grid)

    if eff == "support_up":
        r = z.robot(b["robot"])
        tgt = _placement(b["target"])
        return replace(
            z, robots=_set_robot(z.robots, replace(r, eef_cell=tgt.cell, supporting=True))
        )

    if eff == "support_down":
        r = z.robot(b["robot"])
        return _with(z, robots=_set_robot(z.robots, replace(r, supporting=False)))

    if eff == "handover":
        giver = z.robot(b["robot"])
        recv = z.robot(b["partner"])
        brick = z.brick(b["brick"])
        bricks, robots, grid = _release(z, brick.id)
        bricks[brick.id] = replace(brick, location=InHand(recv.id))
        robots[recv.id] = replace(recv, holding=brick.id, eef_cell=giver.eef_cell)
        return _with(z, bricks=bricks, robots=robots, grid=grid)

    raise WorldError(f"unknown effect {eff!r}")


def drop_brick(z: WorldState, bid: str, clock: Optional[float] = None) -> WorldState:
    """Failure perturbation: the brick falls back to its store position."""
    brick = z.brick(bid)
    bricks, robots, grid = _release(z, bid)
    if brick.store is None:
        raise WorldError(f"brick {bid} has no store position")
    bricks[bid] = replace(brick, location=InStore(*brick.store))
    out = _with(z, bricks=bricks, robots=robots, grid=grid)
    if clock is not None:
        out = _with(out, clock=max(z.clock, clock))
    return out


# --- configuration -----------------------------------------------------------


def world_from_dict(cfg: Mapping[str, Any]) -> WorldState:
    """Build the initial state from a world configuration mapping."""
    width, height = cfg.get("plate", [48, 48])
    robots = {}
    for r in cfg["robots"]:
        region = Region(tuple(tuple(int(v) for v in rect) for rect in r["region"]))
        home = tuple(r["home"])
        robots[r["id"]] = RobotState(
            id=r["id"],
            region=region,
            eef_cell=home,
            gripper_kind=r.get("gripper", "parallel"),
            max_grip_width=int(r.get("max_grip_width", 2)),
        )
    bricks = {}
    for b in cfg.get("bricks", []):
        x, y = b["store"]
        parse_brick_type(b["type"])
        bricks[b["id"]] = BrickInstance(
            id=b["id"],
            brick_type=b["type"],
            location=InStore(int(x), int(y)),
            wear_count=int(b.get("wear", 0)),
            store=(int(x), int(y)),
        )
    hc = cfg.get("handover_cell")
    return WorldState(
        width=int(width),
        height=int(height),
        bricks=bricks,
        robots=robots,
        handover_cell=tuple(hc) if hc is not None else None,
    )


def data_path(name: str) -> Path:
    """Path of a packaged data file (``world.json``, ``faucet.json``, ...)."""
    return Path(__file__).resolve().parent / "data" / name


def default_world() -> WorldState:
    return load_world(data_path("world.json"))


def load_world(path: Union[str, Path]) -> WorldState:
    with open(path, encoding="utf-8") as f:
        return world_from_dict(json.load(f))


def state_signature(z: WorldState) -> tuple:
    """Hashable digest of everything that can affect future feasibility or cost."""
    return (
        tuple(sorted((k, v.location, v.orientation) for k, v in z.bricks.items())),
        tuple(sorted((k, r.eef_cell, r.holding, r.supporting) for k, r in z.robots.items())),
    )
