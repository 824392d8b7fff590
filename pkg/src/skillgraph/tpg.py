"""Temporal Plan Graph: a precedence DAG over per-robot action segments.

A sequential plan is replayed once to fix every atom's start state. Each atom
becomes one node on its robot's lane, except Transit, which is split into one
node per change of region label along its sweep. Nodes on different lanes are
ordered (earlier plan position first) when they belong to the same grounded
step, share workspace cells, or when one placement rests on another.
"""

from __future__ import annotations

import graphlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

from . import world as W
from .planner import Plan, expand_grounded
from .skills import Skill, SkillLibrary, bind, default_library

EDGE_KINDS = ("intra", "inter")


class TpgError(Exception):
    pass


class CyclicDependency(TpgError):
    pass


@dataclass(frozen=True)
class TpgNode:
    id: str
    robot: str
    atom: Skill
    duration: float
    step_index: int
    seq: int
    # position of the source atom in its grounded step's expansion
    body_index: int
    cells: frozenset = frozenset()
    segment: int = 0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError(f"node {self.id}: duration must be > 0")

    @property
    def label(self) -> str:
        return self.atom.name if not self.segment else f"{self.atom.name}#{self.segment}"

    @property
    def duration_ms(self) -> int:
        return round(self.duration * 1000)


@dataclass(frozen=True)
class TpgEdge:
    src: str
    dst: str
    kind: str
    reason: str = ""

    def __post_init__(self) -> None:
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")


@dataclass(frozen=True)
class Tpg:
    nodes: tuple[TpgNode, ...]
    edges: tuple[TpgEdge, ...]
    lanes: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def sources(self) -> dict[str, str]:
        return {r: ids[0] for r, ids in self.lanes.items() if ids}

    def node(self, nid: str) -> TpgNode:
        return self._index()[nid]

    def _index(self) -> dict[str, TpgNode]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_idx", idx)
        return idx

    def predecessors(self) -> dict[str, set[str]]:
        preds: dict[str, set[str]] = {n.id: set() for n in self.nodes}
        for e in self.edges:
            preds[e.dst].add(e.src)
        return preds

    def successors(self) -> dict[str, set[str]]:
        succ: dict[str, set[str]] = {n.id: set() for n in self.nodes}
        for e in self.edges:
            succ[e.src].add(e.dst)
        return succ

    def inter_edges(self) -> list[TpgEdge]:
        return [e for e in self.edges if e.kind == "inter"]

    def sequential_duration(self) -> float:
        return sum(n.duration for n in self.nodes)

    def to_json(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "robot": n.robot,
                    "skill": n.atom.name,
                    "segment": n.segment,
                    "step": n.step_index,
                    "seq": n.seq,
                    "duration": n.duration,
                    "cells": sorted(list(c) for c in n.cells),
                }
                for n in self.nodes
            ],
            "edges": [{"from": e.src, "to": e.dst, "kind": e.kind, "reason": e.reason} for e in self.edges],
            "lanes": {r: list(ids) for r, ids in self.lanes.items()},
        }

    def export(self) -> str:
        """Node/edge list, one record per line."""
        lines = []
        for n in self.nodes:
            lines.append(f"node {n.id} robot={n.robot} skill={n.label} step={n.step_index} duration={n.duration:.3f}")
        for e in self.edges:
            lines.append(f"edge {e.src} -> {e.dst} kind={e.kind} reason={e.reason}")
        return "\n".join(lines) + "\n"


def _transit_waypoints(z: W.WorldState, atom: Skill) -> list[W.Cell]:
    """End cells of the region-label segments of a Transit sweep."""
    start = z.robot(atom.bindings["robot"]).eef_cell
    goal = tuple(atom.bindings["cell"])
    path = W.sweep(start, goal)
    if len(path) == 1:
        return [goal]
    ends = []
    label = W.region_label(z, path[1])
    for prev, c in zip(path[1:], path[2:]):
        lab = W.region_label(z, c)
        if lab != label:
            ends.append(prev)
            label = lab
    ends.append(goal)
    return ends


def build_tpg(plan: Plan, z0: W.WorldState, library: Optional[SkillLibrary] = None) -> Tpg:
    library = library or default_library()
    nodes: list[TpgNode] = []
    z = z0
    for g in plan.grounded:
        for bi, atom in enumerate(expand_grounded(g, library)):
            if atom.policy.effect_id == "transit":
                parts = [bind(library.atomic[atom.name], {**atom.bindings, "cell": c}) for c in _transit_waypoints(z, atom)]
            else:
                parts = [atom]
            for si, part in enumerate(parts):
                traj = W.atom_trajectory(z, part)
                nodes.append(
                    TpgNode(
                        id=f"n{len(nodes)}",
                        robot=part.bindings["robot"],
                        atom=part,
                        duration=traj.duration,
                        step_index=g.step_index,
                        seq=len(nodes),
                        body_index=bi,
                        cells=traj.cells,
                        segment=si if len(parts) > 1 else 0,
                    )
                )
                z = W.apply_effect(z, part)

    edges: dict[tuple[str, str], TpgEdge] = {}

    def add(a: TpgNode, b: TpgNode, kind: str, reason: str) -> None:
        if a.id != b.id and (a.id, b.id) not in edges:
            edges[(a.id, b.id)] = TpgEdge(a.id, b.id, kind, reason)

    lanes: dict[str, list[TpgNode]] = {}
    for n in nodes:
        lanes.setdefault(n.robot, []).append(n)
    for lane in lanes.values():
        for a, b in zip(lane, lane[1:]):
            add(a, b, "intra", "lane")

    # consecutive atoms of one grounded step handed across robots
    for a, b in zip(nodes, nodes[1:]):
        if a.step_index == b.step_index and a.robot != b.robot:
            add(a, b, "inter", "step")

    # atoms acting on a partner robot wait for, and hold back, the partner's lane
    for n in nodes:
        partner = n.atom.bindings.get("partner")
        if partner is None or partner == n.robot:
            continue
        lane = lanes.get(partner, [])
        before = [m for m in lane if m.seq < n.seq]
        after = [m for m in lane if m.seq > n.seq]
        if before:
            add(before[-1], n, "inter", "partner")
        if after:
            add(n, after[0], "inter", "partner")

    # cell-occupancy conflicts
    for a, b in itertools.combinations(nodes, 2):
        if a.robot != b.robot and a.cells & b.cells:
            add(a, b, "inter", "occupancy")

    # placement support
    place_node: dict[int, TpgNode] = {}
    for n in nodes:
        if n.atom.policy.effect_id == "place":
            place_node[n.step_index] = n
    footprint = {}
    for g in plan.grounded:
        bt = z0.brick(g.brick).brick_type
        footprint[g.step_index] = (g.target.level, set(W.footprint_cells(bt, g.target)))
    for k, m in itertools.permutations(place_node, 2):
        lk, ck = footprint[k]
        lm, cm = footprint[m]
        if lm == lk + 1 and ck & cm and place_node[k].robot != place_node[m].robot:
            if place_node[k].seq < place_node[m].seq:
                add(place_node[k], place_node[m], "inter", "support")

    tpg = Tpg(
        tuple(nodes),
        tuple(edges[k] for k in sorted(edges, key=lambda p: (int(p[0][1:]), int(p[1][1:])))),
        {r: tuple(n.id for n in lane) for r, lane in sorted(lanes.items())},
    )
    topological_order(tpg)
    return tpg


def topological_order(tpg: Tpg) -> list[str]:
    ts = graphlib.TopologicalSorter({nid: sorted(p) for nid, p in tpg.predecessors().items()})
    try:
        return list(ts.static_order())
    except graphlib.CycleError as e:
        raise CyclicDependency(str(e)) from e


def earliest_starts(tpg: Tpg) -> dict[str, float]:
    preds = tpg.predecessors()
    start: dict[str, float] = {}
    for nid in topological_order(tpg):
        start[nid] = max((start[p] + tpg.node(p).duration for p in preds[nid]), default=0.0)
    return start


def makespan(tpg: Tpg) -> float:
    """Longest node-weighted path."""
    if not tpg.nodes:
        return 0.0
    start = earliest_starts(tpg)
    return max(start[n.id] + n.duration for n in tpg.nodes)


@dataclass(frozen=True)
class Dispatch:
    queues: Mapping[str, tuple[str, ...]]
    predecessors: Mapping[str, frozenset]

    def ready(self, nid: str, completed: Any) -> bool:
        """Executable once every incoming dependency has completed."""
        return self.predecessors[nid] <= set(completed)

    def heads(self, completed: Any) -> dict[str, str]:
        """Per robot, the next queued node if it is executable now."""
        done = set(completed)
        out = {}
        for r, q in self.queues.items():
            for nid in q:
                if nid not in done:
                    if self.ready(nid, done):
                        out[r] = nid
                    break
        return out


def dispatch_order(tpg: Tpg) -> Dispatch:
    topological_order(tpg)
    return Dispatch(
        queues={r: tuple(ids) for r, ids in tpg.lanes.items()},
        predecessors={k: frozenset(v) for k, v in tpg.predecessors().items()},
    )


def schedule(tpg: Tpg) -> dict[str, tuple[float, float]]:
    """Earliest (start, end) per node under zero-failure dispatch."""
    start = earliest_starts(tpg)
    return {n.id: (start[n.id], start[n.id] + n.duration) for n in tpg.nodes}


def tpg_from_edges(
    durations: Mapping[str, float],
    robots: Mapping[str, str],
    edges: list[tuple[str, str]],
    make_atom: Optional[Callable[[str], Skill]] = None,
) -> Tpg:
    """Small hand-built graphs for analysis; node atoms are inert Check atoms."""
    lib = default_library()
    nodes = []
    for i, (nid, d) in enumerate(durations.items()):
        atom = make_atom(nid) if make_atom else bind(lib.atomic["Check"], {"robot": robots[nid], "brick": nid})
        nodes.append(TpgNode(nid, robots[nid], atom, d, i, i, 0))
    lanes: dict[str, list[str]] = {}
    for n in nodes:
        lanes.setdefault(n.robot, []).append(n.id)
    es = []
    for r, ids in lanes.items():
        es += [TpgEdge(a, b, "intra", "lane") for a, b in zip(ids, ids[1:])]
    es += [TpgEdge(a, b, "inter", "given") for a, b in edges]
    tpg = Tpg(tuple(nodes), tuple(es), {r: tuple(v) for r, v in sorted(lanes.items())})
    topological_order(tpg)
    return tpg


def save_tpg(tpg: Tpg, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(tpg.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")
