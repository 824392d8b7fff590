"""Regenerate the packaged default world and the four golden design files.

Layouts are procedural: bricks are stacked inside a per-design bounding box
under the stability rule, and each candidate design is kept only if the
planner grounds it in the default world. Brick counts per design are fixed.

    python scripts/make_designs.py
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from skillgraph import world as W
from skillgraph.planner import Planner, PlanningError
from skillgraph.skills import default_library
from skillgraph.taskspec import RELATIONS, AssemblyStep, RelativeConstraint, ground_relative, parse_task

DATA = Path(__file__).resolve().parents[1] / "src" / "skillgraph" / "data"

# name -> (brick count, bounding box x0, y0, x1, y1, max level, share of 2x4)
DESIGNS = {
    "Faucet": (14, 16, 20, 30, 26, 5, 0.6),
    "Fish": (29, 12, 18, 36, 28, 4, 0.55),
    "Vessel": (36, 12, 16, 36, 30, 4, 0.6),
    "Guitar": (24, 14, 14, 34, 32, 3, 0.6),
}


def default_world() -> dict:
    bricks = []
    n = 0
    for side in ("L", "R"):
        def xs(x):
            return x if side == "L" else 47 - x

        for row in (-7, -5):
            for x in range(1, 15, 2):
                n += 1
                bricks.append({"id": f"b{n}", "type": "2x4", "store": [xs(x), row]})
        for x in range(1, 21, 2):
            n += 1
            bricks.append({"id": f"b{n}", "type": "2x2", "store": [xs(x), -3]})
    return {
        "plate": [48, 48],
        "handover_cell": [24, 4],
        "robots": [
            {"id": "r1", "region": [[0, -8, 30, 48]], "home": [8, 20], "gripper": "parallel", "max_grip_width": 2},
            {"id": "r2", "region": [[18, -8, 48, 48]], "home": [39, 20], "gripper": "suction", "max_grip_width": 2},
        ],
        "bricks": bricks,
    }


def _fits(z: W.WorldState, bt: str, p: W.Placement, box) -> bool:
    x0, y0, x1, y1 = box
    cells = W.footprint_cells(bt, p)
    if not all(x0 <= x < x1 and y0 <= y < y1 for x, y in cells):
        return False
    return W.footprint_free(z, bt, p) and W.check_stability(z, bt, p)


def generate(name: str, seed: int) -> dict:
    count, x0, y0, x1, y1, max_level, p24 = DESIGNS[name]
    rng = random.Random(f"{name}:{seed}")
    z = W.WorldState(width=48, height=48)
    steps: list[tuple[str, W.Placement]] = []
    while len(steps) < count:
        bt = "2x4" if rng.random() < p24 else "2x2"
        orient = rng.choice((0, 90)) if bt == "2x4" else 0
        top = max((p.level for _, p in steps), default=-1)
        cands = []
        for lv in range(0, min(top + 1, max_level - 1) + 1):
            for x in range(x0, x1):
                for y in range(y0, y1):
                    p = W.Placement(x, y, lv, orient)
                    if _fits(z, bt, p, (x0, y0, x1, y1)):
                        cands.append(p)
        if not cands:
            continue
        # favour building on what exists, on even studs, upward
        def score(p):
            s = p.level * 2.0 + rng.random() * 3.0
            if p.x % 2 == 0 and p.y % 2 == 0:
                s += 2.0
            if p.level == 0 and steps:
                near = min(abs(p.x - q.x) + abs(p.y - q.y) for _, q in steps)
                s -= 0.5 * near
            return s

        p = max(cands, key=score)
        steps.append((bt, p))
        bid = f"d{len(steps)}"
        cells = W.footprint_cells(bt, p)
        grid = dict(z.grid)
        for c in cells:
            grid[(c[0], c[1], p.level)] = bid
        z = W.WorldState(width=48, height=48, grid=grid)

    doc_steps = []
    placed: dict[int, W.Placement] = {}
    for i, (bt, p) in enumerate(steps, start=1):
        target = {"abs": [p.x, p.y, p.level]}
        if p.level > 0 and rng.random() < 0.5:
            for j in range(i - 1, 0, -1):
                if placed[j].level != p.level - 1:
                    continue
                hit = None
                for rel in RELATIONS:
                    st = AssemblyStep(i, bt, RelativeConstraint(j, rel), p.orientation)
                    if ground_relative(st, placed) == p:
                        hit = rel
                        break
                if hit:
                    target = {"relative": {"anchor": j, "relation": hit}}
                    break
        d = {"index": i, "brick_type": bt, "target": target}
        if p.orientation:
            d["orientation"] = p.orientation
        doc_steps.append(d)
        placed[i] = p
    return {"design_name": name, "steps": doc_steps}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    wdoc = default_world()
    (args.out / "world.json").write_text(json.dumps(wdoc, indent=1) + "\n")
    z0 = W.world_from_dict(wdoc)
    planner = Planner(default_library(), weight=10.0, max_expansions=1500)
    for name in DESIGNS:
        for seed in range(200):
            doc = generate(name, seed)
            task = parse_task(doc)
            try:
                plan = planner.plan(task, z0)
            except PlanningError as e:
                print(f"{name} seed {seed}: {e}")
                continue
            metas = sorted({g.meta for g in plan.grounded})
            robots = sorted({g.robot for g in plan.grounded})
            if len(robots) < 2:
                continue
            (args.out / f"{name.lower()}.json").write_text(json.dumps(doc, indent=1) + "\n")
            print(f"{name}: seed {seed}, {len(task)} steps, cost {plan.total_cost:.1f}, metas {metas}")
            break
        else:
            raise SystemExit(f"could not generate a plannable {name}")


if __name__ == "__main__":
    main()
