"""Per-attempt skill logs: records, an append-only store, replay and summaries.

On disk a store is a directory::

    records.jsonl          one JSON object per line; "type" is "skill" or "run"
    channels/<run>.txt     per-run channel blocks, one per skill record

A channel block is a header line ``# record <id> rate=<hz> n=<samples>
columns=<c1>,<c2>,...`` followed by ``n`` lines of space-separated values
written with ``repr`` so floats read back exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Union

from . import world as W
from .executor import ExecutionTrace, decode_bindings, plan_digest
from .planner import Plan
from .skills import SkillLibrary, bind, default_library

CHANNELS = ("joint_0", "joint_1", "joint_2", "joint_3", "joint_4", "joint_5", "force_z", "command")
SAMPLE_RATE = 100.0


class LogError(Exception):
    pass


class MismatchedRun(LogError):
    pass


class IncompleteRun(LogError):
    pass


class RunExists(LogError):
    pass


@dataclass(frozen=True)
class SkillLogRecord:
    run_id: str
    skill: str
    verb: str
    entities: Mapping[str, Any]
    step: int
    node: str
    policy_parameters: Mapping[str, Any]
    variant: Optional[str]
    start_ms: int
    end_ms: int
    pre_results: tuple
    post_results: tuple
    outcome: str
    effect: str
    bindings: Mapping[str, Any]
    retry_group: Optional[int] = None
    object_class: str = ""
    observation: Mapping[str, Any] = field(default_factory=dict)
    channels: Mapping[str, tuple] = field(default_factory=dict)
    sample_rate: float = SAMPLE_RATE
    record_id: int = -1

    def __post_init__(self) -> None:
        if self.end_ms < self.start_ms:
            raise ValueError("record ends before it starts")

    @property
    def start(self) -> float:
        return self.start_ms / 1000

    @property
    def end(self) -> float:
        return self.end_ms / 1000

    @property
    def duration(self) -> float:
        return (self.end_ms - self.start_ms) / 1000

    @property
    def robot(self) -> str:
        return self.entities.get("robot", "")

    @property
    def success(self) -> bool:
        return self.outcome in ("success", "recovered")

    def meta_json(self) -> dict:
        d = asdict(self)
        d.pop("channels")
        d["pre_results"] = [list(r) for r in self.pre_results]
        d["post_results"] = [list(r) for r in self.post_results]
        d["type"] = "skill"
        return d

    @classmethod
    def from_meta(cls, d: Mapping[str, Any], channels: Mapping[str, tuple]) -> "SkillLogRecord":
        d = dict(d)
        d.pop("type", None)
        d["pre_results"] = tuple(tuple(r) for r in d["pre_results"])
        d["post_results"] = tuple(tuple(r) for r in d["post_results"])
        return cls(**d, channels=dict(channels))


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    plan_digest: str
    mode: str
    seed: int
    outcome: str
    n_records: int
    survival_length: int
    wall_ms: int
    initial_offsets: Mapping[str, list] = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["type"] = "run"
        return d


# --- channel synthesis ---------------------------------------------------------

_FORCE = {"Pick": -4.0, "PlaceDown": -10.0, "PlaceUp": 10.0, "SupportUp": 6.0, "Handover": -3.0}


def synthesize_channels(rec: SkillLogRecord, rate: float = SAMPLE_RATE) -> dict[str, tuple]:
    """Smooth joint sweeps and a per-verb force profile; shapes only, not dynamics."""
    n = int(math.floor(rec.duration * rate)) + 1
    cell = rec.bindings.get("cell") or (rec.bindings.get("target") or {}).get("placement") or [0, 0]
    gx, gy = (float(cell[0]) / 48.0, float(cell[1]) / 48.0)
    amp = _FORCE.get(rec.verb, 0.0)
    cols: dict[str, list] = {c: [] for c in CHANNELS}
    for i in range(n):
        u = i / (n - 1) if n > 1 else 1.0
        s = (1 - math.cos(math.pi * u)) / 2
        for k in range(6):
            cols[f"joint_{k}"].append(round(0.3 * (k + 1) * (gx - 0.5) * s + 0.1 * k * gy, 6))
        cols["force_z"].append(round(amp * math.sin(math.pi * u) ** 2, 6) if rec.outcome != "failed" else 0.0)
        cols["command"].append(float(rec.step) if u < 1.0 else 0.0)
    return {k: tuple(v) for k, v in cols.items()}


# --- recording -----------------------------------------------------------------


def record(trace: ExecutionTrace, plan: Plan, *, channels: bool = True) -> list[SkillLogRecord]:
    """One record per atom attempt; a recovered failure yields two records in one retry group."""
    if trace.plan_digest != plan_digest(plan):
        raise MismatchedRun(f"trace {trace.run_id} was produced by a different plan")
    z0 = trace.initial_state
    out = []
    for a in trace.attempts:
        b = a.bindings
        ent = {"robot": a.robot}
        if "brick" in b:
            ent["object"] = b["brick"]
        if "partner" in b:
            ent["tool"] = b["partner"]
        cls_ = ""
        if z0 is not None and isinstance(b.get("brick"), str) and b["brick"] in z0.bricks:
            cls_ = z0.bricks[b["brick"]].brick_type
        rec = SkillLogRecord(
            run_id=trace.run_id,
            skill=a.skill,
            verb=a.verb,
            entities=ent,
            step=a.step,
            node=a.node,
            policy_parameters=dict(a.policy_parameters),
            variant=a.variant,
            start_ms=a.start_ms,
            end_ms=a.end_ms,
            pre_results=tuple(tuple(r) for r in a.pre_results),
            post_results=tuple(tuple(r) for r in a.post_results),
            outcome=a.outcome,
            effect=a.effect,
            bindings=dict(b),
            retry_group=a.retry_group,
            object_class=cls_,
            observation=dict(a.observation),
        )
        if channels:
            rec = replace(rec, channels=synthesize_channels(rec))
        out.append(rec)
    return out


def run_record(trace: ExecutionTrace, n_records: int) -> RunRecord:
    offsets = {}
    if trace.initial_state is not None:
        offsets = {k: list(b.offset) for k, b in sorted(trace.initial_state.bricks.items()) if b.offset != (0.0, 0.0)}
    return RunRecord(
        run_id=trace.run_id,
        plan_digest=trace.plan_digest,
        mode=trace.mode,
        seed=trace.seed,
        outcome=str(trace.outcome),
        n_records=n_records,
        survival_length=trace.survival_length,
        wall_ms=trace.wall_ms,
        initial_offsets=offsets,
    )


# --- store -----------------------------------------------------------------------


def _write_channels(f, rec: SkillLogRecord) -> None:
    cols = [c for c in CHANNELS if c in rec.channels]
    n = len(rec.channels[cols[0]]) if cols else 0
    f.write(f"# record {rec.record_id} rate={rec.sample_rate!r} n={n} columns={','.join(cols)}\n")
    for i in range(n):
        f.write(" ".join(repr(float(rec.channels[c][i])) for c in cols) + "\n")


def _read_channels(path: Path) -> dict[int, dict[str, tuple]]:
    out: dict[int, dict[str, tuple]] = {}
    if not path.exists():
        return out
    lines = path.read_text(encoding="utf-8").splitlines()
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if not head or head[0] != "#":
            raise LogError(f"{path}: expected a block header at line {i + 1}")
        rid = int(head[2])
        n = int(head[4].split("=")[1])
        cols = head[5].split("=", 1)[1].split(",") if head[5] != "columns=" else []
        rows = [tuple(float(v) for v in ln.split()) for ln in lines[i + 1 : i + 1 + n]]
        if len(rows) != n:
            raise LogError(f"{path}: truncated block for record {rid}")
        out[rid] = {c: tuple(r[j] for r in rows) for j, c in enumerate(cols)}
        i += 1 + n
    return out


class LogStore:
    """Append-only record sequence, optionally mirrored to a directory."""

    def __init__(self, root: Union[str, Path, None] = None):
        self.root = Path(root) if root is not None else None
        self._records: list[SkillLogRecord] = []
        self._runs: dict[str, RunRecord] = {}
        self._index: dict[tuple[str, int, str], list[int]] = {}
        if self.root is not None:
            (self.root / "channels").mkdir(parents=True, exist_ok=True)

    # reads
    @property
    def records(self) -> tuple[SkillLogRecord, ...]:
        return tuple(self._records)

    @property
    def runs(self) -> dict[str, RunRecord]:
        return dict(self._runs)

    def __len__(self) -> int:
        return len(self._records)

    def next_id(self) -> int:
        return self._records[-1].record_id + 1 if self._records else 0

    def lookup(self, run: Optional[str] = None, step: Optional[int] = None, skill: Optional[str] = None) -> list[SkillLogRecord]:
        if run is not None and step is not None and skill is not None:
            return [self._records[i] for i in self._index.get((run, step, skill), [])]
        return [
            r
            for r in self._records
            if (run is None or r.run_id == run) and (step is None or r.step == step) and (skill is None or r.skill == skill)
        ]

    # writes
    def append_run(self, records: Iterable[SkillLogRecord], run: RunRecord) -> list[SkillLogRecord]:
        """Append a run's records and its summary; a run id is accepted once."""
        if run.run_id in self._runs:
            raise RunExists(f"run {run.run_id!r} already recorded")
        recs = list(records)
        if any(r.run_id != run.run_id for r in recs):
            raise MismatchedRun("records and run summary disagree on the run id")
        base = self.next_id()
        recs = [replace(r, record_id=base + i) for i, r in enumerate(recs)]
        if self.root is not None:
            with open(self.root / "channels" / f"{run.run_id}.txt", "a", encoding="utf-8") as f:
                for r in recs:
                    _write_channels(f, r)
            with open(self.root / "records.jsonl", "a", encoding="utf-8") as f:
                for r in recs:
                    f.write(json.dumps(r.meta_json(), sort_keys=True) + "\n")
                f.write(json.dumps(run.to_json(), sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
        for r in recs:
            self._add(r)
        self._runs[run.run_id] = run
        return recs

    def add_trace(self, trace: ExecutionTrace, plan: Plan, *, channels: bool = True) -> list[SkillLogRecord]:
        recs = record(trace, plan, channels=channels)
        return self.append_run(recs, run_record(trace, len(recs)))

    def _add(self, r: SkillLogRecord) -> None:
        if self._records and r.record_id <= self._records[-1].record_id:
            raise LogError("record ids must strictly increase")
        self._index.setdefault((r.run_id, r.step, r.skill), []).append(len(self._records))
        self._records.append(r)

    @classmethod
    def open(cls, root: Union[str, Path]) -> "LogStore":
        """Load a store directory; a trailing partial line (in-progress append) is ignored."""
        root = Path(root)
        store = cls.__new__(cls)
        store.root = root
        store._records, store._runs, store._index = [], {}, {}
        path = root / "records.jsonl"
        metas: list[dict] = []
        if path.exists():
            text = path.read_text(encoding="utf-8")
            for ln in text.split("\n")[:-1] if not text.endswith("\n") else text.splitlines():
                if not ln.strip():
                    continue
                d = json.loads(ln)
                if d.get("type") == "run":
                    d.pop("type")
                    store._runs[d["run_id"]] = RunRecord(**d)
                else:
                    metas.append(d)
        chans: dict[str, dict[int, dict]] = {}
        for d in metas:
            run = d["run_id"]
            if run not in chans:
                chans[run] = _read_channels(root / "channels" / f"{run}.txt")
            store._add(SkillLogRecord.from_meta(d, chans[run].get(d["record_id"], {})))
        return store


# --- replay & summaries -------------------------------------------------------------


def replay(store: LogStore, run: str, z0: W.WorldState, library: Optional[SkillLibrary] = None) -> W.WorldState:
    """Re-apply a run's logged effects in record order."""
    library = library or default_library()
    summary = store.runs.get(run)
    recs = store.lookup(run=run)
    if summary is None:
        raise IncompleteRun(f"run {run!r} has no summary record")
    if len(recs) != summary.n_records:
        raise IncompleteRun(f"run {run!r}: {len(recs)} of {summary.n_records} records present")
    z = z0
    if summary.initial_offsets:
        bricks = dict(z.bricks)
        for bid, off in summary.initial_offsets.items():
            bricks[bid] = replace(bricks[bid], offset=tuple(off))
        z = replace(z, bricks=bricks)
    for r in recs:
        if r.effect == "none":
            continue
        t = r.end_ms / 1000
        if r.effect == "dropped":
            z = W.drop_brick(z, r.bindings["brick"], clock=t)
        else:
            atom = bind(library.atomic[r.skill], decode_bindings(r.bindings))
            z = W.apply_effect(z, atom, check=False, clock=t)
    return z


def percentile(values: list[float], q: float) -> float:
    """Linear-interpolation percentile of ``values`` (0 <= q <= 100)."""
    if not values:
        return math.nan
    xs = sorted(values)
    pos = (len(xs) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


@dataclass(frozen=True)
class GroupStats:
    count: int
    successes: int
    p50: float
    p90: float
    p99: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.count if self.count else 0.0


def summarize(
    store: LogStore,
    filter: Union[Mapping[str, Any], Callable[[SkillLogRecord], bool], None] = None,
) -> dict[tuple[str, str, str], GroupStats]:
    """Counts, success rates and duration percentiles per (verb, robot, object class)."""
    if filter is None:
        keep = lambda r: True  # noqa: E731
    elif callable(filter):
        keep = filter
    else:
        crit = dict(filter)
        keep = lambda r: all(  # noqa: E731
            (r.robot if k == "robot" else r.run_id if k == "run" else getattr(r, k)) == v for k, v in crit.items()
        )
    groups: dict[tuple[str, str, str], list[SkillLogRecord]] = {}
    for r in store.records:
        if keep(r):
            groups.setdefault((r.verb, r.robot, r.object_class), []).append(r)
    out = {}
    for k in sorted(groups):
        rs = groups[k]
        ds = [r.duration for r in rs]
        out[k] = GroupStats(
            len(rs),
            sum(r.outcome == "success" for r in rs),
            percentile(ds, 50),
            percentile(ds, 90),
            percentile(ds, 99),
        )
    return out


def total_counts(stats: Mapping[Any, GroupStats]) -> tuple[int, int]:
    return sum(s.count for s in stats.values()), sum(s.successes for s in stats.values())
