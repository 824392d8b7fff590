"""``skillgraph`` command line: plan, execute, batch, analyze, adapt, render.

Exit codes: 0 ok, 2 unreadable or schema-invalid input, 3 no feasible plan
(including inventory deficits), 4 planner budget exhausted, 5 execution-engine
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import world as W
from .adapt import (
    FailureHistory,
    RiskModel,
    estimate_risk,
    insert_checks,
    reallocate,
    update_evaluators,
)
from .datalog import LogStore, summarize
from .executor import (
    EngineInvariantViolation,
    ExecutionConfig,
    FailureModel,
    InvalidInput,
    Recovery,
    execute,
    parse_trace_events,
    run_batch,
    summarize_outcomes,
)
from .planner import BudgetExhausted, NoFeasiblePlan, Plan, Planner
from .render import bars_from_events, bars_from_tpg, gantt_svg, gantt_text
from .skills import Evaluator, LibraryError, SkillError, default_library, load_library
from .taskspec import SchemaViolation, TaskError, load_task
from .tpg import build_tpg

EXIT_OK, EXIT_SCHEMA, EXIT_INFEASIBLE, EXIT_BUDGET, EXIT_ENGINE = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        self.code = code
        super().__init__(msg)


def _read_json(path: str) -> object:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(EXIT_SCHEMA, f"{path}: {e}") from e


def _world(path: Optional[str]) -> W.WorldState:
    if path is None:
        return W.default_world()
    doc = _read_json(path)
    try:
        return W.world_from_dict(doc)  # type: ignore[arg-type]
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_SCHEMA, f"{path}: bad world file: {e}") from e


def _library(path: Optional[str]):
    try:
        return load_library(path) if path else default_library()
    except (LibraryError, SkillError, OSError, json.JSONDecodeError, KeyError) as e:
        raise CliError(EXIT_SCHEMA, f"library: {e}") from e


def _task(path: str):
    try:
        return load_task(path)
    except OSError as e:
        raise CliError(EXIT_SCHEMA, f"{path}: {e}") from e
    except SchemaViolation as e:
        raise CliError(EXIT_SCHEMA, f"{path}: {e}") from e


def _plan(path: str) -> Plan:
    doc = _read_json(path)
    try:
        return Plan.from_json(doc)  # type: ignore[arg-type]
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_SCHEMA, f"{path}: bad plan file: {e}") from e


def _evaluators(path: Optional[str]) -> dict[str, Evaluator]:
    if not path:
        return {}
    doc = _read_json(path)
    try:
        return {k: Evaluator.from_json(v) for k, v in doc.items()}  # type: ignore[union-attr]
    except (LibraryError, AttributeError, ValueError, TypeError) as e:
        raise CliError(EXIT_SCHEMA, f"{path}: bad evaluator file: {e}") from e


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _grounding_table(plan: Plan) -> str:
    rows = [f"{'step':>4}  {'meta':<18} {'robot':<5} {'partner':<7} {'brick':<6} {'grasp':<12} {'cost':>8}"]
    for g in plan.grounded:
        rows.append(
            f"{g.step_index:>4}  {g.meta:<18} {g.robot:<5} {g.partner or '-':<7} {g.brick:<6} {g.grasp_config:<12} {g.expected_duration:8.2f}"
        )
    rows.append(f"total cost {plan.total_cost:.3f} s over {len(plan)} steps")
    return "\n".join(rows) + "\n"


# --- plan ---------------------------------------------------------------------------


def cmd_plan(a: argparse.Namespace) -> int:
    task = _task(a.task)
    z0 = _world(a.world)
    lib = _library(a.library)
    planner = Planner(lib, _evaluators(a.evaluators), weight=a.weight, max_expansions=a.max_expansions)
    try:
        plan = planner.plan(task, z0)
    except NoFeasiblePlan as e:
        raise CliError(EXIT_INFEASIBLE, str(e)) from e
    except BudgetExhausted as e:
        raise CliError(EXIT_BUDGET, str(e)) from e
    except TaskError as e:
        raise CliError(EXIT_INFEASIBLE, str(e)) from e
    if a.out:
        plan.save(a.out)
    sys.stdout.write(_grounding_table(plan))
    return EXIT_OK


# --- execute / batch ------------------------------------------------------------------


def _kv(items: Sequence[str], what: str) -> dict[str, str]:
    out = {}
    for it in items or ():
        if "=" not in it:
            raise CliError(EXIT_SCHEMA, f"--{what} expects KEY=VALUE, got {it!r}")
        k, v = it.split("=", 1)
        out[k] = v
    return out


def _config(a: argparse.Namespace, seed: int) -> ExecutionConfig:
    try:
        base = {}
        for k, v in _kv(a.fail, "fail").items():
            verb, _, robot = k.partition(":")
            base[(verb, robot or "*")] = float(v)
        per_brick = {k: float(v) for k, v in _kv(a.brick_fail, "brick-fail").items()}
        fm = FailureModel(base=base, per_brick=per_brick, per_brick_wear=a.wear)
        mean = tuple(float(x) for x in a.noise_mean.split(",")) if a.noise_mean else (0.0, 0.0)
        return ExecutionConfig(
            mode=a.mode,
            seed=seed,
            failure_model=fm,
            checks_enabled=a.checks,
            recovery=Recovery(a.recovery, a.recovery_p, a.recovery_time),
            speed_scale=a.speed_scale,
            check_false_negative=a.check_fn,
            check_false_positive=a.check_fp,
            variants=_kv(a.variant, "variant"),
            noise_mean=mean,  # type: ignore[arg-type]
            noise_sigma=a.noise_sigma,
        )
    except ValueError as e:
        raise CliError(EXIT_SCHEMA, f"bad execution option: {e}") from e


def cmd_execute(a: argparse.Namespace) -> int:
    plan = _plan(a.plan)
    z0 = _world(a.world)
    lib = _library(a.library)
    cfg = _config(a, a.seed)
    try:
        tr = execute(plan, z0, cfg, library=lib, run_id=a.run_id)
    except InvalidInput as e:
        raise CliError(EXIT_SCHEMA, str(e)) from e
    except EngineInvariantViolation as e:
        raise CliError(EXIT_ENGINE, str(e)) from e
    if a.trace:
        _write(a.trace, tr.export())
    if a.log:
        store = LogStore.open(a.log) if (Path(a.log) / "records.jsonl").exists() else LogStore(a.log)
        store.add_trace(tr, plan)
    sys.stdout.write(
        f"run {tr.run_id}: {tr.outcome} survival {tr.survival_length}/{tr.n_steps} wall {tr.wall_ms / 1000:.3f} s\n"
    )
    return EXIT_OK


def cmd_batch(a: argparse.Namespace) -> int:
    if a.seed is None:
        raise CliError(EXIT_SCHEMA, "batch requires --seed")
    plan = _plan(a.plan)
    z0 = _world(a.world)
    cfg = _config(a, a.seed)
    seeds = list(range(a.seed, a.seed + a.n))
    try:
        if a.workers > 1:
            chunks = [seeds[i :: a.workers] for i in range(a.workers)]
            with ProcessPoolExecutor(a.workers) as pool:
                parts = list(pool.map(_per_seed, [(plan.to_json(), z0, cfg, c) for c in chunks]))
            summary = summarize_outcomes([kv for part in parts for kv in part])
        else:
            summary = run_batch(plan, z0, cfg, seeds, _library(a.library))
    except InvalidInput as e:
        raise CliError(EXIT_SCHEMA, str(e)) from e
    except EngineInvariantViolation as e:
        raise CliError(EXIT_ENGINE, str(e)) from e
    text = summary.table()
    sys.stdout.write(text)
    if a.out:
        Path(a.out).write_text(json.dumps(summary.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def _per_seed(args: tuple) -> list:
    plan_doc, world, cfg, seeds = args
    plan = Plan.from_json(plan_doc)
    tpg = build_tpg(plan, world)
    cfg = replace(cfg, log_conditions=False)
    return [(s, execute(tpg, world, replace(cfg, seed=s), plan=plan).summary()) for s in seeds]


# --- analyze ----------------------------------------------------------------------------


def cmd_analyze(a: argparse.Namespace) -> int:
    if not (Path(a.log) / "records.jsonl").exists():
        raise CliError(EXIT_SCHEMA, f"{a.log}: no records.jsonl")
    store = LogStore.open(a.log)
    filt = {k: v for k, v in (("run", a.run), ("verb", a.verb), ("robot", a.robot)) if v is not None}
    stats = summarize(store, filt or None)
    rows = [f"{'verb':<12} {'robot':<6} {'class':<6} {'count':>6} {'ok':>6} {'rate':>6} {'p50':>8} {'p90':>8}"]
    for (verb, robot, cls_), s in stats.items():
        rows.append(
            f"{verb:<12} {robot:<6} {cls_ or '-':<6} {s.count:>6} {s.successes:>6} {s.success_rate:6.3f} {s.p50:8.3f} {s.p90:8.3f}"
        )
    rows.append(f"runs {len(store.runs)}  records {len(store)}")
    sys.stdout.write("\n".join(rows) + "\n")
    return EXIT_OK


# --- adapt ------------------------------------------------------------------------------


def cmd_adapt(a: argparse.Namespace) -> int:
    if a.action == "estimate":
        store = LogStore.open(a.log)
        risk = estimate_risk(store)
        _write(a.out, json.dumps(risk.to_json(), indent=1, sort_keys=True) + "\n")
        return EXIT_OK
    if a.action == "update-evaluators":
        risk = RiskModel.from_json(_read_json(a.risk))  # type: ignore[arg-type]
        evals = update_evaluators(risk, _evaluators(a.evaluators), max_cost=a.max_cost)
        _write(a.out, json.dumps({k: v.to_json() for k, v in sorted(evals.items())}, indent=1, sort_keys=True) + "\n")
        return EXIT_OK
    if a.action == "insert-checks":
        plan = _plan(a.plan)
        risk = RiskModel.from_json(_read_json(a.risk))  # type: ignore[arg-type]
        out = insert_checks(plan, risk, a.threshold)
        n = sum(len(g.checks) for g in out.grounded)
        if a.out:
            out.save(a.out)
        sys.stdout.write(f"inserted {n} checks\n")
        return EXIT_OK
    if a.action == "reallocate":
        task = _task(a.task)
        z0 = _world(a.world)
        history = FailureHistory.from_store(LogStore.open(a.log))
        try:
            plan = reallocate(task, history, a.penalty, z0, weight=a.weight, max_expansions=a.max_expansions)
        except NoFeasiblePlan as e:
            raise CliError(EXIT_INFEASIBLE, str(e)) from e
        except BudgetExhausted as e:
            raise CliError(EXIT_BUDGET, str(e)) from e
        if a.out:
            plan.save(a.out)
        sys.stdout.write(_grounding_table(plan))
        return EXIT_OK
    raise CliError(EXIT_SCHEMA, f"unknown adapt action {a.action!r}")


# --- render -----------------------------------------------------------------------------


def cmd_render(a: argparse.Namespace) -> int:
    if bool(a.plan) == bool(a.trace):
        raise CliError(EXIT_SCHEMA, "render needs exactly one of --plan or --trace")
    if a.plan:
        plan = _plan(a.plan)
        z0 = _world(a.world)
        try:
            tpg = build_tpg(plan, z0, _library(a.library))
        except (W.WorldError, KeyError) as e:
            raise CliError(EXIT_SCHEMA, f"plan does not replay: {e}") from e
        bars = bars_from_tpg(tpg)
        robots = list(tpg.lanes)
        title = f"TPG {plan.design_name}".strip()
    else:
        try:
            text = Path(a.trace).read_text(encoding="utf-8")
            header, events = parse_trace_events(text)
        except (OSError, ValueError) as e:
            raise CliError(EXIT_SCHEMA, f"{a.trace}: {e}") from e
        bars = bars_from_events(events)
        robots = [r for r in header.get("robots", "").split(",") if r]
        title = f"trace {header.get('run', '')}".strip()
    doc = gantt_svg(bars, robots, title=title) if a.format == "svg" else gantt_text(bars, robots, title=title)
    _write(a.out, doc)
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------


def _exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--plan", required=True, help="plan JSON from `skillgraph plan`")
    p.add_argument("--world", help="world JSON (default: packaged world)")
    p.add_argument("--library", help="skill library JSON (default: packaged library)")
    p.add_argument("--mode", choices=("sequential", "async"), default="sequential")
    p.add_argument("--checks", action="store_true", help="runtime pre/post-condition checking")
    p.add_argument("--recovery", choices=("none", "operator"), default="operator")
    p.add_argument("--recovery-p", type=float, default=1.0, help="operator recovery success probability")
    p.add_argument("--recovery-time", type=float, default=30.0, help="operator recovery time, seconds")
    p.add_argument("--fail", action="append", metavar="VERB[:ROBOT]=P", help="base failure probability")
    p.add_argument("--brick-fail", action="append", metavar="BRICK=P", help="extra failure probability per brick")
    p.add_argument("--wear", type=float, default=0.0, help="added failure probability per wear unit")
    p.add_argument("--variant", action="append", metavar="SKILL=VARIANT")
    p.add_argument("--speed-scale", type=float, default=1.0)
    p.add_argument("--check-fn", type=float, default=0.0, help="Check atom false-negative rate")
    p.add_argument("--check-fp", type=float, default=0.0, help="Check atom false-positive rate")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="store pose noise sigma, mm")
    p.add_argument("--noise-mean", help="store pose noise mean 'x,y' in mm")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skillgraph", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="ground a task into a plan")
    p.add_argument("--task", required=True)
    p.add_argument("--world")
    p.add_argument("--library")
    p.add_argument("--evaluators", help="evaluator overrides JSON (from `adapt update-evaluators`)")
    p.add_argument("--out", help="write the plan JSON here")
    p.add_argument("--weight", type=float, default=10.0, help="heuristic weight; 1 gives optimal A*")
    p.add_argument("--max-expansions", type=int, default=20000)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("execute", help="run one seeded execution")
    _exec_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-id")
    p.add_argument("--trace", help="write the event trace here")
    p.add_argument("--log", help="append skill records to this store directory")
    p.set_defaults(func=cmd_execute)

    p = sub.add_parser("batch", help="Monte Carlo batch over consecutive seeds")
    _exec_flags(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, help="first seed (required)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write the summary JSON here")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("analyze", help="summarize a log store")
    p.add_argument("--log", required=True)
    p.add_argument("--run")
    p.add_argument("--verb")
    p.add_argument("--robot")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("adapt", help="estimate risk, update evaluators, insert checks, reallocate")
    asub = p.add_subparsers(dest="action", required=True)
    q = asub.add_parser("estimate")
    q.add_argument("--log", required=True)
    q.add_argument("--out")
    q = asub.add_parser("update-evaluators")
    q.add_argument("--risk", required=True)
    q.add_argument("--evaluators")
    q.add_argument("--max-cost", type=float, default=float("inf"))
    q.add_argument("--out")
    q = asub.add_parser("insert-checks")
    q.add_argument("--plan", required=True)
    q.add_argument("--risk", required=True)
    q.add_argument("--threshold", type=float, default=0.2)
    q.add_argument("--out")
    q = asub.add_parser("reallocate")
    q.add_argument("--task", required=True)
    q.add_argument("--log", required=True)
    q.add_argument("--penalty", type=float, default=100.0)
    q.add_argument("--world")
    q.add_argument("--weight", type=float, default=10.0)
    q.add_argument("--max-expansions", type=int, default=20000)
    q.add_argument("--out")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("render", help="Gantt chart of a plan's TPG or of a trace")
    p.add_argument("--plan")
    p.add_argument("--trace")
    p.add_argument("--world")
    p.add_argument("--library")
    p.add_argument("--format", choices=("text", "svg"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_SCHEMA if e.code else EXIT_OK
    try:
        return a.func(a)
    except CliError as e:
        print(f"skillgraph: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
