"""Predicate trees over ``WorldState`` written in prefix notation.

A condition is a nested list such as::

    ["and", ["not", ["holding", "?robot"]],
            ["reachable", "?robot", ["loc", "?brick"]]]

Strings starting with ``?`` are resolved from the skill's bindings. Atoms come
from a closed registry; adding one means calling ``register_atom``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping, Optional

from . import world as W

CONNECTIVES = ("and", "or", "not")


class ConditionError(ValueError):
    pass


# name -> (arity, fn(z, bindings, *raw_args) -> bool)
_ATOMS: dict[str, tuple[int, Callable[..., bool]]] = {}


def register_atom(name: str, arity: int) -> Callable:
    def deco(fn: Callable[..., bool]) -> Callable[..., bool]:
        if name in _ATOMS or name in CONNECTIVES:
            raise ConditionError(f"atom {name!r} already registered")
        _ATOMS[name] = (arity, fn)
        return fn

    return deco


def atom_names() -> list[str]:
    return sorted(_ATOMS)


def resolve(arg: Any, bindings: Mapping[str, Any]) -> Any:
    if isinstance(arg, str) and arg.startswith("?"):
        try:
            return bindings[arg[1:]]
        except KeyError:
            raise ConditionError(f"unbound variable {arg}") from None
    return arg


def _placement(v: Any) -> W.Placement:
    return v if isinstance(v, W.Placement) else W.Placement.from_list(v)


def cells_of(z: W.WorldState, pos: Any, bindings: Mapping[str, Any]) -> list[tuple]:
    """Resolve a position expression to ``(x, y)`` or ``(x, y, level)`` cells."""
    if isinstance(pos, (list, tuple)) and pos and isinstance(pos[0], str) and not pos[0].startswith("?"):
        op = pos[0]
        if op == "loc":
            return list(z.brick_cells(resolve(pos[1], bindings)))
        if op == "footprint":
            brick = z.brick(resolve(pos[1], bindings))
            tgt = _placement(resolve(pos[2], bindings))
            return [(x, y, tgt.level) for x, y in W.footprint_cells(brick.brick_type, tgt)]
        if op == "xy":
            v = resolve(pos[1], bindings)
            v = v.cell if isinstance(v, W.Placement) else tuple(v[:2])
            return [v]
        if op == "eef":
            return [z.robot(resolve(pos[1], bindings)).eef_cell]
        raise ConditionError(f"unknown position form {op!r}")
    v = resolve(pos, bindings)
    if isinstance(v, W.Placement):
        return [(v.x, v.y, v.level)]
    return [tuple(v)]


# --- atoms -------------------------------------------------------------------


@register_atom("true", 0)
def _true(z, b):
    return True


@register_atom("false", 0)
def _false(z, b):
    return False


@register_atom("holding", 1)
def _holding(z, b, robot):
    return z.robot(resolve(robot, b)).holding is not None


@register_atom("at", 2)
def _at(z, b, brick, where):
    loc = z.brick(resolve(brick, b)).location
    if where == "store":
        return isinstance(loc, W.InStore)
    if where == "plate":
        return isinstance(loc, W.OnPlate)
    if where == "hand":
        return isinstance(loc, W.InHand)
    kind = where[0]
    if kind == "hand":
        return isinstance(loc, W.InHand) and loc.robot == resolve(where[1], b)
    if kind == "plate":
        tgt = _placement(resolve(where[1], b))
        return loc == W.OnPlate(tgt.x, tgt.y, tgt.level)
    raise ConditionError(f"bad location form {where!r}")


@register_atom("reachable", 2)
def _reachable(z, b, robot, pos):
    r = z.robot(resolve(robot, b))
    return all(r.region.contains(c[:2]) for c in cells_of(z, pos, b))


@register_atom("stable", 2)
def _stable(z, b, brick, target):
    bt = z.brick(resolve(brick, b)).brick_type
    return W.check_stability(z, bt, _placement(resolve(target, b)))


@register_atom("overhang", 2)
def _overhang(z, b, brick, target):
    bt = z.brick(resolve(brick, b)).brick_type
    return W.is_overhang(z, bt, _placement(resolve(target, b)))


@register_atom("gripperCompatible", 2)
def _gripper(z, b, robot, brick):
    return z.robot(resolve(robot, b)).can_grip(z.brick(resolve(brick, b)))


@register_atom("occupied", 1)
def _occupied(z, b, pos):
    for c in cells_of(z, pos, b):
        if len(c) == 3:
            if c in z.grid:
                return True
        elif (c[0], c[1], 0) in z.grid:
            return True
    return False


@register_atom("eef_at", 2)
def _eef_at(z, b, robot, cell):
    return z.robot(resolve(robot, b)).eef_cell == tuple(cells_of(z, cell, b)[0][:2])


@register_atom("supporting", 1)
def _supporting(z, b, robot):
    return z.robot(resolve(robot, b)).supporting


@register_atom("detected", 1)
def _detected(z, b, brick):
    return resolve(brick, b) in z.detected


# --- condition ---------------------------------------------------------------


def _freeze(expr: Any) -> Any:
    if isinstance(expr, (list, tuple)):
        return tuple(_freeze(e) for e in expr)
    return expr


def _thaw(expr: Any) -> Any:
    if isinstance(expr, tuple):
        return [_thaw(e) for e in expr]
    return expr


def _validate(expr: Any) -> None:
    if not isinstance(expr, tuple) or not expr or not isinstance(expr[0], str):
        raise ConditionError(f"malformed condition {_thaw(expr)!r}")
    head = expr[0]
    if head in ("and", "or"):
        for e in expr[1:]:
            _validate(e)
    elif head == "not":
        if len(expr) != 2:
            raise ConditionError("'not' takes exactly one argument")
        _validate(expr[1])
    elif head in _ATOMS:
        arity = _ATOMS[head][0]
        if len(expr) - 1 != arity:
            raise ConditionError(f"atom {head!r} takes {arity} arguments, got {len(expr) - 1}")
    else:
        raise ConditionError(f"unknown atom {head!r}")


def _fmt(expr: Any, b: Optional[Mapping[str, Any]] = None) -> str:
    if isinstance(expr, tuple):
        if expr and isinstance(expr[0], str) and expr[0] in _ATOMS:
            return f"{expr[0]}({', '.join(_fmt(e, b) for e in expr[1:])})"
        return "[" + " ".join(_fmt(e, b) for e in expr) + "]"
    if b is not None and isinstance(expr, str) and expr.startswith("?") and expr[1:] in b:
        v = b[expr[1:]]
        if isinstance(v, W.Placement):
            return f"({v.x},{v.y},{v.level})"
        if isinstance(v, (list, tuple)):
            return "(" + ",".join(str(i) for i in v) + ")"
        return str(v)
    return str(expr)


@dataclass(frozen=True)
class Condition:
    expr: tuple = ("true",)

    def __post_init__(self) -> None:
        object.__setattr__(self, "expr", _freeze(self.expr))
        _validate(self.expr)

    @classmethod
    def parse(cls, obj: Any) -> "Condition":
        return cls(_freeze(obj))

    def to_json(self) -> list:
        return _thaw(self.expr)

    def evaluate(self, z: W.WorldState, bindings: Mapping[str, Any]) -> bool:
        return _eval(self.expr, z, bindings)

    def first_failure(self, z: W.WorldState, bindings: Mapping[str, Any]) -> Optional[str]:
        """Name the atom responsible for a false result, or None when it holds."""
        return _explain(self.expr, z, bindings, True)

    def atoms(self) -> Iterator[tuple]:
        stack = [self.expr]
        while stack:
            e = stack.pop(0)
            if e[0] in CONNECTIVES:
                stack.extend(e[1:])
            else:
                yield e

    def atom_results(self, z: W.WorldState, bindings: Mapping[str, Any]) -> list[tuple[str, bool]]:
        return [(_fmt(a, bindings), _eval(a, z, bindings)) for a in self.atoms()]

    def __str__(self) -> str:
        return _fmt(self.expr)


def _eval(e: tuple, z: W.WorldState, b: Mapping[str, Any]) -> bool:
    head = e[0]
    if head == "and":
        return all(_eval(x, z, b) for x in e[1:])
    if head == "or":
        return any(_eval(x, z, b) for x in e[1:])
    if head == "not":
        return not _eval(e[1], z, b)
    return bool(_ATOMS[head][1](z, b, *e[1:]))


def _explain(e: tuple, z: W.WorldState, b: Mapping[str, Any], want: bool) -> Optional[str]:
    head = e[0]
    if head == "not":
        return _explain(e[1], z, b, not want)
    if head in ("and", "or"):
        conj = (head == "and") == want
        if conj:
            for x in e[1:]:
                bad = _explain(x, z, b, want)
                if bad is not None:
                    return bad
            return None
        if any(_eval(x, z, b) == want for x in e[1:]):
            return None
        return _fmt(e, b) if want else f"not {_fmt(e, b)}"
    if bool(_ATOMS[head][1](z, b, *e[1:])) == want:
        return None
    return _fmt(e, b) if want else f"not {_fmt(e, b)}"


TRUE = Condition(("true",))
