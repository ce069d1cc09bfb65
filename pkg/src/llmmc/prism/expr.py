"""Expression trees for the PRISM subset, with evaluation, compilation and printing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Union

Value = Union[int, Fraction, bool]


class EvalError(ValueError):
    """Raised when an expression cannot be evaluated (division by zero, bad operand)."""


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: Union[int, Fraction]
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Ident(Expr):
    name: str
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # "!" or "-"
    operand: Expr
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple[Expr, ...]
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Cond(Expr):
    cond: Expr
    then: Expr
    other: Expr
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


BOOL_OPS = {"|", "&", "=>", "<=>"}
REL_OPS = {"=", "!=", "<", "<=", ">", ">="}
ARITH_OPS = {"+", "-", "*", "/"}
FUNCTIONS = {"min": (2, None), "max": (2, None), "floor": (1, 1), "ceil": (1, 1), "mod": (2, 2)}

# binding strength, loosest first
PRECEDENCE = {
    "?": 0,
    "=>": 1,
    "<=>": 2,
    "|": 3,
    "&": 4,
    "!": 5,
    "=": 6, "!=": 6, "<": 6, "<=": 6, ">": 6, ">=": 6,
    "+": 7, "-": 7,
    "*": 8, "/": 8,
    "neg": 9,
}
ATOM = 10


def identifiers(expr: Expr) -> set[str]:
    """All identifier names referenced anywhere in ``expr``."""
    out: set[str] = set()
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, Ident):
            out.add(e.name)
        elif isinstance(e, Unary):
            stack.append(e.operand)
        elif isinstance(e, Binary):
            stack.extend((e.left, e.right))
        elif isinstance(e, Call):
            stack.extend(e.args)
        elif isinstance(e, Cond):
            stack.extend((e.cond, e.then, e.other))
    return out


def substitute(expr: Expr, values: Mapping[str, Expr]) -> Expr:
    """Replace identifiers by expressions (used for constant resolution)."""
    if isinstance(expr, Ident):
        return values.get(expr.name, expr)
    if isinstance(expr, Unary):
        return Unary(expr.op, substitute(expr.operand, values), expr.pos)
    if isinstance(expr, Binary):
        return Binary(expr.op, substitute(expr.left, values), substitute(expr.right, values), expr.pos)
    if isinstance(expr, Call):
        return Call(expr.func, tuple(substitute(a, values) for a in expr.args), expr.pos)
    if isinstance(expr, Cond):
        return Cond(
            substitute(expr.cond, values),
            substitute(expr.then, values),
            substitute(expr.other, values),
            expr.pos,
        )
    return expr


def literal(value: Value) -> Expr:
    if isinstance(value, bool):
        return BoolLit(value)
    if isinstance(value, Fraction) and value.denominator == 1:
        return Num(int(value))
    return Num(value)


# -- evaluation ------------------------------------------------------------


def _num(v: Value) -> Union[int, Fraction]:
    if isinstance(v, bool):
        raise EvalError("boolean used where a number is expected")
    return v


def _bool(v: Value) -> bool:
    if not isinstance(v, bool):
        raise EvalError("number used where a boolean is expected")
    return v


def _int(v: Value, what: str) -> int:
    v = _num(v)
    if isinstance(v, Fraction):
        if v.denominator != 1:
            raise EvalError(f"{what} requires integer operands, got {v}")
        return int(v)
    return v


def _div(a: Value, b: Value) -> Union[int, Fraction]:
    a, b = _num(a), _num(b)
    if b == 0:
        raise EvalError("division by zero")
    q = Fraction(a) / b
    return int(q) if q.denominator == 1 else q


def _mod(a: Value, b: Value) -> int:
    a, b = _int(a, "mod"), _int(b, "mod")
    if b == 0:
        raise EvalError("modulo by zero")
    return a % b


def _norm(v):
    if isinstance(v, Fraction) and v.denominator == 1:
        return int(v)
    return v


_BINARY: dict[str, Callable[[Value, Value], Value]] = {
    "+": lambda a, b: _norm(_num(a) + _num(b)),
    "-": lambda a, b: _norm(_num(a) - _num(b)),
    "*": lambda a, b: _norm(_num(a) * _num(b)),
    "/": _div,
    "<": lambda a, b: _num(a) < _num(b),
    "<=": lambda a, b: _num(a) <= _num(b),
    ">": lambda a, b: _num(a) > _num(b),
    ">=": lambda a, b: _num(a) >= _num(b),
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "=>": lambda a, b: (not _bool(a)) or _bool(b),
    "<=>": lambda a, b: _bool(a) == _bool(b),
}


def _call(func: str, args: list[Value]) -> Value:
    if func == "min":
        return min(_num(a) for a in args)
    if func == "max":
        return max(_num(a) for a in args)
    if func == "floor":
        return math.floor(_num(args[0]))
    if func == "ceil":
        return math.ceil(_num(args[0]))
    if func == "mod":
        return _mod(args[0], args[1])
    raise EvalError(f"unknown function {func!r}")


def evaluate(expr: Expr, env: Mapping[str, Value]) -> Value:
    """Evaluate ``expr`` with identifiers looked up in ``env``."""
    return compile_expr(expr, env)(())


def compile_expr(
    expr: Expr,
    consts: Mapping[str, Value],
    slots: Mapping[str, int] | None = None,
    bool_slots: frozenset[str] = frozenset(),
) -> Callable[[tuple], Value]:
    """Turn ``expr`` into a closure over a state tuple.

    Identifiers found in ``slots`` read the state; all others must be in
    ``consts``. Variables listed in ``bool_slots`` read back as booleans.
    """
    slots = slots or {}

    def build(e: Expr) -> Callable[[tuple], Value]:
        if isinstance(e, Num):
            v = e.value
            return lambda s: v
        if isinstance(e, BoolLit):
            b = e.value
            return lambda s: b
        if isinstance(e, Ident):
            if e.name in slots:
                i = slots[e.name]
                if e.name in bool_slots:
                    return lambda s: s[i] == 1
                return lambda s: s[i]
            if e.name in consts:
                c = consts[e.name]
                return lambda s: c
            raise EvalError(f"unknown identifier {e.name!r}")
        if isinstance(e, Unary):
            f = build(e.operand)
            if e.op == "!":
                return lambda s: not _bool(f(s))
            return lambda s: -_num(f(s))
        if isinstance(e, Binary):
            lf, rf = build(e.left), build(e.right)
            if e.op == "&":
                return lambda s: _bool(lf(s)) and _bool(rf(s))
            if e.op == "|":
                return lambda s: _bool(lf(s)) or _bool(rf(s))
            op = _BINARY[e.op]
            return lambda s: op(lf(s), rf(s))
        if isinstance(e, Call):
            fs = [build(a) for a in e.args]
            name = e.func
            return lambda s: _call(name, [f(s) for f in fs])
        if isinstance(e, Cond):
            cf, tf, of = build(e.cond), build(e.then), build(e.other)
            return lambda s: tf(s) if _bool(cf(s)) else of(s)
        raise EvalError(f"cannot evaluate {e!r}")

    return build(expr)


# -- static typing ---------------------------------------------------------


def infer_type(expr: Expr, types: Mapping[str, str]) -> str:
    """Return "bool", "int" or "double"; raise EvalError on a type clash."""
    if isinstance(expr, Num):
        return "int" if isinstance(expr.value, int) else "double"
    if isinstance(expr, BoolLit):
        return "bool"
    if isinstance(expr, Ident):
        if expr.name not in types:
            raise EvalError(f"unknown identifier {expr.name!r}")
        return types[expr.name]
    if isinstance(expr, Unary):
        t = infer_type(expr.operand, types)
        if expr.op == "!":
            if t != "bool":
                raise EvalError("operand of '!' must be boolean")
            return "bool"
        if t == "bool":
            raise EvalError("operand of unary '-' must be numeric")
        return t
    if isinstance(expr, Binary):
        lt, rt = infer_type(expr.left, types), infer_type(expr.right, types)
        if expr.op in BOOL_OPS:
            if lt != "bool" or rt != "bool":
                raise EvalError(f"operands of '{expr.op}' must be boolean")
            return "bool"
        if expr.op in ("=", "!="):
            if (lt == "bool") != (rt == "bool"):
                raise EvalError(f"cannot compare boolean with number using '{expr.op}'")
            return "bool"
        if lt == "bool" or rt == "bool":
            raise EvalError(f"operands of '{expr.op}' must be numeric")
        if expr.op in REL_OPS:
            return "bool"
        if expr.op == "/":
            return "double"
        return "int" if lt == rt == "int" else "double"
    if isinstance(expr, Call):
        ts = [infer_type(a, types) for a in expr.args]
        if any(t == "bool" for t in ts):
            raise EvalError(f"arguments of {expr.func}() must be numeric")
        if expr.func in ("floor", "ceil", "mod"):
            return "int"
        return "int" if all(t == "int" for t in ts) else "double"
    if isinstance(expr, Cond):
        if infer_type(expr.cond, types) != "bool":
            raise EvalError("condition of '?:' must be boolean")
        tt, ot = infer_type(expr.then, types), infer_type(expr.other, types)
        if (tt == "bool") != (ot == "bool"):
            raise EvalError("branches of '?:' have incompatible types")
        if tt == "bool":
            return "bool"
        return "int" if tt == ot == "int" else "double"
    raise EvalError(f"unknown expression {expr!r}")


# -- printing --------------------------------------------------------------


def format_number(value: Union[int, Fraction]) -> str:
    """Exact decimal rendering when the denominator allows it, else ``(p/q)``."""
    if isinstance(value, int) or value.denominator == 1:
        v = int(value)
        return str(v) if v >= 0 else f"({v})"
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"({value.numerator}/{value.denominator})"
    digits = max(twos, fives)
    scaled = abs(value.numerator) * 10**digits // value.denominator
    text = str(scaled).rjust(digits + 1, "0")
    text = f"{text[:-digits]}.{text[-digits:]}"
    return f"(-{text})" if value < 0 else text


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return PRECEDENCE[e.op]
    if isinstance(e, Unary):
        return PRECEDENCE["!"] if e.op == "!" else PRECEDENCE["neg"]
    if isinstance(e, Cond):
        return PRECEDENCE["?"]
    return ATOM


def to_text(expr: Expr) -> str:
    """Render ``expr`` in concrete syntax with minimal parentheses."""
    if isinstance(expr, Num):
        return format_number(expr.value)
    if isinstance(expr, BoolLit):
        return "true" if expr.value else "false"
    if isinstance(expr, Ident):
        return expr.name
    if isinstance(expr, Unary):
        inner = to_text(expr.operand)
        if _prec(expr.operand) < _prec(expr):
            inner = f"({inner})"
        return f"{expr.op}{inner}"
    if isinstance(expr, Binary):
        p = PRECEDENCE[expr.op]
        left, right = to_text(expr.left), to_text(expr.right)
        lp, rp = _prec(expr.left), _prec(expr.right)
        if lp < p or (p == PRECEDENCE["="] and lp == p):
            left = f"({left})"
        if rp <= p:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(to_text(a) for a in expr.args)})"
    if isinstance(expr, Cond):
        parts = [to_text(expr.cond), to_text(expr.then), to_text(expr.other)]
        if _prec(expr.cond) <= PRECEDENCE["?"]:
            parts[0] = f"({parts[0]})"
        if _prec(expr.then) <= PRECEDENCE["?"]:
            parts[1] = f"({parts[1]})"
        if _prec(expr.other) < PRECEDENCE["?"]:
            parts[2] = f"({parts[2]})"
        return f"{parts[0]} ? {parts[1]} : {parts[2]}"
    raise TypeError(f"not an expression: {expr!r}")
