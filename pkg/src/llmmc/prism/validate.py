"""Static checks on parsed models and constant resolution."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Union

from .expr import (
    Binary,
    Call,
    Cond,
    EvalError,
    Expr,
    Unary,
    evaluate,
    format_number,
    identifiers,
    infer_type,
    literal,
    substitute,
)
from .model import (
    Command,
    ConstantDef,
    LabelDef,
    ModelError,
    SymbolicModel,
    Update,
    VariableDecl,
)

PROB_SUM_TOLERANCE = 1e-9

ConstValue = Union[int, Fraction, bool]


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.message} [{self.code}]"


def _types(model: SymbolicModel) -> dict[str, str]:
    types = {c.name: c.type for c in model.constants}
    for v in model.variables:
        types[v.name] = "bool" if v.is_bool else "int"
    return types


def _is_constant(expr: Expr, env: Mapping[str, ConstValue]) -> bool:
    return identifiers(expr) <= env.keys()


def _zero_divisors(expr: Expr, env: Mapping[str, ConstValue]) -> list[str]:
    found: list[str] = []
    stack = [expr]
    while stack:
        e = stack.pop()
        divisor = None
        if isinstance(e, Binary):
            if e.op == "/":
                divisor = e.right
            stack.extend((e.left, e.right))
        elif isinstance(e, Call):
            if e.func == "mod":
                divisor = e.args[1]
            stack.extend(e.args)
        elif isinstance(e, Unary):
            stack.append(e.operand)
        elif isinstance(e, Cond):
            stack.extend((e.cond, e.then, e.other))
        if divisor is not None and _is_constant(divisor, env):
            try:
                if evaluate(divisor, env) == 0:
                    found.append("division by zero" if isinstance(e, Binary) else "modulo by zero")
            except EvalError:
                pass
    return found


def _render(value: Fraction) -> str:
    text = format_number(value)
    if text.startswith("("):
        return repr(float(value))
    return text


def _check_command(
    cmd: Command,
    types: dict[str, str],
    env: Mapping[str, ConstValue],
    bounds: dict[str, tuple[int, int]] | None,
) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    line = cmd.line

    def typed(expr: Expr, want: str, what: str) -> bool:
        try:
            t = infer_type(expr, types)
        except EvalError as exc:
            out.append(Diagnostic("type", f"{what}: {exc}", line))
            return False
        ok = t == want or (want == "double" and t == "int")
        if not ok:
            out.append(Diagnostic("type", f"{what} must be {want}, found {t}", line))
        return ok

    typed(cmd.guard, "bool", f"guard of [{cmd.action}]")
    guard_false = False
    if _is_constant(cmd.guard, env):
        try:
            guard_false = evaluate(cmd.guard, env) is False
        except EvalError:
            pass

    all_const = True
    total = Fraction(0)
    for b in cmd.branches:
        if not typed(b.prob, "double", f"probability in [{cmd.action}]"):
            all_const = False
            continue
        if not _is_constant(b.prob, env):
            all_const = False
            continue
        try:
            p = Fraction(evaluate(b.prob, env))
        except EvalError as exc:
            out.append(Diagnostic("eval", f"probability in [{cmd.action}]: {exc}", line))
            all_const = False
            continue
        if p < 0 or p > 1:
            out.append(Diagnostic("probability-range", f"probability {_render(p)} in [{cmd.action}] outside [0, 1]", line))
        total += p
    if all_const and abs(float(total) - 1.0) > PROB_SUM_TOLERANCE:
        out.append(Diagnostic("probability-sum", f"probabilities sum to {_render(total)} in [{cmd.action}]", line))

    for b in cmd.branches:
        for target, value in b.assignments:
            want = types[target]
            if want == "bool":
                typed(value, "bool", f"assignment to {target}")
            elif typed(value, "double", f"assignment to {target}"):
                try:
                    t = infer_type(value, types)
                except EvalError:
                    t = "int"
                if t == "double" and _is_constant(value, env):
                    try:
                        v = evaluate(value, env)
                    except EvalError:
                        continue
                    if Fraction(v).denominator != 1:
                        out.append(Diagnostic("type", f"assignment to {target} is not an integer: {_render(Fraction(v))}", line))
                        continue
            if bounds is None or guard_false or not _is_constant(value, env) or want == "bool":
                continue
            try:
                v = evaluate(value, env)
            except EvalError:
                continue
            lo, hi = bounds[target]
            if not lo <= v <= hi:
                out.append(
                    Diagnostic("bounds", f"assignment {target}'={_render(Fraction(v))} outside [{lo}..{hi}] in [{cmd.action}]", line)
                )

    for expr in [cmd.guard] + [b.prob for b in cmd.branches] + [e for b in cmd.branches for _, e in b.assignments]:
        for msg in _zero_divisors(expr, env):
            out.append(Diagnostic("division", f"{msg} in [{cmd.action}]", line))
    return out


def validate_model(model: SymbolicModel) -> list[Diagnostic]:
    """Collect static problems; an empty list means the model is well formed.

    Only constant expressions are checked for probability sums and bounds;
    state-dependent ones are checked when states are expanded.
    """
    out: list[Diagnostic] = []
    types = _types(model)
    try:
        env = model.constant_values()
    except EvalError as exc:
        return [Diagnostic("eval", f"constant definitions: {exc}")]

    for c in model.constants:
        if c.value is None:
            continue
        try:
            t = infer_type(c.value, types)
        except EvalError as exc:
            out.append(Diagnostic("type", f"constant {c.name}: {exc}"))
            continue
        if not (t == c.type or (c.type == "double" and t == "int")):
            out.append(Diagnostic("type", f"constant {c.name} declared {c.type} but defined as {t}"))
        for msg in _zero_divisors(c.value, env):
            out.append(Diagnostic("division", f"{msg} in constant {c.name}"))

    bounds: dict[str, tuple[int, int]] | None = None
    if not model.undefined_constants():
        try:
            bounds = {v.name: (lo, hi) for v, (lo, hi, _) in zip(model.variables, model.bounds())}
        except (ModelError, EvalError) as exc:
            out.append(Diagnostic("bounds", f"variable declarations: {exc}"))

    for cmd in model.commands:
        out.extend(_check_command(cmd, types, env, bounds))

    for lab in model.labels:
        try:
            t = infer_type(lab.condition, types)
            if t != "bool":
                out.append(Diagnostic("type", f"label {lab.name} must be boolean, found {t}"))
        except EvalError as exc:
            out.append(Diagnostic("type", f"label {lab.name}: {exc}"))
        for msg in _zero_divisors(lab.condition, env):
            out.append(Diagnostic("division", f"{msg} in label {lab.name}"))
    return out


def parse_constant_value(text: str) -> ConstValue:
    """Parse an override given on the command line: ``4``, ``0.5``, ``1/3``, ``true``."""
    s = text.strip()
    if s in ("true", "false"):
        return s == "true"
    try:
        v = Fraction(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise ModelError(f"cannot parse constant value {text!r}") from exc
    return int(v) if v.denominator == 1 and "." not in s and "e" not in s.lower() else v


def _coerce(name: str, ctype: str, value) -> ConstValue:
    if isinstance(value, str):
        value = parse_constant_value(value)
    if isinstance(value, float):
        value = Fraction(value)
    if ctype == "bool":
        if not isinstance(value, bool):
            raise ModelError(f"constant {name!r} is bool, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ModelError(f"constant {name!r} is {ctype}, got a boolean")
    if ctype == "int":
        if Fraction(value).denominator != 1:
            raise ModelError(f"constant {name!r} is int, got {value}")
        return int(value)
    v = Fraction(value)
    return int(v) if v.denominator == 1 else v


def resolve_constants(model: SymbolicModel, overrides: Mapping[str, object] | None = None) -> SymbolicModel:
    """Give every constant a value and substitute values into all expressions.

    Raises :class:`ModelError` for overrides of unknown constants, for
    undefined constants without an override and for type mismatches.
    """
    overrides = dict(overrides or {})
    declared = {c.name: c for c in model.constants}
    for name in overrides:
        if name not in declared:
            raise ModelError(f"override for unknown constant {name!r}")
    missing = [c.name for c in model.constants if c.value is None and c.name not in overrides]
    if missing:
        raise ModelError(f"no value given for constant(s): {', '.join(missing)}")

    env: dict[str, ConstValue] = {}
    exprs: dict[str, Expr] = {}
    for c in model.constants:
        if c.name in overrides:
            value = _coerce(c.name, c.type, overrides[c.name])
        else:
            try:
                raw = evaluate(substitute(c.value, exprs), env)
            except EvalError as exc:
                raise ModelError(f"cannot evaluate constant {c.name!r}: {exc}") from exc
            value = _coerce(c.name, c.type, raw)
        env[c.name] = value
        exprs[c.name] = literal(value)

    def sub(e: Expr | None) -> Expr | None:
        return None if e is None else substitute(e, exprs)

    resolved = SymbolicModel(
        module_name=model.module_name,
        constants=tuple(ConstantDef(c.name, c.type, exprs[c.name]) for c in model.constants),
        variables=tuple(
            VariableDecl(v.name, sub(v.lower), sub(v.upper), sub(v.init), v.is_bool) for v in model.variables
        ),
        commands=tuple(
            Command(
                cmd.action,
                sub(cmd.guard),
                tuple(Update(sub(b.prob), tuple((t, sub(e)) for t, e in b.assignments)) for b in cmd.branches),
                line=cmd.line,
            )
            for cmd in model.commands
        ),
        labels=tuple(LabelDef(lab.name, sub(lab.condition)) for lab in model.labels),
        rewards=model.rewards,
        model_kind=model.model_kind,
    )
    for v, (lo, hi, init) in zip(resolved.variables, resolved.bounds()):
        if lo > hi:
            raise ModelError(f"variable {v.name!r} has empty range [{lo}..{hi}]")
        if not lo <= init <= hi:
            raise ModelError(f"initial value {init} of {v.name!r} outside [{lo}..{hi}]")
    return resolved

