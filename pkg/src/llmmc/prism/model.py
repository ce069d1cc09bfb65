"""Symbolic (unexpanded) MDP programs and their canonical printer."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .expr import Expr, Num, evaluate, identifiers, to_text


class ModelError(ValueError):
    """Base class for every error raised while reading or interpreting a model."""


@dataclass(frozen=True)
class ConstantDef:
    name: str
    type: str  # "int", "double" or "bool"
    value: Expr | None = None  # None: must be supplied as an override


@dataclass(frozen=True)
class VariableDecl:
    name: str
    lower: Expr
    upper: Expr
    init: Expr | None = None  # None: defaults to the lower bound
    is_bool: bool = False


@dataclass(frozen=True)
class Update:
    prob: Expr
    assignments: tuple[tuple[str, Expr], ...]


@dataclass(frozen=True)
class Command:
    action: str
    guard: Expr
    branches: tuple[Update, ...]
    line: int | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class LabelDef:
    name: str
    condition: Expr


@dataclass(frozen=True)
class RewardDef:
    """A reward structure kept as raw text; it is never evaluated."""

    name: str | None
    text: str


@dataclass(frozen=True)
class SymbolicModel:
    module_name: str
    constants: tuple[ConstantDef, ...]
    variables: tuple[VariableDecl, ...]
    commands: tuple[Command, ...]
    labels: tuple[LabelDef, ...] = ()
    rewards: tuple[RewardDef, ...] = ()
    model_kind: str = "mdp"

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def actions(self) -> tuple[str, ...]:
        """Action labels in order of first appearance in the command list."""
        seen: dict[str, None] = {}
        for c in self.commands:
            seen.setdefault(c.action, None)
        return tuple(seen)

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.labels)

    def undefined_constants(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.constants if c.value is None)

    def constant_values(self) -> dict[str, Union[int, Fraction, bool]]:
        """Evaluate every defined constant, in declaration order."""
        env: dict[str, Union[int, Fraction, bool]] = {}
        for c in self.constants:
            if c.value is None:
                continue
            if not identifiers(c.value) <= env.keys():
                continue
            v = evaluate(c.value, env)
            if c.type == "double" and not isinstance(v, bool):
                v = Fraction(v)
                v = int(v) if v.denominator == 1 else v
            env[c.name] = v
        return env

    def bounds(self) -> list[tuple[int, int, int]]:
        """(lower, upper, init) per variable; all constants must be defined."""
        missing = self.undefined_constants()
        if missing:
            raise ModelError(f"undefined constants: {', '.join(missing)}")
        env = self.constant_values()
        out = []
        for v in self.variables:
            lo = _as_int(evaluate(v.lower, env), v.name)
            hi = _as_int(evaluate(v.upper, env), v.name)
            init = lo if v.init is None else _as_int(evaluate(v.init, env), v.name)
            out.append((lo, hi, init))
        return out


def _as_int(value, name: str) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, Fraction):
        if value.denominator != 1:
            raise ModelError(f"bound or init of {name!r} is not an integer: {value}")
        return int(value)
    return value


def _init_text(v: VariableDecl) -> str:
    if v.init is None:
        return ""
    return f" init {to_text(v.init)}"


def print_model(model: SymbolicModel) -> str:
    """Canonical concrete syntax; parsing it back yields an equal model."""
    lines = [model.model_kind, ""]
    for c in model.constants:
        head = f"const {c.type} {c.name}"
        lines.append(f"{head};" if c.value is None else f"{head} = {to_text(c.value)};")
    if model.constants:
        lines.append("")
    lines.append(f"module {model.module_name}")
    for v in model.variables:
        if v.is_bool:
            lines.append(f"  {v.name} : bool{_init_text(v)};")
        else:
            lines.append(f"  {v.name} : [{to_text(v.lower)}..{to_text(v.upper)}]{_init_text(v)};")
    if model.variables:
        lines.append("")
    for cmd in model.commands:
        branches = []
        for b in cmd.branches:
            assigns = " & ".join(f"({name}'={to_text(e)})" for name, e in b.assignments) or "true"
            branches.append(f"{to_text(b.prob)} : {assigns}")
        lines.append(f"  [{cmd.action}] {to_text(cmd.guard)} -> {' + '.join(branches)};")
    lines.append("endmodule")
    if model.labels:
        lines.append("")
    for lab in model.labels:
        lines.append(f'label "{lab.name}" = {to_text(lab.condition)};')
    for r in model.rewards:
        lines.append("")
        head = "rewards" if r.name is None else f'rewards "{r.name}"'
        lines.append(f"{head}{r.text}endrewards")
    return "\n".join(lines) + "\n"


