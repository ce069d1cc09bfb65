"""Explicit-state semantics of a resolved model.

States are plain tuples of ints in variable-declaration order.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Union

from .prism import ModelError, SymbolicModel
from .prism.expr import EvalError, compile_expr

StateVector = tuple[int, ...]


class NondeterminismError(ModelError):
    """Two commands with the same action label are enabled in one state."""


class BoundError(ModelError):
    """An update would leave a variable's declared range."""


@dataclass(frozen=True)
class Distribution:
    """Successor distribution; probabilities are exact and sum to one."""

    support: tuple[tuple[StateVector, Fraction], ...]

    def __iter__(self):
        return iter(self.support)

    def __len__(self) -> int:
        return len(self.support)

    def as_dict(self) -> dict[StateVector, Fraction]:
        return dict(self.support)


@dataclass
class _Branch:
    prob: Callable[[tuple], object]
    assigns: list[tuple[int, Callable[[tuple], object]]]


@dataclass
class _Command:
    action: str
    guard: Callable[[tuple], object]
    branches: list[_Branch]
    line: int | None


class CompiledModel:
    """A resolved model with guards, updates and labels compiled to closures."""

    def __init__(self, model: SymbolicModel):
        missing = model.undefined_constants()
        if missing:
            raise ModelError(f"constants must be resolved first: {', '.join(missing)}")
        self.model = model
        self.names = model.variable_names
        consts = model.constant_values()
        slots = {name: i for i, name in enumerate(self.names)}
        bools = frozenset(v.name for v in model.variables if v.is_bool)
        self.is_bool = tuple(v.is_bool for v in model.variables)
        bounds = model.bounds()
        self.lower = tuple(b[0] for b in bounds)
        self.upper = tuple(b[1] for b in bounds)
        self.init = tuple(b[2] for b in bounds)
        self.actions = model.actions

        def comp(e):
            return compile_expr(e, consts, slots, bools)

        self.commands = [
            _Command(
                cmd.action,
                comp(cmd.guard),
                [_Branch(comp(b.prob), [(slots[t], comp(e)) for t, e in b.assignments]) for b in cmd.branches],
                cmd.line,
            )
            for cmd in model.commands
        ]
        self.labels = [(lab.name, comp(lab.condition)) for lab in model.labels]

    # -- helpers --

    def check_state(self, s: StateVector) -> None:
        if len(s) != len(self.names):
            raise ModelError(f"state has {len(s)} values, model has {len(self.names)} variables")
        for name, v, lo, hi in zip(self.names, s, self.lower, self.upper):
            if not lo <= v <= hi:
                raise BoundError(f"{name}={v} outside [{lo}..{hi}]")

    def render(self, s: StateVector) -> str:
        """Canonical ``name=value;...`` rendering in declaration order."""
        return ";".join(f"{n}={v}" for n, v in zip(self.names, s))

    def as_dict(self, s: StateVector) -> dict[str, int]:
        return dict(zip(self.names, s))

    def _guard(self, cmd: _Command, s: StateVector) -> bool:
        try:
            g = cmd.guard(s)
        except EvalError as exc:
            raise ModelError(f"guard of [{cmd.action}] at {self.render(s)}: {exc}") from exc
        if not isinstance(g, bool):
            raise ModelError(f"guard of [{cmd.action}] is not boolean")
        return g

    # -- semantics --

    def initial_state(self) -> StateVector:
        return self.init

    def enabled_actions(self, s: StateVector) -> list[str]:
        enabled = {cmd.action for cmd in self.commands if self._guard(cmd, s)}
        return [a for a in self.actions if a in enabled]

    def successor_distribution(self, s: StateVector, action: str) -> Distribution:
        active = [cmd for cmd in self.commands if cmd.action == action and self._guard(cmd, s)]
        if not active:
            raise ModelError(f"action {action!r} is not enabled at {self.render(s)}")
        if len(active) > 1:
            lines = ", ".join(str(c.line) for c in active if c.line)
            raise NondeterminismError(
                f"{len(active)} commands labelled [{action}] are enabled at {self.render(s)}"
                + (f" (lines {lines})" if lines else "")
            )
        cmd = active[0]
        merged: dict[StateVector, Fraction] = {}
        total = Fraction(0)
        for branch in cmd.branches:
            try:
                p = branch.prob(s)
            except EvalError as exc:
                raise ModelError(f"probability in [{action}] at {self.render(s)}: {exc}") from exc
            if isinstance(p, bool):
                raise ModelError(f"probability in [{action}] is boolean")
            p = Fraction(p)
            if p < 0:
                raise ModelError(f"negative probability {p} in [{action}] at {self.render(s)}")
            total += p
            if p == 0:
                continue
            target = list(s)
            for i, f in branch.assigns:
                try:
                    v = f(s)
                except EvalError as exc:
                    raise ModelError(f"update of {self.names[i]} in [{action}] at {self.render(s)}: {exc}") from exc
                if isinstance(v, Fraction):
                    if v.denominator != 1:
                        raise ModelError(f"non-integer value {v} assigned to {self.names[i]}")
                    v = int(v)
                v = int(v)
                if not self.lower[i] <= v <= self.upper[i]:
                    raise BoundError(
                        f"[{action}] at {self.render(s)} sets {self.names[i]}={v} outside "
                        f"[{self.lower[i]}..{self.upper[i]}]"
                    )
                target[i] = v
            t = tuple(target)
            merged[t] = merged.get(t, Fraction(0)) + p
        if abs(float(total) - 1.0) > 1e-9:
            raise ModelError(f"probabilities of [{action}] at {self.render(s)} sum to {float(total)!r}")
        return Distribution(tuple((t, p / total) for t, p in merged.items()))

    def label_set(self, s: StateVector) -> frozenset[str]:
        out = []
        for name, cond in self.labels:
            try:
                if cond(s):
                    out.append(name)
            except EvalError as exc:
                raise ModelError(f"label {name!r} at {self.render(s)}: {exc}") from exc
        return frozenset(out)


@functools.lru_cache(maxsize=32)
def compile_model(model: SymbolicModel) -> CompiledModel:
    return CompiledModel(model)


ModelLike = Union[SymbolicModel, CompiledModel]


def _compiled(model: ModelLike) -> CompiledModel:
    return model if isinstance(model, CompiledModel) else compile_model(model)


def initial_state(model: ModelLike) -> StateVector:
    return _compiled(model).initial_state()


def enabled_actions(model: ModelLike, s: StateVector) -> list[str]:
    """Actions with at least one true guard at ``s``, in first-appearance order.

    An empty list marks ``s`` as terminal.
    """
    return _compiled(model).enabled_actions(tuple(s))


def successor_distribution(model: ModelLike, s: StateVector, action: str) -> Distribution:
    """Evaluate all assignments against ``s`` and merge duplicate targets.

    Raises :class:`NondeterminismError` when two ``action`` commands are
    enabled and :class:`BoundError` when an update leaves a range.
    """
    return _compiled(model).successor_distribution(tuple(s), action)


def label_set(model: ModelLike, s: StateVector) -> frozenset[str]:
    return _compiled(model).label_set(tuple(s))
