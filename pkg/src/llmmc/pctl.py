"""PCTL state formulas over induced DTMCs: parsing and numerical checking."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .dtmc import Deadline, InducedDtmc

TOLERANCE = 1e-8
MAX_ITERATIONS = 10**6
DIRECT_MAX_STATES = 2000
AGREEMENT = 1e-6


class PropertyError(ValueError):
    """Malformed property text or a property that does not fit the chain."""


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"value iteration did not converge: residual {residual:.3g} after {iterations} iterations")
        self.iterations = iterations
        self.residual = residual


class CheckTimeout(RuntimeError):
    pass


# -- formula AST -----------------------------------------------------------


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Ap:
    name: str


@dataclass(frozen=True)
class Not:
    arg: "StateFormula"


@dataclass(frozen=True)
class And:
    left: "StateFormula"
    right: "StateFormula"


@dataclass(frozen=True)
class Or:
    left: "StateFormula"
    right: "StateFormula"


@dataclass(frozen=True)
class Next:
    arg: "StateFormula"


@dataclass(frozen=True)
class Until:
    left: "StateFormula"
    right: "StateFormula"
    bound: int | None = None  # step bound k for U<=k


@dataclass(frozen=True)
class Globally:
    arg: "StateFormula"
    bound: int | None = None


PathFormula = Union[Next, Until, Globally]


@dataclass(frozen=True)
class Prob:
    path: PathFormula
    relation: str | None = None  # one of <, <=, >, >=; None for P=?
    threshold: float | None = None

    @property
    def is_query(self) -> bool:
        return self.relation is None


StateFormula = Union[TrueF, Ap, Not, And, Or, Prob]


def eventually(arg: StateFormula, bound: int | None = None) -> Until:
    return Until(TrueF(), arg, bound)


def atomic_propositions(f) -> set[str]:
    if isinstance(f, Ap):
        return {f.name}
    out: set[str] = set()
    for part in vars(f).values():
        if isinstance(part, (TrueF, Ap, Not, And, Or, Prob, Next, Until, Globally)):
            out |= atomic_propositions(part)
    return out


# -- parsing ---------------------------------------------------------------

_TOKENS = re.compile(
    r"""\s*(?:
        (?P<string>"[^"]*")
      | (?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
      | (?P<op><=|>=|=\?|[<>\[\]()!&|=:])
      | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    )""",
    re.VERBOSE,
)


class _PropParser:
    def __init__(self, text: str):
        self.text = text
        self.toks: list[tuple[str, str, int]] = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKENS.match(text, pos)
            if m is None or m.end() == pos:
                raise PropertyError(f"unexpected character {text[pos]!r} at column {pos + 1}")
            kind = m.lastgroup
            self.toks.append((kind, m.group(kind), m.start(kind) + 1))
            pos = m.end()
        self.toks.append(("eof", "", len(text) + 1))
        self.i = 0
        self.depth = 0

    def peek(self, offset: int = 0) -> tuple[str, str, int]:
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def error(self, message: str) -> PropertyError:
        _, text, col = self.peek()
        return PropertyError(f"column {col}: {message} (found {text or 'end of input'!r})")

    def accept(self, text: str) -> bool:
        kind, tok, _ = self.peek()
        if tok == text and kind in ("op", "word"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            raise self.error(f"expected {text!r}")

    def parse(self) -> StateFormula:
        # optional property name: "name": formula
        if self.peek()[0] == "string" and self.peek(1)[1] == ":":
            self.i += 2
        f = self.state()
        if self.peek()[0] != "eof":
            raise self.error("unexpected trailing input")
        return f

    def state(self) -> StateFormula:
        self.depth += 1
        if self.depth > 200:
            raise self.error("formula nested too deeply")
        try:
            left = self.conj()
            while self.accept("|"):
                left = Or(left, self.conj())
            return left
        finally:
            self.depth -= 1

    def conj(self) -> StateFormula:
        left = self.neg()
        while self.accept("&"):
            left = And(left, self.neg())
        return left

    def neg(self) -> StateFormula:
        if self.accept("!"):
            self.depth += 1
            if self.depth > 200:
                raise self.error("formula nested too deeply")
            try:
                return Not(self.neg())
            finally:
                self.depth -= 1
        return self.atom()

    def atom(self) -> StateFormula:
        kind, tok, _ = self.peek()
        if kind == "string":
            self.i += 1
            return Ap(tok[1:-1])
        if kind == "word" and tok == "true":
            self.i += 1
            return TrueF()
        if kind == "word" and tok == "false":
            self.i += 1
            return Not(TrueF())
        if kind == "word" and tok in ("R", "Rmin", "Rmax", "S", "E", "A", "LRA"):
            raise self.error(f"'{tok}' operators are not supported; only P operators are")
        if kind == "word" and tok in ("Pmin", "Pmax"):
            raise self.error("Pmin/Pmax are for MDPs; induced chains have no choices left, use P")
        if kind == "word" and tok == "P":
            self.i += 1
            return self.prob()
        if self.accept("("):
            f = self.state()
            self.expect(")")
            return f
        raise self.error("expected a state formula")

    def prob(self) -> Prob:
        relation = threshold = None
        if self.accept("=?"):
            pass
        else:
            kind, tok, _ = self.peek()
            if tok not in ("<", "<=", ">", ">="):
                raise self.error("expected '=?' or a comparison after P")
            self.i += 1
            relation = tok
            threshold = self.number()
            if not 0.0 <= threshold <= 1.0:
                raise PropertyError(f"probability threshold {threshold} outside [0, 1]")
        self.expect("[")
        path = self.path()
        self.expect("]")
        return Prob(path, relation, threshold)

    def number(self) -> float:
        kind, tok, _ = self.peek()
        if kind != "number":
            raise self.error("expected a number")
        self.i += 1
        return float(tok)

    def step_bound(self) -> int | None:
        kind, tok, _ = self.peek()
        if kind == "op" and tok in ("<", "<="):
            self.i += 1
            k = self.number()
            if k != int(k) or k < 0:
                raise self.error("step bound must be a non-negative integer")
            k = int(k)
            if tok == "<":
                if k == 0:
                    raise PropertyError("step bound '<0' is empty")
                k -= 1
            return k
        return None

    def path(self) -> PathFormula:
        kind, tok, _ = self.peek()
        if kind == "word" and tok == "X":
            self.i += 1
            return Next(self.state())
        if kind == "word" and tok == "F":
            self.i += 1
            k = self.step_bound()
            return eventually(self.state(), k)
        if kind == "word" and tok == "G":
            self.i += 1
            k = self.step_bound()
            return Globally(self.state(), k)
        left = self.state()
        if self.peek()[1] == "U" and self.peek()[0] == "word":
            self.i += 1
            k = self.step_bound()
            return Until(left, self.state(), k)
        raise self.error("expected a path formula (X, F, G or U)")


def parse_property(text: str) -> StateFormula:
    """Parse PCTL text such as ``P=? [ F "water" ]`` or ``P<0.1 [ "a" U<=5 "b" ]``."""
    if not isinstance(text, str):
        raise PropertyError("property must be text")
    return _PropParser(text).parse()


def load_properties(text: str) -> list[str]:
    """Property lines from a ``.props`` file; ``//`` comments and blanks are skipped."""
    out = []
    for line in text.splitlines():
        line = line.split("//", 1)[0].strip()
        if line:
            out.append(line)
    return out


def format_formula(f) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, Ap):
        return f'"{f.name}"'
    if isinstance(f, Not):
        return f"!{_wrap(f.arg)}"
    if isinstance(f, And):
        return f"{_wrap(f.left)} & {_wrap(f.right)}"
    if isinstance(f, Or):
        return f"{_wrap(f.left)} | {_wrap(f.right)}"
    if isinstance(f, Prob):
        head = "P=?" if f.is_query else f"P{f.relation}{f.threshold:g}"
        return f"{head} [ {format_formula(f.path)} ]"
    bound = "" if getattr(f, "bound", None) is None else f"<={f.bound}"
    if isinstance(f, Next):
        return f"X {_wrap(f.arg)}"
    if isinstance(f, Until):
        if isinstance(f.left, TrueF):
            return f"F{bound} {_wrap(f.right)}"
        return f"{_wrap(f.left)} U{bound} {_wrap(f.right)}"
    if isinstance(f, Globally):
        return f"G{bound} {_wrap(f.arg)}"
    raise TypeError(f"not a formula: {f!r}")


def _wrap(f) -> str:
    text = format_formula(f)
    return f"({text})" if isinstance(f, (And, Or)) else text


# -- checking --------------------------------------------------------------


@dataclass(frozen=True)
class SolverOptions:
    method: str = "auto"  # auto, value_iteration, direct
    tolerance: float = TOLERANCE
    max_iterations: int = MAX_ITERATIONS
    direct_max_states: int = DIRECT_MAX_STATES
    cross_check: bool = True
    deadline: Deadline | None = None


@dataclass(frozen=True)
class CheckResult:
    value: float
    satisfied: bool | None
    iterations: int
    residual: float
    method: str  # graph_only, value_iteration, direct_solve, bounded_iteration
    boundary: bool = False
    cross_check_delta: float | None = None


def qualitative_sets(
    dtmc: InducedDtmc,
    target: Iterable[int],
    constraint: Iterable[int] | None = None,
) -> tuple[frozenset[int], frozenset[int]]:
    """States reaching ``target`` (through ``constraint`` states) with probability 0 and 1.

    Pure graph search: prob0 is the complement of backward reachability from
    the target; prob1 is the complement of backward reachability from prob0
    through constraint states that are not targets.
    """
    n = dtmc.num_states
    target = set(target)
    allowed = set(range(n)) if constraint is None else set(constraint)
    preds: list[list[int]] = [[] for _ in range(n)]
    for i, row in enumerate(dtmc.rows):
        for j, p in row:
            if p > 0:
                preds[j].append(i)

    def backward(start: set[int], through: set[int]) -> set[int]:
        seen = set(start)
        todo = deque(start)
        while todo:
            j = todo.popleft()
            for i in preds[j]:
                if i not in seen and i in through:
                    seen.add(i)
                    todo.append(i)
        return seen

    can_reach = backward(target, allowed - target)
    prob0 = frozenset(set(range(n)) - can_reach)
    reach_zero = backward(set(prob0), allowed - target)
    prob1 = frozenset(set(range(n)) - reach_zero)
    return prob0, prob1


class _Checker:
    def __init__(self, dtmc: InducedDtmc, opts: SolverOptions):
        self.dtmc = dtmc
        self.opts = opts
        self.n = dtmc.num_states
        self.rows = [[(j, float(p)) for j, p in row] for row in dtmc.rows]
        self.top: CheckResult | None = None

    def _tick(self) -> None:
        if self.opts.deadline is not None and self.opts.deadline.expired():
            raise CheckTimeout("time budget exhausted during model checking")

    # boolean satisfaction sets
    def sat(self, f) -> np.ndarray:
        if isinstance(f, TrueF):
            return np.ones(self.n, dtype=bool)
        if isinstance(f, Ap):
            out = np.zeros(self.n, dtype=bool)
            out[list(self.dtmc.states_with(f.name))] = True
            return out
        if isinstance(f, Not):
            return ~self.sat(f.arg)
        if isinstance(f, And):
            return self.sat(f.left) & self.sat(f.right)
        if isinstance(f, Or):
            return self.sat(f.left) | self.sat(f.right)
        if isinstance(f, Prob):
            values, _ = self.prob(f.path)
            return _compare(values, f.relation, f.threshold)
        raise PropertyError(f"not a state formula: {f!r}")

    def prob(self, path) -> tuple[np.ndarray, dict]:
        if isinstance(path, Next):
            phi = self.sat(path.arg).astype(float)
            values = np.array([sum(p * phi[j] for j, p in row) for row in self.rows])
            return values, {"method": "bounded_iteration", "iterations": 1, "residual": 0.0}
        if isinstance(path, Until):
            left, right = self.sat(path.left), self.sat(path.right)
            if path.bound is None:
                return self.until(left, right)
            return self.bounded_until(left, right, path.bound)
        if isinstance(path, Globally):
            values, info = self.prob(Until(TrueF(), Not(path.arg), path.bound))
            return 1.0 - values, info
        raise PropertyError(f"not a path formula: {path!r}")

    def bounded_until(self, left: np.ndarray, right: np.ndarray, k: int):
        x = right.astype(float)
        active = [i for i in range(self.n) if left[i] and not right[i]]
        for step in range(k):
            if step % 1000 == 0:
                self._tick()
            new = x.copy()
            for i in active:
                new[i] = sum(p * x[j] for j, p in self.rows[i])
            x = new
        return x, {"method": "bounded_iteration", "iterations": k, "residual": 0.0}

    def until(self, left: np.ndarray, right: np.ndarray):
        target = np.flatnonzero(right).tolist()
        constraint = np.flatnonzero(left).tolist()
        prob0, prob1 = qualitative_sets(self.dtmc, target, constraint)
        x = np.zeros(self.n)
        x[list(prob1)] = 1.0
        unknown = [i for i in range(self.n) if i not in prob0 and i not in prob1]
        if not unknown:
            return x, {"method": "graph_only", "iterations": 0, "residual": 0.0}
        method = self.opts.method
        if method == "auto":
            method = "direct" if len(unknown) <= self.opts.direct_max_states else "value_iteration"
        info: dict = {}
        if method == "direct":
            vals = self.direct(unknown, prob1)
            info = {"method": "direct_solve", "iterations": 0, "residual": 0.0}
            if self.opts.cross_check:
                vi, it, res = self.value_iteration(unknown, prob1)
                info["cross_check_delta"] = float(np.max(np.abs(vi - vals)))
        elif method == "value_iteration":
            vals, it, res = self.value_iteration(unknown, prob1)
            info = {"method": "value_iteration", "iterations": it, "residual": res}
            if self.opts.cross_check and len(unknown) <= self.opts.direct_max_states:
                info["cross_check_delta"] = float(np.max(np.abs(self.direct(unknown, prob1) - vals)))
        else:
            raise PropertyError(f"unknown solver method {method!r}")
        x[unknown] = np.clip(vals, 0.0, 1.0)
        return x, info

    def _system(self, unknown: list[int], prob1: frozenset[int]):
        pos = {s: k for k, s in enumerate(unknown)}
        b = np.zeros(len(unknown))
        coeffs: list[list[tuple[int, float]]] = []
        for k, s in enumerate(unknown):
            row = []
            for j, p in self.rows[s]:
                if j in pos:
                    row.append((pos[j], p))
                elif j in prob1:
                    b[k] += p
            coeffs.append(row)
        return coeffs, b

    def direct(self, unknown: list[int], prob1: frozenset[int]) -> np.ndarray:
        coeffs, b = self._system(unknown, prob1)
        m = len(unknown)
        a = np.eye(m)
        for k, row in enumerate(coeffs):
            for j, p in row:
                a[k, j] -= p
        return np.linalg.solve(a, b)

    def value_iteration(self, unknown: list[int], prob1: frozenset[int]):
        """Interval iteration: Gauss-Seidel sweeps from below (0) and above (1).

        After the graph precomputation the fixpoint is unique, so both
        sequences converge to it and their gap bounds the error; a plain
        change-between-sweeps test does not, on slowly mixing chains.
        Returns the midpoint once half the gap is below tolerance.
        """
        coeffs, b = self._system(unknown, prob1)
        lo = [0.0] * len(unknown)
        hi = [1.0] * len(unknown)
        bl = b.tolist()
        gap = 1.0
        it = 0
        while it < self.opts.max_iterations:
            it += 1
            if it % 1000 == 0:
                self._tick()
            gap = 0.0
            for k, row in enumerate(coeffs):
                v = w = bl[k]
                for j, p in row:
                    v += p * lo[j]
                    w += p * hi[j]
                lo[k] = v
                hi[k] = w
                if w - v > gap:
                    gap = w - v
            if gap / 2 < self.opts.tolerance:
                mid = (np.array(lo) + np.array(hi)) / 2
                return mid, it, gap / 2
        raise ConvergenceError(it, gap / 2)


def _compare(values: np.ndarray, relation: str, threshold: float) -> np.ndarray:
    if relation == "<":
        return values < threshold
    if relation == "<=":
        return values <= threshold
    if relation == ">":
        return values > threshold
    return values >= threshold


def check(
    dtmc: InducedDtmc,
    formula: Union[StateFormula, str],
    opts: SolverOptions = SolverOptions(),
) -> CheckResult:
    """Evaluate ``formula`` at the initial state (index 0) of ``dtmc``."""
    if isinstance(formula, str):
        formula = parse_property(formula)
    known = set(dtmc.label_names) | {"init"}
    for labs in dtmc.labels:
        known |= labs
    unknown = atomic_propositions(formula) - known
    if unknown:
        raise PropertyError(f"unknown atomic proposition(s): {', '.join(sorted(unknown))}")
    checker = _Checker(dtmc, opts)
    if isinstance(formula, Prob):
        values, info = checker.prob(formula.path)
        value = float(min(max(values[0], 0.0), 1.0))
        satisfied = boundary = None
        if not formula.is_query:
            satisfied = bool(_compare(np.array([value]), formula.relation, formula.threshold)[0])
            boundary = abs(value - formula.threshold) <= TOLERANCE
        return CheckResult(
            value=value,
            satisfied=satisfied,
            iterations=info["iterations"],
            residual=info["residual"],
            method=info["method"],
            boundary=bool(boundary),
            cross_check_delta=info.get("cross_check_delta"),
        )
    truth = bool(checker.sat(formula)[0])
    return CheckResult(value=float(truth), satisfied=truth, iterations=0, residual=0.0, method="graph_only")


def state_values(dtmc: InducedDtmc, path, opts: SolverOptions = SolverOptions()) -> np.ndarray:
    """Probability of ``path`` from every state (useful for tests and diagnostics)."""
    values, _ = _Checker(dtmc, opts).prob(path)
    return values
