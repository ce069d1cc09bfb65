"""Incremental construction of the policy-induced DTMC and explicit-state export."""

from __future__ import annotations

import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

from .oracle import ActionDecision, PolicyOracle
from .semantics import CompiledModel, StateVector

DEFAULT_BUDGET_S = 5 * 60 * 60


class Deadline:
    """Wall-clock budget shared by the build and check phases."""

    def __init__(self, budget_s: float = DEFAULT_BUDGET_S, start: float | None = None):
        if budget_s <= 0:
            raise ValueError("time budget must be positive")
        self.budget_s = budget_s
        self.start = time.monotonic() if start is None else start

    def elapsed(self) -> float:
        return time.monotonic() - self.start

    def expired(self) -> bool:
        return self.elapsed() > self.budget_s


@dataclass(frozen=True)
class BuildLimits:
    max_states: int = 0  # 0 = unlimited
    wall_clock_budget: float = DEFAULT_BUDGET_S

    def __post_init__(self):
        if self.wall_clock_budget <= 0:
            raise ValueError("wall_clock_budget must be positive")
        if self.max_states < 0:
            raise ValueError("max_states must be >= 0")


@dataclass
class BuildStats:
    num_states: int = 0
    num_transitions: int = 0
    terminal_self_loops: int = 0
    faulty_actions: int = 0
    llm_calls: int = 0
    cache_hits: int = 0
    build_time: float = 0.0
    timed_out: bool = False

    @property
    def num_transitions_without_self_loops(self) -> int:
        """Transitions excluding the self-loops added to terminal states."""
        return self.num_transitions - self.terminal_self_loops


class BuildTimeout(RuntimeError):
    def __init__(self, stats: BuildStats):
        super().__init__(f"time budget exhausted after {stats.num_states} states")
        self.stats = stats


class StateLimitExceeded(RuntimeError):
    def __init__(self, stats: BuildStats, limit: int):
        super().__init__(f"state limit {limit} exceeded")
        self.stats = stats


Row = list[tuple[int, Union[Fraction, float]]]


@dataclass
class InducedDtmc:
    """Reachable fragment of an MDP under a fixed policy; state 0 is initial."""

    states: list[StateVector]
    rows: list[Row]
    labels: list[frozenset[str]]
    chosen_action: list[str | None]
    stats: BuildStats = field(default_factory=BuildStats)
    decisions: list[ActionDecision | None] = field(default_factory=list)
    label_names: tuple[str, ...] = ()

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_transitions(self) -> int:
        return sum(len(r) for r in self.rows)

    def is_terminal(self, i: int) -> bool:
        return self.chosen_action[i] is None

    def states_with(self, label: str) -> set[int]:
        if label == "init":
            return {0}
        return {i for i, labs in enumerate(self.labels) if label in labs}

    @classmethod
    def from_rows(
        cls,
        rows: Sequence[Sequence[tuple[int, float]]],
        labels: Sequence[Sequence[str]] | None = None,
    ) -> "InducedDtmc":
        """Wrap a hand-written chain (states are just their indices)."""
        n = len(rows)
        labels = labels or [()] * n
        names: dict[str, None] = {}
        for labs in labels:
            for lab in labs:
                names.setdefault(lab, None)
        dtmc = cls(
            states=[(i,) for i in range(n)],
            rows=[sorted(list(r)) for r in rows],
            labels=[frozenset(l) for l in labels],
            chosen_action=["step"] * n,
            label_names=tuple(names),
        )
        dtmc.stats.num_states = n
        dtmc.stats.num_transitions = dtmc.num_transitions
        return dtmc


def build(
    model: CompiledModel,
    oracle: PolicyOracle,
    limits: BuildLimits = BuildLimits(),
    *,
    deadline: Deadline | None = None,
    prefetch_workers: int = 0,
) -> InducedDtmc:
    """Breadth-first expansion of exactly the states the policy can reach.

    Unseen successors are numbered in lexicographic state order, so indices
    depend only on the model and the policy, never on query completion order.
    Terminal states get a probability-one self-loop.
    """
    deadline = deadline or Deadline(limits.wall_clock_budget)
    started = time.monotonic()
    s0 = model.initial_state()
    model.check_state(s0)
    states: list[StateVector] = [s0]
    index: dict[StateVector, int] = {s0: 0}
    rows: list[Row] = [[]]
    chosen: list[str | None] = [None]
    decisions: list[ActionDecision | None] = [None]
    queue = deque([s0])
    pool = ThreadPoolExecutor(max_workers=prefetch_workers) if prefetch_workers > 0 else None

    def stats(timed_out: bool = False) -> BuildStats:
        return BuildStats(
            num_states=len(states),
            num_transitions=sum(len(r) for r in rows),
            terminal_self_loops=sum(1 for a in chosen if a is None),
            faulty_actions=sum(1 for d in decisions if d is not None and d.faulty),
            llm_calls=oracle.llm_calls,
            cache_hits=oracle.cache_hits,
            build_time=time.monotonic() - started,
            timed_out=timed_out,
        )

    def prefetch(s: StateVector) -> None:
        if pool is not None and model.enabled_actions(s):
            pool.submit(oracle.decide, s)

    try:
        prefetch(s0)
        while queue:
            if deadline.expired():
                raise BuildTimeout(stats(timed_out=True))
            s = queue.popleft()
            i = index[s]
            if not model.enabled_actions(s):
                rows[i] = [(i, Fraction(1))]
                continue
            decision = oracle.decide(s)
            dist = model.successor_distribution(s, decision.action)
            chosen[i] = decision.action
            decisions[i] = decision
            fresh = sorted(t for t, _ in dist if t not in index)
            for t in fresh:
                index[t] = len(states)
                states.append(t)
                rows.append([])
                chosen.append(None)
                decisions.append(None)
                queue.append(t)
                if limits.max_states and len(states) > limits.max_states:
                    raise StateLimitExceeded(stats(), limits.max_states)
                prefetch(t)
            rows[i] = sorted((index[t], p) for t, p in dist)
    finally:
        if pool is not None:
            pool.shutdown(wait=True, cancel_futures=True)

    dtmc = InducedDtmc(
        states=states,
        rows=rows,
        labels=[model.label_set(s) for s in states],
        chosen_action=chosen,
        decisions=decisions,
        label_names=tuple(name for name, _ in model.labels),
    )
    dtmc.stats = stats()
    return dtmc


# -- explicit-state files --------------------------------------------------


def format_probability(p: Union[Fraction, float]) -> str:
    """Shortest decimal that reads back as the same double; integers without '.0'."""
    x = float(p)
    if x.is_integer():
        return str(int(x))
    return repr(x)


def export_explicit(dtmc: InducedDtmc, tra_path: Union[str, Path], lab_path: Union[str, Path]) -> None:
    """Write the chain as a ``.tra`` transition file and a ``.lab`` label file."""
    tra = ["dtmc"]
    for src, row in enumerate(dtmc.rows):
        for dst, p in sorted(row):
            tra.append(f"{src} {dst} {format_probability(p)}")
    Path(tra_path).write_text("\n".join(tra) + "\n", encoding="utf-8")

    names = ["init"] + [n for n in dtmc.label_names if n != "init"]
    lab = ["#DECLARATION", " ".join(names), "#END"]
    for i, labs in enumerate(dtmc.labels):
        present = [n for n in names if n in labs or (n == "init" and i == 0)]
        if present:
            lab.append(f"{i}: {' '.join(present)}")
    Path(lab_path).write_text("\n".join(lab) + "\n", encoding="utf-8")
