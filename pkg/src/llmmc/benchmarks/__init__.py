"""Bundled benchmark environments: Frozen Lake, Taxi (fuel task) and Stock Market.

Each fixture ships a model, a prompt template with its placeholder map, a
properties file and a few scripted reference policies that stand in for an
LLM in tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from ..oracle import PromptTemplate
from ..prism import SymbolicModel, parse_model, resolve_constants
from ..pctl import load_properties

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_VERSION = "1"

Rule = Callable[[Mapping[str, int]], str]

# -- frozen lake -----------------------------------------------------------

GRID = 4
HOLES = frozenset({5, 7, 11, 12})
GOAL = 15
ABSORBING = 16
_MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
_SIDEWAYS = {"up": ("left", "right"), "down": ("left", "right"), "left": ("up", "down"), "right": ("up", "down")}


def grid_move(pos: int, direction: str) -> int:
    """Cell reached from ``pos`` moving one step; the grid edge blocks the move."""
    row, col = divmod(pos, GRID)
    dr, dc = _MOVES[direction]
    r, c = row + dr, col + dc
    if 0 <= r < GRID and 0 <= c < GRID:
        return r * GRID + c
    return pos


def slip_outcomes(pos: int, action: str) -> list[int]:
    """The three equally likely landing cells for ``action`` at ``pos``."""
    return [grid_move(pos, action)] + [grid_move(pos, d) for d in _SIDEWAYS[action]]


def _hole_avoiding(state: Mapping[str, int]) -> str:
    pos = state["pos"]
    if pos in HOLES or pos >= GOAL:
        return "down"
    # fewest slip outcomes in a hole; ties go to the first action listed
    return min(("down", "right", "left", "up"), key=lambda a: sum(t in HOLES for t in slip_outcomes(pos, a)))


# -- taxi ------------------------------------------------------------------

GAS_STATION = (1, 2)


def _greedy_toward_gas(state: Mapping[str, int]) -> str:
    x, y = state["x"], state["y"]
    gx, gy = GAS_STATION
    if x != gx:
        return "right" if x < gx else "left"
    if y != gy:
        return "up" if y < gy else "down"
    return "up"  # at the station: step away and come straight back


# -- stock market ----------------------------------------------------------


def _can_buy(state: Mapping[str, int]) -> bool:
    return state["capital"] // state["buy_price"] >= 1


def _sell_when_holding(state: Mapping[str, int]) -> str:
    return "sell" if state["stocks"] > 0 else "hold"


def _round_trip(state: Mapping[str, int]) -> str:
    if state["stocks"] > 0:
        return "sell"
    return "buy" if _can_buy(state) else "hold"


POLICIES: dict[str, dict[str, Rule]] = {
    "frozen_lake": {
        "constant_down": lambda s: "down",
        "constant_right": lambda s: "right",
        "hole_avoiding": _hole_avoiding,
    },
    "taxi": {
        "greedy_toward_gas": _greedy_toward_gas,
        "constant_up": lambda s: "up",
    },
    "stock_market": {
        "hold_only": lambda s: "hold",
        "sell_when_holding": _sell_when_holding,
        "round_trip": _round_trip,
    },
}

DEFAULT_ACTIONS = {"frozen_lake": None, "taxi": None, "stock_market": "hold"}


@dataclass(frozen=True)
class BenchmarkFixture:
    name: str
    model_path: Path
    template_path: Path
    var_map_path: Path
    props_path: Path
    default_action: str | None = None
    policies: Mapping[str, Rule] = field(default_factory=dict)

    def load_model(self) -> SymbolicModel:
        return resolve_constants(parse_model(self.model_path.read_text(encoding="utf-8")))

    def template(self) -> PromptTemplate:
        return PromptTemplate.load(self.template_path)

    def var_map(self) -> dict[str, str]:
        return json.loads(self.var_map_path.read_text(encoding="utf-8"))

    def properties(self) -> list[str]:
        return load_properties(self.props_path.read_text(encoding="utf-8"))


def names() -> list[str]:
    return list(POLICIES)


def fixture(name: str) -> BenchmarkFixture:
    if name not in POLICIES:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(POLICIES)}")
    return BenchmarkFixture(
        name=name,
        model_path=DATA_DIR / f"{name}.prism",
        template_path=DATA_DIR / f"{name}.template.txt",
        var_map_path=DATA_DIR / f"{name}.varmap.json",
        props_path=DATA_DIR / f"{name}.props",
        default_action=DEFAULT_ACTIONS[name],
        policies=POLICIES[name],
    )


def scripted_policies(name: str) -> dict[str, Rule]:
    """Scripted reference policies of a benchmark, keyed by policy name."""
    return dict(fixture(name).policies)


def policy_table(rule: Rule, states, names_: tuple[str, ...]) -> dict[str, str]:
    """Materialise a rule as a ``"v1=..;v2=.."`` -> action table for ``states``."""
    table = {}
    for s in states:
        values = dict(zip(names_, s))
        table[";".join(f"{n}={v}" for n, v in values.items())] = rule(values)
    return table
