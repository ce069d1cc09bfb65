"""Verification reports (JSON) and the aggregate text table."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import __version__

SCHEMA_VERSION = 1
TIME_FIELDS = ("build_time_s", "check_time_s", "total_time_s")
RESULT_FIELDS = ("result_value", "satisfied", "boundary", "check_method", "check_iterations", "check_residual", "cross_check_delta")


@dataclass
class VerificationReport:
    exit_code: int = 0
    status: str = "ok"  # ok, violated, timeout, input_error, oracle_error
    property: str | None = None
    result_value: float | None = None
    satisfied: bool | None = None
    boundary: bool = False
    check_method: str | None = None
    check_iterations: int | None = None
    check_residual: float | None = None
    cross_check_delta: float | None = None
    num_states: int | None = None
    num_transitions: int | None = None
    num_transitions_without_self_loops: int | None = None
    build_time_s: float | None = None
    check_time_s: float | None = None
    total_time_s: float | None = None
    faulty_actions: int | None = None
    llm_calls: int | None = None
    cache_hits: int | None = None
    timed_out: bool = False
    diagnostics: list[dict[str, str]] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def add_diagnostic(self, code: str, message: str) -> None:
        self.diagnostics.append({"code": code, "message": message})

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        if self.timed_out:
            for key in RESULT_FIELDS:
                data.pop(key, None)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def without_times(report: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in report.items() if k not in TIME_FIELDS}


def _fmt_value(v: float | None) -> str:
    if v is None:
        return "-"
    return f"{v:.2f}".rstrip("0").rstrip(".") if v not in (0.0, 1.0) else str(int(v))


def render_table(directory) -> str:
    """One row per ``*.json`` report in ``directory``, in file-name order."""
    header = ["Env.", "PCTL Query", "Result", "LLM", "States", "Transitions", "Time (s)", "Faulty Actions"]
    rows = [header]
    for path in sorted(Path(directory).glob("*.json")):
        try:
            rep = json.loads(path.read_text(encoding="utf-8"))
        except ValueError:
            continue
        if not isinstance(rep, dict) or "schema_version" not in rep:
            continue
        cfg = rep.get("config", {})
        env = cfg.get("benchmark") or Path(cfg.get("model") or path.stem).stem
        policy = cfg.get("llm") if cfg.get("oracle") == "ollama" else cfg.get("scripted_policy") or cfg.get("constant_action") or cfg.get("oracle")
        if rep.get("timed_out"):
            rows.append([env, rep.get("property") or "-", "TO", str(policy), "TO", "TO", "TO", "TO"])
            continue
        total = (rep.get("build_time_s") or 0.0) + (rep.get("check_time_s") or 0.0)
        rows.append(
            [
                env,
                rep.get("property") or "-",
                _fmt_value(rep.get("result_value")),
                str(policy),
                str(rep.get("num_states", "-")),
                str(rep.get("num_transitions", "-")),
                f"{total:.2f}",
                str(rep.get("faulty_actions", "-")),
            ]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
