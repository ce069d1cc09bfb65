"""Command-line entry point: ``llmmc verify | build | table | list-benchmarks``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import benchmarks
from .dtmc import (
    DEFAULT_BUDGET_S,
    BuildLimits,
    BuildTimeout,
    Deadline,
    InducedDtmc,
    StateLimitExceeded,
    build,
    export_explicit,
)
from .oracle import (
    DEFAULT_ENDPOINT,
    DEFAULT_NUM_PREDICT,
    DEFAULT_SEED,
    FaultyActionError,
    OracleConfig,
    OracleError,
    OracleInputError,
    PromptTemplate,
    ScriptedSource,
    env_default,
    make_oracle,
)
from .pctl import (
    CheckTimeout,
    ConvergenceError,
    PropertyError,
    SolverOptions,
    atomic_propositions,
    check,
    format_formula,
    load_properties,
    parse_property,
)
from .prism import ModelError, parse_constant_value, parse_model, resolve_constants, validate_model
from .report import VerificationReport, render_table
from .semantics import compile_model

logger = logging.getLogger("llmmc")

EXIT_OK = 0
EXIT_VIOLATED = 2
EXIT_TIMEOUT = 3
EXIT_INPUT = 4
EXIT_ORACLE = 5


@dataclass
class RunConfig:
    model: str | None = None
    benchmark: str | None = None
    constants: dict[str, str] = field(default_factory=dict)
    prop: str | None = None
    prop_file: str | None = None
    prop_index: int = 0
    oracle: str = "constant"
    endpoint: str = DEFAULT_ENDPOINT
    llm: str = ""
    seed: int = DEFAULT_SEED
    temperature: float = 0.0
    num_predict: int = DEFAULT_NUM_PREDICT
    request_timeout: float = 600.0
    default_action: str | None = None
    strict_faulty: bool = False
    template: str | None = None
    var_map: str | None = None
    scripted_policy: str | None = None
    constant_action: str | None = None
    max_states: int = 0
    timeout_s: float = DEFAULT_BUDGET_S
    prefetch: int = 0
    cache: str | None = None
    export_tra: str | None = None
    export_lab: str | None = None
    decisions: str | None = None
    report: str | None = None


class _InputError(Exception):
    """Wraps any user-input problem so the pipeline can map it to exit code 4."""


def _read(path: str, what: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _InputError(f"cannot read {what} {path}: {exc.strerror or exc}") from exc


def _apply_benchmark(cfg: RunConfig) -> None:
    if not cfg.benchmark:
        return
    try:
        fx = benchmarks.fixture(cfg.benchmark)
    except KeyError as exc:
        raise _InputError(str(exc.args[0])) from exc
    cfg.model = cfg.model or str(fx.model_path)
    cfg.template = cfg.template or str(fx.template_path)
    cfg.var_map = cfg.var_map or str(fx.var_map_path)
    if cfg.prop is None and cfg.prop_file is None:
        cfg.prop_file = str(fx.props_path)
    if cfg.default_action is None:
        cfg.default_action = fx.default_action


def _property_text(cfg: RunConfig) -> str | None:
    if cfg.prop is not None:
        return cfg.prop
    if cfg.prop_file is None:
        return None
    props = load_properties(_read(cfg.prop_file, "property file"))
    if not 0 <= cfg.prop_index < len(props):
        raise _InputError(f"property file {cfg.prop_file} has no property #{cfg.prop_index}")
    return props[cfg.prop_index]


def _load_model(cfg: RunConfig):
    if not cfg.model:
        raise _InputError("no model given (use --model or --benchmark)")
    model = parse_model(_read(cfg.model, "model"))
    problems = validate_model(model)
    if problems:
        raise _InputError("model is invalid: " + "; ".join(str(d) for d in problems))
    overrides = {k: parse_constant_value(v) for k, v in cfg.constants.items()}
    return compile_model(resolve_constants(model, overrides))


def _scripted(cfg: RunConfig):
    ref = cfg.scripted_policy
    if not ref:
        raise _InputError("--oracle scripted needs --scripted-policy")
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if not cfg.benchmark:
            raise _InputError("builtin scripted policies need --benchmark")
        policies = benchmarks.scripted_policies(cfg.benchmark)
        if name not in policies:
            raise _InputError(f"benchmark {cfg.benchmark} has no policy {name!r}; choose from {', '.join(policies)}")
        return ScriptedSource(policies[name], name=name)
    try:
        return ScriptedSource.load(ref)
    except (OSError, ValueError) as exc:
        raise _InputError(f"cannot load scripted policy {ref}: {exc}") from exc


def _make_oracle(cfg: RunConfig, model):
    ocfg = OracleConfig(
        kind=cfg.oracle,
        endpoint=cfg.endpoint,
        model_name=cfg.llm,
        seed=cfg.seed,
        temperature=cfg.temperature,
        max_output_tokens=cfg.num_predict,
        default_action=cfg.default_action,
        cache_path=cfg.cache,
        request_timeout=cfg.request_timeout,
        strict_faulty=cfg.strict_faulty,
    )
    template = var_map = scripted = None
    if cfg.oracle == "ollama":
        if not cfg.template:
            raise _InputError("--oracle ollama needs --template")
        if not cfg.llm:
            raise _InputError("--oracle ollama needs --llm")
        template = PromptTemplate(_read(cfg.template, "template"))
        if cfg.var_map:
            try:
                var_map = json.loads(_read(cfg.var_map, "variable map"))
            except ValueError as exc:
                raise _InputError(f"variable map {cfg.var_map} is not JSON") from exc
    elif cfg.oracle == "scripted":
        scripted = _scripted(cfg)
    elif cfg.constant_action is None:
        raise _InputError("--oracle constant needs --constant-action")
    return make_oracle(
        model, ocfg, template=template, var_map=var_map, scripted=scripted, constant_action=cfg.constant_action
    )


def _write_decisions(dtmc: InducedDtmc, model, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, (s, d) in enumerate(zip(dtmc.states, dtmc.decisions)):
            entry = {"index": i, "state": model.render(s)}
            if d is not None:
                entry.update(action=d.action, source=d.source, faulty=d.faulty, raw_output=d.raw_output)
            fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


def _run(cfg: RunConfig, with_property: bool) -> tuple[VerificationReport, InducedDtmc | None]:
    deadline = Deadline(cfg.timeout_s) if cfg.timeout_s > 0 else None
    rep = VerificationReport()
    started = time.monotonic()
    dtmc = None
    try:
        if deadline is None:
            raise _InputError("--timeout-s must be positive")
        _apply_benchmark(cfg)
        rep.config = asdict(cfg)
        formula = None
        if with_property:
            text = _property_text(cfg)
            if text is None:
                raise _InputError("no property given (use --prop or --prop-file)")
            formula = parse_property(text)
            rep.property = format_formula(formula)
        model = _load_model(cfg)
        if formula is not None:
            unknown = atomic_propositions(formula) - set(model.model.label_names) - {"init"}
            if unknown:
                raise _InputError(f"unknown atomic proposition(s): {', '.join(sorted(unknown))}")
        oracle = _make_oracle(cfg, model)
        limits = BuildLimits(max_states=cfg.max_states, wall_clock_budget=cfg.timeout_s)
        dtmc = build(model, oracle, limits, deadline=deadline, prefetch_workers=cfg.prefetch)
        stats = dtmc.stats
        rep.num_states = stats.num_states
        rep.num_transitions = stats.num_transitions
        rep.num_transitions_without_self_loops = stats.num_transitions_without_self_loops
        rep.faulty_actions = stats.faulty_actions
        rep.llm_calls = stats.llm_calls
        rep.cache_hits = stats.cache_hits
        rep.build_time_s = stats.build_time
        if cfg.export_tra or cfg.export_lab:
            if not (cfg.export_tra and cfg.export_lab):
                raise _InputError("--export-tra and --export-lab must be given together")
            export_explicit(dtmc, cfg.export_tra, cfg.export_lab)
        if cfg.decisions:
            _write_decisions(dtmc, model, cfg.decisions)
        if formula is not None:
            t0 = time.monotonic()
            result = check(dtmc, formula, SolverOptions(deadline=deadline))
            rep.check_time_s = time.monotonic() - t0
            rep.result_value = result.value
            rep.satisfied = result.satisfied
            rep.boundary = result.boundary
            rep.check_method = result.method
            rep.check_iterations = result.iterations
            rep.check_residual = result.residual
            rep.cross_check_delta = result.cross_check_delta
            if result.boundary:
                rep.add_diagnostic("boundary", "result lies within 1e-8 of the threshold")
            if result.satisfied is False:
                rep.exit_code, rep.status = EXIT_VIOLATED, "violated"
    except (BuildTimeout, CheckTimeout) as exc:
        rep.exit_code, rep.status, rep.timed_out = EXIT_TIMEOUT, "timeout", True
        if isinstance(exc, BuildTimeout):
            rep.num_states = exc.stats.num_states
            rep.faulty_actions = exc.stats.faulty_actions
            rep.llm_calls = exc.stats.llm_calls
            rep.cache_hits = exc.stats.cache_hits
            rep.build_time_s = exc.stats.build_time
        rep.add_diagnostic("timeout", str(exc))
    except (StateLimitExceeded, ConvergenceError) as exc:
        rep.exit_code, rep.status = EXIT_TIMEOUT, "limit"
        rep.add_diagnostic("state_limit" if isinstance(exc, StateLimitExceeded) else "convergence", str(exc))
    except OracleError as exc:
        rep.exit_code, rep.status = EXIT_ORACLE, "oracle_error"
        rep.add_diagnostic("oracle", str(exc))
    except (_InputError, ModelError, PropertyError, OracleInputError) as exc:
        rep.exit_code, rep.status = EXIT_INPUT, "input_error"
        code = "faulty_action" if isinstance(exc, FaultyActionError) else "input"
        rep.add_diagnostic(code, str(exc))
    if not rep.config:
        rep.config = asdict(cfg)
    rep.total_time_s = time.monotonic() - started
    if cfg.report:
        rep.write(cfg.report)
    return rep, dtmc


def run_verify(cfg: RunConfig) -> VerificationReport:
    """parse -> validate -> resolve -> build -> check; see ``exit_code`` on the report."""
    return _run(cfg, with_property=True)[0]


def run_build_only(cfg: RunConfig) -> tuple[VerificationReport, InducedDtmc | None]:
    return _run(cfg, with_property=False)


# -- argument parsing ------------------------------------------------------


def _const(text: str) -> tuple[str, str]:
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    return name.strip(), value.strip()


def _pipeline_args(p: argparse.ArgumentParser, with_property: bool) -> None:
    p.add_argument("--model", help="PRISM model file")
    p.add_argument("--benchmark", choices=benchmarks.names(), help="use a bundled benchmark's model, template and properties")
    p.add_argument("--const", action="append", type=_const, default=[], metavar="NAME=VAL", help="constant override (repeatable)")
    if with_property:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--prop", help='PCTL property, e.g. \'P=? [ F "water" ]\'')
        g.add_argument("--prop-file", help="properties file, one per line, // comments")
        p.add_argument("--prop-index", type=int, default=0, help="which property of --prop-file to check (default 0)")
    p.add_argument("--oracle", choices=("ollama", "scripted", "constant"), default="constant")
    p.add_argument("--endpoint", default=None, help=f"Ollama base URL (env LLMMC_ENDPOINT, default {DEFAULT_ENDPOINT})")
    p.add_argument("--llm", default="", help="Ollama model name, e.g. llama3.2:3b")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--num-predict", type=int, default=DEFAULT_NUM_PREDICT, help="maximum output tokens")
    p.add_argument("--request-timeout", type=float, default=600.0, help="per-request timeout in seconds")
    p.add_argument("--default-action", help="fallback action for unparseable outputs")
    p.add_argument("--strict-faulty", action="store_true", help="abort (exit 4) on the first faulty action")
    p.add_argument("--template", help="prompt template with {placeholders}")
    p.add_argument("--var-map", help="JSON map placeholder -> model variable")
    p.add_argument("--scripted-policy", help="JSON state->action table, or builtin:<name> with --benchmark")
    p.add_argument("--constant-action", help="action played by --oracle constant")
    p.add_argument("--max-states", type=int, default=0, help="abort beyond this many states (0 = unlimited)")
    p.add_argument("--timeout-s", type=float, default=DEFAULT_BUDGET_S, help="wall-clock budget for build and check")
    p.add_argument("--prefetch", type=int, default=0, metavar="N", help="query the oracle for queued states with N threads")
    p.add_argument("--cache", default=None, help="JSON-lines response cache (env LLMMC_CACHE)")
    p.add_argument("--export-tra", help="write the induced chain's transitions here")
    p.add_argument("--export-lab", help="write the induced chain's labels here")
    p.add_argument("--decisions", help="write one JSON line per state with the chosen action")
    p.add_argument("--report", help="write the JSON report here")


def _config(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(
        model=ns.model,
        benchmark=ns.benchmark,
        constants=dict(ns.const),
        prop=getattr(ns, "prop", None),
        prop_file=getattr(ns, "prop_file", None),
        prop_index=getattr(ns, "prop_index", 0),
        oracle=ns.oracle,
        endpoint=ns.endpoint or env_default("ENDPOINT", DEFAULT_ENDPOINT),
        llm=ns.llm,
        seed=ns.seed,
        temperature=ns.temperature,
        num_predict=ns.num_predict,
        request_timeout=ns.request_timeout,
        default_action=ns.default_action,
        strict_faulty=ns.strict_faulty,
        template=ns.template,
        var_map=ns.var_map,
        scripted_policy=ns.scripted_policy,
        constant_action=ns.constant_action,
        max_states=ns.max_states,
        timeout_s=ns.timeout_s,
        prefetch=ns.prefetch,
        cache=ns.cache or env_default("CACHE", None),
        export_tra=ns.export_tra,
        export_lab=ns.export_lab,
        decisions=ns.decisions,
        report=ns.report,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llmmc", description="Model check memoryless LLM policies on PRISM MDPs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    verify = sub.add_parser("verify", help="build the induced DTMC and check a property")
    _pipeline_args(verify, with_property=True)
    build_p = sub.add_parser("build", help="build and export the induced DTMC without checking")
    _pipeline_args(build_p, with_property=False)
    table = sub.add_parser("table", help="render a table from a directory of JSON reports")
    table.add_argument("directory", nargs="?")
    table.add_argument("--table", dest="table_dir", metavar="DIR")
    sub.add_parser("list-benchmarks", help="print bundled benchmark files")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")

    if ns.command == "list-benchmarks":
        for name in benchmarks.names():
            fx = benchmarks.fixture(name)
            print(f"{name}:")
            for kind, path in (("model", fx.model_path), ("template", fx.template_path), ("var_map", fx.var_map_path), ("properties", fx.props_path)):
                print(f"  {kind}: {path}")
            print(f"  policies: {', '.join(fx.policies)}")
        return EXIT_OK
    if ns.command == "table":
        directory = ns.table_dir or ns.directory
        if not directory or not Path(directory).is_dir():
            print("table: need a directory of reports", file=sys.stderr)
            return EXIT_INPUT
        sys.stdout.write(render_table(directory))
        return EXIT_OK

    cfg = _config(ns)
    rep, _ = _run(cfg, with_property=ns.command == "verify")
    for d in rep.diagnostics:
        print(f"{d['code']}: {d['message']}", file=sys.stderr)
    if rep.exit_code in (EXIT_OK, EXIT_VIOLATED):
        if rep.property is not None:
            verdict = "" if rep.satisfied is None else (" (satisfied)" if rep.satisfied else " (violated)")
            print(f"{rep.property} = {rep.result_value:.10g}{verdict}")
        print(
            f"states={rep.num_states} transitions={rep.num_transitions} faulty_actions={rep.faulty_actions} "
            f"llm_calls={rep.llm_calls} cache_hits={rep.cache_hits}"
        )
    elif rep.timed_out:
        print("TO (time budget exhausted)")
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
