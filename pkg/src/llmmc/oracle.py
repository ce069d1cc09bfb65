"""Policy oracles: state -> prompt -> raw output -> action.

An LLM policy is the composition of a prompt encoder, a text generator and
an action parser. Scripted and constant sources stand in for the generator
when no LLM is involved.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from concurrent.futures import Future
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import requests

from .semantics import CompiledModel, StateVector, compile_model

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "http://localhost:11434"
DEFAULT_SEED = 42
DEFAULT_NUM_PREDICT = 256
DEFAULT_REQUEST_TIMEOUT = 600.0

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_THINK = re.compile(r"<think>.*?(?:</think>|\Z)", re.DOTALL | re.IGNORECASE)
_TRIM = " \t\r\n.,;:!?\"'`*()[]{}<>"


class OracleError(RuntimeError):
    """The text generator could not be reached or returned garbage."""


class OracleInputError(ValueError):
    """Bad oracle inputs: unresolved placeholders, missing scripted entries."""


class FaultyActionError(OracleInputError):
    """Raised in strict mode when an output does not name an enabled action."""


@dataclass(frozen=True)
class PromptTemplate:
    text: str

    @property
    def required_vars(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.text))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))


def encode_state(
    template: PromptTemplate,
    values: Mapping[str, int],
    var_map: Mapping[str, str] | None = None,
) -> str:
    """Fill every ``{name}`` with the decimal value of its mapped state feature."""
    var_map = var_map or {}

    def fill(m: re.Match) -> str:
        name = m.group(1)
        feature = var_map.get(name, name)
        if feature not in values:
            raise OracleInputError(f"placeholder {{{name}}} does not resolve to a state variable")
        return str(int(values[feature]))

    return _PLACEHOLDER.sub(fill, template.text)


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "constant"  # "ollama", "scripted" or "constant"
    endpoint: str = DEFAULT_ENDPOINT
    model_name: str = ""
    seed: int = DEFAULT_SEED
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_NUM_PREDICT
    default_action: str | None = None
    cache_path: str | None = None
    request_timeout: float = DEFAULT_REQUEST_TIMEOUT
    strict_faulty: bool = False

    def __post_init__(self):
        if self.kind not in ("ollama", "scripted", "constant"):
            raise OracleInputError(f"unknown oracle kind {self.kind!r}")


@dataclass(frozen=True)
class ActionDecision:
    action: str
    raw_output: str
    faulty: bool
    source: str  # exact_match, keyword_match, fallback_default, fallback_first_enabled, scripted


# -- response cache --------------------------------------------------------


def cache_key(config: OracleConfig, prompt: str) -> str:
    payload = json.dumps(
        [config.model_name, config.seed, config.temperature, config.max_output_tokens, prompt],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only prompt cache, optionally persisted as JSON lines.

    Concurrent requests for the same key are collapsed into one computation.
    """

    def __init__(self, path: Union[str, Path, None] = None):
        self.path = Path(path) if path else None
        self._values: dict[str, str] = {}
        self._pending: dict[str, Future] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for n, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        entry = json.loads(line)
                        key, value = entry["key"], entry["value"]
                    except (ValueError, KeyError, TypeError) as exc:
                        raise OracleInputError(f"{self.path}:{n}: malformed cache entry") from exc
                    old = self._values.setdefault(key, value)
                    if old != value:
                        raise OracleInputError(f"{self.path}:{n}: conflicting values for key {key[:12]}")

    def __len__(self) -> int:
        return len(self._values)

    def get(self, key: str) -> str | None:
        return self._values.get(key)

    def get_or_compute(self, key: str, compute: Callable[[], str]) -> tuple[str, bool]:
        """Return ``(value, was_cached)``."""
        with self._lock:
            if key in self._values:
                return self._values[key], True
            fut = self._pending.get(key)
            owner = fut is None
            if owner:
                fut = self._pending[key] = Future()
        if not owner:
            return fut.result(), True
        try:
            value = compute()
        except BaseException as exc:
            with self._lock:
                del self._pending[key]
            fut.set_exception(exc)
            raise
        with self._lock:
            self._values[key] = value
            del self._pending[key]
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "value": value}, ensure_ascii=False) + "\n")
        fut.set_result(value)
        return value, False


# -- Ollama ----------------------------------------------------------------


class OllamaClient:
    """Minimal client for ``POST /api/generate`` with deterministic options."""

    def __init__(self, config: OracleConfig, cache: ResponseCache | None = None, session=None):
        self.config = config
        self.cache = cache if cache is not None else ResponseCache(config.cache_path)
        self.session = session or requests.Session()
        self.http_calls = 0
        self.cache_hits = 0
        self._count_lock = threading.Lock()

    @property
    def url(self) -> str:
        return self.config.endpoint.rstrip("/") + "/api/generate"

    def request_body(self, prompt: str) -> dict:
        return {
            "model": self.config.model_name,
            "prompt": prompt,
            "stream": False,
            "options": {
                "seed": self.config.seed,
                "temperature": self.config.temperature,
                "num_predict": self.config.max_output_tokens,
            },
        }

    def _post(self, prompt: str) -> str:
        with self._count_lock:
            self.http_calls += 1
        logger.debug("POST %s (prompt %d chars)", self.url, len(prompt))
        try:
            resp = self.session.post(self.url, json=self.request_body(prompt), timeout=self.config.request_timeout)
        except requests.Timeout as exc:
            raise OracleError(f"request to {self.url} timed out after {self.config.request_timeout}s") from exc
        except requests.RequestException as exc:
            raise OracleError(f"request to {self.url} failed: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise OracleError(f"{self.url} answered HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise OracleError(f"{self.url} returned a body that is not JSON") from exc
        if not isinstance(body, dict) or not isinstance(body.get("response"), str):
            raise OracleError(f"{self.url} returned JSON without a string 'response' field")
        return body["response"]

    def generate(self, prompt: str) -> str:
        value, cached = self.cache.get_or_compute(cache_key(self.config, prompt), lambda: self._post(prompt))
        if cached:
            with self._count_lock:
                self.cache_hits += 1
        return value


def query_llm(config: OracleConfig, prompt: str, client: OllamaClient | None = None) -> str:
    """Return the generator's text for ``prompt``, consulting the cache first.

    Transport failures, non-2xx answers, malformed bodies and timeouts raise
    :class:`OracleError`.
    """
    if config.kind != "ollama":
        raise OracleInputError(f"query_llm needs an ollama config, got {config.kind!r}")
    return (client or OllamaClient(config)).generate(prompt)


# -- action parsing --------------------------------------------------------


def parse_action(
    raw: str,
    declared_actions: Sequence[str],
    enabled: Sequence[str],
    default_action: str | None = None,
) -> ActionDecision:
    """Map raw generator output onto an enabled action.

    Reasoning blocks are dropped, then an exact (case-insensitive) match is
    tried, then the last whole-word mention of any declared action. Anything
    else, or a match that is not enabled, falls back to ``default_action``
    when enabled, else to the first enabled action.
    """
    if not enabled:
        raise ValueError("parse_action needs at least one enabled action")
    text = _THINK.sub(" ", raw).strip(_TRIM)
    by_lower = {a.lower(): a for a in declared_actions}

    match, source = None, None
    if text.lower() in by_lower:
        match, source = by_lower[text.lower()], "exact_match"
    elif declared_actions:
        pattern = r"(?<![A-Za-z0-9_])(" + "|".join(re.escape(a) for a in declared_actions) + r")(?![A-Za-z0-9_])"
        hits = list(re.finditer(pattern, text, re.IGNORECASE))
        if hits:
            match, source = by_lower[hits[-1].group(1).lower()], "keyword_match"

    if match is not None and match in enabled:
        return ActionDecision(match, raw, False, source)
    if default_action is not None and default_action in enabled:
        return ActionDecision(default_action, raw, True, "fallback_default")
    first = next(a for a in declared_actions if a in enabled) if set(enabled) & set(declared_actions) else enabled[0]
    return ActionDecision(first, raw, True, "fallback_first_enabled")


# -- sources and the composed policy --------------------------------------


class ConstantSource:
    def __init__(self, action: str):
        self.action = action

    def __call__(self, values: Mapping[str, int], rendered: str) -> str:
        return self.action


class ScriptedSource:
    """Looks actions up in a table keyed by canonical state rendering, or calls a rule."""

    def __init__(self, policy: Union[Mapping[str, str], Callable[[Mapping[str, int]], str]], name: str = "scripted"):
        self.policy = policy
        self.name = name

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScriptedSource":
        table = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(table, dict) or not all(isinstance(v, str) for v in table.values()):
            raise OracleInputError(f"{path}: scripted policy must be a JSON object of state -> action")
        return cls(table, name=str(path))

    def __call__(self, values: Mapping[str, int], rendered: str) -> str:
        if callable(self.policy):
            return self.policy(values)
        try:
            return self.policy[rendered]
        except KeyError:
            raise OracleInputError(f"scripted policy {self.name} has no entry for state {rendered}") from None


class LlmSource:
    def __init__(self, client: OllamaClient, template: PromptTemplate, var_map: Mapping[str, str] | None = None):
        self.client = client
        self.template = template
        self.var_map = dict(var_map or {})

    def __call__(self, values: Mapping[str, int], rendered: str) -> str:
        return self.client.generate(encode_state(self.template, values, self.var_map))


Source = Callable[[Mapping[str, int], str], str]


@dataclass
class PolicyOracle:
    """Memoryless policy over a model; each state is decided exactly once.

    Thread-safe: concurrent calls for one state share a single decision.
    """

    model: CompiledModel
    source: Source
    default_action: str | None = None
    strict: bool = False
    _memo: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @property
    def is_llm(self) -> bool:
        return isinstance(self.source, LlmSource)

    @property
    def llm_calls(self) -> int:
        return self.source.client.http_calls if self.is_llm else 0

    @property
    def cache_hits(self) -> int:
        return self.source.client.cache_hits if self.is_llm else 0

    def decide(self, s: StateVector) -> ActionDecision:
        with self._lock:
            fut = self._memo.get(s)
            owner = fut is None
            if owner:
                fut = self._memo[s] = Future()
        if owner:
            try:
                fut.set_result(self._decide(s))
            except BaseException as exc:
                fut.set_exception(exc)
        return fut.result()

    def _decide(self, s: StateVector) -> ActionDecision:
        enabled = self.model.enabled_actions(s)
        if not enabled:
            raise ValueError(f"state {self.model.render(s)} is terminal; it has no action to choose")
        rendered = self.model.render(s)
        raw = self.source(self.model.as_dict(s), rendered)
        if isinstance(self.source, (ConstantSource, ScriptedSource)):
            if raw in enabled:
                decision = ActionDecision(raw, raw, False, "scripted")
            else:
                decision = parse_action(raw, self.model.actions, enabled, self.default_action)
                if decision.source in ("exact_match", "keyword_match"):
                    decision = ActionDecision(decision.action, raw, False, "scripted")
        else:
            decision = parse_action(raw, self.model.actions, enabled, self.default_action)
        if decision.faulty:
            logger.info("faulty action at %s: %r -> %s", rendered, raw[:80], decision.action)
            if self.strict:
                raise FaultyActionError(f"output {raw[:80]!r} at state {rendered} does not name an enabled action")
        return decision


def make_oracle(
    model,
    config: OracleConfig,
    *,
    template: PromptTemplate | None = None,
    var_map: Mapping[str, str] | None = None,
    scripted: Union[Mapping[str, str], Callable, None] = None,
    constant_action: str | None = None,
    client: OllamaClient | None = None,
) -> PolicyOracle:
    """Assemble a :class:`PolicyOracle` for ``config.kind``."""
    compiled = model if isinstance(model, CompiledModel) else compile_model(model)
    if config.kind == "ollama":
        if template is None:
            raise OracleInputError("an ollama oracle needs a prompt template")
        missing = {var_map.get(n, n) if var_map else n for n in template.required_vars} - set(compiled.names)
        if missing:
            raise OracleInputError(f"template placeholders do not map to variables: {', '.join(sorted(missing))}")
        source: Source = LlmSource(client or OllamaClient(config), template, var_map)
    elif config.kind == "scripted":
        if scripted is None:
            raise OracleInputError("a scripted oracle needs a policy table or rule")
        source = scripted if isinstance(scripted, ScriptedSource) else ScriptedSource(scripted)
    else:
        if constant_action is None:
            raise OracleInputError("a constant oracle needs an action")
        if constant_action not in compiled.actions:
            raise OracleInputError(f"constant action {constant_action!r} is not an action of the model")
        source = ConstantSource(constant_action)
    if config.default_action is not None and config.default_action not in compiled.actions:
        raise OracleInputError(f"default action {config.default_action!r} is not an action of the model")
    return PolicyOracle(compiled, source, config.default_action, config.strict_faulty)


def decide(oracle: PolicyOracle, s: StateVector) -> ActionDecision:
    return oracle.decide(tuple(s))


def env_default(name: str, fallback: str | None) -> str | None:
    """Read an ``LLMMC_<NAME>`` environment override."""
    return os.environ.get(f"LLMMC_{name}", fallback)
