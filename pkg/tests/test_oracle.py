import json
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import answer
from llmmc.oracle import (
    FaultyActionError,
    OllamaClient,
    OracleConfig,
    OracleError,
    OracleInputError,
    PromptTemplate,
    ResponseCache,
    cache_key,
    encode_state,
    make_oracle,
    parse_action,
    query_llm,
)

LAKE = ("up", "left", "down", "right")
STOCK = ("buy", "sell", "hold")


def test_encode_state_fills_placeholders():
    t = PromptTemplate("Current State: pos={pos}\nAct.")
    assert encode_state(t, {"pos": 6}) == "Current State: pos=6\nAct."


def test_encode_state_with_var_map():
    t = PromptTemplate("x-coordinate={cx};fuel={f}")
    assert encode_state(t, {"x": 1, "fuel": 7}, {"cx": "x", "f": "fuel"}) == "x-coordinate=1;fuel=7"


def test_encode_state_unknown_placeholder():
    with pytest.raises(OracleInputError):
        encode_state(PromptTemplate("{nope}"), {"pos": 1})


@pytest.mark.parametrize(
    "raw, enabled, default, action, source",
    [
        ("RIGHT", LAKE, None, "right", "exact_match"),
        ("<think>go up? no</think>\nDOWN", LAKE, None, "down", "exact_match"),
        ("I would move left, then right.", LAKE, None, "right", "keyword_match"),
        ("upward", LAKE, None, "up", "fallback_first_enabled"),
        ("banana", STOCK, "hold", "hold", "fallback_default"),
        ("banana", ("sell", "hold"), None, "sell", "fallback_first_enabled"),
        ("buy", ("sell", "hold"), "hold", "hold", "fallback_default"),
        ("<think>unfinished reasoning about buy", STOCK, "hold", "hold", "fallback_default"),
    ],
)
def test_parse_action(raw, enabled, default, action, source):
    declared = STOCK if "hold" in enabled else LAKE
    d = parse_action(raw, declared, list(enabled), default)
    assert (d.action, d.source) == (action, source)
    assert d.faulty == source.startswith("fallback")
    assert d.raw_output == raw


@given(st.text(max_size=200))
def test_parse_action_always_returns_enabled(raw):
    d = parse_action(raw, LAKE, ["left", "down"], None)
    assert d.action in ("left", "down")


def test_cache_key_depends_on_every_option():
    base = OracleConfig(kind="ollama", model_name="m")
    keys = {
        cache_key(base, "p"),
        cache_key(OracleConfig(kind="ollama", model_name="m2"), "p"),
        cache_key(OracleConfig(kind="ollama", model_name="m", seed=1), "p"),
        cache_key(OracleConfig(kind="ollama", model_name="m", temperature=0.5), "p"),
        cache_key(OracleConfig(kind="ollama", model_name="m", max_output_tokens=9), "p"),
        cache_key(base, "q"),
    }
    assert len(keys) == 6


def test_cache_persists_and_detects_conflicts(tmp_path):
    path = tmp_path / "c.jsonl"
    c = ResponseCache(path)
    assert c.get_or_compute("k", lambda: "v") == ("v", False)
    assert c.get_or_compute("k", lambda: "other") == ("v", True)
    assert ResponseCache(path).get("k") == "v"
    with path.open("a") as fh:
        fh.write(json.dumps({"key": "k", "value": "different"}) + "\n")
    with pytest.raises(OracleInputError):
        ResponseCache(path)


def test_cache_single_flight():
    c = ResponseCache()
    calls = []
    gate = threading.Event()

    def slow():
        calls.append(1)
        gate.wait(2)
        return "v"

    results = []
    threads = [threading.Thread(target=lambda: results.append(c.get_or_compute("k", slow))) for _ in range(8)]
    for t in threads:
        t.start()
    gate.set()
    for t in threads:
        t.join()
    assert len(calls) == 1
    assert sorted(r[1] for r in results) == [False] + [True] * 7


def _config(url, **kw):
    return OracleConfig(kind="ollama", endpoint=url, model_name="mock", **kw)


def test_client_posts_wire_body_and_caches(mock_ollama):
    server = mock_ollama(answer("down"))
    client = OllamaClient(_config(server.url, seed=7, temperature=0.2, max_output_tokens=12))
    assert client.generate("hello") == "down"
    assert client.generate("hello") == "down"
    assert server.requests == [
        {"model": "mock", "prompt": "hello", "stream": False, "options": {"seed": 7, "temperature": 0.2, "num_predict": 12}}
    ]
    assert (client.http_calls, client.cache_hits) == (1, 1)


@pytest.mark.parametrize(
    "responder",
    [
        lambda body: (500, {"error": "boom"}),
        lambda body: (200, b"<html>"),
        lambda body: (200, {"response": 3}),
        lambda body: (200, [1, 2]),
    ],
)
def test_client_errors(mock_ollama, responder):
    server = mock_ollama(responder)
    with pytest.raises(OracleError):
        query_llm(_config(server.url), "x")


def test_unreachable_endpoint():
    with pytest.raises(OracleError):
        query_llm(_config("http://127.0.0.1:9", request_timeout=2), "x")


def test_policy_oracle_memoises(frozen_lake, mock_ollama):
    server = mock_ollama(answer("right"))
    from llmmc import benchmarks

    fx = benchmarks.fixture("frozen_lake")
    oracle = make_oracle(frozen_lake, _config(server.url), template=fx.template(), var_map=fx.var_map())
    first = oracle.decide((0,))
    assert oracle.decide((0,)) is first
    assert first.action == "right" and not first.faulty
    assert len(server.requests) == 1 and oracle.llm_calls == 1


def test_strict_mode_raises(frozen_lake):
    oracle = make_oracle(
        frozen_lake, OracleConfig(kind="scripted", strict_faulty=True), scripted=lambda v: "jump"
    )
    with pytest.raises(FaultyActionError):
        oracle.decide((0,))


def test_scripted_table_missing_state(frozen_lake):
    oracle = make_oracle(frozen_lake, OracleConfig(kind="scripted"), scripted={"pos=1": "up"})
    with pytest.raises(OracleInputError):
        oracle.decide((0,))


def test_make_oracle_validation(frozen_lake):
    with pytest.raises(OracleInputError):
        make_oracle(frozen_lake, OracleConfig(kind="constant"), constant_action="fly")
    with pytest.raises(OracleInputError):
        make_oracle(frozen_lake, OracleConfig(kind="ollama", model_name="m"))
    with pytest.raises(OracleInputError):
        make_oracle(frozen_lake, OracleConfig(kind="ollama", model_name="m"), template=PromptTemplate("{fuel}"))
    with pytest.raises(OracleInputError):
        make_oracle(frozen_lake, OracleConfig(kind="constant", default_action="fly"), constant_action="up")
    with pytest.raises(OracleInputError):
        OracleConfig(kind="psychic")
