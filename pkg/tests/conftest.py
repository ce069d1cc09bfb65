from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from llmmc import benchmarks
from llmmc.semantics import compile_model

DATA = Path(__file__).parent / "data"


class MockOllama:
    """Tiny stand-in for the Ollama REST API that records every request.

    ``responder(body) -> (status, payload)`` decides each answer; payload may
    be a dict (sent as JSON) or raw bytes.
    """

    def __init__(self, responder):
        self.responder = responder
        self.requests: list[dict] = []
        self.paths: list[str] = []
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                body = json.loads(raw)
                mock.requests.append(body)
                mock.paths.append(self.path)
                status, payload = mock.responder(body)
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def answer(text: str):
    return lambda body: (200, {"model": body["model"], "response": text, "done": True})


@pytest.fixture
def mock_ollama():
    servers = []

    def start(responder):
        server = MockOllama(responder)
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.close()


@pytest.fixture(scope="session")
def frozen_lake():
    return compile_model(benchmarks.fixture("frozen_lake").load_model())


@pytest.fixture(scope="session")
def taxi():
    return compile_model(benchmarks.fixture("taxi").load_model())


@pytest.fixture(scope="session")
def stock_market():
    return compile_model(benchmarks.fixture("stock_market").load_model())


# -- acceptance summary ----------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record pass/fail of an acceptance criterion for the terminal summary."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    _ACCEPTANCE[number] = ("FAIL", title)
    yield
    rep = getattr(request.node, "rep_call", None)
    if rep is not None and rep.passed:
        _ACCEPTANCE[number] = ("PASS", title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")
