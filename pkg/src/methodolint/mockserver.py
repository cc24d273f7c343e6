"""Deterministic chat-completions stub for offline runs.

Scripted rules are matched against the incoming user message (substring
containment; a rule may require several substrings at once so scripts can
address one (file, pattern) pair through the single route). First match
wins, and a catch-all default rule is mandatory. Rules can inject latency
and scripted 500 failures. Every request is logged with its in-flight count
at arrival so tests can assert the client's concurrency bound.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence


class ScriptError(ValueError):
    """The scripted rule list is malformed."""


@dataclass
class ScriptRule:
    """One scripted response.

    ``match_substring`` may be a single string or a list that must all be
    present in the user message. The empty string matches everything, which
    is how the mandatory catch-all default is written.
    """

    match_substring: str | Sequence[str]
    response_body: str
    latency_ms: int = 0
    fail_times: int = 0

    def needles(self) -> tuple[str, ...]:
        if isinstance(self.match_substring, str):
            return (self.match_substring,)
        return tuple(self.match_substring)

    def matches(self, user_message: str) -> bool:
        return all(n in user_message for n in self.needles())

    @property
    def is_catch_all(self) -> bool:
        return all(n == "" for n in self.needles())


@dataclass
class RequestLogEntry:
    timestamp: float
    matched_rule: int
    concurrent_in_flight_at_arrival: int
    user_message: str = field(repr=False, default="")


def load_script(path: Path) -> list[ScriptRule]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ScriptError("script file must contain a JSON list of rules")
    rules = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or "match_substring" not in entry or "response_body" not in entry:
            raise ScriptError(f"rule {i}: needs match_substring and response_body")
        rules.append(ScriptRule(
            match_substring=entry["match_substring"],
            response_body=entry["response_body"]
            if isinstance(entry["response_body"], str)
            else json.dumps(entry["response_body"]),
            latency_ms=int(entry.get("latency_ms", 0)),
            fail_times=int(entry.get("fail_times", 0)),
        ))
    return rules


class MockServer:
    """Scripted OpenAI-compatible server on 127.0.0.1, one thread per request."""

    def __init__(self, rules: Sequence[ScriptRule], port: int = 0, *,
                 reject_response_format: bool = False):
        rules = list(rules)
        if not any(r.is_catch_all for r in rules):
            raise ScriptError("script must include a catch-all default rule "
                              "(empty match_substring)")
        self.rules = rules
        self.reject_response_format = reject_response_format
        self._lock = threading.Lock()
        self._in_flight = 0
        self._log: list[RequestLogEntry] = []
        self._fail_remaining = [r.fail_times for r in rules]
        self._request_counter = 0

        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            # headers and body go out as separate writes; without TCP_NODELAY
            # the body segment sits behind the peer's delayed ACK (~40ms/req)
            disable_nagle_algorithm = True

            def log_message(self, *args):  # silence default stderr chatter
                pass

            def _send_json(self, status: int, payload: dict) -> None:
                body = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                self._send_json(404, {"error": "mock server only implements chat completions"})

            def do_POST(self):
                if self.path != "/v1/chat/completions":
                    self._send_json(404, {"error": f"unknown route {self.path}"})
                    return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    request = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._send_json(400, {"error": "request body is not JSON"})
                    return
                server._handle(self, request)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._started = False

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "MockServer":
        if not self._started:
            self._started = True
            self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    # -- request handling ----------------------------------------------------

    @staticmethod
    def _user_message(request: dict) -> str:
        messages = request.get("messages", [])
        for message in reversed(messages):
            if isinstance(message, dict) and message.get("role") == "user":
                return str(message.get("content", ""))
        return ""

    def _handle(self, handler, request: dict) -> None:
        user = self._user_message(request)
        with self._lock:
            self._in_flight += 1
            in_flight_now = self._in_flight
            self._request_counter += 1
            request_no = self._request_counter
            rule_idx = next(
                (i for i, r in enumerate(self.rules) if r.matches(user)), None
            )
            self._log.append(RequestLogEntry(
                timestamp=time.monotonic(),
                matched_rule=-1 if rule_idx is None else rule_idx,
                concurrent_in_flight_at_arrival=in_flight_now,
                user_message=user,
            ))
            must_fail = False
            if rule_idx is not None and self._fail_remaining[rule_idx] > 0:
                self._fail_remaining[rule_idx] -= 1
                must_fail = True
        try:
            if rule_idx is None:
                handler._send_json(500, {"error": "no scripted rule matched"})
                return
            rule = self.rules[rule_idx]
            if rule.latency_ms:
                time.sleep(rule.latency_ms / 1000.0)
            if self.reject_response_format and "response_format" in request:
                handler._send_json(400, {"error": "response_format is not supported"})
                return
            if must_fail:
                handler._send_json(500, {"error": "scripted failure"})
                return
            handler._send_json(200, {
                "id": f"chatcmpl-mock-{request_no}",
                "object": "chat.completion",
                "created": 0,
                "model": request.get("model", "mock"),
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": rule.response_body},
                    "finish_reason": "stop",
                }],
                "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0},
            })
        finally:
            with self._lock:
                self._in_flight -= 1

    # -- assertions ----------------------------------------------------------

    def request_log(self) -> list[RequestLogEntry]:
        with self._lock:
            return list(self._log)

    def peak_in_flight(self) -> int:
        log = self.request_log()
        return max((e.concurrent_in_flight_at_arrival for e in log), default=0)


def serve(script: Sequence[ScriptRule], port: int = 0, **kwargs) -> MockServer:
    """Start a mock server for ``script`` and return its running handle."""
    return MockServer(script, port, **kwargs).start()
