"""Test double for the remote refinement protocol.

Serves the wire protocol over HTTP with selectable behaviours: a faithful
rule-based evaluator, an always-invalid phase, malformed bodies, or a slow
responder for timeout handling.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .refinement import rule_backend
from .semantics import from_wire

MODES = ("rule", "invalid", "malformed", "slow", "unparseable")


def _handle(mode, delay_s, doc):
    """Return (status, body bytes) for one request document."""
    if mode == "slow":
        time.sleep(delay_s)
    if mode == "invalid":
        return 200, json.dumps({"action": 999, "explanation":
                                "phase 999 looks great"}).encode()
    if mode == "malformed":
        return 200, json.dumps({"explanation": "missing the action field"}).encode()
    if mode == "unparseable":
        return 200, b"this is not json at all"
    ctx = from_wire(doc)
    action, explanation = rule_backend(ctx)
    return 200, json.dumps({"action": action, "explanation": explanation}).encode()


class FakeBackendServer:
    """Threaded HTTP server wrapping the selected behaviour."""

    def __init__(self, mode="rule", port=0, delay_s=5.0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; pick one of {MODES}")
        self.mode = mode
        self.delay_s = delay_s
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                try:
                    doc = json.loads(raw.decode("utf-8")) if raw else {}
                    status, body = _handle(outer.mode, outer.delay_s, doc)
                except Exception as exc:
                    status, body = 500, json.dumps({"error": str(exc)}).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                except BrokenPipeError:
                    pass   # client gave up (timeout test); nothing to report

            def log_message(self, fmt, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self.thread = None

    @property
    def endpoint(self):
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/"

    def start(self):
        self.thread = threading.Thread(target=self.server.serve_forever,
                                       daemon=True)
        self.thread.start()
        return self

    def stop(self):
        self.server.shutdown()
        self.server.server_close()
        if self.thread:
            self.thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_forever(mode="rule", port=8973, delay_s=5.0):
    server = FakeBackendServer(mode=mode, port=port, delay_s=delay_s)
    print(f"fake backend ({mode}) listening on {server.endpoint}")
    try:
        server.server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
