"""Local stand-in for the model service: plays back canned replies keyed by request hash."""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping


def request_key(body: Mapping) -> str:
    """SHA-256 of the canonical JSON encoding of a request body."""
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class MockModelServer:
    """Threaded HTTP server answering ``POST`` with ``{"text": ...}``.

    Lookup order: ``responses[request_key(body)]``, then ``default(body)``;
    neither gives a 404. The first ``fail_first`` requests get a 503.
    """

    def __init__(self, responses: Mapping[str, str] | None = None,
                 default: Callable[[dict], str] | None = None,
                 fail_first: int = 0, host: str = "127.0.0.1", port: int = 0):
        self.responses = dict(responses or {})
        self.default = default
        self.fail_first = fail_first
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length))
                except ValueError:
                    return self._reply(400, {"error": "bad json"})
                with server._lock:
                    server.requests.append(body)
                    failing = len(server.requests) <= server.fail_first
                if failing:
                    return self._reply(503, {"error": "unavailable"})
                text = server.responses.get(request_key(body))
                if text is None and server.default is not None:
                    text = server.default(body)
                if text is None:
                    return self._reply(404, {"error": "no canned response"})
                self._reply(200, {"text": text})

            def _reply(self, code, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/generate"

    def start(self) -> "MockModelServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
