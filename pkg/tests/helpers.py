"""Shared test utilities: a scripted local HTTP server."""
from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


@contextmanager
def serve(responses):
    """Serve scripted POST responses in order, repeating the last.

    `responses` is a list of (status, payload) where payload is a dict
    (JSON-encoded), str (sent as-is with a JSON content type), or bytes.
    Yields (base_url, calls); calls collects {"path", "headers", "body"}
    per request in arrival order.
    """
    calls: list[dict] = []
    lock = threading.Lock()
    cursor = {"i": 0}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            with lock:
                calls.append(
                    {
                        "path": self.path,
                        "headers": {k.lower(): v for k, v in self.headers.items()},
                        "body": body,
                    }
                )
                idx = min(cursor["i"], len(responses) - 1)
                cursor["i"] += 1
            status, payload = responses[idx]
            if isinstance(payload, dict):
                data = json.dumps(payload).encode("utf-8")
            elif isinstance(payload, str):
                data = payload.encode("utf-8")
            else:
                data = payload
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *_args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}", calls
    finally:
        server.shutdown()
        thread.join()
