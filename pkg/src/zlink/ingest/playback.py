"""Offline stand-in for a node: replays recorded ``getblock`` answers over HTTP."""

from __future__ import annotations

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable

from ..model import BlockRecord
from .rpc import block_to_verbose


def record_fixture(blocks: Iterable[BlockRecord]) -> list[dict]:
    recorded, prev = [], None
    for block in blocks:
        recorded.append(block_to_verbose(block, prev))
        prev = block.hash
    return recorded


class PlaybackNode:
    """Serve recorded verbose blocks on ``127.0.0.1``.

    ``fail_first`` makes the first N requests answer HTTP 503, for
    exercising client retries.  Use as a context manager.
    """

    def __init__(self, recorded: list[dict], fail_first: int = 0,
                 credentials: tuple[str, str] | None = None):
        self.by_hash = {b["hash"]: b for b in recorded}
        self.by_height = {b["height"]: b["hash"] for b in recorded}
        self.tip = max(self.by_height) if recorded else -1
        self.fail_remaining = fail_first
        self.credentials = credentials
        self.requests = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()

    def answer(self, method: str, params: list):
        if method == "getblockcount":
            return self.tip, None
        if method == "getblockhash":
            h = params[0]
            if h not in self.by_height:
                return None, {"code": -8, "message": "Block height out of range"}
            return self.by_height[h], None
        if method == "getblock":
            block = self.by_hash.get(params[0])
            if block is None:
                return None, {"code": -5, "message": "Block not found"}
            return block, None
        return None, {"code": -32601, "message": "Method not found"}

    def _handler(self):
        node = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                with node._lock:
                    node.requests += 1
                    failing = node.fail_remaining > 0
                    if failing:
                        node.fail_remaining -= 1
                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                if failing:
                    self.send_response(503)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                if node.credentials and not self._authorized():
                    self.send_response(401)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                req = json.loads(body)
                result, error = node.answer(req["method"], req.get("params", []))
                out = json.dumps({"result": result, "error": error, "id": req.get("id")})
                data = out.encode()
                self.send_response(200 if error is None else 500)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def _authorized(self):
                want = base64.b64encode(":".join(node.credentials).encode()).decode()
                return self.headers.get("Authorization") == f"Basic {want}"

        return Handler
