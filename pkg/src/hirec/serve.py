"""Single-process demo server for the realtime recommender.

GET /recommend?user=<id>&n=<int>  -> JSON array of {item, score}
POST /event  {"user": ..., "item": ..., "feedback": "positive"|"negative"}

Sessions live in memory, one per user id; same-user events serialize on a
per-session lock while different users proceed independently. This is a
demonstration surface, not a production gateway.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .realtime import RtModel, SessionState, apply_event, recommend_rt


class SessionStore:
    def __init__(self, model: RtModel, fm=None):
        self.model = model
        self.fm = fm  # optional: seed sessions from training history
        self._sessions = {}
        self._locks = {}
        self._registry_lock = threading.Lock()

    def session(self, user):
        with self._registry_lock:
            if user not in self._sessions:
                if self.fm is not None and user in self.fm.user_index:
                    state = SessionState.from_matrices(self.fm, self.fm.user_index[user])
                    state.user = user
                else:
                    state = SessionState(user, self.model.n)
                self._sessions[user] = state
                self._locks[user] = threading.Lock()
            return self._sessions[user], self._locks[user]


class _Handler(BaseHTTPRequestHandler):
    store: SessionStore = None  # injected by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _reply(self, code, payload):
        body = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        url = urlparse(self.path)
        if url.path != "/recommend":
            self._reply(404, {"error": "unknown path"})
            return
        query = parse_qs(url.query)
        if "user" not in query:
            self._reply(400, {"error": "missing user"})
            return
        user = query["user"][0]
        try:
            n = int(query.get("n", ["10"])[0])
        except ValueError:
            self._reply(400, {"error": "n must be an integer"})
            return
        state, lock = self.store.session(user)
        with lock:
            rl = recommend_rt(self.store.model, state, n)
        self._reply(200, [{"item": s.item, "score": s.score} for s in rl.items])

    def do_POST(self):
        if urlparse(self.path).path != "/event":
            self._reply(404, {"error": "unknown path"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            user = payload["user"]
            item = int(payload["item"])
            feedback = payload["feedback"]
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            self._reply(400, {"error": f"bad event payload: {exc}"})
            return
        state, lock = self.store.session(user)
        try:
            with lock:
                apply_event(state, item, feedback)
        except ValueError as exc:
            self._reply(400, {"error": str(exc)})
            return
        self._reply(200, {"ok": True})


def make_server(model: RtModel, fm=None, host="127.0.0.1", port=0) -> ThreadingHTTPServer:
    """Bound but not yet serving; call serve_forever() or run it in a thread."""
    store = SessionStore(model, fm)
    handler = type("BoundHandler", (_Handler,), {"store": store})
    return ThreadingHTTPServer((host, port), handler)
