"""Clients for the mock-server: in-process and HTTP, same method surface."""

from __future__ import annotations

import json
import urllib.error
import urllib.request

from .server import MockServer, ServerError


class LocalClient:
    """Calls a :class:`MockServer` directly, no sockets."""

    def __init__(self, core: MockServer):
        self.core = core

    def create_session(self, corpus_id=None):
        return self.core.create_session(corpus_id)

    def status(self, session_id):
        return self.core.session_status(session_id)

    def get_round(self, session_id, rnd=None):
        return self.core.get_round(session_id, rnd)

    def post_response(self, session_id, resp):
        # round-trip through JSON so local runs see exactly what HTTP runs see
        return self.core.post_response(session_id, json.loads(json.dumps(resp)))

    def get_results(self, session_id):
        return self.core.get_results(session_id)


class HttpClient:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _call(self, method, path, payload=None):
        data = None
        headers = {"Accept": "application/json"}
        if payload is not None:
            data = json.dumps(payload).encode("utf-8")
            headers["Content-Type"] = "application/json"
        req = urllib.request.Request(self.base_url + path, data=data, method=method,
                                     headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            try:
                body = json.loads(exc.read())
                code, detail = body.get("error", "http_error"), body.get("detail", "")
            except (json.JSONDecodeError, AttributeError):
                code, detail = "http_error", str(exc)
            raise ServerError(exc.code, code, detail) from None

    def create_session(self, corpus_id=None):
        body = {} if corpus_id is None else {"corpus_id": corpus_id}
        return self._call("POST", "/sessions", body)

    def status(self, session_id):
        return self._call("GET", f"/sessions/{session_id}")

    def get_round(self, session_id, rnd=None):
        q = "" if rnd is None else f"?round={int(rnd)}"
        return self._call("GET", f"/sessions/{session_id}/round{q}")

    def post_response(self, session_id, resp):
        return self._call("POST", f"/sessions/{session_id}/responses", resp)

    def get_results(self, session_id):
        return self._call("GET", f"/sessions/{session_id}/results")
