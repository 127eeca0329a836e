"""Rounds-based mock-server for early detection runs.

Round ``r`` carries the ``r``-th post of every user that still has one. A
session only advances after a complete response for the current round; the
first positive prediction for a user is final. The wire protocol is
documented in ``docs/protocol.md``.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Sequence
from urllib.parse import parse_qs, urlparse

from .corpus import UserTimeline
from .metrics import DecisionRecord, evaluate

log = logging.getLogger(__name__)


class ServerError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail

    def to_dict(self):
        return {"error": self.code, "detail": self.detail}


def _conflict(code, detail):
    return ServerError(HTTPStatus.CONFLICT, code, detail)


def _invalid(detail):
    return ServerError(HTTPStatus.UNPROCESSABLE_ENTITY, "validation_error", detail)


@dataclass
class Session:
    session_id: str
    corpus_id: str
    timelines: Sequence[UserTimeline]
    current_round: int = 1
    decisions: dict[str, int] = field(default_factory=dict)
    responses: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def total_rounds(self) -> int:
        return max((len(tl.posts) for tl in self.timelines), default=0)

    @property
    def finished(self) -> bool:
        return self.current_round > self.total_rounds

    def served_nicks(self, rnd: int) -> list[str]:
        return [tl.nick for tl in self.timelines if len(tl.posts) >= rnd]

    def status(self) -> dict:
        return {
            "session_id": self.session_id,
            "corpus_id": self.corpus_id,
            "n_users": len(self.timelines),
            "current_round": None if self.finished else self.current_round,
            "total_rounds": self.total_rounds,
            "finished": self.finished,
        }


class MockServer:
    """Transport-independent server state; safe for concurrent sessions."""

    def __init__(self, corpora: Mapping[str, Sequence[UserTimeline]]):
        self.corpora = {cid: sorted(tls, key=lambda t: t.nick) for cid, tls in corpora.items()}
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _session(self, session_id: str) -> Session:
        with self._lock:
            sess = self._sessions.get(session_id)
        if sess is None:
            raise ServerError(HTTPStatus.NOT_FOUND, "unknown_session", f"no session {session_id!r}")
        return sess

    def create_session(self, corpus_id: str | None = None) -> dict:
        if corpus_id is None and len(self.corpora) == 1:
            corpus_id = next(iter(self.corpora))
        if corpus_id not in self.corpora:
            raise ServerError(HTTPStatus.NOT_FOUND, "unknown_corpus", f"no corpus {corpus_id!r}")
        sess = Session(uuid.uuid4().hex, corpus_id, self.corpora[corpus_id])
        with self._lock:
            self._sessions[sess.session_id] = sess
        log.info("session %s on corpus %s", sess.session_id, corpus_id)
        return {"session_id": sess.session_id, "n_users": len(sess.timelines),
                "total_rounds": sess.total_rounds}

    def session_status(self, session_id: str) -> dict:
        sess = self._session(session_id)
        with sess.lock:
            return sess.status()

    def get_round(self, session_id: str, rnd: int | None = None) -> dict:
        sess = self._session(session_id)
        with sess.lock:
            if sess.finished:
                return {"round": None, "finished": True, "messages": [],
                        "remaining_rounds_hint": 0}
            r = sess.current_round
            if rnd is not None and rnd != r:
                if rnd > r:
                    raise _conflict("round_not_available",
                                    f"round {rnd} requested but round {r} is unanswered")
                raise _conflict("round_closed", f"round {rnd} already answered; current is {r}")
            messages = [
                {"nick": tl.nick, "message": p.message, "date": p.date, "platform": p.platform}
                for tl in sess.timelines if len(tl.posts) >= r
                for p in (tl.posts[r - 1],)
            ]
            return {"round": r, "finished": False, "messages": messages,
                    "remaining_rounds_hint": sess.total_rounds - r}

    def post_response(self, session_id: str, resp: Mapping) -> dict:
        sess = self._session(session_id)
        if not isinstance(resp, Mapping):
            raise _invalid("response must be a JSON object")
        rnd = resp.get("round")
        preds = resp.get("predictions")
        scores = resp.get("scores") or {}
        if isinstance(rnd, bool) or not isinstance(rnd, int):
            raise _invalid("round must be an integer")
        if not isinstance(preds, Mapping) or not isinstance(scores, Mapping):
            raise _invalid("predictions and scores must be objects")
        with sess.lock:
            if sess.finished:
                raise _conflict("session_finished", "all rounds already answered")
            r = sess.current_round
            if rnd < r:
                raise _conflict("duplicate_submission", f"round {rnd} already answered")
            if rnd > r:
                raise _conflict("round_conflict", f"response for round {rnd}, current is {r}")
            served = sess.served_nicks(r)
            missing = sorted(set(served) - set(preds))
            if missing:
                raise _invalid(f"missing predictions for: {', '.join(missing)}")
            extra = sorted(set(preds) - set(served))
            if extra:
                raise _invalid(f"predictions for users not served this round: {', '.join(extra)}")
            bad = sorted(n for n, v in preds.items() if isinstance(v, bool) or v not in (0, 1))
            if bad:
                raise _invalid(f"predictions must be 0 or 1: {', '.join(bad)}")
            for n, s in scores.items():
                if n not in preds or isinstance(s, bool) or not isinstance(s, (int, float)) \
                        or not 0 <= s <= 1:
                    raise _invalid(f"invalid score for {n!r}")
            for nick in served:
                if preds[nick] == 1 and nick not in sess.decisions:
                    sess.decisions[nick] = r
            sess.responses.append({"round": r, "predictions": dict(preds), "scores": dict(scores)})
            sess.current_round += 1
            return {"accepted_round": r, "finished": sess.finished}

    def records(self, session_id: str) -> list[DecisionRecord]:
        sess = self._session(session_id)
        with sess.lock:
            return self._records(sess)

    @staticmethod
    def _records(sess: Session) -> list[DecisionRecord]:
        out = []
        for tl in sess.timelines:
            if tl.nick in sess.decisions:
                out.append(DecisionRecord(tl.nick, 1, sess.decisions[tl.nick], tl.label))
            else:
                out.append(DecisionRecord(tl.nick, 0, len(tl.posts), tl.label))
        return out

    def get_results(self, session_id: str) -> dict:
        sess = self._session(session_id)
        with sess.lock:
            if not sess.finished:
                raise _conflict("incomplete_session",
                                f"session still at round {sess.current_round} of {sess.total_rounds}")
            return evaluate(self._records(sess)).to_dict()


# -- HTTP front end ------------------------------------------------------------


def dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    server_version = "earlyrisk-mock/0.1"
    core: MockServer

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status, payload):
        body = dumps(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self):
        n = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(n) if n else b""
        if not raw:
            return {}
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ServerError(HTTPStatus.BAD_REQUEST, "bad_json", str(exc)) from None

    def _dispatch(self, method):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        core = self.core
        try:
            if parts == ["sessions"] and method == "POST":
                body = self._body()
                return self._send(HTTPStatus.CREATED, core.create_session(body.get("corpus_id")))
            if parts == ["corpora"] and method == "GET":
                return self._send(HTTPStatus.OK, {"corpora": sorted(core.corpora)})
            if len(parts) >= 2 and parts[0] == "sessions":
                sid = parts[1]
                tail = parts[2:]
                if tail == [] and method == "GET":
                    return self._send(HTTPStatus.OK, core.session_status(sid))
                if tail == ["round"] and method == "GET":
                    q = parse_qs(url.query).get("round")
                    rnd = None
                    if q:
                        try:
                            rnd = int(q[0])
                        except ValueError:
                            raise ServerError(HTTPStatus.BAD_REQUEST, "bad_request",
                                              "round must be an integer") from None
                    return self._send(HTTPStatus.OK, core.get_round(sid, rnd))
                if tail == ["responses"] and method == "POST":
                    return self._send(HTTPStatus.OK, core.post_response(sid, self._body()))
                if tail == ["results"] and method == "GET":
                    return self._send(HTTPStatus.OK, core.get_results(sid))
            raise ServerError(HTTPStatus.NOT_FOUND, "not_found", f"{method} {url.path}")
        except ServerError as exc:
            self._send(exc.status, exc.to_dict())

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


def make_http_server(core: MockServer, bind: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"core": core})
    httpd = ThreadingHTTPServer((bind, port), handler)
    httpd.daemon_threads = True
    return httpd


class BackgroundServer:
    """Run the HTTP server on a daemon thread; usable as a context manager."""

    def __init__(self, core: MockServer, bind: str = "127.0.0.1", port: int = 0):
        self.httpd = make_http_server(core, bind, port)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self.thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(corpus_path, labels_path=None, port: int = 8000, bind: str = "127.0.0.1",
          corpus_id: str | None = None) -> None:
    from pathlib import Path

    from .corpus import parse_corpus

    timelines = parse_corpus(corpus_path, labels_path=labels_path)
    cid = corpus_id or Path(corpus_path).stem
    httpd = make_http_server(MockServer({cid: timelines}), bind, port)
    log.info("serving corpus %s (%d users) on %s:%d", cid, len(timelines), bind,
             httpd.server_address[1])
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
