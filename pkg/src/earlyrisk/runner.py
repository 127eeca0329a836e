"""Client-side orchestration of a full early detection run.

A run couples a scorer (SS3 confidence values or a replayed score file) with
a decision policy and drives a mock-server session round by round. After
each round the client state is checkpointed *before* the response is sent,
so a killed run resumes to exactly the same outputs.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import kernels
from .corpus import Post, UserTimeline, preprocess
from .dmc import (
    GlobalPolicyConfig,
    HistoryPolicyConfig,
    UserDecisionState,
    global_decide,
    history_decide,
    mark_decided,
    softmax_score,
)
from .metrics import DecisionRecord, evaluate
from .server import ServerError
from .ss3 import ConfidenceState, SS3Model, accumulate, explain

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.json"


class RunnerError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    model: str = "ss3"
    policy: GlobalPolicyConfig | HistoryPolicyConfig = field(default_factory=GlobalPolicyConfig)
    model_path: str | None = None
    scores_path: str | None = None
    window_n: int = 9
    server_url: str | None = None
    corpus_id: str | None = None
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("ss3", "replay"):
            raise RunnerError(f"unknown model kind {self.model!r}")
        if self.model == "replay" and not self.scores_path:
            raise RunnerError("replay model requires a score file")
        if self.window_n < 0:
            raise RunnerError("window_n must be >= 0")

    def to_dict(self):
        policy = ({"kind": "global", "gamma": self.policy.gamma}
                  if isinstance(self.policy, GlobalPolicyConfig)
                  else {"kind": "history", "tau": self.policy.tau, "T": self.policy.T})
        return {"model": self.model, "model_path": self.model_path,
                "scores_path": self.scores_path, "policy": policy,
                "window_n": self.window_n, "corpus_id": self.corpus_id, "seed": self.seed}


def load_config(path) -> PipelineConfig:
    """Read a sectioned key-value run configuration.

    Sections ``[model]`` (kind, path, scores), ``[policy]`` (kind, gamma,
    tau, T) and ``[run]`` (server_url, corpus_id, output_dir, seed,
    window_n). Relative paths resolve against the config file's directory.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path, encoding="utf-8"):
        raise RunnerError(f"cannot read config {path}")
    base = Path(path).resolve().parent

    def rel(v):
        return None if v is None else str((base / v) if not os.path.isabs(v) else Path(v))

    m = cp["model"] if cp.has_section("model") else {}
    p = cp["policy"] if cp.has_section("policy") else {}
    r = cp["run"] if cp.has_section("run") else {}
    kind = p.get("kind", "global")
    if kind == "global":
        policy = GlobalPolicyConfig(float(p.get("gamma", 0.5)))
    elif kind == "history":
        policy = HistoryPolicyConfig(float(p.get("tau", 0.6)), int(p.get("T", 10)))
    else:
        raise RunnerError(f"unknown policy kind {kind!r}")
    return PipelineConfig(
        model=m.get("kind", "ss3"),
        policy=policy,
        model_path=rel(m.get("path")),
        scores_path=rel(m.get("scores")),
        window_n=int(r.get("window_n", 9)),
        server_url=r.get("server_url"),
        corpus_id=r.get("corpus_id"),
        output_dir=rel(r.get("output_dir", "out")),
        seed=int(r.get("seed", 0)),
    )


# -- scorers -------------------------------------------------------------------


class SS3Scorer:
    """Cumulative SS3 confidence per user, scored with the softmax normalization."""

    def __init__(self, model: SS3Model):
        self.model = model
        self.states: dict[str, ConfidenceState] = {}

    def score(self, nick: str, rnd: int, message: str) -> float:
        st = accumulate(self.states.get(nick, ConfidenceState()), self.model, preprocess(message))
        self.states[nick] = st
        return softmax_score(st)

    def state_dict(self):
        return {n: s.to_dict() for n, s in sorted(self.states.items())}

    def load_state(self, d):
        self.states = {n: ConfidenceState.from_dict(s) for n, s in d.items()}


class ReplayScorer:
    """Looks up precomputed scores from a ``nick,round,score`` CSV."""

    def __init__(self, scores: Mapping[tuple[str, int], float]):
        self.scores = scores

    @classmethod
    def from_csv(cls, path) -> "ReplayScorer":
        return cls(read_score_file(path))

    def score(self, nick: str, rnd: int, message: str) -> float:
        try:
            return self.scores[(nick, rnd)]
        except KeyError:
            raise RunnerError(f"score file has no entry for nick {nick!r} at round {rnd}") from None

    def state_dict(self):
        return {}

    def load_state(self, d):
        pass


def read_score_file(path) -> dict[tuple[str, int], float]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"nick", "round", "score"} <= set(reader.fieldnames):
            raise RunnerError(f"{path}: expected header nick,round,score")
        for i, row in enumerate(reader, start=2):
            try:
                s = float(row["score"])
                key = (row["nick"], int(row["round"]))
            except (TypeError, ValueError):
                raise RunnerError(f"{path}:{i}: malformed row") from None
            if not 0 <= s <= 1:
                raise RunnerError(f"{path}:{i}: score {s} outside [0, 1]")
            out[key] = s
    return out


def write_score_file(scores: Mapping[tuple[str, int], float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["nick", "round", "score"])
        for (nick, rnd), s in sorted(scores.items()):
            w.writerow([nick, rnd, repr(float(s))])


# -- policies ------------------------------------------------------------------


class PolicyRunner:
    """Applies a decision policy to one round of scores, keeping sticky state."""

    def __init__(self, cfg: GlobalPolicyConfig | HistoryPolicyConfig):
        self.cfg = cfg
        self.states: dict[str, UserDecisionState] = {}

    def _state(self, nick):
        st = self.states.get(nick)
        if st is None:
            st = self.states[nick] = UserDecisionState(nick)
        return st

    def step(self, rnd: int, scores: Mapping[str, float]) -> dict[str, int]:
        if isinstance(self.cfg, HistoryPolicyConfig):
            for nick, s in scores.items():
                history_decide(self._state(nick), s, self.cfg)
        else:
            for nick, s in scores.items():
                self._state(nick).score_history.append(s)
            # cohort: users served this round plus every decided user's latest score
            cohort = dict(scores)
            for nick, st in self.states.items():
                if st.decided and nick not in cohort and st.score_history:
                    cohort[nick] = st.score_history[-1]
            flags = global_decide(cohort, self.cfg)
            for nick in scores:
                if flags[nick]:
                    mark_decided(self.states[nick], rnd)
        return {nick: int(self.states[nick].decided) for nick in scores}

    def state_dict(self):
        return {n: s.to_dict() for n, s in sorted(self.states.items())}

    def load_state(self, d):
        self.states = {n: UserDecisionState.from_dict(s) for n, s in d.items()}


# -- run log -------------------------------------------------------------------


@dataclass
class RunLog:
    rows: list[dict]
    records: dict[str, DecisionRecord]

    def nicks(self):
        return sorted(self.records)


def records_from_rows(rows: Iterable[Mapping], truths: Mapping[str, int] | None = None):
    """Sticky decision records from per-round rows (first emitted 1 wins)."""
    first: dict[str, int] = {}
    last: dict[str, int] = {}
    for row in rows:
        rnd = row["round"]
        for nick, d in row["decisions"].items():
            last[nick] = rnd
            if d == 1 and nick not in first:
                first[nick] = rnd
    truths = truths or {}
    return {
        nick: DecisionRecord(nick, int(nick in first), first.get(nick, last[nick]),
                             truths.get(nick))
        for nick in sorted(last)
    }


def read_runlog(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def export_trajectory(log_: RunLog, nick: str) -> list[tuple[int, float, bool]]:
    if nick not in log_.records:
        raise RunnerError(f"unknown nick {nick!r}")
    rec = log_.records[nick]
    out = []
    for row in log_.rows:
        if nick in row["scores"]:
            decided = rec.decision == 1 and row["round"] >= rec.latency
            out.append((row["round"], row["scores"][nick], decided))
    return out


def export_explanations(model: SS3Model, texts: Mapping[str, str] | Sequence[str]) -> dict:
    """Per-text contribution traces; ``texts`` is a list or a key -> text map."""
    items = texts.items() if isinstance(texts, Mapping) else enumerate(texts)
    out = {}
    for key, text in items:
        contribs, traj = explain(model, preprocess(text))
        out[str(key)] = {
            "text": text,
            "contributions": [c.to_dict() for c in contribs],
            "cv_positive": traj,
            "total_positive": traj[-1] if traj else 0.0,
            "total_negative": sum(c.gv_negative for c in contribs),
        }
    return out


def build_window(posts: Sequence[str], current: str, n: int) -> str:
    """The last ``n`` prior posts plus the current one, oldest first."""
    if n < 0:
        raise ValueError("n must be >= 0")
    prior = list(posts)[-n:] if n else []
    return " ".join(prior + [current])


def prepare_windows(timelines: Sequence[UserTimeline], n: int) -> list[tuple[str, int, str]]:
    """``(nick, round, window_text)`` for every post, the input of external scorers."""
    out = []
    for tl in timelines:
        msgs = [preprocess(p.message) for p in tl.posts]
        for i, msg in enumerate(msgs):
            out.append((tl.nick, i + 1, build_window(msgs[:i], msg, n)))
    return out


# -- pipeline ------------------------------------------------------------------


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump(obj, indent=None) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


_SAFE_RE = re.compile(r"[^A-Za-z0-9_.-]")


@dataclass
class RunResult:
    log: RunLog
    report: dict
    session_id: str


def make_scorer(cfg: PipelineConfig, model: SS3Model | None = None):
    if cfg.model == "ss3":
        if model is None:
            if not cfg.model_path:
                raise RunnerError("ss3 run needs a model path")
            model = SS3Model.load(cfg.model_path)
        return SS3Scorer(model)
    return ReplayScorer.from_csv(cfg.scores_path)


def run_pipeline(
    cfg: PipelineConfig,
    client=None,
    *,
    model: SS3Model | None = None,
    resume: bool = False,
    interrupt: Callable[[int, str], None] | None = None,
) -> RunResult:
    """Drive one session to completion and write all outputs to ``cfg.output_dir``.

    ``interrupt(round, stage)`` is called at ``"before_post"`` and
    ``"after_post"``; raising from it simulates a crash. With ``resume=True``
    the run continues from the checkpoint in the output directory.
    """
    if client is None:
        if not cfg.server_url:
            raise RunnerError("no server_url configured")
        from .client import HttpClient

        client = HttpClient(cfg.server_url)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / CHECKPOINT
    scorer = make_scorer(cfg, model)
    policy = PolicyRunner(cfg.policy)
    triggers: dict[str, str] = {}

    def call(fn, *args, rnd=None):
        try:
            return fn(*args)
        except ServerError as exc:
            where = f"round {rnd}: " if rnd is not None else ""
            raise RunnerError(f"{where}server {exc.code}: {exc.detail}") from exc

    if resume and ckpt_path.exists():
        ck = json.loads(ckpt_path.read_text(encoding="utf-8"))
        session_id = ck["session_id"]
        rows, meta_rounds, pending = ck["rows"], ck["meta_rounds"], ck["pending"]
        scorer.load_state(ck["scorer"])
        policy.load_state(ck["policy"])
        triggers = ck["triggers"]
        log.info("resuming session %s after round %d", session_id, len(rows))
    else:
        session_id = call(client.create_session, cfg.corpus_id)["session_id"]
        rows, meta_rounds, pending = [], [], None

    def checkpoint():
        _atomic_write(ckpt_path, _dump({
            "session_id": session_id, "rows": rows, "meta_rounds": meta_rounds,
            "pending": pending, "scorer": scorer.state_dict(), "policy": policy.state_dict(),
            "triggers": triggers,
        }))

    while True:
        if pending is not None:
            rnd = pending["response"]["round"]
            st = call(client.status, session_id, rnd=rnd)
            if st["current_round"] == rnd:
                call(client.post_response, session_id, pending["response"], rnd=rnd)
            rows.append(pending["row"])
            meta_rounds.append(pending["meta"])
            pending = None
            checkpoint()

        t0 = time.perf_counter()
        msg = call(client.get_round, session_id)
        if msg["finished"]:
            break
        rnd = msg["round"]
        scores = {}
        texts = {}
        for m in msg["messages"]:
            scores[m["nick"]] = scorer.score(m["nick"], rnd, m["message"])
            texts[m["nick"]] = m["message"]
        decisions = policy.step(rnd, scores) if scores else {}
        for nick, d in decisions.items():
            if d and nick not in triggers and isinstance(scorer, SS3Scorer):
                triggers[nick] = texts[nick]
        row = {
            "round": rnd,
            "served": sorted(scores),
            "scores": dict(sorted(scores.items())),
            "decisions": dict(sorted(decisions.items())),
        }
        response = {"round": rnd, "predictions": row["decisions"], "scores": row["scores"]}
        pending = {"response": response, "row": row,
                   "meta": {"round": rnd, "wall_time": time.perf_counter() - t0}}
        checkpoint()
        if interrupt:
            interrupt(rnd, "before_post")
        call(client.post_response, session_id, response, rnd=rnd)
        if interrupt:
            interrupt(rnd, "after_post")
        rows.append(row)
        meta_rounds.append(pending["meta"])
        pending = None
        checkpoint()

    report = call(client.get_results, session_id)
    truths = {r["nick"]: r["truth"] for r in report.get("records", []) if r["truth"] is not None}
    records = records_from_rows(rows, truths)
    runlog = RunLog(rows, records)
    _write_outputs(out, runlog, report, cfg, scorer, triggers,
                   {"session_id": session_id, "backend": kernels.BACKEND,
                    "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                    "rounds": meta_rounds, "config": cfg.to_dict()})
    ckpt_path.unlink(missing_ok=True)
    return RunResult(runlog, report, session_id)


def _write_outputs(out: Path, runlog: RunLog, report, cfg, scorer, triggers, meta):
    with open(out / "runlog.jsonl", "w", encoding="utf-8") as fh:
        for row in runlog.rows:
            fh.write(_dump(row) + "\n")
    (out / "report.json").write_text(_dump(report, indent=2) + "\n", encoding="utf-8")
    (out / "run_meta.json").write_text(_dump(meta, indent=2) + "\n", encoding="utf-8")
    traj = out / "trajectories"
    traj.mkdir(exist_ok=True)
    for nick in runlog.nicks():
        with open(traj / f"{_SAFE_RE.sub('_', nick)}.csv", "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "score", "decided"])
            for rnd, s, d in export_trajectory(runlog, nick):
                w.writerow([rnd, repr(s), int(d)])
    if isinstance(scorer, SS3Scorer):
        (out / "explanations.json").write_text(
            _dump(export_explanations(scorer.model, dict(sorted(triggers.items()))), indent=2)
            + "\n", encoding="utf-8")


def evaluate_runlog(runlog_path, labels: Mapping[str, int] | None = None):
    """Offline report from a saved ``runlog.jsonl``."""
    records = records_from_rows(read_runlog(runlog_path), labels)
    return evaluate(records.values())


def offline_simulation(timelines: Sequence[UserTimeline], scorer,
                       cfg: GlobalPolicyConfig | HistoryPolicyConfig) -> dict[str, DecisionRecord]:
    """Lockstep simulation without a server, used as an oracle for client runs."""
    policy = PolicyRunner(cfg)
    rows = []
    n_rounds = max((len(t.posts) for t in timelines), default=0)
    for rnd in range(1, n_rounds + 1):
        served: list[tuple[str, Post]] = [(t.nick, t.posts[rnd - 1]) for t in timelines
                                          if len(t.posts) >= rnd]
        scores = {nick: scorer.score(nick, rnd, p.message) for nick, p in served}
        rows.append({"round": rnd, "decisions": policy.step(rnd, scores)})
    return records_from_rows(rows, {t.nick: t.label for t in timelines if t.label is not None})
