import json

import pytest

from earlyrisk import synthetic
from earlyrisk.client import LocalClient
from earlyrisk.corpus import Post, UserTimeline, preprocess_timelines
from earlyrisk.dmc import GlobalPolicyConfig, HistoryPolicyConfig
from earlyrisk.metrics import DecisionRecord
from earlyrisk.runner import (
    PipelineConfig, ReplayScorer, RunLog, RunnerError, SS3Scorer, build_window,
    evaluate_runlog, export_explanations, export_trajectory, load_config, offline_simulation,
    prepare_windows, read_score_file, run_pipeline, write_score_file,
)
from earlyrisk.server import BackgroundServer, MockServer
from earlyrisk.ss3 import ConfidenceState, SS3Model, accumulate, train
from earlyrisk.corpus import preprocess


@pytest.fixture(scope="module")
def data():
    tr, te = synthetic.separable_train_test(40, 30, posts_per_user=(5, 25), shared_size=30,
                                            shared_rate=0.5, seed=4)
    return train(preprocess_timelines(tr)), te


def test_build_window():
    assert build_window(["a", "b"], "c", 0) == "c"
    assert build_window(["a", "b"], "c", 5) == "a b c"
    assert build_window(["a", "b", "c"], "d", 2) == "b c d"
    with pytest.raises(ValueError):
        build_window([], "x", -1)


def test_prepare_windows():
    tl = UserTimeline("u", tuple(Post(i, i + 1, "u", m, "2021-01-06 04:02:48+01:00", "Twitch")
                                 for i, m in enumerate(["A", "b", "C"])), 1)
    assert prepare_windows([tl], 1) == [("u", 1, "a"), ("u", 2, "a b"), ("u", 3, "b c")]


def test_export_trajectory():
    rows = [{"round": r, "served": ["u", "v"] if r == 1 else ["u"],
             "scores": {"u": r / 100, **({"v": 0.1} if r == 1 else {})},
             "decisions": {"u": int(r >= 29), **({"v": 0} if r == 1 else {})}}
            for r in range(1, 41)]
    log = RunLog(rows, {"u": DecisionRecord("u", 1, 29), "v": DecisionRecord("v", 0, 1)})
    traj = export_trajectory(log, "u")
    assert len(traj) == 40
    assert [d for _, _, d in traj] == [False] * 28 + [True] * 12
    assert export_trajectory(log, "v") == [(1, 0.1, False)]
    with pytest.raises(RunnerError):
        export_trajectory(log, "w")


def test_export_explanations_bingx():
    user = lambda n, l, t: UserTimeline(n, (Post(1, 1, n, t, "2021-01-06 04:02:48+01:00",  # noqa: E731
                                                 "Telegram"),), l)
    model = train(preprocess_timelines([
        user("p", 1, "bingx rebote divergencia durante"),
        user("n", 0, "jugué hoy horas paciencia consejo")]))
    s1 = ("hoy jugué durante horas en BingX buscando ese rebote que me haría recuperar lo "
          "que perdí ayer... pero me comí terrible divergencia!")
    rep = export_explanations(model, [s1, ""])
    trace = rep["0"]
    bingx = [c for c in trace["contributions"] if c["word"] == "bingx"]
    assert bingx and all(c["gv_positive"] > 0 and c["gv_negative"] == 0 for c in bingx)
    idx = trace["contributions"].index(bingx[0])
    traj = trace["cv_positive"]
    assert traj[idx + len(bingx) - 1] - (traj[idx - 1] if idx else 0) >= len(bingx) * 0.5
    delta = accumulate(ConfidenceState(), model, preprocess(s1))
    assert trace["total_positive"] == pytest.approx(delta.cv_positive, abs=1e-9)
    assert rep["1"]["contributions"] == [] and rep["1"]["cv_positive"] == []


def test_score_file_round_trip(tmp_path):
    p = tmp_path / "s.csv"
    write_score_file({("a", 1): 0.25, ("a", 2): 1.0}, p)
    assert read_score_file(p) == {("a", 1): 0.25, ("a", 2): 1.0}
    p.write_text("nick,round,score\na,1,1.5\n")
    with pytest.raises(RunnerError):
        read_score_file(p)
    p.write_text("who,when\n")
    with pytest.raises(RunnerError):
        read_score_file(p)


def test_config_validation():
    with pytest.raises(RunnerError):
        PipelineConfig(model="bert")
    with pytest.raises(RunnerError):
        PipelineConfig(model="replay")
    with pytest.raises(RunnerError):
        PipelineConfig(window_n=-1)


def test_load_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[model]\nkind = replay\nscores = s.csv\n"
                 "[policy]\nkind = history\ntau = 0.7\nT = 10\n"
                 "[run]\nserver_url = http://x\noutput_dir = o\nseed = 3\n")
    cfg = load_config(p)
    assert cfg.policy == HistoryPolicyConfig(0.7, 10)
    assert cfg.scores_path == str(tmp_path / "s.csv") and cfg.output_dir == str(tmp_path / "o")
    assert cfg.seed == 3 and cfg.window_n == 9
    p.write_text("[policy]\nkind = global\ngamma = 0.25\n")
    assert load_config(p).policy == GlobalPolicyConfig(0.25)
    p.write_text("[policy]\nkind = magic\n")
    with pytest.raises(RunnerError):
        load_config(p)


def _run(model, timelines, out, policy=None, **kw):
    core = MockServer({"c": timelines})
    cfg = PipelineConfig(policy=policy or GlobalPolicyConfig(0.5), output_dir=str(out))
    return core, run_pipeline(cfg, LocalClient(core), model=model, **kw)


def test_local_records_match_server(data, tmp_path):
    model, te = data
    core, res = _run(model, te, tmp_path)
    server_recs = {r["nick"]: (r["decision"], r["latency"]) for r in res.report["records"]}
    local = {n: (r.decision, r.latency) for n, r in res.log.records.items()}
    assert server_recs == local
    oracle = offline_simulation(te, SS3Scorer(model), GlobalPolicyConfig(0.5))
    assert {n: (r.decision, r.latency) for n, r in oracle.items()} == local
    assert len(res.report["records"]) == len(te)


def test_outputs_written(data, tmp_path):
    model, te = data
    _, res = _run(model, te, tmp_path)
    assert (tmp_path / "report.json").exists() and (tmp_path / "run_meta.json").exists()
    rows = [json.loads(l) for l in (tmp_path / "runlog.jsonl").read_text().splitlines()]
    assert [r["round"] for r in rows] == list(range(1, len(rows) + 1))
    assert all(set(r["scores"]) == set(r["served"]) for r in rows)
    assert len(list((tmp_path / "trajectories").glob("*.csv"))) == len(te)
    expl = json.loads((tmp_path / "explanations.json").read_text())
    flagged = {n for n, r in res.log.records.items() if r.decision}
    assert set(expl) == flagged
    assert not (tmp_path / "checkpoint.json").exists()
    offline = evaluate_runlog(tmp_path / "runlog.jsonl", {t.nick: t.label for t in te})
    assert offline.to_dict() == res.report


def test_determinism(data, tmp_path):
    model, te = data
    _run(model, te, tmp_path / "a")
    _run(model, te, tmp_path / "b")
    for name in ("report.json", "runlog.jsonl", "explanations.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class Crash(Exception):
    pass


@pytest.mark.parametrize("stage", ["before_post", "after_post"])
@pytest.mark.parametrize("crash_round", [1, 7])
def test_resume_after_crash(data, tmp_path, stage, crash_round):
    model, te = data
    _run(model, te, tmp_path / "clean")

    def boom(rnd, st):
        if rnd == crash_round and st == stage:
            raise Crash

    core = MockServer({"c": te})
    client = LocalClient(core)
    cfg = PipelineConfig(policy=GlobalPolicyConfig(0.5), output_dir=str(tmp_path / "crash"))
    with pytest.raises(Crash):
        run_pipeline(cfg, client, model=model, interrupt=boom)
    run_pipeline(cfg, client, model=model, resume=True)
    for name in ("report.json", "runlog.jsonl"):
        assert (tmp_path / "clean" / name).read_bytes() == \
            (tmp_path / "crash" / name).read_bytes()


def test_replay_history(tmp_path):
    tls = [UserTimeline(n, tuple(Post(i, i + 1, n, "x", "2021-01-06 04:02:48+01:00", "Twitch")
                                 for i in range(15)), lab) for n, lab in (("p", 1), ("q", 0))]
    scores = {("p", r): 0.6 for r in range(1, 16)} | {("q", r): 0.59 for r in range(1, 16)}
    write_score_file(scores, tmp_path / "s.csv")
    core = MockServer({"c": tls})
    cfg = PipelineConfig(model="replay", scores_path=str(tmp_path / "s.csv"),
                         policy=HistoryPolicyConfig(0.6, 10), output_dir=str(tmp_path / "o"))
    res = run_pipeline(cfg, LocalClient(core))
    assert res.log.records["p"] == DecisionRecord("p", 1, 10, 1)
    assert res.log.records["q"] == DecisionRecord("q", 0, 15, 0)
    assert not (tmp_path / "o" / "explanations.json").exists()


def test_replay_missing_entry(tmp_path):
    tls = [UserTimeline("p", tuple(Post(i, i + 1, "p", "x", "2021-01-06 04:02:48+01:00",
                                        "Twitch") for i in range(3)), 1)]
    write_score_file({("p", 1): 0.5, ("p", 2): 0.5}, tmp_path / "s.csv")
    cfg = PipelineConfig(model="replay", scores_path=str(tmp_path / "s.csv"),
                         policy=HistoryPolicyConfig(), output_dir=str(tmp_path / "o"))
    with pytest.raises(RunnerError, match=r"'p' at round 3"):
        run_pipeline(cfg, LocalClient(MockServer({"c": tls})))


def test_replay_constant_below_tau(tmp_path):
    scorer = ReplayScorer({(f"u{i}", r): 0.3 for i in range(4) for r in range(1, 6)})
    tls = [UserTimeline(f"u{i}", tuple(Post(r, r, f"u{i}", "x", "2021-01-06 04:02:48+01:00",
                                            "Twitch") for r in range(1, 6)), i % 2)
           for i in range(4)]
    recs = offline_simulation(tls, scorer, HistoryPolicyConfig(0.6, 1))
    assert all(r.decision == 0 for r in recs.values())


def test_empty_corpus_run(tmp_path):
    model = SS3Model({"positive": {"abc": 1}, "negative": {"xyz": 1}})
    _, res = _run(model, [], tmp_path)
    assert res.report["n_users"] == 0 and res.log.rows == []


def test_http_run_and_conflict_context(data, tmp_path):
    model, te = data
    core = MockServer({"c": te})
    with BackgroundServer(core) as bs:
        cfg = PipelineConfig(output_dir=str(tmp_path / "h"), server_url=bs.url)
        res = run_pipeline(cfg, model=model)
        _, local = _run(model, te, tmp_path / "l")
        assert (tmp_path / "h" / "report.json").read_bytes() == \
            (tmp_path / "l" / "report.json").read_bytes()
        bad = PipelineConfig(output_dir=str(tmp_path / "x"), server_url=bs.url, corpus_id="zz")
        with pytest.raises(RunnerError, match="unknown_corpus"):
            run_pipeline(bad, model=model)
    assert res.report["n_users"] == len(te)
