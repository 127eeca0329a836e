import json
import socket
import subprocess
import sys
import time
import urllib.request

import pytest

from earlyrisk import synthetic
from earlyrisk.cli import main
from earlyrisk.corpus import write_corpus, write_labels


@pytest.fixture
def files(tmp_path):
    tr, te = synthetic.separable_train_test(20, 10, posts_per_user=(4, 12), seed=8)
    paths = {}
    for name, tls in (("train", tr), ("test", te)):
        write_corpus(tls, tmp_path / f"{name}.jsonl")
        write_labels({t.nick: t.label for t in tls}, tmp_path / f"{name}.tsv")
        paths[name] = (tmp_path / f"{name}.jsonl", tmp_path / f"{name}.tsv")
    return tmp_path, paths


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_train_explain_analyze_prepare(files):
    tmp, paths = files
    out = tmp / "o"
    corpus, labels = paths["train"]
    main(["--out", str(out), "train", "--corpus", str(corpus), "--labels", str(labels)])
    assert json.loads((out / "model.json").read_text())["hyperparams"]["sigma"] == 0.44
    main(["--out", str(out), "explain", "--model", str(out / "model.json"),
          "--text", "hola mundo"])
    assert "0" in json.loads((out / "explanations.json").read_text())
    main(["--out", str(out), "analyze", "--corpus", str(corpus), "--labels", str(labels),
          "-k", "20"])
    doc = json.loads((out / "analysis.json").read_text())
    assert doc["stats"]["n_users"] == 20 and doc["overlap"]["jaccard_topk"] == 0.0
    assert (out / "shared_words.txt").exists()
    main(["--out", str(out), "replay-prepare", "--corpus", str(corpus), "--window", "2"])
    assert (out / "windows.csv").read_text().startswith("nick,round,text")


def test_train_grid(files):
    tmp, paths = files
    corpus, labels = paths["train"]
    main(["--seed", "1", "--out", str(tmp / "g"), "train", "--corpus", str(corpus),
          "--labels", str(labels), "--grid", "--val-fraction", "0.3"])
    assert (tmp / "g" / "model.json").exists()


def test_bad_corpus_exits(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[{")
    with pytest.raises(SystemExit, match="error"):
        main(["analyze", "--corpus", str(bad)])


def test_serve_run_eval(files):
    tmp, paths = files
    main(["--out", str(tmp / "m"), "train", "--corpus", str(paths["train"][0]),
          "--labels", str(paths["train"][1])])
    port = _free_port()
    proc = subprocess.Popen([sys.executable, "-m", "earlyrisk.cli", "serve", "--corpus",
                             str(paths["test"][0]), "--labels", str(paths["test"][1]),
                             "--port", str(port), "--corpus-id", "test"])
    try:
        url = f"http://127.0.0.1:{port}"
        for _ in range(100):
            try:
                urllib.request.urlopen(url + "/corpora", timeout=1)
                break
            except OSError:
                time.sleep(0.1)
        cfg = tmp / "run.cfg"
        cfg.write_text(f"[model]\nkind = ss3\npath = m/model.json\n"
                       f"[policy]\nkind = global\ngamma = 0.5\n"
                       f"[run]\nserver_url = {url}\ncorpus_id = test\noutput_dir = r\n")
        main(["--config", str(cfg), "run"])
    finally:
        proc.terminate()
        proc.wait(timeout=10)
    report = json.loads((tmp / "r" / "report.json").read_text())
    assert report["n_users"] == 10 and report["macro_f1"] == 1.0
    main(["--out", str(tmp / "e"), "eval", "--runlog", str(tmp / "r" / "runlog.jsonl"),
          "--labels", str(paths["test"][1])])
    offline = json.loads((tmp / "e" / "report.json").read_text())
    assert offline == report


def test_example_config_parses():
    from pathlib import Path

    from earlyrisk.runner import load_config
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "run.example.cfg")
    assert cfg.model == "ss3" and cfg.policy.gamma == 0.5 and cfg.corpus_id == "test"
