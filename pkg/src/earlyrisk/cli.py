"""Command line interface: ``earlyrisk <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import analysis, corpus, runner, server, ss3
from .kernels import BACKEND


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    print(f"wrote {path}")


def cmd_train(args):
    tls = corpus.preprocess_timelines(corpus.parse_corpus(args.corpus, labels_path=args.labels))
    hp = ss3.SS3Hyperparams(args.sigma, args.rho, args.lam)
    if args.grid:
        tr, val = corpus.split_train_val(tls, args.val_fraction, args.seed)
        grid = [0.2, 0.44, 0.7, 1.0], [0.5, 1.0, 2.0], [0.5, 0.86, 1.0]
        hp, results = ss3.grid_search(tr, val, *grid)
        for h, f1 in results:
            logging.info("grid %s -> F1 %.4f", h, f1)
        print(f"best hyperparameters: {hp.to_dict()}")
    model = ss3.train(tls, hp)
    path = Path(args.model_out) if args.model_out else _out(args) / "model.json"
    model.save(path)
    print(f"wrote {path} ({len(model.vocabulary)} terms)")


def cmd_analyze(args):
    tls = corpus.parse_corpus(args.corpus, labels_path=args.labels)
    out = _out(args)
    doc = {"stats": corpus.compute_stats(tls).to_dict(),
           "night": analysis.night_fraction(tls, args.night_start, args.night_end)}
    if args.labels:
        rep = analysis.overlap_report(tls, args.k)
        doc["overlap"] = rep.to_dict()
        for name in ("shared_words", "pos_only", "neg_only"):
            (out / f"{name}.txt").write_text("\n".join(getattr(rep, name)) + "\n",
                                             encoding="utf-8")
    _write_json(out / "analysis.json", doc)


def cmd_serve(args):
    server.serve(args.corpus, args.labels, args.port, args.bind, args.corpus_id)


def cmd_run(args):
    if not args.config:
        sys.exit("run needs --config")
    cfg = runner.load_config(args.config)
    if args.out_given:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.server_url:
        cfg.server_url = args.server_url
    res = runner.run_pipeline(cfg, resume=args.resume)
    rep = res.report
    summary = {k: rep[k] for k in ("macro_f1", "accuracy", "erde", "f_latency") if k in rep}
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"outputs in {cfg.output_dir}")


def cmd_replay_prepare(args):
    tls = corpus.parse_corpus(args.corpus)
    path = _out(args) / "windows.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["nick", "round", "text"])
        w.writerows(runner.prepare_windows(tls, args.window))
    print(f"wrote {path}")


def cmd_eval(args):
    labels = corpus.read_labels(args.labels) if args.labels else None
    rep = runner.evaluate_runlog(args.runlog, labels)
    _write_json(_out(args) / "report.json", rep.to_dict())


def cmd_explain(args):
    model = ss3.SS3Model.load(args.model)
    texts = list(args.text or [])
    if args.texts_file:
        texts += [ln.rstrip("\n") for ln in open(args.texts_file, encoding="utf-8") if ln.strip()]
    _write_json(_out(args) / "explanations.json", runner.export_explanations(model, texts))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="earlyrisk", description=__doc__)
    ap.add_argument("--config", help="run configuration file")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory (default: out)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an SS3 model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--sigma", type=float, default=0.44)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=0.86)
    p.add_argument("--grid", action="store_true", help="grid search on a seeded split")
    p.add_argument("--val-fraction", type=float, default=0.28)
    p.add_argument("--model-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="corpus statistics and lexical overlap")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels")
    p.add_argument("-k", type=int, default=1000)
    p.add_argument("--night-start", type=int, default=18)
    p.add_argument("--night-end", type=int, default=6)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the mock-server")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--corpus-id")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("run", help="drive a model and policy against a server")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--server-url")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay-prepare", help="write sliding-window texts for external scorers")
    p.add_argument("--corpus", required=True)
    p.add_argument("--window", type=int, default=9)
    p.set_defaults(func=cmd_replay_prepare)

    p = sub.add_parser("eval", help="offline metrics from a run log")
    p.add_argument("--runlog", required=True)
    p.add_argument("--labels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="SS3 contribution traces for texts")
    p.add_argument("--model", required=True)
    p.add_argument("--text", action="append")
    p.add_argument("--texts-file")
    p.set_defaults(func=cmd_explain)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    args.out_given = args.out is not None
    if args.out is None:
        args.out = "out"
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger(__name__).debug("kernel backend: %s", BACKEND)
    try:
        args.func(args)
    except (corpus.CorpusError, ss3.SS3Error, runner.RunnerError) as exc:
        sys.exit(f"error: {exc}")


if __name__ == "__main__":
    main()
