"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--users 200] [--repeat 3]

Times trigram counting, per-post scoring, the global-value table and the
history scan on a synthetic corpus, and checks both backends agree.
"""

import argparse
import random
import time
from array import array

from earlyrisk import _pykernels, synthetic
from earlyrisk.corpus import preprocess_timelines

try:
    from earlyrisk import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads(k, texts, table, vec, scores):
    a, b, ma, mb = vec

    def count():
        counts = {}
        k.count_trigrams(texts, counts)
        return counts

    return {
        "count_trigrams": count,
        "score_text": lambda: [k.score_text(t, table) for t in texts],
        "global_values": lambda: list(k.global_values(a, b, ma, mb, 0.44, 0.5, 0.86)),
        "first_decision_index": lambda: [k.first_decision_index(s, 0.6, 10) for s in scores],
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels is None:
        raise SystemExit("compiled extension not built; run pip install -e . first")

    tls = preprocess_timelines(synthetic.separable_corpus(args.users, posts_per_user=60,
                                                          shared_size=200, shared_rate=0.5))
    texts = [p.message for tl in tls for p in tl.posts]
    counts = {}
    _pykernels.count_trigrams(texts, counts)
    rng = random.Random(0)
    vocab = sorted(counts)
    table = {w: (rng.random(), rng.random()) for w in vocab}
    a = array("d", (counts[w] for w in vocab))
    b = array("d", (rng.randint(0, 50) for _ in vocab))
    vec = (a, b, float(max(a)), float(max(b)))
    scores = [[rng.random() for _ in range(200)] for _ in range(2000)]

    py = workloads(_pykernels, texts, table, vec, scores)
    cy = workloads(_kernels, texts, table, vec, scores)
    print(f"{len(texts)} posts, {len(vocab)} distinct terms, best of {args.repeat}")
    print(f"{'kernel':<22}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name in py:
        tp, op = best_of(py[name], args.repeat)
        tc, oc = best_of(cy[name], args.repeat)
        if op != oc:
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<22}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
