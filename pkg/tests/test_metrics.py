import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earlyrisk.metrics import (
    Counts, DecisionRecord, ErdeConfig, FLatencyConfig, MetricsError, agreement_venn,
    confusion, erde, evaluate, f_latency, latency_cost, latency_penalty, prf_macro_micro,
    venn_to_dict, write_records_csv,
)


def rec(decision, truth, latency=1, nick=None):
    rec.n += 1
    return DecisionRecord(nick or f"u{rec.n}", decision, latency, truth)


rec.n = 0


def test_confusion_examples():
    assert confusion([rec(1, 1), rec(1, 0), rec(0, 1), rec(0, 0)]) == Counts(1, 1, 1, 1)
    c = confusion([rec(1, 1) for _ in range(5)])
    assert c.fp == c.fn == 0
    with pytest.raises(MetricsError):
        confusion([rec(1, None)])


def test_confusion_venn_counts():
    # 160 users (83 positive), 57 flagged of which 35 correct
    records = ([rec(1, 1)] * 35 + [rec(1, 0)] * 22 + [rec(0, 1)] * 48 + [rec(0, 0)] * 55)
    assert confusion(records) == Counts(35, 22, 48, 55)


def test_prf_derived_example():
    m = prf_macro_micro(Counts(35, 22, 48, 55))
    assert m.precision["positive"] == pytest.approx(35 / 57)
    assert m.recall["positive"] == pytest.approx(35 / 83)
    assert m.f1["positive"] == pytest.approx(0.5, abs=1e-12)
    assert m.f1["negative"] == pytest.approx(0.6111111111111112)
    assert m.macro_f1 == pytest.approx(0.5555555555555556)
    assert m.macro_p == pytest.approx(0.574007835121785)
    assert m.macro_r == pytest.approx(0.5679862306368331)
    assert m.accuracy == 90 / 160


def test_prf_perfect_and_errors():
    m = prf_macro_micro(Counts(3, 0, 0, 4))
    assert {m.accuracy, m.macro_p, m.macro_r, m.macro_f1, m.micro_p, m.micro_r,
            m.micro_f1} == {1.0}
    with pytest.raises(MetricsError):
        prf_macro_micro(Counts(0, 0, 0, 0))
    degenerate = prf_macro_micro(Counts(0, 0, 5, 5))
    assert degenerate.precision["positive"] == 0 and degenerate.f1["positive"] == 0


def brute_prf(tp, fp, fn, tn):
    def safe(a, b):
        return a / b if b else 0.0
    per = []
    for (a, b, c) in ((tp, fp, fn), (tn, fn, fp)):
        p, r = safe(a, a + b), safe(a, a + c)
        per.append((p, r, safe(2 * p * r, p + r)))
    macro = [sum(x[i] for x in per) / 2 for i in range(3)]
    return macro


def test_prf_random_tables_vs_brute_force():
    rng = random.Random(11)
    for _ in range(1000):
        c = Counts(*(rng.randint(0, 40) for _ in range(4)))
        if c.total == 0:
            continue
        m = prf_macro_micro(c)
        mp, mr, mf = brute_prf(c.tp, c.fp, c.fn, c.tn)
        assert (m.macro_p, m.macro_r) == (pytest.approx(mp), pytest.approx(mr))
        assert m.macro_f1 == pytest.approx(mf)


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=200))
def test_micro_equals_accuracy(pairs):
    c = confusion([DecisionRecord(f"u{i}", d, 1, t) for i, (d, t) in enumerate(pairs)])
    m = prf_macro_micro(c)
    assert m.micro_p == m.micro_r == m.micro_f1 == m.accuracy


def test_erde_examples():
    for theta in (5, 30):
        assert erde([rec(1, 1, theta)], ErdeConfig(theta)) == 0.5
    assert erde([rec(0, 0)], ErdeConfig(5)) == 0.0
    v = erde([rec(1, 1, 1), rec(0, 1, 40)], ErdeConfig(30))
    assert v == pytest.approx(0.5000000000001272, abs=1e-15)
    assert latency_cost(1, 30) == pytest.approx(2.543665647376276e-13, rel=1e-6)


def test_erde_fp_cost_defaults_to_positive_rate():
    records = [rec(1, 0), rec(0, 1), rec(0, 0), rec(0, 1)]
    assert erde(records, ErdeConfig(5)) == pytest.approx((0.5 + 1 + 0 + 1) / 4)
    assert erde(records, ErdeConfig(5, c_fp=0.1)) == pytest.approx((0.1 + 2) / 4)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(1, 100)),
                min_size=1, max_size=30), st.integers(0, 29), st.integers(1, 50),
       st.sampled_from([5, 30, 50]))
def test_erde_monotone_and_permutation(rows, idx, bump, theta):
    records = [DecisionRecord(f"u{i}", d, k, t) for i, (d, t, k) in enumerate(rows)]
    cfg = ErdeConfig(theta)
    base = erde(records, cfg)
    assert 0 <= base <= 1
    assert erde(list(reversed(records)), cfg) == pytest.approx(base, abs=1e-15)
    i = idx % len(records)
    r = records[i]
    later = records[:i] + [DecisionRecord(r.nick, r.decision, r.latency + bump, r.truth)] \
        + records[i + 1:]
    assert erde(later, cfg) >= base - 1e-15
    if r.decision == 0 and r.truth == 1:
        as_tp = records[:i] + [DecisionRecord(r.nick, 1, r.latency, 1)] + records[i + 1:]
        assert erde(as_tp, cfg) <= base


def test_f_latency_examples():
    records = [rec(1, 1, 1), rec(1, 1, 1), rec(1, 0, 3), rec(0, 1, 9)]
    pos_f1 = 2 * 2 / (2 * 2 + 1 + 1)
    assert f_latency(records, FLatencyConfig()) == pytest.approx(pos_f1)
    assert latency_penalty(1, 0.0078) == 0.0
    late = [rec(1, 1, 500)]
    assert f_latency(late, FLatencyConfig(50)) == pytest.approx(0, abs=1e-12)
    assert f_latency([rec(1, 1, 11)], FLatencyConfig(0.0078)) == \
        pytest.approx(0.9610197609775084, abs=1e-12)
    assert f_latency([rec(0, 1), rec(0, 0)], FLatencyConfig()) == 0.0
    with pytest.raises(MetricsError):
        f_latency([], FLatencyConfig())
    with pytest.raises(MetricsError):
        FLatencyConfig(0)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(1, 200)),
                min_size=1, max_size=30))
def test_f_latency_bounded_by_f1(rows):
    records = [DecisionRecord(f"u{i}", d, k, t) for i, (d, t, k) in enumerate(rows)]
    c = confusion(records)
    f1 = prf_macro_micro(c).f1["positive"]
    fl = f_latency(records, FLatencyConfig())
    assert fl <= f1 + 1e-15
    tp_lat = sorted(r.latency for r in records if r.decision == r.truth == 1)
    if tp_lat and f1 > 0:
        median_is_one = tp_lat[(len(tp_lat) - 1) // 2] == 1 and tp_lat[len(tp_lat) // 2] == 1
        assert (fl == f1) == median_is_one


def test_evaluate_report():
    records = [rec(1, 1, 3, "a"), rec(0, 0, 10, "b")]
    rep = evaluate(records).to_dict()
    assert rep["tp"] == 1 and rep["tn"] == 1 and rep["accuracy"] == 1.0
    assert set(rep["erde"]) == {"erde_5", "erde_30"}
    assert [r["nick"] for r in rep["records"]] == ["a", "b"]
    unlabeled = evaluate([DecisionRecord("a", 1, 2)]).to_dict()
    assert "macro_f1" not in unlabeled and unlabeled["records"][0]["latency"] == 2
    assert evaluate([]).to_dict()["n_users"] == 0


def test_records_csv(tmp_path):
    p = tmp_path / "r.csv"
    write_records_csv([rec(1, 1, 3, "b"), rec(0, None, 4, "a")], p)
    assert p.read_text().splitlines() == ["nick,truth,decision,latency", "a,,0,4", "b,1,1,3"]


def test_record_validation():
    with pytest.raises(MetricsError):
        DecisionRecord("a", 2, 1)
    with pytest.raises(MetricsError):
        DecisionRecord("a", 1, 0)
    with pytest.raises(MetricsError):
        ErdeConfig(0)


# -- agreement


def test_venn_identical_sets():
    truths = {f"u{i}": int(i < 83) for i in range(160)}
    flagged = {f"u{i}" for i in range(35)} | {f"u{i}" for i in range(100, 122)}
    regions = agreement_venn([flagged, set(flagged), set(flagged)], truths)
    assert regions[0b111].count == 57 and regions[0b111].correct == 35
    assert all(r.count == 0 for m, r in regions.items() if m != 0b111)


def test_venn_disjoint_and_subset():
    truths = {c: 1 for c in "abcdef"}
    regions = agreement_venn([{"a"}, {"b", "c"}, {"d"}], truths)
    assert {m: r.count for m, r in regions.items() if r.count} == {1: 1, 2: 2, 4: 1}
    regions = agreement_venn([{"a"}, {"a", "b", "c"}], truths)
    assert (regions[0b11].count, regions[0b10].count, regions[0b01].count) == (1, 2, 0)
    assert venn_to_dict(regions)["3"] == {"count": 1, "correct": 1}
    with pytest.raises(MetricsError):
        agreement_venn([set()] * 4, truths)
    with pytest.raises(MetricsError):
        agreement_venn([set()], truths)


@given(st.lists(st.sets(st.integers(0, 30)), min_size=2, max_size=3))
def test_venn_inclusion_exclusion(sets):
    sets = [{f"u{x}" for x in s} for s in sets]
    regions = agreement_venn(sets, {})
    for i, s in enumerate(sets):
        assert sum(r.count for m, r in regions.items() if m >> i & 1) == len(s)
    assert sum(r.count for r in regions.values()) == len(set().union(*sets))
    assert math.isclose(sum(r.correct for r in regions.values()), 0)
