"""Decision-based evaluation for early detection runs.

Each user contributes one :class:`DecisionRecord`: the final decision and the
round at which it was issued (for negatives, the last round observed).
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionRecord:
    nick: str
    decision: int
    latency: int
    truth: int | None = None

    def __post_init__(self):
        if self.decision not in (0, 1):
            raise MetricsError(f"{self.nick}: decision must be 0 or 1")
        if self.latency < 1:
            raise MetricsError(f"{self.nick}: latency must be >= 1")

    def to_dict(self):
        return {"nick": self.nick, "truth": self.truth, "decision": self.decision,
                "latency": self.latency}


@dataclass(frozen=True)
class ErdeConfig:
    """ERDE costs. ``c_fp=None`` means the positive rate of the evaluated users."""

    theta: float = 30
    c_fp: float | None = None
    c_fn: float = 1.0
    c_tn: float = 0.0

    def __post_init__(self):
        if self.theta < 1:
            raise MetricsError("theta must be >= 1")
        for c in (self.c_fp, self.c_fn, self.c_tn):
            if c is not None and c < 0:
                raise MetricsError("costs must be non-negative")


@dataclass(frozen=True)
class FLatencyConfig:
    p: float = 0.0078

    def __post_init__(self):
        if not self.p > 0:
            raise MetricsError("p must be positive")


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class PRF:
    accuracy: float
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    macro_p: float
    macro_r: float
    macro_f1: float
    micro_p: float
    micro_r: float
    micro_f1: float


ASSUMPTIONS = {
    "erde_costs": "c_fp = positive rate of evaluated users, c_fn = 1, c_tn = 0, "
                  "TP cost = 1 - 1/(1 + exp(k - theta))",
    "f_latency": "positive F1 * (1 - median TP penalty), penalty(k) = -1 + 2/(1 + exp(-p (k - 1)))",
    "latency_unit": "rounds (1-based publication index)",
    "zero_division": "0/0 precision, recall and F1 are 0",
}


@dataclass
class EvaluationReport:
    counts: Counts | None
    prf: PRF | None
    erde: dict[str, float] = field(default_factory=dict)
    f_latency: float | None = None
    f_latency_p: float | None = None
    records: list[DecisionRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        d: dict = {"assumptions": ASSUMPTIONS, "n_users": len(self.records)}
        if self.counts is not None and self.prf is not None:
            c, m = self.counts, self.prf
            d.update({
                "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
                "accuracy": m.accuracy,
                "precision": m.precision, "recall": m.recall, "f1": m.f1,
                "macro_p": m.macro_p, "macro_r": m.macro_r, "macro_f1": m.macro_f1,
                "micro_p": m.micro_p, "micro_r": m.micro_r, "micro_f1": m.micro_f1,
                "erde": self.erde,
                "f_latency": self.f_latency,
                "f_latency_p": self.f_latency_p,
            })
        d["records"] = [r.to_dict() for r in sorted(self.records, key=lambda r: r.nick)]
        return d


def _require_truth(records):
    for r in records:
        if r.truth is None:
            raise MetricsError(f"record {r.nick!r} has no ground truth")


def confusion(records: Iterable[DecisionRecord]) -> Counts:
    records = list(records)
    _require_truth(records)
    tp = sum(1 for r in records if r.decision == 1 and r.truth == 1)
    fp = sum(1 for r in records if r.decision == 1 and r.truth == 0)
    fn = sum(1 for r in records if r.decision == 0 and r.truth == 1)
    tn = sum(1 for r in records if r.decision == 0 and r.truth == 0)
    return Counts(tp, fp, fn, tn)


def _ratio(a, b):
    return a / b if b else 0.0


def _f1(tp, fp, fn):
    # 2TP / (2TP + FP + FN) from integers so pooled scores match accuracy exactly
    return _ratio(2 * tp, 2 * tp + fp + fn)


def prf_macro_micro(counts: Counts) -> PRF:
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    if min(tp, fp, fn, tn) < 0:
        raise MetricsError("counts must be non-negative")
    n = counts.total
    if n == 0:
        raise MetricsError("no users to evaluate")
    # the negative class's one-vs-rest table swaps roles: tp'=tn, fp'=fn, fn'=fp
    precision = {"positive": _ratio(tp, tp + fp), "negative": _ratio(tn, tn + fn)}
    recall = {"positive": _ratio(tp, tp + fn), "negative": _ratio(tn, tn + fp)}
    f1 = {"positive": _f1(tp, fp, fn), "negative": _f1(tn, fn, fp)}
    mtp, mfp, mfn = tp + tn, fp + fn, fn + fp
    return PRF(
        accuracy=(tp + tn) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_p=(precision["positive"] + precision["negative"]) / 2,
        macro_r=(recall["positive"] + recall["negative"]) / 2,
        macro_f1=(f1["positive"] + f1["negative"]) / 2,
        micro_p=_ratio(mtp, mtp + mfp),
        micro_r=_ratio(mtp, mtp + mfn),
        micro_f1=_f1(mtp, mfp, mfn),
    )


def latency_cost(k: float, theta: float) -> float:
    """Logistic TP delay cost, 0.5 at ``k == theta``."""
    x = k - theta
    if x > 700:
        return 1.0
    return 1.0 - 1.0 / (1.0 + math.exp(x))


def erde(records: Sequence[DecisionRecord], cfg: ErdeConfig) -> float:
    records = list(records)
    _require_truth(records)
    if not records:
        return 0.0
    c_fp = cfg.c_fp
    if c_fp is None:
        c_fp = sum(r.truth for r in records) / len(records)
    total = 0.0
    for r in records:
        if r.decision == 1 and r.truth == 1:
            total += latency_cost(r.latency, cfg.theta)
        elif r.decision == 1:
            total += c_fp
        elif r.truth == 1:
            total += cfg.c_fn
        else:
            total += cfg.c_tn
    return total / len(records)


def latency_penalty(k: float, p: float) -> float:
    return -1.0 + 2.0 / (1.0 + math.exp(-p * (k - 1)))


def f_latency(records: Sequence[DecisionRecord], cfg: FLatencyConfig) -> float:
    records = list(records)
    if not records:
        raise MetricsError("f_latency needs at least one record")
    c = confusion(records)
    tp_lat = [r.latency for r in records if r.decision == 1 and r.truth == 1]
    if not tp_lat:
        return 0.0
    speed = 1.0 - statistics.median(latency_penalty(k, cfg.p) for k in tp_lat)
    return _f1(c.tp, c.fp, c.fn) * speed


def evaluate(
    records: Iterable[DecisionRecord],
    thetas: Sequence[float] = (5, 30),
    flat: FLatencyConfig | None = None,
    erde_costs: ErdeConfig | None = None,
) -> EvaluationReport:
    """Full report; metrics are omitted when any record lacks ground truth."""
    records = sorted(records, key=lambda r: r.nick)
    if not records or any(r.truth is None for r in records):
        return EvaluationReport(None, None, records=records)
    flat = flat or FLatencyConfig()
    base = erde_costs or ErdeConfig()
    counts = confusion(records)
    scores = {}
    for theta in thetas:
        cfg = ErdeConfig(theta, base.c_fp, base.c_fn, base.c_tn)
        scores[f"erde_{theta:g}"] = erde(records, cfg)
    return EvaluationReport(
        counts=counts,
        prf=prf_macro_micro(counts),
        erde=scores,
        f_latency=f_latency(records, flat),
        f_latency_p=flat.p,
        records=records,
    )


def write_records_csv(records: Iterable[DecisionRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["nick", "truth", "decision", "latency"])
        for r in sorted(records, key=lambda r: r.nick):
            w.writerow([r.nick, "" if r.truth is None else r.truth, r.decision, r.latency])


@dataclass
class VennRegion:
    mask: int
    count: int
    correct: int


def agreement_venn(
    prediction_sets: Sequence[set[str]], truths: Mapping[str, int]
) -> dict[int, VennRegion]:
    """Exclusive Venn regions of 2 or 3 positive-prediction sets.

    Region keys are bitmasks: bit ``i`` set means "in set ``i``". ``correct``
    counts region members whose truth is positive.
    """
    n = len(prediction_sets)
    if n < 2 or n > 3:
        raise MetricsError("agreement analysis supports 2 or 3 prediction sets")
    regions = {mask: VennRegion(mask, 0, 0) for mask in range(1, 1 << n)}
    for nick in set().union(*prediction_sets):
        mask = sum(1 << i for i, s in enumerate(prediction_sets) if nick in s)
        reg = regions[mask]
        reg.count += 1
        reg.correct += truths.get(nick) == 1
    return regions


def venn_to_dict(regions: Mapping[int, VennRegion]) -> dict:
    return {str(m): {"count": r.count, "correct": r.correct} for m, r in sorted(regions.items())}
