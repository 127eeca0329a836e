"""SS3-style incremental classifier over character trigrams.

Training counts trigram frequencies per class. Each term gets a global value
per class, the product of

* local value ``lv = (tf / max_tf) ** sigma``,
* significance ``sg = lv / (lv + lambda * lv_other)``,
* sanction ``sn = max(0, 1 - lv_other / lv) ** rho``,

and a user's confidence for a class is the running sum of the global values
of every term they have written. This is a flat word-level variant: there is
no sentence or paragraph aggregation.
"""

from __future__ import annotations

import itertools
import json
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import kernels
from .corpus import UserTimeline

POSITIVE = "positive"
NEGATIVE = "negative"
CLASSES = (POSITIVE, NEGATIVE)

tokenize_trigrams = kernels.trigrams


class SS3Error(ValueError):
    pass


@dataclass(frozen=True)
class SS3Hyperparams:
    sigma: float = 0.44
    rho: float = 0.5
    lam: float = 0.86

    def __post_init__(self):
        for name in ("sigma", "rho", "lam"):
            v = getattr(self, name)
            if not (v == v and v >= 0 and v != float("inf")):
                raise SS3Error(f"{name} must be finite and non-negative, got {v!r}")

    def to_dict(self):
        return {"sigma": self.sigma, "rho": self.rho, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(d["sigma"], d["rho"], d.get("lambda", d.get("lam")))


@dataclass(frozen=True)
class TermContribution:
    term: str
    gv_positive: float
    gv_negative: float
    word: str = ""

    def to_dict(self):
        return {
            "term": self.term,
            "word": self.word,
            "gv_positive": self.gv_positive,
            "gv_negative": self.gv_negative,
        }


@dataclass
class ConfidenceState:
    cv_positive: float = 0.0
    cv_negative: float = 0.0
    delay: int = 0

    def to_dict(self):
        return {"cv_positive": self.cv_positive, "cv_negative": self.cv_negative,
                "delay": self.delay}

    @classmethod
    def from_dict(cls, d):
        return cls(d["cv_positive"], d["cv_negative"], d["delay"])


@dataclass
class SS3Model:
    """Trained frequency tables plus hyperparameters.

    Treat as immutable after construction: the global-value table is computed
    once and shared by every scoring call.
    """

    tf: dict[str, dict[str, int]]
    hyperparams: SS3Hyperparams = field(default_factory=SS3Hyperparams)
    classes: tuple[str, str] = CLASSES

    def __post_init__(self):
        for c in self.classes:
            self.tf.setdefault(c, {})
        self.max_tf = {c: max(self.tf[c].values(), default=0) for c in self.classes}
        self._table = self._build_table()

    def _build_table(self) -> dict[str, tuple[float, float]]:
        pos, neg = self.classes
        tf_p, tf_n = self.tf[pos], self.tf[neg]
        vocab = sorted(set(tf_p) | set(tf_n))
        a = array("d", (tf_p.get(w, 0) for w in vocab))
        b = array("d", (tf_n.get(w, 0) for w in vocab))
        hp = self.hyperparams
        mp, mn = float(self.max_tf[pos]), float(self.max_tf[neg])
        gp = kernels.global_values(a, b, mp, mn, hp.sigma, hp.rho, hp.lam)
        gn = kernels.global_values(b, a, mn, mp, hp.sigma, hp.rho, hp.lam)
        return {w: (p, n) for w, p, n in zip(vocab, gp, gn)}

    @property
    def vocabulary(self) -> list[str]:
        return sorted(self._table)

    def global_values(self, term: str) -> tuple[float, float]:
        return self._table.get(term, (0.0, 0.0))

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "hyperparams": self.hyperparams.to_dict(),
            "tf": {c: dict(sorted(self.tf[c].items())) for c in self.classes},
        }

    @classmethod
    def from_dict(cls, d) -> "SS3Model":
        try:
            classes = tuple(d["classes"])
            tf = {c: {str(k): int(v) for k, v in d["tf"][c].items()} for c in classes}
            hp = SS3Hyperparams.from_dict(d["hyperparams"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SS3Error(f"invalid model document: {exc}") from exc
        if len(classes) != 2:
            raise SS3Error("model must be binary")
        return cls(tf, hp, classes)  # type: ignore[arg-type]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SS3Model":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_hyperparams(self, hp: SS3Hyperparams) -> "SS3Model":
        return SS3Model({c: dict(v) for c, v in self.tf.items()}, hp, self.classes)


def train(timelines: Iterable[UserTimeline], hp: SS3Hyperparams | None = None) -> SS3Model:
    """Count trigram frequencies per class. Messages must already be preprocessed."""
    hp = hp or SS3Hyperparams()
    texts = {1: [], 0: []}
    for tl in timelines:
        if tl.label is None:
            raise SS3Error(f"timeline {tl.nick!r} is unlabeled")
        texts[tl.label].extend(p.message for p in tl.posts)
    if not texts[1] or not texts[0]:
        raise SS3Error("training needs users from both classes")
    tf = {
        POSITIVE: kernels.count_trigrams(texts[1], {}),
        NEGATIVE: kernels.count_trigrams(texts[0], {}),
    }
    if not tf[POSITIVE] and not tf[NEGATIVE]:
        raise SS3Error("training corpus produced an empty vocabulary")
    return SS3Model(tf, hp)


def global_value(model: SS3Model, term: str, cls: str) -> float:
    """Global value of ``term`` for class ``cls``; unseen terms score 0."""
    pos, neg = model.global_values(term)
    if cls == model.classes[0]:
        return pos
    if cls == model.classes[1]:
        return neg
    raise SS3Error(f"unknown class {cls!r}")


def local_value(model: SS3Model, term: str, cls: str) -> float:
    tf = model.tf[cls].get(term, 0)
    mx = model.max_tf[cls]
    if tf <= 0 or mx <= 0:
        return 0.0
    return (tf / mx) ** model.hyperparams.sigma


def accumulate(state: ConfidenceState, model: SS3Model, post_text: str) -> ConfidenceState:
    """Return a new state with one more post's global values added."""
    pos, neg, _ = kernels.score_text(post_text, model._table)
    return ConfidenceState(state.cv_positive + pos, state.cv_negative + neg, state.delay + 1)


def explain(model: SS3Model, text: str) -> tuple[list[TermContribution], list[float]]:
    """Per-occurrence contributions and the running positive confidence."""
    contributions = []
    for word in text.split():
        for term in tokenize_trigrams(word):
            gp, gn = model.global_values(term)
            contributions.append(TermContribution(term, gp, gn, word))
    trajectory = list(itertools.accumulate(c.gv_positive for c in contributions))
    return contributions, trajectory


def classify_text_score(model: SS3Model, texts: Sequence[str]) -> ConfidenceState:
    state = ConfidenceState()
    for t in texts:
        state = accumulate(state, model, t)
    return state


def grid_search(
    train_timelines: Sequence[UserTimeline],
    val_timelines: Sequence[UserTimeline],
    sigmas: Sequence[float],
    rhos: Sequence[float],
    lams: Sequence[float],
):
    """Pick hyperparameters maximizing positive-class F1 on full validation histories.

    A validation user is predicted positive when its accumulated positive
    confidence exceeds the negative one. Returns ``(best_hp, results)`` with
    ``results`` a list of ``(hp, f1)`` in grid order; ties keep the first.
    """
    base = train(train_timelines)
    results = []
    best = None
    for sigma, rho, lam in itertools.product(sigmas, rhos, lams):
        hp = SS3Hyperparams(sigma, rho, lam)
        model = base.with_hyperparams(hp)
        tp = fp = fn = 0
        for tl in val_timelines:
            st = classify_text_score(model, [p.message for p in tl.posts])
            pred = 1 if st.cv_positive > st.cv_negative else 0
            tp += pred == 1 and tl.label == 1
            fp += pred == 1 and tl.label == 0
            fn += pred == 0 and tl.label == 1
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        results.append((hp, f1))
        if best is None or f1 > best[1]:
            best = (hp, f1)
    return best[0] if best else None, results
