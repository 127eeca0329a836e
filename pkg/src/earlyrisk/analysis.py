"""Corpus diagnostics: class-level lexical similarity and posting-time habits."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import CorpusError, UserTimeline, parse_date, preprocess

_WORD_RE = re.compile(r"\w+")


@dataclass
class ClassVocabulary:
    label: int
    term_counts: Counter = field(default_factory=Counter)


@dataclass
class OverlapReport:
    cosine_tfidf: float
    jaccard_topk: float
    k: int
    shared: int
    union_size: int
    shared_words: list[str]
    pos_only: list[str]
    neg_only: list[str]

    def to_dict(self):
        return dict(self.__dict__)


def words(text: str) -> list[str]:
    """Word tokens of a text after normalization."""
    return _WORD_RE.findall(preprocess(text))


def class_vocabulary(timelines: Iterable[UserTimeline], label: int) -> ClassVocabulary:
    counts: Counter = Counter()
    for tl in timelines:
        if tl.label == label:
            for p in tl.posts:
                counts.update(words(p.message))
    return ClassVocabulary(label, counts)


def class_document(timelines: Iterable[UserTimeline], label: int) -> str:
    """All posts of one class, each normalized separately, joined by newlines."""
    return "\n".join(preprocess(p.message) for tl in timelines if tl.label == label
                     for p in tl.posts)


def class_tfidf_cosine(pos_doc: str, neg_doc: str) -> float:
    """Cosine of the TF-IDF vectors of two class documents.

    Documents are concatenations of already-normalized posts (see
    :func:`class_document`); they are only tokenized here. Raw term counts are
    weighted by the smoothed idf ``ln(3 / (1 + df)) + 1`` of the two-document
    collection.
    """
    a, b = Counter(_WORD_RE.findall(pos_doc)), Counter(_WORD_RE.findall(neg_doc))
    if not a or not b:
        raise CorpusError("both class documents must be nonempty after preprocessing")
    return _tfidf_cosine_counts(a, b)


def _tfidf_cosine_counts(a: Counter, b: Counter) -> float:
    dot = na = nb = 0.0
    for w in sorted(set(a) | set(b)):
        df = (w in a) + (w in b)
        idf = math.log(3 / (1 + df)) + 1
        wa, wb = a.get(w, 0) * idf, b.get(w, 0) * idf
        dot += wa * wb
        na += wa * wa
        nb += wb * wb
    return min(1.0, dot / math.sqrt(na * nb))


def top_k_words(vocab: ClassVocabulary | Counter, k: int) -> set[str]:
    """The ``k`` most frequent words; ties go to the lexicographically smaller word."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = vocab.term_counts if isinstance(vocab, ClassVocabulary) else vocab
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {w for w, _ in ranked[:k]}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def overlap_report(timelines: Sequence[UserTimeline], k: int = 1000) -> OverlapReport:
    pos = class_vocabulary(timelines, 1)
    neg = class_vocabulary(timelines, 0)
    if not pos.term_counts or not neg.term_counts:
        raise CorpusError("both classes need nonempty vocabularies")
    top_pos, top_neg = top_k_words(pos, k), top_k_words(neg, k)
    shared = top_pos & top_neg
    return OverlapReport(
        cosine_tfidf=_tfidf_cosine_counts(pos.term_counts, neg.term_counts),
        jaccard_topk=jaccard(top_pos, top_neg),
        k=k,
        shared=len(shared),
        union_size=len(top_pos | top_neg),
        shared_words=sorted(shared),
        pos_only=sorted(top_pos - top_neg),
        neg_only=sorted(top_neg - top_pos),
    )


def is_nocturnal(date: str, night_start: int = 18, night_end: int = 6) -> bool:
    """Hour read in the timestamp's own offset; ``[night_start, 24) U [0, night_end)``."""
    h = parse_date(date).hour
    if night_start > night_end:
        return h >= night_start or h < night_end
    return night_start <= h < night_end


def night_fraction(timelines: Sequence[UserTimeline], night_start: int = 18, night_end: int = 6):
    """Share of users posting mostly (strict majority) at night, overall and per class."""
    per_user = {}
    for tl in timelines:
        night = 0
        for i, p in enumerate(tl.posts):
            try:
                night += is_nocturnal(p.date, night_start, night_end)
            except CorpusError as exc:
                raise CorpusError(
                    f"post {p.id_message} of {tl.nick!r} (index {i}): {exc}"
                ) from None
        per_user[tl.nick] = night / len(tl.posts) if tl.posts else 0.0

    def share(group):
        group = list(group)
        if not group:
            return None
        return sum(1 for tl in group if per_user[tl.nick] > 0.5) / len(group)

    return {
        "per_user": per_user,
        "overall": share(timelines),
        "positive": share(tl for tl in timelines if tl.label == 1),
        "negative": share(tl for tl in timelines if tl.label == 0),
    }
