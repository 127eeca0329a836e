"""Post-level corpora: parsing, validation, text normalization and splits.

A corpus file holds one record per post::

    {"id_message": 123, "round": 1, "nick": "subject1", "message": "...",
     "date": "2021-01-06 04:02:48+01:00", "platform": "Telegram"}

either as a single JSON array or as newline-delimited JSON. Labels live in a
separate text file with one ``nick<TAB>label`` line per user.
"""

from __future__ import annotations

import html
import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

PLATFORMS = ("Telegram", "Twitch")
FIELDS = ("id_message", "round", "nick", "message", "date", "platform")


class CorpusError(ValueError):
    pass


class CorpusParseError(CorpusError):
    def __init__(self, msg, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)


class CorpusSchemaError(CorpusError):
    def __init__(self, msg, field=None, index=None):
        self.field = field
        self.index = index
        super().__init__(msg)


class DuplicatePostError(CorpusError):
    pass


@dataclass(frozen=True)
class Post:
    id_message: int
    round: int
    nick: str
    message: str
    date: str
    platform: str

    @property
    def timestamp(self) -> datetime:
        return parse_date(self.date)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in FIELDS}


@dataclass(frozen=True)
class UserTimeline:
    nick: str
    posts: tuple[Post, ...]
    label: int | None = None

    def __len__(self):
        return len(self.posts)


@dataclass
class CorpusStats:
    n_users: int
    n_pos: int
    n_neg: int
    posts_per_user_mean: float
    posts_per_user_min: int
    posts_per_user_max: int
    words_per_post_mean: float
    words_per_post_min: int
    words_per_post_max: int
    platform_by_class: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "posts_per_user": {
                "mean": self.posts_per_user_mean,
                "min": self.posts_per_user_min,
                "max": self.posts_per_user_max,
            },
            "words_per_post": {
                "mean": self.words_per_post_mean,
                "min": self.words_per_post_min,
                "max": self.words_per_post_max,
            },
            "platform_by_class": self.platform_by_class,
        }


def parse_date(value: str) -> datetime:
    try:
        dt = datetime.fromisoformat(value)
    except (TypeError, ValueError) as exc:
        raise CorpusSchemaError(f"unparseable date {value!r}", field="date") from exc
    if dt.tzinfo is None:
        raise CorpusSchemaError(f"date {value!r} has no UTC offset", field="date")
    return dt


def _validate_record(rec, index: int) -> Post:
    if not isinstance(rec, dict):
        raise CorpusSchemaError(f"record {index} is not an object", index=index)
    for name in FIELDS:
        if name not in rec:
            raise CorpusSchemaError(
                f"record {index}: missing required field {name!r}", field=name, index=index
            )
    id_message, rnd = rec["id_message"], rec["round"]
    if isinstance(id_message, bool) or not isinstance(id_message, int):
        raise CorpusSchemaError(
            f"record {index}: id_message must be an integer", field="id_message", index=index
        )
    if isinstance(rnd, bool) or not isinstance(rnd, int) or rnd < 1:
        raise CorpusSchemaError(
            f"record {index}: round must be a positive integer", field="round", index=index
        )
    for name in ("nick", "message", "date", "platform"):
        if not isinstance(rec[name], str):
            raise CorpusSchemaError(
                f"record {index}: {name} must be a string", field=name, index=index
            )
    if rec["platform"] not in PLATFORMS:
        raise CorpusSchemaError(
            f"record {index}: unknown platform {rec['platform']!r}", field="platform", index=index
        )
    try:
        parse_date(rec["date"])
    except CorpusSchemaError as exc:
        raise CorpusSchemaError(f"record {index}: {exc}", field="date", index=index) from None
    return Post(id_message, rnd, rec["nick"], rec["message"], rec["date"], rec["platform"])


def _load_records(text: str, fmt: str) -> list:
    if fmt == "json_array":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"malformed JSON: {exc.msg}", exc.lineno, exc.pos) from None
        if not isinstance(data, list):
            raise CorpusParseError("expected a JSON array of post records", 1, 0)
        return data
    if fmt == "json_lines":
        records = []
        offset = 0
        for lineno, line in enumerate(text.splitlines(keepends=True), start=1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CorpusParseError(
                        f"malformed JSON: {exc.msg}", lineno, offset + exc.pos
                    ) from None
            offset += len(line)
        return records
    raise ValueError(f"unknown corpus format {fmt!r}")


def detect_format(text: str) -> str:
    return "json_array" if text.lstrip().startswith("[") else "json_lines"


def read_labels(path) -> dict[str, int]:
    labels: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1].strip() not in ("0", "1"):
                raise CorpusParseError(f"bad label line {line!r}", lineno)
            labels[parts[0].strip()] = int(parts[1])
    return labels


def write_labels(labels: dict[str, int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for nick in sorted(labels):
            fh.write(f"{nick}\t{labels[nick]}\n")


def group_posts(posts: Iterable[Post], labels: dict[str, int] | None = None) -> list[UserTimeline]:
    by_nick: dict[str, list[Post]] = {}
    seen = set()
    for post in posts:
        key = (post.nick, post.id_message)
        if key in seen:
            raise DuplicatePostError(
                f"duplicate post id_message={post.id_message} for nick {post.nick!r}"
            )
        seen.add(key)
        by_nick.setdefault(post.nick, []).append(post)
    timelines = []
    for nick in sorted(by_nick):
        ordered = tuple(sorted(by_nick[nick], key=lambda p: (p.round, p.id_message)))
        label = labels.get(nick) if labels is not None else None
        timelines.append(UserTimeline(nick, ordered, label))
    return timelines


def parse_corpus(path, format: str | None = None, labels_path=None) -> list[UserTimeline]:
    """Read a corpus file into per-user timelines sorted by nick, posts by round.

    ``format`` is ``"json_array"`` or ``"json_lines"``; autodetected when None.
    """
    text = Path(path).read_text(encoding="utf-8")
    fmt = format or detect_format(text)
    records = _load_records(text, fmt)
    posts = [_validate_record(rec, i) for i, rec in enumerate(records)]
    labels = read_labels(labels_path) if labels_path is not None else None
    return group_posts(posts, labels)


def write_corpus(timelines: Sequence[UserTimeline], path, format: str = "json_lines") -> None:
    records = [p.to_dict() for tl in timelines for p in tl.posts]
    with open(path, "w", encoding="utf-8") as fh:
        if format == "json_array":
            json.dump(records, fh, ensure_ascii=False, indent=1)
        elif format == "json_lines":
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        else:
            raise ValueError(f"unknown corpus format {format!r}")


def labels_of(timelines: Iterable[UserTimeline]) -> dict[str, int]:
    return {tl.nick: tl.label for tl in timelines if tl.label is not None}


# -- preprocessing -------------------------------------------------------------

_URL_RE = re.compile(r"(?:https?://|ftp://|www\.)\S+")
_UESC_RE = re.compile(r"\\u([0-9a-fA-F]{4})")


def _decode_unicode_escapes(text: str) -> str:
    def sub(match):
        cp = int(match.group(1), 16)
        if 0xD800 <= cp <= 0xDFFF:
            return match.group(0)
        return chr(cp)

    text = _decode_surrogate_pairs(text)
    return _UESC_RE.sub(sub, text)


_PAIR_RE = re.compile(r"\\u([dD][89abAB][0-9a-fA-F]{2})\\u([dD][c-fC-F][0-9a-fA-F]{2})")


def _decode_surrogate_pairs(text: str) -> str:
    def sub(match):
        hi, lo = int(match.group(1), 16), int(match.group(2), 16)
        return chr(0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00))

    return _PAIR_RE.sub(sub, text)


def _decode(text: str) -> str:
    # entity/escape decoding and lowercasing can feed each other ("&AMP;amp;"),
    # so iterate to a fixed point
    for _ in range(16):
        new = _decode_unicode_escapes(html.unescape(text)).lower()
        if new == text:
            break
        text = new
    return text


def preprocess(text: str) -> str:
    """Normalize a raw post.

    Decodes HTML entities and ``\\uXXXX`` escapes, lowercases, replaces URLs
    with ``weblink``, collapses immediately repeated tokens and whitespace runs.
    """
    text = _decode(text)
    text = _URL_RE.sub("weblink", text)
    out: list[str] = []
    for tok in text.split():
        if not out or out[-1] != tok:
            out.append(tok)
    return " ".join(out)


def preprocess_timelines(timelines: Iterable[UserTimeline]) -> list[UserTimeline]:
    return [
        replace(tl, posts=tuple(replace(p, message=preprocess(p.message)) for p in tl.posts))
        for tl in timelines
    ]


# -- splits and statistics -----------------------------------------------------


def split_train_val(timelines: Sequence[UserTimeline], val_fraction: float, seed: int):
    """Stratified, seeded split into ``(train, val)``.

    The total validation size is ``round(n * val_fraction)``, shared between
    the classes by largest remainder so each class is within one user of exact
    stratification.
    """
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    for tl in timelines:
        if tl.label is None:
            raise CorpusError(f"timeline {tl.nick!r} is unlabeled")
    by_class = {c: sorted((tl for tl in timelines if tl.label == c), key=lambda t: t.nick)
                for c in (1, 0)}
    if not by_class[0] or not by_class[1]:
        raise CorpusError("both classes must be present to stratify")

    n_val = math.floor(len(timelines) * val_fraction + 0.5)
    exact = {c: len(by_class[c]) * val_fraction for c in by_class}
    quota = {c: math.floor(exact[c]) for c in by_class}
    for c in sorted(by_class, key=lambda c: (-(exact[c] - quota[c]), -c)):
        if sum(quota.values()) >= n_val:
            break
        quota[c] += 1

    rng = random.Random(seed)
    train, val = [], []
    for c in (1, 0):
        members = list(by_class[c])
        rng.shuffle(members)
        val.extend(members[: quota[c]])
        train.extend(members[quota[c]:])
    key = lambda t: t.nick  # noqa: E731
    return sorted(train, key=key), sorted(val, key=key)


def _class_name(label):
    return {1: "positive", 0: "negative"}.get(label, "unlabeled")


def user_platform(tl: UserTimeline) -> str:
    counts = Counter(p.platform for p in tl.posts)
    return min(counts, key=lambda k: (-counts[k], k))


def compute_stats(timelines: Sequence[UserTimeline]) -> CorpusStats:
    """Table-style corpus statistics. Word counts use raw whitespace tokens."""
    if not timelines:
        raise CorpusError("cannot compute statistics of an empty corpus")
    posts_per_user = [len(tl.posts) for tl in timelines]
    words = [len(p.message.split()) for tl in timelines for p in tl.posts]
    platform_by_class: dict[str, dict[str, int]] = {}
    for tl in timelines:
        if not tl.posts:
            continue
        bucket = platform_by_class.setdefault(_class_name(tl.label), {})
        plat = user_platform(tl)
        bucket[plat] = bucket.get(plat, 0) + 1
    return CorpusStats(
        n_users=len(timelines),
        n_pos=sum(1 for tl in timelines if tl.label == 1),
        n_neg=sum(1 for tl in timelines if tl.label == 0),
        posts_per_user_mean=sum(posts_per_user) / len(posts_per_user),
        posts_per_user_min=min(posts_per_user),
        posts_per_user_max=max(posts_per_user),
        words_per_post_mean=sum(words) / len(words) if words else 0.0,
        words_per_post_min=min(words) if words else 0,
        words_per_post_max=max(words) if words else 0,
        platform_by_class=platform_by_class,
    )
