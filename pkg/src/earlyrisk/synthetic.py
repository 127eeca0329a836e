"""Seeded synthetic corpora for tests, benchmarks and demos."""

from __future__ import annotations

import random
import string
from datetime import datetime, timedelta, timezone

from .corpus import PLATFORMS, Post, UserTimeline

_TZ = timezone(timedelta(hours=1))


def _lexicon(rng: random.Random, size: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < size:
        w = "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(4, 9)))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def separable_corpus(
    n_users: int = 200,
    lexicon_size: int = 50,
    posts_per_user: int | tuple[int, int] = 60,
    words_per_post: tuple[int, int] = (3, 10),
    shared_size: int = 0,
    shared_rate: float = 0.0,
    seed: int = 0,
) -> list[UserTimeline]:
    """Half positive, half negative users writing from disjoint class lexicons.

    ``shared_rate`` mixes in words from a common lexicon of ``shared_size``
    words. ``posts_per_user`` may be a ``(min, max)`` range.
    """
    rng = random.Random(seed)
    taken: set[str] = set()
    lex = {1: _lexicon(rng, lexicon_size, taken), 0: _lexicon(rng, lexicon_size, taken)}
    shared = _lexicon(rng, shared_size, taken) if shared_size else []
    start = datetime(2021, 1, 6, 0, 0, 0, tzinfo=_TZ)
    timelines = []
    msg_id = 0
    for u in range(n_users):
        label = 1 if u % 2 == 0 else 0
        nick = f"subject{u + 1}"
        plat = PLATFORMS[rng.randrange(len(PLATFORMS))]
        n_posts = (posts_per_user if isinstance(posts_per_user, int)
                   else rng.randint(*posts_per_user))
        t = start + timedelta(minutes=rng.randrange(24 * 60))
        posts = []
        for r in range(1, n_posts + 1):
            n_words = rng.randint(*words_per_post)
            toks = [rng.choice(shared) if shared and rng.random() < shared_rate
                    else rng.choice(lex[label]) for _ in range(n_words)]
            msg_id += 1
            posts.append(Post(msg_id, r, nick, " ".join(toks),
                              t.isoformat(sep=" "), plat))
            t += timedelta(minutes=rng.randrange(5, 600))
        timelines.append(UserTimeline(nick, tuple(posts), label))
    return timelines


def separable_train_test(n_train: int = 100, n_test: int = 200, **kwargs):
    """Train and test users drawn from the same class lexicons (disjoint users)."""
    tls = separable_corpus(n_users=n_train + n_test, **kwargs)
    return tls[:n_train], tls[n_train:]
