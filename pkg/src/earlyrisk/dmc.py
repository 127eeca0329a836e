"""Decision policies turning per-round user scores into sticky positive alerts."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import kernels
from .metrics import DecisionRecord
from .ss3 import ConfidenceState


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalPolicyConfig:
    gamma: float = 0.5

    def __post_init__(self):
        if not self.gamma >= 0:
            raise PolicyError("gamma must be non-negative")


@dataclass(frozen=True)
class HistoryPolicyConfig:
    tau: float = 0.6
    T: int = 10

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise PolicyError("tau must lie in [0, 1]")
        if isinstance(self.T, bool) or not isinstance(self.T, int) or self.T < 1:
            raise PolicyError("T must be a positive integer")


@dataclass
class UserDecisionState:
    nick: str
    score_history: list[float] = field(default_factory=list)
    qualifying_count: int = 0
    decided: bool = False
    decision_round: int | None = None

    def to_dict(self):
        return {
            "nick": self.nick,
            "score_history": list(self.score_history),
            "qualifying_count": self.qualifying_count,
            "decided": self.decided,
            "decision_round": self.decision_round,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["nick"], list(d["score_history"]), d["qualifying_count"],
                   d["decided"], d["decision_round"])


def softmax_score(state: ConfidenceState) -> float:
    """Positive coordinate of softmax([cv_pos / delay, cv_neg / delay])."""
    if state.delay < 1:
        raise PolicyError("no evidence yet (delay = 0)")
    d = (state.cv_negative - state.cv_positive) / state.delay
    # 1 / (1 + e^d) is the same quantity without overflow for large |d|
    if d > 700:
        return 1.0 / (1.0 + math.exp(700.0))
    return 1.0 / (1.0 + math.exp(d))


def median_mad(values: Iterable[float]) -> tuple[float, float]:
    """Median and median absolute deviation; even sizes average the two central values."""
    vals = list(values)
    if not vals:
        raise PolicyError("median of an empty cohort")
    med = statistics.median(vals)
    return med, statistics.median(abs(v - med) for v in vals)


def global_threshold(scores: Iterable[float], cfg: GlobalPolicyConfig) -> float:
    med, mad = median_mad(scores)
    return med + cfg.gamma * mad


def global_decide(scores: Mapping[str, float], cfg: GlobalPolicyConfig) -> dict[str, int]:
    """Flag users whose score is strictly above ``median + gamma * MAD`` of the cohort."""
    if not scores:
        raise PolicyError("global policy needs at least one score")
    threshold = global_threshold(scores.values(), cfg)
    return {nick: int(s > threshold) for nick, s in scores.items()}


def history_decide(state: UserDecisionState, p: float, cfg: HistoryPolicyConfig) -> UserDecisionState:
    """Record score ``p``; decide positive once ``T`` scores have reached ``tau``.

    Mutates and returns ``state``. A positive decision never reverts; later
    scores are still recorded.
    """
    if not 0 <= p <= 1:
        raise PolicyError(f"score {p!r} outside [0, 1]")
    state.score_history.append(p)
    if p >= cfg.tau:
        state.qualifying_count += 1
    if not state.decided and state.qualifying_count >= cfg.T:
        state.decided = True
        state.decision_round = len(state.score_history)
    return state


def history_decision_round(scores: Iterable[float], cfg: HistoryPolicyConfig) -> int | None:
    """Batch form of the history rule over a whole score sequence."""
    idx = kernels.first_decision_index(list(scores), cfg.tau, cfg.T)
    return idx or None


def mark_decided(state: UserDecisionState, rnd: int) -> UserDecisionState:
    if not state.decided:
        state.decided = True
        state.decision_round = rnd
    return state


def finalize(
    states: Iterable[UserDecisionState],
    last_round: int | Mapping[str, int],
    truths: Mapping[str, int] | None = None,
) -> dict[str, DecisionRecord]:
    """Close the stream: decided users keep their round, the rest become negative.

    ``last_round`` is either one round shared by everyone or a per-user map
    (a user's last served round).
    """
    out = {}
    for st in states:
        if st.decided:
            rec = DecisionRecord(st.nick, 1, st.decision_round)
        else:
            lr = last_round if isinstance(last_round, int) else last_round[st.nick]
            rec = DecisionRecord(st.nick, 0, lr)
        if truths is not None:
            rec = DecisionRecord(rec.nick, rec.decision, rec.latency, truths.get(st.nick))
        out[st.nick] = rec
    return out
