"""Evaluation math: MAPE, control-vs-feedback session deltas, block trends.

Trials with response times outside the valid range (0.8-10 s) are dropped
before any summary statistic is computed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

RT_VALID_MIN_S = 0.8
RT_VALID_MAX_S = 10.0

MEASURES = ("accuracy", "rt", "attention", "anxiety")


def is_valid_rt(rt_s: float) -> bool:
    return RT_VALID_MIN_S <= rt_s <= RT_VALID_MAX_S


def mape(predictions: Sequence[float], labels: Sequence[float]) -> float:
    """Mean absolute percentage error: (1/n) * sum |pred - label| / |label|."""
    preds = np.asarray(predictions, dtype=float)
    labs = np.asarray(labels, dtype=float)
    if preds.shape != labs.shape or preds.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    if np.any(labs == 0):
        raise ValueError("labels must be nonzero")
    return float(np.mean(np.abs(preds - labs) / np.abs(labs)))


@dataclass(frozen=True)
class Trial:
    rt_s: float
    correct: bool
    pressure_on: bool = False

    @property
    def valid(self) -> bool:
        return is_valid_rt(self.rt_s)


@dataclass(frozen=True)
class SessionSummary:
    accuracy: float
    mean_rt_s: float
    attention: Optional[float] = None  # 1-7 self report; absent for simulated users
    anxiety: Optional[float] = None
    n_trials: int = 0
    n_valid: int = 0


def summarize_session(trials: Sequence[Trial], attention: Optional[float] = None,
                      anxiety: Optional[float] = None) -> SessionSummary:
    valid = [t for t in trials if t.valid]
    if not valid:
        raise ValueError("no valid trials to summarize")
    acc = float(np.mean([t.correct for t in valid]))
    rt = float(np.mean([t.rt_s for t in valid]))
    return SessionSummary(accuracy=acc, mean_rt_s=rt, attention=attention,
                          anxiety=anxiety, n_trials=len(trials), n_valid=len(valid))


@dataclass(frozen=True)
class SessionDelta:
    """Feedback-minus-control deltas; relative = absolute / control value.

    A relative field is None when the control value is zero.
    """
    absolute: dict
    relative: dict


def session_delta(control: SessionSummary, feedback: SessionSummary) -> SessionDelta:
    pairs = {
        "accuracy": (control.accuracy, feedback.accuracy),
        "rt": (control.mean_rt_s, feedback.mean_rt_s),
        "attention": (control.attention, feedback.attention),
        "anxiety": (control.anxiety, feedback.anxiety),
    }
    absolute: dict = {}
    relative: dict = {}
    for name, (c, f) in pairs.items():
        if c is None or f is None:
            absolute[name] = None
            relative[name] = None
            continue
        absolute[name] = f - c
        relative[name] = (f - c) / c if c != 0 else None
    return SessionDelta(absolute=absolute, relative=relative)


@dataclass(frozen=True)
class BlockStats:
    mean_rt_s: list
    accuracy: list
    feedback_pct: list
    relative_rt: list       # (block_i - block_1) / block_1, i >= 2
    relative_accuracy: list


def block_stats(trials: Sequence[Trial], n_blocks: int = 5) -> BlockStats:
    """Chronological block means; the last block absorbs any remainder."""
    if len(trials) < n_blocks:
        raise ValueError(f"need at least {n_blocks} trials, got {len(trials)}")
    size = len(trials) // n_blocks
    blocks = [list(trials[i * size:(i + 1) * size]) for i in range(n_blocks)]
    blocks[-1].extend(trials[n_blocks * size:])

    mean_rt, acc, fb = [], [], []
    for b in blocks:
        valid = [t for t in b if t.valid]
        mean_rt.append(float(np.mean([t.rt_s for t in valid])) if valid else float("nan"))
        acc.append(float(np.mean([t.correct for t in valid])) if valid else float("nan"))
        fb.append(float(np.mean([t.pressure_on for t in b])))

    def rel(series):
        base = series[0]
        if base == 0 or np.isnan(base):
            return [None] * (n_blocks - 1)
        return [(v - base) / base for v in series[1:]]

    return BlockStats(mean_rt_s=mean_rt, accuracy=acc, feedback_pct=fb,
                      relative_rt=rel(mean_rt), relative_accuracy=rel(acc))
