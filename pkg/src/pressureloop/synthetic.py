"""Parametric ground-truth user oracle for training and evaluation.

Stands in for a human dataset: response time follows a base speed plus a
fatigue drift, an arousal speed-up while pressure is on, and an anxiety
slow-down that builds over consecutive pressured trials and decays during
unpressured ones. The defaults are tuned so that neither constant pressure
schedule is optimal, which is provable here by exhaustive search.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, replace

import numpy as np

from .questions import MathQuestion, QuestionGenerator

RT_MIN_S = 0.8
RT_MAX_S = 10.0


@dataclass(frozen=True)
class SyntheticUserConfig:
    base_rt_s: float = 3.0        # mu0
    rt_noise_s: float = 0.3       # sigma
    p_accuracy: float = 0.95
    arousal_gain_s: float = 1.0   # speed-up while pressure is on
    anxiety_gain_s: float = 0.25  # slow-down per unit of anxiety
    recovery: float = 2.0         # anxiety decay per unpressured trial
    fatigue_s_per_trial: float = 0.002

    def __post_init__(self) -> None:
        if not 1.0 <= self.base_rt_s <= 6.0:
            raise ValueError("base_rt_s must be in [1, 6]")
        if not 0.5 < self.p_accuracy <= 1.0:
            raise ValueError("p_accuracy must be in (0.5, 1]")
        if min(self.arousal_gain_s, self.anxiety_gain_s, self.recovery) < 0:
            raise ValueError("gains and recovery must be >= 0")


class SyntheticUser:
    """One simulated participant; anxiety/trial state advances only in respond()."""

    def __init__(self, cfg: SyntheticUserConfig = SyntheticUserConfig(), seed: int = 0):
        self.cfg = cfg
        self._rng = np.random.default_rng(seed)
        self.anxiety = 0.0
        self.trial_index = 0

    def respond(self, q: MathQuestion, pressure_on: bool) -> tuple[bool, float]:
        c = self.cfg
        rt = c.base_rt_s + c.fatigue_s_per_trial * self.trial_index
        if pressure_on:
            rt -= c.arousal_gain_s
        rt += c.anxiety_gain_s * self.anxiety
        if c.rt_noise_s > 0:
            rt += float(self._rng.normal(0.0, c.rt_noise_s))
        rt = float(np.clip(rt, RT_MIN_S, RT_MAX_S))

        if pressure_on:
            self.anxiety += 1.0
        else:
            self.anxiety = max(0.0, self.anxiety - c.recovery)
        self.trial_index += 1

        correct = self._rng.random() < c.p_accuracy
        choice = q.truth if correct else not q.truth
        return choice, rt


def deterministic_rt_sequence(cfg: SyntheticUserConfig, schedule) -> list[float]:
    """Closed-form RT trace for a pressure schedule with noise disabled."""
    if cfg.rt_noise_s != 0:
        raise ValueError("deterministic mode requires rt_noise_s == 0")
    rts = []
    x = 0.0
    for i, on in enumerate(schedule):
        rt = cfg.base_rt_s + cfg.fatigue_s_per_trial * i
        if on:
            rt -= cfg.arousal_gain_s
        rt += cfg.anxiety_gain_s * x
        rts.append(float(np.clip(rt, RT_MIN_S, RT_MAX_S)))
        x = x + 1.0 if on else max(0.0, x - cfg.recovery)
    return rts


def optimal_short_horizon_policy(cfg: SyntheticUserConfig, horizon: int = 10):
    """Exhaustive search over all 2^horizon pressure schedules (noise-free).

    Returns (best_schedule, best_mean_rt).
    """
    if horizon > 20:
        raise ValueError("horizon capped at 20 (2^H search)")
    if cfg.rt_noise_s != 0:
        raise ValueError("exhaustive search requires rt_noise_s == 0")
    best_schedule, best_rt = None, float("inf")
    for schedule in itertools.product((False, True), repeat=horizon):
        mean_rt = float(np.mean(deterministic_rt_sequence(cfg, schedule)))
        if mean_rt < best_rt:
            best_schedule, best_rt = list(schedule), mean_rt
    return best_schedule, best_rt


def sample_user_config(rng: np.random.Generator,
                       base: SyntheticUserConfig = SyntheticUserConfig(),
                       base_rt_range=(2.0, 4.0)) -> SyntheticUserConfig:
    return replace(base, base_rt_s=float(rng.uniform(*base_rt_range)))


def measure_baseline_rt(cfg: SyntheticUserConfig, n_trials: int = 200, seed: int = 0) -> float:
    """Mean no-pressure RT of a fresh user; the regulation reference point."""
    user = SyntheticUser(cfg, seed=seed)
    gen = QuestionGenerator(seed=seed + 1)
    rts = [user.respond(gen.generate(), False)[1] for _ in range(n_trials)]
    return float(np.mean(rts))


DATASET_HEADER = ["user_id", "trial", "ab", "cd", "e", "pressure", "choice", "rt"]


def generate_dataset(n_users: int, trials_per_user: int, seed: int,
                     base: SyntheticUserConfig = SyntheticUserConfig(),
                     base_rt_range=(2.0, 4.0),
                     pressure_persistence: float | None = None) -> list[dict]:
    """Random-pressure corpus, one sampled user per block.

    By default each trial is pressured independently with p=0.5. With
    pressure_persistence in (0.5, 1) the flag follows a symmetric Markov chain
    (stay probability = persistence), which keeps the overall pressured
    fraction at 0.5 but produces sustained runs — needed when the corpus must
    cover the anxiety build-up that only long runs elicit.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if pressure_persistence is not None and not 0.5 <= pressure_persistence < 1:
        raise ValueError("pressure_persistence must be in [0.5, 1)")
    rng = np.random.default_rng(seed)
    rows = []
    for uid in range(n_users):
        cfg = sample_user_config(rng, base, base_rt_range)
        user = SyntheticUser(cfg, seed=int(rng.integers(2**31)))
        gen = QuestionGenerator(seed=int(rng.integers(2**31)))
        pressure = bool(rng.random() < 0.5)
        for t in range(trials_per_user):
            q = gen.generate()
            if pressure_persistence is None:
                pressure = bool(rng.random() < 0.5)
            elif t > 0:
                if rng.random() >= pressure_persistence:
                    pressure = not pressure
            choice, rt = user.respond(q, pressure)
            rows.append({
                "user_id": uid, "trial": t, "ab": q.ab, "cd": q.cd, "e": q.e,
                "pressure": pressure, "choice": choice, "rt": rt,
            })
    return rows


def save_dataset(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=DATASET_HEADER)
        w.writeheader()
        for r in rows:
            out = dict(r)
            out["pressure"] = int(r["pressure"])
            out["choice"] = int(r["choice"])
            out["rt"] = f"{r['rt']:.6f}"
            w.writerow(out)


def load_dataset(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append({
                "user_id": int(r["user_id"]), "trial": int(r["trial"]),
                "ab": int(r["ab"]), "cd": int(r["cd"]), "e": int(r["e"]),
                "pressure": bool(int(r["pressure"])), "choice": bool(int(r["choice"])),
                "rt": float(r["rt"]),
            })
    return rows
