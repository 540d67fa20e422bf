"""Per-trial pressure-gating environment for the regulation agent.

One step is one math trial: the binary action turns the progress bar on or off
for that trial, the attached user model answers, and the state tracks the
running-mean response time plus a sliding window of the last ten trials.
The policy observes derived threshold features of that state (see
observation_features). Rewards follow the step/end decomposition with
relative-reduction target delta_target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .questions import MathQuestion, QuestionGenerator

DELTA_TARGET_DEFAULT = 0.1054  # relative response-time reduction target

# Observation feature thresholds, as fractions of the session-start baseline
# response time. "Fast" marks trials already sped up by pressure; "elevated"
# marks trials slowed past the baseline, the signature of a user destabilized
# by sustained pressure. Both compare against the fixed baseline rather than
# the running mean: during a slowdown the running mean climbs with the buffer,
# which would clear mean-relative flags exactly when they matter most.
FAST_RT_FRACTION = 0.92
ELEVATED_RT_FRACTION = 1.15
OBS_DIM = 7


def observation_features(r_buffer: list, r_hat: float, r_init: float) -> np.ndarray:
    """Derived observation vector for the regulation policy.

    The raw ten-trial window carries the pressure signal only through delayed,
    compounding response-time effects, which a small MLP fails to pick out; a
    handful of threshold features makes the decision nearly linear. Components:

    [0] running-mean response time / baseline
    [1] newest trial fast    [2] second-newest fast  [3] fast count of last 5 / 5
    [4] newest trial elevated [5] second-newest elevated [6] elevated count of last 5 / 5
    """
    x = np.asarray(list(r_buffer) + [r_hat], dtype=np.float32) / r_init
    buf, r_hat_norm = x[:-1], x[-1]
    fast = buf < FAST_RT_FRACTION
    elev = buf > ELEVATED_RT_FRACTION
    return np.asarray([r_hat_norm, fast[-1], fast[-2], fast[-5:].sum() / 5.0,
                       elev[-1], elev[-2], elev[-5:].sum() / 5.0], dtype=np.float32)


class UserModel(Protocol):
    def respond(self, q: MathQuestion, pressure_on: bool) -> tuple[bool, float]: ...


@dataclass(frozen=True)
class RegulationConfig:
    n_trials: int = 100
    r_init_s: float | None = None   # measured from the user model when None
    delta_target: float = DELTA_TARGET_DEFAULT
    rt_valid_range: tuple[float, float] = (0.8, 10.0)
    buffer_len: int = 10

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.delta_target <= 0:
            raise ValueError("delta_target must be > 0")


def end_reward(delta_ru: float, delta_target: float) -> float:
    """Terminal bonus: (achieved relative reduction - target) / target."""
    return (delta_ru - delta_target) / delta_target


@dataclass
class RegulationState:
    r_hat: float
    r_buffer: list  # oldest -> newest, fixed length
    trial_index: int


class RegulationEnv:
    """Gym-style env over a pluggable user model.

    user_factory is called with an episode index at every reset so each episode
    gets a fresh participant; question order is seeded per episode.
    """

    def __init__(self, user_factory: Callable[[int], UserModel], cfg: RegulationConfig,
                 r_init_s: float, seed: int = 0):
        if r_init_s is None or r_init_s <= 0:
            raise ValueError("r_init_s must be measured and positive")
        self.user_factory = user_factory
        self.cfg = cfg
        self.r_init = float(r_init_s)
        self.seed = seed
        self.episode_index = -1
        self._active = False
        self.episode_return = 0.0
        self.trial_log: list[dict] = []

    def reset(self) -> dict:
        self.episode_index += 1
        self.user = self.user_factory(self.episode_index)
        self.questions = QuestionGenerator(seed=self.seed * 100_003 + self.episode_index)
        self.state = RegulationState(
            r_hat=self.r_init,
            r_buffer=[self.r_init] * self.cfg.buffer_len,
            trial_index=0,
        )
        self._rt_sum = 0.0
        self._rt_count = 0
        self._active = True
        self.episode_return = 0.0
        self.trial_log = []
        return self._observation()

    def _observation(self) -> dict:
        s = self.state
        return {"x": observation_features(s.r_buffer, s.r_hat, self.r_init)}

    def step(self, action):
        if not self._active:
            raise RuntimeError("step() past the final trial; call reset()")
        a = int(np.asarray(action).reshape(()) >= 0.5)
        q = self.questions.generate()
        choice, rt = self.user.respond(q, bool(a))

        lo, hi = self.cfg.rt_valid_range
        valid = lo <= rt <= hi
        if valid:
            self._rt_sum += rt
            self._rt_count += 1
            self.state.r_hat = self._rt_sum / self._rt_count
            self.state.r_buffer = self.state.r_buffer[1:] + [rt]
        self.state.trial_index += 1

        r_s = self.r_init - rt
        done = self.state.trial_index >= self.cfg.n_trials
        r_e = 0.0
        if done:
            self._active = False
            mean_rt = self._rt_sum / self._rt_count if self._rt_count else self.r_init
            delta_ru = (self.r_init - mean_rt) / self.r_init
            r_e = end_reward(delta_ru, self.cfg.delta_target)
        reward = r_s + r_e
        self.episode_return += reward
        self.trial_log.append({
            "trial_index": self.state.trial_index - 1, "action": a, "rt": rt,
            "valid": valid, "r_s": r_s, "r_e": r_e, "r_hat": self.state.r_hat,
        })
        info = {"rt": rt, "valid": valid, "r_s": r_s, "r_e": r_e}
        if done:
            info["mean_rt"] = self._rt_sum / max(self._rt_count, 1)
            info["delta_ru"] = (self.r_init - info["mean_rt"]) / self.r_init
        return self._observation(), reward, done, info


def export_episode_log(path, trial_log: list[dict]) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trial_index", "action", "rt", "r_s", "r_e", "r_hat"])
        for t in trial_log:
            w.writerow([t["trial_index"], t["action"], f"{t['rt']:.6f}",
                        f"{t['r_s']:.6f}", f"{t['r_e']:.6f}", f"{t['r_hat']:.6f}"])


class RegulationTracker:
    """Incremental (r_hat, buffer) bookkeeping shared with live deployments.

    Invalid response times (outside the valid range) are logged by the caller
    but excluded from the running statistics.
    """

    def __init__(self, r_init_s: float, buffer_len: int = 10,
                 rt_valid_range: tuple[float, float] = (0.8, 10.0)):
        self.r_init = float(r_init_s)
        self.rt_valid_range = rt_valid_range
        self.r_buffer = [self.r_init] * buffer_len
        self._rt_sum = 0.0
        self._rt_count = 0

    @property
    def r_hat(self) -> float:
        return self._rt_sum / self._rt_count if self._rt_count else self.r_init

    def record(self, rt_s: float) -> bool:
        lo, hi = self.rt_valid_range
        valid = lo <= rt_s <= hi
        if valid:
            self._rt_sum += rt_s
            self._rt_count += 1
            self.r_buffer = self.r_buffer[1:] + [rt_s]
        return valid

    def observation(self) -> dict:
        return {"x": observation_features(self.r_buffer, self.r_hat, self.r_init)}
