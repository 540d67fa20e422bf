"""Per-trial drift-diffusion environment for the response-time simulation agent.

Evidence starts at 0.5 and drifts toward the boundary (the baseline model's
confidence). With zero action the crossing replays the baseline response time;
the agent's continuous action scales the per-step increment, so it can speed
up or slow down the simulated answer. The episode is one math trial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baseline import BaselinePrediction
from .questions import MathQuestion, encode_question
from .stimulus import StimulusConfig, render_frame


@dataclass(frozen=True)
class SimEnvConfig:
    frame_rate_hz: int = 5
    rt_max_s: float = 10.0
    start_evidence: float = 0.5
    action_gain: float = 1.0   # kappa
    history_len: int = 10      # recent-trial pressure window in the observation
    stimulus: StimulusConfig = StimulusConfig()

    @property
    def max_steps(self) -> int:
        return int(round(self.rt_max_s * self.frame_rate_hz))


def compute_sim_reward(e_rl: float, e_svm: float, p_star: float) -> float:
    """Terminal reward: |E_rl - E_svm|/E_svm + P* when the agent beats the
    regressor's error, else 0. E_svm == 0 falls back to +1 on an exact match."""
    if p_star not in (0.0, -1.0):
        raise ValueError("p_star must be 0 or -1")
    if e_svm == 0.0:
        return 1.0 if e_rl == 0.0 else 0.0
    if e_rl < e_svm:
        return abs(e_rl - e_svm) / e_svm + p_star
    return 0.0


class DDMTrialEnv:
    """One instance simulates one trial at a time; reset() begins a new trial."""

    def __init__(self, cfg: SimEnvConfig = SimEnvConfig()):
        self.cfg = cfg
        self._active = False
        self.episode_return = 0.0

    def reset(self, q: MathQuestion, pred: BaselinePrediction, true_rt_s: float,
              pressure_on: bool, pressure_history: np.ndarray | None = None) -> dict:
        if not 0.0 < true_rt_s <= self.cfg.rt_max_s:
            raise ValueError(f"true_rt_s must be in (0, {self.cfg.rt_max_s}], got {true_rt_s}")
        self.tokens = encode_question(q)
        self.boundary = pred.confidence
        self.base_rt = pred.rt_s
        self.true_rt = true_rt_s
        self.pressure_on = pressure_on
        if pressure_history is None:
            pressure_history = np.zeros(self.cfg.history_len)
        self.history = np.asarray(pressure_history, dtype=np.float32)
        if self.history.shape != (self.cfg.history_len,):
            raise ValueError(f"pressure_history must have shape ({self.cfg.history_len},)")
        self.evidence = self.cfg.start_evidence
        self.drift = (self.boundary - self.cfg.start_evidence) / (self.base_rt * self.cfg.frame_rate_hz)
        self.step_count = 0
        self._active = True
        self.episode_return = 0.0
        return self._observation()

    def _observation(self) -> dict:
        frame = render_frame(self.step_count, self.pressure_on, self.cfg.stimulus)
        return {"tokens": self.tokens, "image": frame.image, "history": self.history}

    def step(self, action: float):
        if not self._active:
            raise RuntimeError("step() after terminal state; call reset()")
        a = float(np.clip(np.asarray(action).reshape(()), -1.0, 1.0))
        self.evidence = max(self.evidence + self.drift * (1.0 + self.cfg.action_gain * a), 0.0)
        self.step_count += 1

        done = False
        reward = 0.0
        info: dict = {}
        timed_out = self.step_count >= self.cfg.max_steps
        if self.evidence >= self.boundary or timed_out:
            done = True
            self._active = False
            rt_rl = self.step_count / self.cfg.frame_rate_hz
            p_star = -1.0 if (timed_out and self.evidence < self.boundary) else 0.0
            e_rl = abs(rt_rl - self.true_rt) / self.true_rt
            e_svm = abs(self.base_rt - self.true_rt) / self.true_rt
            reward = compute_sim_reward(e_rl, e_svm, p_star)
            info = {"rt_rl": rt_rl, "e_rl": e_rl, "e_svm": e_svm, "p_star": p_star}
        self.episode_return += reward
        return self._observation(), reward, done, info


def run_trial(policy_fn, q: MathQuestion, pred: BaselinePrediction, true_rt_s: float,
              pressure_on: bool, cfg: SimEnvConfig = SimEnvConfig(),
              pressure_history: np.ndarray | None = None) -> tuple[float, float]:
    """Roll one trial to termination; policy_fn maps observation -> action.

    Returns (simulated rt in seconds, total episode reward).
    """
    env = DDMTrialEnv(cfg)
    obs = env.reset(q, pred, true_rt_s, pressure_on, pressure_history)
    total = 0.0
    while True:
        obs, reward, done, info = env.step(policy_fn(obs))
        total += reward
        if done:
            return info["rt_rl"], total


def zero_action_steps(pred: BaselinePrediction, cfg: SimEnvConfig = SimEnvConfig()) -> int:
    """Closed-form step count for the zero-action episode (analysis helper)."""
    return min(int(math.ceil(pred.rt_s * cfg.frame_rate_hz - 1e-9)), cfg.max_steps)
