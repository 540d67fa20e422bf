"""Wiring for the response-time simulation agent.

Builds training episodes from a behavior dataset (question, trial number,
pressure flag, observed response time), trains the per-frame policy against
the drift-diffusion environment, and packages the trained stack as a
"simulated user" that the regulation agent can interact with.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import torch

from .answer_model import AnswerAgent
from .baseline import BaselineModel, BaselinePrediction
from .ddm_env import DDMTrialEnv, SimEnvConfig
from .metrics import mape
from .questions import MathQuestion, make_question


def rows_to_questions(rows: list[dict]) -> list[MathQuestion]:
    return [make_question(r["ab"], r["cd"], r["e"]) for r in rows]


def pressure_histories(rows: list[dict], history_len: int = 10) -> np.ndarray:
    """Per-row pressure window: the current trial's flag (newest, last slot)
    preceded by the flags of the trials before it.

    The current flag is part of the window because the pressure bar is visible
    from trial onset. Rows must be grouped by user and chronologically ordered
    within a user, as produced by the dataset generator.
    """
    out = np.zeros((len(rows), history_len), dtype=np.float32)
    window: deque = deque(maxlen=history_len)
    current_user = None
    for i, r in enumerate(rows):
        if r["user_id"] != current_user:
            current_user = r["user_id"]
            window = deque(maxlen=history_len)
        window.append(float(r["pressure"]))
        vals = list(window)
        out[i, history_len - len(vals):] = vals
    return out


@dataclass
class SimDataset:
    rows: list[dict]
    questions: list[MathQuestion]
    predictions: list[BaselinePrediction]
    histories: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)


def build_sim_dataset(rows: list[dict], answer_agent: AnswerAgent,
                      baseline: BaselineModel, history_len: int = 10) -> SimDataset:
    questions = rows_to_questions(rows)
    feats = answer_agent.extract_features(questions)
    trials = np.asarray([r["trial"] for r in rows])
    preds = baseline.predict_batch(feats, trials)
    return SimDataset(rows=rows, questions=questions, predictions=preds,
                      histories=pressure_histories(rows, history_len))


class SimTrainingEnv:
    """Samples one dataset trial per episode and replays it through the DDM."""

    def __init__(self, dataset: SimDataset, cfg: SimEnvConfig = SimEnvConfig(), seed: int = 0):
        self.dataset = dataset
        self.env = DDMTrialEnv(cfg)
        self.rng = np.random.default_rng(seed)

    @property
    def episode_return(self) -> float:
        return self.env.episode_return

    def reset(self) -> dict:
        i = int(self.rng.integers(len(self.dataset)))
        row = self.dataset.rows[i]
        return self.env.reset(self.dataset.questions[i], self.dataset.predictions[i],
                              row["rt"], row["pressure"], self.dataset.histories[i])

    def step(self, action):
        return self.env.step(action)


class SimulatedUserModel:
    """User-protocol adapter over the trained simulation stack.

    Keeps its own trial counter and recent-pressure window so its behavior
    depends on the question, the trial number, and the pressure history it has
    experienced, like the users it was fitted to.
    """

    def __init__(self, answer_agent: AnswerAgent, baseline: BaselineModel,
                 policy, cfg: SimEnvConfig = SimEnvConfig()):
        self.answer_agent = answer_agent
        self.baseline = baseline
        self.policy = policy
        self.cfg = cfg
        self.env = DDMTrialEnv(cfg)
        self._gen = torch.Generator().manual_seed(0)  # unused: greedy actions
        self.reset()

    def reset(self) -> None:
        self.trial_index = 0
        self.history: deque = deque([0.0] * self.cfg.history_len, maxlen=self.cfg.history_len)

    def predict_baseline(self, q: MathQuestion) -> BaselinePrediction:
        feats = self.answer_agent.extract_features([q])
        return self.baseline.predict(feats[0], self.trial_index)

    def respond(self, q: MathQuestion, pressure_on: bool) -> tuple[bool, float]:
        pred = self.predict_baseline(q)
        self.history.append(float(pressure_on))  # window includes the current trial
        hist = np.asarray(self.history, dtype=np.float32)
        obs = self.env.reset(q, pred, pred.rt_s, pressure_on, hist)
        while True:
            batched = {k: v[None] for k, v in obs.items()}
            action, _, _ = self.policy.act(batched, self._gen, deterministic=True)
            obs, _, done, info = self.env.step(action[0])
            if done:
                break
        self.trial_index += 1
        return pred.choice, info["rt_rl"]


def evaluate_sim(dataset: SimDataset, policy, cfg: SimEnvConfig = SimEnvConfig()) -> dict:
    """MAPE of the policy-driven rollouts and of the regressor alone vs truth."""
    gen = torch.Generator().manual_seed(0)
    env = DDMTrialEnv(cfg)
    rt_rl, rt_svm, rt_true = [], [], []
    for i, row in enumerate(dataset.rows):
        pred = dataset.predictions[i]
        obs = env.reset(dataset.questions[i], pred, row["rt"], row["pressure"],
                        dataset.histories[i])
        while True:
            batched = {k: v[None] for k, v in obs.items()}
            action, _, _ = policy.act(batched, gen, deterministic=True)
            obs, _, done, info = env.step(action[0])
            if done:
                break
        rt_rl.append(info["rt_rl"])
        rt_svm.append(pred.rt_s)
        rt_true.append(row["rt"])
    return {"sim_mape": mape(rt_rl, rt_true), "svr_mape": mape(rt_svm, rt_true),
            "n": len(dataset.rows)}
