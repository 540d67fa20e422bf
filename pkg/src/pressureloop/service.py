"""HTTP trial service for live study sessions.

Orchestrates the fixed session protocol: practice 1 (10 trials, correctness
shown), 10 s rest, practice 2 (10 trials, no correctness), 60 s rest, then two
counterbalanced 100-trial test sessions (Control / Feedback), each followed by
a 7-point questionnaire and a 2-minute rest. The pressure flag in Feedback
phases comes from a pluggable policy: a frozen RL checkpoint acting greedily,
a Bernoulli(0.5) coin, or always-off.

Every state change is appended to a per-session JSONL event log; exports are
recomputed deterministically from that log, so re-exports are byte-identical.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import metrics
from .questions import MathQuestion, QuestionGenerator, canonical_string, ground_truth
from .regulation import RegulationTracker

SCHEMA_VERSION = "1"

PRACTICE_TRIALS = 10
TEST_TRIALS = 100

# phase -> (kind, default rest seconds)
PHASES = ["practice1", "rest1", "practice2", "rest2",
          "test1", "questionnaire1", "rest3",
          "test2", "questionnaire2", "done"]
REST_SECONDS = {"rest1": 10.0, "rest2": 60.0, "rest3": 120.0}
TRIAL_PHASES = {"practice1", "practice2", "test1", "test2"}

GROUPS = ("rl", "random")
ORDERS = ("control-first", "feedback-first")


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class ServiceConfig:
    data_dir: str = "sessions"
    rest_scale: float = 1.0       # 0.0 zeroes every rest timer (for tests)
    policy_path: Optional[str] = None
    clock: callable = time.monotonic


class PressurePolicy:
    """Per-session pressure decider for Feedback phases."""

    def __init__(self, group: str, seed: int, policy=None, r_init_s: float = 3.0):
        self.group = group
        self.rng = np.random.default_rng(seed)
        self.policy = policy
        self.tracker = RegulationTracker(r_init_s)
        self._gen = torch.Generator().manual_seed(seed)

    def decide(self) -> bool:
        if self.group == "random":
            return bool(self.rng.random() < 0.5)
        if self.policy is None:
            raise RuntimeError("rl session requires a policy checkpoint")
        obs = self.tracker.observation()
        action, _, _ = self.policy.act({"x": obs["x"][None]}, self._gen)
        return bool(action[0] > 0.5)

    def record(self, rt_s: float) -> dict:
        """Reward bookkeeping for the live episode (logged, never learned from)."""
        r_s = self.tracker.r_init - rt_s
        self.tracker.record(rt_s)
        return {"r_s": r_s, "r_hat": self.tracker.r_hat}


@dataclass
class SessionState:
    id: str
    participant: str
    group: str
    order: str
    seed: int
    phase: str = "practice1"
    trial_index: int = 0           # within the current phase
    practice1_limit: int = PRACTICE_TRIALS
    outstanding: Optional[dict] = None
    rest_until: float = 0.0
    pressure: Optional[PressurePolicy] = None
    questions: Optional[QuestionGenerator] = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    resumed: bool = False

    def feedback_phase(self) -> str:
        return "test1" if self.order == "feedback-first" else "test2"

    def phase_limit(self) -> int:
        if self.phase == "practice1":
            return self.practice1_limit
        if self.phase == "practice2":
            return PRACTICE_TRIALS
        return TEST_TRIALS


class CreateSessionBody(BaseModel):
    participant: str = Field(min_length=1)
    group: str
    order: str
    seed: int = 0


class AnswerBody(BaseModel):
    answer: bool
    rt_ms: float = Field(gt=0)


class QuestionnaireBody(BaseModel):
    attention: int = Field(ge=1, le=7)
    anxiety: int = Field(ge=1, le=7)


class SessionService:
    def __init__(self, cfg: ServiceConfig, policy=None):
        self.cfg = cfg
        self.policy = policy
        self.sessions: dict[str, SessionState] = {}
        self.participants: set[str] = set()
        self._registry_lock = threading.Lock()
        os.makedirs(cfg.data_dir, exist_ok=True)

    # --- event log -----------------------------------------------------------

    def _log_path(self, session_id: str) -> str:
        return os.path.join(self.cfg.data_dir, f"{session_id}.jsonl")

    def _append(self, session_id: str, event: dict) -> None:
        event = {"schema": SCHEMA_VERSION, "ts": _utcnow(), **event}
        with open(self._log_path(session_id), "a") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")

    def read_events(self, session_id: str) -> list[dict]:
        with open(self._log_path(session_id)) as f:
            return [json.loads(line) for line in f]

    # --- session ops ---------------------------------------------------------

    def create_session(self, body: CreateSessionBody) -> dict:
        if body.group not in GROUPS:
            raise HTTPException(422, f"group must be one of {GROUPS}")
        if body.order not in ORDERS:
            raise HTTPException(422, f"order must be one of {ORDERS}")
        if body.group == "rl" and self.policy is None:
            raise HTTPException(409, "rl sessions need a policy checkpoint; "
                                     "start the service with one")
        with self._registry_lock:
            if body.participant in self.participants:
                raise HTTPException(409, "participant code already in use")
            self.participants.add(body.participant)
            sid = f"s{len(self.sessions):04d}-{body.participant}"
            st = SessionState(id=sid, participant=body.participant,
                              group=body.group, order=body.order, seed=body.seed)
            st.questions = QuestionGenerator(seed=body.seed)
            st.pressure = PressurePolicy(body.group, body.seed, self.policy)
            self.sessions[sid] = st
        self._append(sid, {"type": "session_created", "session": sid,
                           "participant": body.participant, "group": body.group,
                           "order": body.order, "seed": body.seed})
        return {"session_id": sid, "phase": st.phase, "group": st.group,
                "order": st.order, "schema": SCHEMA_VERSION}

    def _get(self, session_id: str) -> SessionState:
        st = self.sessions.get(session_id)
        if st is None:
            st = self._resume(session_id)
        return st

    def _resume(self, session_id: str) -> SessionState:
        """Rebuild a session from its event log (e.g. after a service restart).

        The question stream and the pressure decider are replayed event by
        event so their internal state matches the moment the log broke off;
        a rest phase restarts its full timer because elapsed rest time is not
        recoverable. Resumed sessions are flagged in exports.
        """
        if not os.path.exists(self._log_path(session_id)):
            raise HTTPException(404, "unknown session")
        events = self.read_events(session_id)
        created = next(e for e in events if e["type"] == "session_created")
        st = SessionState(id=session_id, participant=created["participant"],
                          group=created["group"], order=created["order"],
                          seed=created["seed"], resumed=True)
        st.questions = QuestionGenerator(seed=st.seed)
        st.pressure = PressurePolicy(st.group, st.seed, self.policy)
        for e in events:
            if e["type"] == "phase_entered":
                st.phase = e["phase"]
                st.trial_index = 0
                if st.phase in REST_SECONDS:
                    st.rest_until = self.cfg.clock() + \
                        REST_SECONDS[st.phase] * self.cfg.rest_scale
            elif e["type"] == "practice_extended":
                st.practice1_limit = e["new_limit"]
            elif e["type"] == "trial_served":
                q = st.questions.generate()
                if e["phase"] == st.feedback_phase():
                    st.pressure.decide()  # keep the decider's rng in step
                st.outstanding = {"q": q, "pressure": e["pressure"],
                                  "served": e["served"] if "served" in e else e["ts"]}
            elif e["type"] == "trial_answered":
                if e["phase"] == st.feedback_phase():
                    st.pressure.record(e["rt_ms"] / 1000.0)
                st.outstanding = None
                st.trial_index += 1
        with self._registry_lock:
            self.participants.add(st.participant)
            self.sessions[session_id] = st
        self._append(session_id, {"type": "session_resumed", "phase": st.phase})
        return st

    def _advance_phase(self, st: SessionState) -> None:
        st.phase = PHASES[PHASES.index(st.phase) + 1]
        st.trial_index = 0
        if st.phase in REST_SECONDS:
            st.rest_until = self.cfg.clock() + REST_SECONDS[st.phase] * self.cfg.rest_scale
        self._append(st.id, {"type": "phase_entered", "phase": st.phase})

    def _maybe_leave_rest(self, st: SessionState) -> None:
        if st.phase in REST_SECONDS:
            remaining = st.rest_until - self.cfg.clock()
            if remaining > 0:
                raise HTTPException(425, "rest in progress",
                                    headers={"Retry-After": f"{remaining:.1f}"})
            self._advance_phase(st)

    def next_trial(self, session_id: str) -> dict:
        st = self._get(session_id)
        with st.lock:
            self._maybe_leave_rest(st)
            if st.phase not in TRIAL_PHASES:
                raise HTTPException(409, f"no trials in phase {st.phase}")
            if st.outstanding is not None:
                raise HTTPException(409, "previous trial not yet answered")
            q = st.questions.generate()
            if st.phase == st.feedback_phase():
                pressure = st.pressure.decide()
            else:
                pressure = False
            st.outstanding = {"q": q, "pressure": pressure, "served": _utcnow()}
            self._append(st.id, {
                "type": "trial_served", "phase": st.phase,
                "trial_index": st.trial_index,
                "question": {"ab": q.ab, "cd": q.cd, "e": q.e},
                "pressure": pressure,
            })
            return {"phase": st.phase, "trial_index": st.trial_index,
                    "question": canonical_string(q), "pressure": pressure,
                    "trials_in_phase": st.phase_limit()}

    def submit_answer(self, session_id: str, body: AnswerBody) -> dict:
        st = self._get(session_id)
        with st.lock:
            if st.outstanding is None:
                raise HTTPException(409, "no outstanding trial")
            q: MathQuestion = st.outstanding["q"]
            rt_s = body.rt_ms / 1000.0
            correct = body.answer == ground_truth(q)
            valid = metrics.is_valid_rt(rt_s)
            event = {
                "type": "trial_answered", "phase": st.phase,
                "trial_index": st.trial_index,
                "question": {"ab": q.ab, "cd": q.cd, "e": q.e},
                "pressure": st.outstanding["pressure"],
                "served": st.outstanding["served"], "answer": body.answer,
                "correct": correct, "rt_ms": body.rt_ms, "valid": valid,
            }
            if st.phase == st.feedback_phase():
                event["regulation"] = st.pressure.record(rt_s)
            self._append(st.id, event)
            st.outstanding = None
            st.trial_index += 1
            response = {"phase": st.phase, "trial_index": st.trial_index - 1,
                        "valid": valid}
            if st.phase == "practice1":
                response["correct"] = correct
            if st.trial_index >= st.phase_limit():
                self._advance_phase(st)
            response["next_phase"] = st.phase
            return response

    def extend_practice(self, session_id: str, extra: int = PRACTICE_TRIALS) -> dict:
        st = self._get(session_id)
        with st.lock:
            if st.phase != "practice1":
                raise HTTPException(409, "practice extension only during practice1")
            st.practice1_limit += extra
            self._append(st.id, {"type": "practice_extended",
                                 "new_limit": st.practice1_limit})
            return {"phase": st.phase, "trials_in_phase": st.practice1_limit}

    def submit_questionnaire(self, session_id: str, body: QuestionnaireBody) -> dict:
        st = self._get(session_id)
        with st.lock:
            if st.phase not in ("questionnaire1", "questionnaire2"):
                raise HTTPException(409, f"no questionnaire in phase {st.phase}")
            self._append(st.id, {"type": "questionnaire", "phase": st.phase,
                                 "attention": body.attention, "anxiety": body.anxiety})
            self._advance_phase(st)
            return {"phase": st.phase}

    # --- export ----------------------------------------------------------------

    def export_session(self, session_id: str) -> dict:
        st = self._get(session_id)
        events = self.read_events(session_id)
        report = build_export(events)
        report["complete"] = st.phase == "done"
        report["resumed"] = st.resumed
        return report


def _trials_from_events(events: list[dict], phase: str) -> list[metrics.Trial]:
    return [metrics.Trial(rt_s=e["rt_ms"] / 1000.0, correct=e["correct"],
                          pressure_on=e["pressure"])
            for e in events if e["type"] == "trial_answered" and e["phase"] == phase]


def build_export(events: list[dict]) -> dict:
    """Deterministic report from the event log alone."""
    created = next(e for e in events if e["type"] == "session_created")
    order = created["order"]
    feedback_phase = "test1" if order == "feedback-first" else "test2"
    control_phase = "test2" if feedback_phase == "test1" else "test1"

    out = {"schema": SCHEMA_VERSION, "session": created["session"],
           "participant": created["participant"], "group": created["group"],
           "order": order, "phases": {}}
    questionnaires = {e["phase"]: {"attention": e["attention"], "anxiety": e["anxiety"]}
                      for e in events if e["type"] == "questionnaire"}
    summaries = {}
    for phase in ("test1", "test2"):
        trials = _trials_from_events(events, phase)
        if not trials:
            continue
        qn = questionnaires.get("questionnaire1" if phase == "test1" else "questionnaire2")
        qn = qn or {}
        s = metrics.summarize_session(trials, attention=qn.get("attention"),
                                      anxiety=qn.get("anxiety"))
        label = "feedback" if phase == feedback_phase else "control"
        summaries[label] = s
        blocks = metrics.block_stats(trials)
        out["phases"][phase] = {
            "label": label,
            "n_trials": len(trials), "n_valid": s.n_valid,
            "accuracy": s.accuracy, "mean_rt_s": s.mean_rt_s,
            "pressure_fraction": float(np.mean([t.pressure_on for t in trials])),
            "questionnaire": qn or None,
            "blocks": {"mean_rt_s": blocks.mean_rt_s, "accuracy": blocks.accuracy,
                       "feedback_pct": blocks.feedback_pct,
                       "relative_rt": blocks.relative_rt,
                       "relative_accuracy": blocks.relative_accuracy},
        }
    # correctness tallies for compensation bookkeeping
    answered = [e for e in events if e["type"] == "trial_answered"]
    out["n_trials_total"] = len(answered)
    out["n_correct_total"] = sum(1 for e in answered if e["correct"])
    if "control" in summaries and "feedback" in summaries:
        delta = metrics.session_delta(summaries["control"], summaries["feedback"])
        out["delta"] = {"absolute": delta.absolute, "relative": delta.relative}
    return out


def replay_pressure_flags(events: list[dict], policy,
                          r_init_s: float = 3.0) -> list[tuple[bool, bool]]:
    """Recompute every Feedback-phase pressure flag from the log.

    Returns (logged flag, replayed flag) pairs; they match because every
    deployment decision is driven by the per-session seed, which is the
    protocol guarantee.
    """
    created = next(e for e in events if e["type"] == "session_created")
    feedback_phase = ("test1" if created["order"] == "feedback-first" else "test2")
    pp = PressurePolicy(created["group"], created["seed"], policy, r_init_s)
    pairs = []
    for e in events:
        if e.get("phase") != feedback_phase:
            continue
        if e["type"] == "trial_served":
            pairs.append((bool(e["pressure"]), pp.decide()))
        elif e["type"] == "trial_answered":
            pp.record(e["rt_ms"] / 1000.0)
    return pairs


def attach_live_session(service: SessionService, session_id: str) -> PressurePolicy:
    """Handle onto a live session's regulation bookkeeping.

    The returned object owns the sliding-window state the deployed policy sees;
    rewards are logged per answered trial but never used for learning.
    """
    st = service._get(session_id)
    if st.phase == "done":
        raise HTTPException(409, "session closed")
    return st.pressure


def create_app(cfg: ServiceConfig | None = None, policy=None) -> FastAPI:
    cfg = cfg or ServiceConfig()
    service = SessionService(cfg, policy)
    app = FastAPI(title="pressureloop session service", version=SCHEMA_VERSION)
    app.state.service = service

    @app.post("/sessions")
    def create(body: CreateSessionBody):
        return service.create_session(body)

    @app.get("/sessions/{sid}/next")
    def nxt(sid: str):
        return service.next_trial(sid)

    @app.post("/sessions/{sid}/answer")
    def answer(sid: str, body: AnswerBody):
        return service.submit_answer(sid, body)

    @app.post("/sessions/{sid}/extend-practice")
    def extend(sid: str):
        return service.extend_practice(sid)

    @app.post("/sessions/{sid}/questionnaire")
    def questionnaire(sid: str, body: QuestionnaireBody):
        return service.submit_questionnaire(sid, body)

    @app.get("/sessions/{sid}/export")
    def export(sid: str):
        return service.export_session(sid)

    @app.get("/sessions/{sid}/state")
    def state(sid: str):
        st = service._get(sid)
        remaining = max(0.0, st.rest_until - cfg.clock()) if st.phase in REST_SECONDS else 0.0
        outstanding = None
        if st.outstanding is not None:
            outstanding = {"question": canonical_string(st.outstanding["q"]),
                           "pressure": st.outstanding["pressure"],
                           "trial_index": st.trial_index}
        return {"phase": st.phase, "trial_index": st.trial_index,
                "trials_in_phase": st.phase_limit() if st.phase in TRIAL_PHASES else 0,
                "rest_remaining_s": round(remaining, 1),
                "outstanding": outstanding, "resumed": st.resumed}

    return app
