"""No-pressure behavior predictor: choice, confidence, and response time.

An SVM classifier (with calibrated probabilities) predicts the user's choice
and its probability; a support-vector regressor predicts response time. Inputs
are the answer agent's 256-dim question features plus the trial number, all
standardized with statistics frozen at fit time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC, SVR

RT_PREDICTION_MIN_S = 0.2
RT_PREDICTION_MAX_S = 10.0


@dataclass(frozen=True)
class BaselinePrediction:
    choice: bool
    confidence: float  # probability of the predicted choice, in [0.5, 1]
    rt_s: float        # in (RT_PREDICTION_MIN_S, RT_PREDICTION_MAX_S]


class BaselineModel:
    """SVC + SVR on standardized (features, trial_number) rows."""

    def __init__(self, seed: int = 0, rt_max_s: float = RT_PREDICTION_MAX_S,
                 holdout_frac: float = 0.2):
        self.seed = seed
        self.rt_max_s = rt_max_s
        self.holdout_frac = holdout_frac
        self.scaler: StandardScaler | None = None
        self.svc: SVC | None = None
        self.svr: SVR | None = None
        self.n_features_: int | None = None
        self.clamp_count_ = 0
        self.report_: dict | None = None

    def get_params(self) -> dict:
        return {"seed": self.seed, "rt_max_s": self.rt_max_s,
                "holdout_frac": self.holdout_frac}

    @staticmethod
    def _design(features: np.ndarray, trial_numbers: np.ndarray) -> np.ndarray:
        return np.column_stack([features, trial_numbers.astype(float)])

    def fit(self, features: np.ndarray, trial_numbers: np.ndarray,
            choices: np.ndarray, rts: np.ndarray) -> "BaselineModel":
        features = np.asarray(features, dtype=float)
        trial_numbers = np.asarray(trial_numbers)
        choices = np.asarray(choices, dtype=bool)
        rts = np.asarray(rts, dtype=float)
        if len(features) < 50:
            raise ValueError(f"need at least 50 rows, got {len(features)}")
        if not np.all(np.isfinite(features)) or not np.all(np.isfinite(rts)):
            raise ValueError("non-finite values in training rows")
        if len(set(choices.tolist())) < 2:
            raise ValueError("both choice classes must be present")

        x = self._design(features, trial_numbers)
        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(len(x))
        n_hold = int(len(x) * self.holdout_frac)
        hold, train = perm[:n_hold], perm[n_hold:]
        if len(set(choices[train].tolist())) < 2:
            raise ValueError("both choice classes must be present in the train split")

        self.scaler = StandardScaler().fit(x[train])
        xs = self.scaler.transform(x[train])
        self.svc = SVC(probability=True, random_state=self.seed).fit(xs, choices[train])
        self.svr = SVR().fit(xs, rts[train])
        self.n_features_ = features.shape[1]

        report = {"n_train": len(train), "n_holdout": len(hold)}
        if n_hold > 0:
            xh = self.scaler.transform(x[hold])
            pred_choice = self.svc.predict(xh)
            pred_rt = np.clip(self.svr.predict(xh), RT_PREDICTION_MIN_S, self.rt_max_s)
            report["holdout_choice_accuracy"] = float(np.mean(pred_choice == choices[hold]))
            report["holdout_rt_mape"] = float(np.mean(np.abs(pred_rt - rts[hold]) / rts[hold]))
        self.report_ = report
        return self

    def _require_fitted(self) -> None:
        if self.scaler is None:
            raise RuntimeError("model is not fitted")

    def predict_batch(self, features: np.ndarray, trial_numbers: np.ndarray) -> list[BaselinePrediction]:
        self._require_fitted()
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[1] != self.n_features_:
            raise ValueError(f"expected (n, {self.n_features_}) features, got {features.shape}")
        x = self.scaler.transform(self._design(features, np.asarray(trial_numbers)))
        proba = self.svc.predict_proba(x)
        classes = self.svc.classes_
        idx = np.argmax(proba, axis=1)
        raw_rt = self.svr.predict(x)
        clamped = np.clip(raw_rt, RT_PREDICTION_MIN_S, self.rt_max_s)
        self.clamp_count_ += int(np.sum(clamped != raw_rt))
        out = []
        for i in range(len(x)):
            out.append(BaselinePrediction(
                choice=bool(classes[idx[i]]),
                confidence=float(proba[i, idx[i]]),
                rt_s=float(clamped[i]),
            ))
        return out

    def predict(self, features: np.ndarray, trial_number: int) -> BaselinePrediction:
        return self.predict_batch(np.asarray(features, dtype=float)[None, :],
                                  np.asarray([trial_number]))[0]

    def save(self, path, meta: dict | None = None) -> None:
        """Store in the shared container; sklearn estimators ride along pickled."""
        import pickle

        from . import params_io

        self._require_fitted()
        blob = pickle.dumps({"scaler": self.scaler, "svc": self.svc, "svr": self.svr})
        meta = dict(meta or {})
        meta.update({"kind": "baseline", "seed": self.seed, "rt_max_s": self.rt_max_s,
                     "n_features": self.n_features_, "report": self.report_})
        params_io.save_params(path, {"sklearn_pickle": np.frombuffer(blob, dtype=np.uint8)}, meta)

    @classmethod
    def load(cls, path) -> "BaselineModel":
        import pickle

        from . import params_io

        params, meta = params_io.load_params(path)
        model = cls(seed=int(meta["seed"]), rt_max_s=float(meta["rt_max_s"]))
        blob = pickle.loads(bytes(params["sklearn_pickle"]))
        model.scaler, model.svc, model.svr = blob["scaler"], blob["svc"], blob["svr"]
        model.n_features_ = int(meta["n_features"])
        model.report_ = meta.get("report")
        return model
