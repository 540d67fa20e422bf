"""Recurrent classifier that answers modular-arithmetic questions.

The model is trained on the analytic answer (truncated remainder, 17 classes)
rather than on user behavior; its final hidden state doubles as a question
feature vector for the downstream user models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import params_io
from .questions import (ENCODED_LEN, N_ANSWER_CLASSES, VOCAB_SIZE,
                        MathQuestion, answer_class, encode_question)

HIDDEN_WIDTH = 256


class TrainingFailure(RuntimeError):
    """Training ended below the required accuracy floor."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


class _AnswerNet(nn.Module):
    def __init__(self, hidden: int, embed_dim: int, dtype=torch.float32):
        super().__init__()
        self.embed = nn.Embedding(VOCAB_SIZE, embed_dim, dtype=dtype)
        self.rnn = nn.GRU(embed_dim, hidden, batch_first=True, dtype=dtype)
        self.head = nn.Linear(hidden, N_ANSWER_CLASSES, dtype=dtype)

    def forward(self, tokens: torch.Tensor):
        h, _ = self.rnn(self.embed(tokens))
        last = h[:, -1, :]
        return self.head(last), last


@dataclass
class TrainReport:
    epochs_run: int
    final_train_accuracy: float
    losses: list


class AnswerAgent:
    """Estimator-style wrapper: fit on a question bank, predict answer classes.

    Deterministic for a fixed (bank, seed); refitting reproduces parameters
    bit-for-bit.
    """

    def __init__(self, hidden: int = HIDDEN_WIDTH, embed_dim: int = 32,
                 epochs: int = 32, lr: float = 1e-3, batch_size: int = 128,
                 seed: int = 0, accuracy_floor: float = 0.99,
                 lr_schedule: dict[int, float] | None = None,
                 dtype: torch.dtype = torch.float32):
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.accuracy_floor = accuracy_floor
        # Dropping the step size late in training is what pushes the model
        # over the 99% floor; without it the loss plateaus around 98.5%.
        self.lr_schedule = {25: 3e-4} if lr_schedule is None else lr_schedule
        self.dtype = dtype
        self.net: _AnswerNet | None = None
        self.report_: TrainReport | None = None

    def get_params(self) -> dict:
        return {"hidden": self.hidden, "embed_dim": self.embed_dim, "epochs": self.epochs,
                "lr": self.lr, "batch_size": self.batch_size, "seed": self.seed,
                "accuracy_floor": self.accuracy_floor}

    @staticmethod
    def _encode_bank(bank: list[MathQuestion]) -> tuple[torch.Tensor, torch.Tensor]:
        x = torch.as_tensor(np.stack([encode_question(q) for q in bank]))
        y = torch.as_tensor([answer_class(q) for q in bank], dtype=torch.long)
        return x, y

    def fit(self, bank: list[MathQuestion]) -> "AnswerAgent":
        if not bank:
            raise ValueError("question bank is empty")
        classes = {answer_class(q) for q in bank}
        if len(classes) < N_ANSWER_CLASSES:
            raise ValueError(f"bank covers {len(classes)}/{N_ANSWER_CLASSES} answer classes")

        torch.manual_seed(self.seed)
        net = _AnswerNet(self.hidden, self.embed_dim, self.dtype)
        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        loss_fn = nn.CrossEntropyLoss()
        x, y = self._encode_bank(bank)

        g = torch.Generator().manual_seed(self.seed)
        losses = []
        for epoch in range(self.epochs):
            if epoch in self.lr_schedule:
                for group in opt.param_groups:
                    group["lr"] = self.lr_schedule[epoch]
            perm = torch.randperm(len(bank), generator=g)
            epoch_loss = 0.0
            for lo in range(0, len(bank), self.batch_size):
                idx = perm[lo:lo + self.batch_size]
                logits, _ = net(x[idx])
                loss = loss_fn(logits, y[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
                epoch_loss += loss.item() * len(idx)
            losses.append(epoch_loss / len(bank))

        self.net = net.eval()
        acc = self.score(bank)
        self.report_ = TrainReport(self.epochs, acc, losses)
        if acc < self.accuracy_floor:
            raise TrainingFailure(
                f"train accuracy {acc:.4f} below floor {self.accuracy_floor}",
                {"final_train_accuracy": acc, "epochs": self.epochs, "losses": losses})
        return self

    def _require_fitted(self) -> _AnswerNet:
        if self.net is None:
            raise RuntimeError("model is not fitted")
        return self.net

    @torch.no_grad()
    def predict(self, bank: list[MathQuestion]) -> np.ndarray:
        net = self._require_fitted()
        x, _ = self._encode_bank(bank)
        logits, _ = net(x)
        return logits.argmax(dim=1).numpy()

    @torch.no_grad()
    def predict_proba(self, bank: list[MathQuestion]) -> np.ndarray:
        net = self._require_fitted()
        x, _ = self._encode_bank(bank)
        logits, _ = net(x)
        return torch.softmax(logits, dim=1).numpy()

    @torch.no_grad()
    def extract_features(self, bank: list[MathQuestion]) -> np.ndarray:
        """Final-step hidden states, shape (n, hidden)."""
        net = self._require_fitted()
        x, _ = self._encode_bank(bank)
        feats = []
        for lo in range(0, len(bank), 1024):
            _, last = net(x[lo:lo + 1024])
            feats.append(last.numpy().copy())
        return np.concatenate(feats, axis=0)

    def score(self, bank: list[MathQuestion]) -> float:
        y = np.asarray([answer_class(q) for q in bank])
        return float(np.mean(self.predict(bank) == y))

    def state_dict_numpy(self) -> dict[str, np.ndarray]:
        net = self._require_fitted()
        return {k: v.detach().numpy().copy() for k, v in net.state_dict().items()}

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.update({"kind": "answer_agent", "hidden": self.hidden,
                     "embed_dim": self.embed_dim, "seed": self.seed,
                     "encoded_len": ENCODED_LEN})
        if self.report_ is not None:
            meta["final_train_accuracy"] = self.report_.final_train_accuracy
            meta["epochs"] = self.report_.epochs_run
        params_io.save_params(path, self.state_dict_numpy(), meta)

    @classmethod
    def load(cls, path) -> "AnswerAgent":
        params, meta = params_io.load_params(path)
        agent = cls(hidden=int(meta["hidden"]), embed_dim=int(meta["embed_dim"]),
                    seed=int(meta.get("seed", 0)))
        net = _AnswerNet(agent.hidden, agent.embed_dim)
        net.load_state_dict({k: torch.as_tensor(v) for k, v in params.items()})
        agent.net = net.eval()
        return agent
