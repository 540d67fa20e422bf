"""Modular-arithmetic trial items: generation, ground truth, and token encoding.

A question reads "AB = CD (mod E)": the participant judges whether AB - CD is
divisible by E. Questions are encoded for sequence models as the character
tokens of the canonical string "AB=CD%E", right-padded to a fixed length.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass

import numpy as np

AB_MIN, AB_MAX = 10, 99
E_MIN, E_MAX = 2, 9

# Character-level vocabulary: digits, '=', '%', and one pad token.
VOCAB = {str(d): d for d in range(10)}
VOCAB["="] = 10
VOCAB["%"] = 11
PAD_TOKEN = 12
VOCAB_SIZE = 13
ENCODED_LEN = 8
VOCAB_VERSION = "1"

# 17 answer classes: truncated (C-style) remainder of AB - CD w.r.t. E,
# which ranges over -8..+8 for two-digit operands and a one-digit modulus.
N_ANSWER_CLASSES = 17
CLASS_OFFSET = 8


@dataclass(frozen=True)
class MathQuestion:
    ab: int
    cd: int
    e: int
    truth: bool

    def __post_init__(self) -> None:
        if not (AB_MIN <= self.ab <= AB_MAX and AB_MIN <= self.cd <= AB_MAX):
            raise ValueError(f"operands out of range: ab={self.ab} cd={self.cd}")
        if not (E_MIN <= self.e <= E_MAX):
            raise ValueError(f"modulus out of range: e={self.e}")
        if self.truth != ((self.ab - self.cd) % self.e == 0):
            raise ValueError("truth flag inconsistent with fields")


def make_question(ab: int, cd: int, e: int) -> MathQuestion:
    return MathQuestion(ab=ab, cd=cd, e=e, truth=(ab - cd) % e == 0)


def ground_truth(q: MathQuestion) -> bool:
    """Divisibility of (ab - cd) by e; sign-independent."""
    return (q.ab - q.cd) % q.e == 0


def signed_remainder(q: MathQuestion) -> int:
    """Truncated remainder of ab - cd w.r.t. e (sign follows the dividend)."""
    return int(math.fmod(q.ab - q.cd, q.e))


def answer_class(q: MathQuestion) -> int:
    """Class id in [0, 16] for the signed remainder (-8..+8)."""
    return signed_remainder(q) + CLASS_OFFSET


def canonical_string(q: MathQuestion) -> str:
    return f"{q.ab}={q.cd}%{q.e}"


def encode_question(q: MathQuestion) -> np.ndarray:
    """Fixed-length token ids for the canonical string, padded with PAD_TOKEN."""
    s = canonical_string(q)
    tokens = [VOCAB[c] for c in s]
    tokens += [PAD_TOKEN] * (ENCODED_LEN - len(tokens))
    return np.asarray(tokens, dtype=np.int64)


def decode_tokens(tokens: np.ndarray) -> MathQuestion:
    """Inverse of encode_question; raises ValueError on malformed input."""
    inv = {v: k for k, v in VOCAB.items()}
    chars = []
    for t in tokens:
        t = int(t)
        if t == PAD_TOKEN:
            break
        chars.append(inv[t])
    s = "".join(chars)
    left, rest = s.split("=")
    mid, mod = rest.split("%")
    return make_question(int(left), int(mid), int(mod))


class QuestionGenerator:
    """Seeded question stream with a configurable true/false balance.

    Balance is met by rejection sampling: the target class for each draw is
    chosen first, then (ab, cd, e) is resampled until the class matches.
    """

    def __init__(self, seed: int, true_rate: float = 0.5):
        if not 0.0 <= true_rate <= 1.0:
            raise ValueError("true_rate must be in [0, 1]")
        self._rng = random.Random(seed)
        self.true_rate = true_rate

    def generate(self) -> MathQuestion:
        want_true = self._rng.random() < self.true_rate
        while True:
            ab = self._rng.randint(AB_MIN, AB_MAX)
            cd = self._rng.randint(AB_MIN, AB_MAX)
            e = self._rng.randint(E_MIN, E_MAX)
            q = make_question(ab, cd, e)
            if q.truth == want_true:
                return q

    def generate_bank(self, n: int) -> list[MathQuestion]:
        return [self.generate() for _ in range(n)]


def all_questions():
    """Exhaustive iterator over the full question space (90 * 90 * 8 items)."""
    for ab in range(AB_MIN, AB_MAX + 1):
        for cd in range(AB_MIN, AB_MAX + 1):
            for e in range(E_MIN, E_MAX + 1):
                yield make_question(ab, cd, e)


def save_bank(path, bank: list[MathQuestion]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for q in bank:
            w.writerow([q.ab, q.cd, q.e, str(q.truth).lower()])


def load_bank(path) -> list[MathQuestion]:
    out = []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            ab, cd, e, truth = row
            q = make_question(int(ab), int(cd), int(e))
            if str(q.truth).lower() != truth:
                raise ValueError(f"inconsistent truth column in row {row}")
            out.append(q)
    return out


def write_vocab_file(path) -> None:
    """Publish the token table (versioned) for consumers outside this package."""
    lines = [f"version={VOCAB_VERSION}", f"length={ENCODED_LEN}", f"pad={PAD_TOKEN}"]
    for ch, tok in sorted(VOCAB.items(), key=lambda kv: kv[1]):
        lines.append(f"{ch}={tok}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
