"""Seeded synthetic sequence tasks with graded path dependence.

Three kinds are supported:

``copy``
    ``T`` random symbols, a query marker, then ``delay + T`` blanks. The
    symbols must be reproduced, in order, on the last ``T`` positions.
``parity``
    ``T`` random bits; the final position must emit their sum mod 2.
``modsum``
    ``T`` random digits in ``[0, k)``; the final position must emit their sum
    mod ``k``.

Copy reserves the two highest token ids for the marker and the blank, so its
symbol alphabet has ``v - 2`` entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import IO, List

import numpy as np

from . import rng as rngmod

KINDS = ("copy", "parity", "modsum")


@dataclass(frozen=True)
class SequenceTask:
    kind: str
    vocab: int = 8
    length: int = 8
    delay: int = 2
    modulus: int = 5
    seed: int = 0
    stream: str = "train"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.kind == "copy":
            if self.vocab < 3:
                raise ValueError("copy needs vocab >= 3 (symbols + marker + blank)")
            if self.delay < 0:
                raise ValueError("delay must be >= 0")
        elif self.kind == "parity" and self.vocab < 2:
            raise ValueError("parity needs vocab >= 2")
        elif self.kind == "modsum" and not 2 <= self.modulus <= self.vocab:
            raise ValueError("modsum needs 2 <= modulus <= vocab")

    @property
    def marker(self) -> int:
        return self.vocab - 2

    @property
    def blank(self) -> int:
        return self.vocab - 1

    @property
    def seq_len(self) -> int:
        if self.kind == "copy":
            return 2 * self.length + 1 + self.delay
        return self.length

    @property
    def label_classes(self) -> int:
        """Labels are always ``0 .. label_classes - 1``."""
        return {"copy": self.vocab - 2, "parity": 2, "modsum": self.modulus}[self.kind]

    @property
    def target_positions(self) -> np.ndarray:
        if self.kind == "copy":
            start = self.length + 1 + self.delay
            return np.arange(start, start + self.length)
        return np.array([self.length - 1])

    def rng(self, *names) -> np.random.Generator:
        """The task's own data stream (optionally with sub-stream names)."""
        return rngmod.stream(self.seed, "task", self.kind, self.stream, *names)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "vocab": self.vocab, "length": self.length,
                "delay": self.delay, "modulus": self.modulus, "seed": self.seed,
                "stream": self.stream}


@dataclass
class Batch:
    """Token sequences (rows) with their target positions and labels."""

    tokens: np.ndarray      # (count, seq_len) int
    positions: np.ndarray   # (P,) int, shared by every row
    labels: np.ndarray      # (count, P) int

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.tokens[idx], self.positions, self.labels[idx])

    def to_jsonl(self, fh: IO[str]) -> None:
        pos = self.positions.tolist()
        for toks, labs in zip(self.tokens.tolist(), self.labels.tolist()):
            fh.write(json.dumps({"tokens": toks, "positions": pos, "labels": labs}) + "\n")

    @classmethod
    def from_jsonl(cls, fh: IO[str]) -> "Batch":
        rows = [json.loads(line) for line in fh if line.strip()]
        if not rows:
            raise ValueError("empty batch file")
        positions = rows[0]["positions"]
        if any(r["positions"] != positions for r in rows):
            raise ValueError("rows disagree on target positions")
        return cls(np.array([r["tokens"] for r in rows], dtype=np.int64),
                   np.array(positions, dtype=np.int64),
                   np.array([r["labels"] for r in rows], dtype=np.int64))


def generate(task: SequenceTask, count: int, rng: np.random.Generator) -> Batch:
    if count < 1:
        raise ValueError("count must be >= 1")
    T = task.length
    if task.kind == "copy":
        symbols = rng.integers(0, task.vocab - 2, size=(count, T))
        tail = np.full((count, task.delay + T), task.blank)
        marker = np.full((count, 1), task.marker)
        tokens = np.concatenate([symbols, marker, tail], axis=1)
        labels = symbols.copy()
    elif task.kind == "parity":
        tokens = rng.integers(0, 2, size=(count, T))
        labels = (tokens.sum(axis=1) % 2)[:, None]
    else:
        tokens = rng.integers(0, task.modulus, size=(count, T))
        labels = (tokens.sum(axis=1) % task.modulus)[:, None]
    return Batch(tokens.astype(np.int64), task.target_positions, labels.astype(np.int64))


def reference_labels(task: SequenceTask, tokens) -> List[int]:
    """Recompute one sequence's labels by scanning its tokens.

    Deliberately written without the generator's vectorized code: the copy
    labels are read back after locating the marker, and the sums are
    accumulated step by step.
    """
    tokens = [int(t) for t in tokens]
    if task.kind == "copy":
        mark = tokens.index(task.marker)
        return tokens[:mark]
    acc = 0
    mod = 2 if task.kind == "parity" else task.modulus
    for t in tokens:
        acc = (acc + t) % mod
    return [acc]


def extend_horizon(task: SequenceTask, factor: int) -> SequenceTask:
    """Same task at ``factor`` times the nominal length, on a derived stream."""
    if int(factor) != factor or factor < 1:
        raise ValueError("factor must be an integer >= 1")
    return replace(task, length=task.length * int(factor), stream=f"{task.stream}/x{int(factor)}")


def perturb_embeddings(emb: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise to every embedding entry.

    Noise is drawn even when ``sigma == 0`` so the stream position does not
    depend on the noise scale.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return emb + sigma * rng.standard_normal(np.shape(emb))
