"""Output-only distillation of a frozen teacher into a smaller student.

The student only ever sees :class:`TeacherLabels`: input tokens and the
teacher's logits at the target positions. Teacher hidden states, burdens and
loads never leave :func:`label_with_teacher`. Students are trained on the
temperature-scaled KL between softened teacher and student distributions, with
no ground-truth labels and no constraint terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import numgrad
from . import rng as rngmod
from .dynamics import CellParams, DeployedModel
from .tasks import SequenceTask, generate
from .training import OptimConfig, TrainingDivergence, _clip, bind_params, build_rollout, sgd_step


@dataclass(frozen=True)
class DistillConfig:
    budget: int = 1000
    kd_temperature: float = 2.0
    shrink: float = 0.5
    epsilon_target: float = 0.05
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(epochs=20))

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.kd_temperature <= 0:
            raise ValueError("kd_temperature must be > 0")
        if not 0 < self.shrink <= 1:
            raise ValueError("shrink must lie in (0, 1]")


@dataclass(frozen=True)
class TeacherLabels:
    """What an output-only attacker observes: inputs and output logits."""

    tokens: np.ndarray      # (count, seq_len)
    positions: np.ndarray   # (P,)
    logits: np.ndarray      # (count, P, v)

    def __len__(self) -> int:
        return self.tokens.shape[0]


@dataclass
class StudentArm:
    teacher_id: str
    student: CellParams
    budget: int
    final_loss: Optional[float]
    initial_loss: Optional[float] = None
    discrepancy: Optional[float] = None
    discrepancy_se: Optional[float] = None

    def to_dict(self) -> dict:
        return {"teacher_id": self.teacher_id, "budget": self.budget,
                "final_loss": self.final_loss, "initial_loss": self.initial_loss,
                "discrepancy": self.discrepancy, "discrepancy_se": self.discrepancy_se,
                "student_dims": {"n": self.student.n, "d": self.student.d, "v": self.student.v}}


def student_hidden_size(n: int, shrink: float) -> int:
    # The epsilon keeps e.g. 0.3 * 10 from rounding up to 4.
    return int(math.ceil(shrink * n - 1e-9))


def make_student(teacher_dims: Tuple[int, int, int], shrink: float, seed: int) -> CellParams:
    n, d, v = teacher_dims
    if not 0 < shrink <= 1:
        raise ValueError("shrink must lie in (0, 1]")
    m = student_hidden_size(n, shrink)
    if m < 2:
        raise ValueError(f"shrink {shrink} leaves a student hidden size of {m} (< 2) for n={n}")
    return CellParams.init(m, d, v, rngmod.stream(seed, "student-init"))


def _kl_rows(student_logits, teacher_logits, temperature):
    """KL(softmax(t/T) || softmax(s/T)) along the last axis."""
    def log_softmax(x):
        z = x / temperature
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    lp = log_softmax(np.asarray(teacher_logits, dtype=np.float64))
    lq = log_softmax(np.asarray(student_logits, dtype=np.float64))
    return (np.exp(lp) * (lp - lq)).sum(axis=-1)


def distill_loss(student_logits, teacher_logits, kd_temperature: float = 2.0) -> float:
    """``T^2 * sum_p KL(softmax(teacher_p/T) || softmax(student_p/T))``.

    Accepts one logit vector ``(v,)`` or one per target position ``(P, v)``.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"logit shapes differ: {s.shape} vs {t.shape}")
    if kd_temperature <= 0:
        raise ValueError("kd_temperature must be > 0")
    kl = _kl_rows(s, t, kd_temperature)
    return float(kd_temperature ** 2 * np.maximum(kl, 0.0).sum())


def label_with_teacher(teacher: DeployedModel, tokens: np.ndarray,
                       positions: np.ndarray) -> TeacherLabels:
    logits = teacher.logits(tokens)[positions]           # (P, v, count)
    return TeacherLabels(tokens, positions, np.ascontiguousarray(logits.transpose(2, 0, 1)))


def _corpus_loss(student: CellParams, labels: TeacherLabels, temperature: float) -> float:
    s = DeployedModel(student).logits(labels.tokens)[labels.positions].transpose(2, 0, 1)
    per_seq = temperature ** 2 * _kl_rows(s, labels.logits, temperature).sum(axis=1)
    return float(per_seq.mean())


def _kd_graph(student: CellParams, labels: TeacherLabels, idx, temperature: float):
    g = numgrad.Graph(check_finite=False)
    P = bind_params(g)
    tokens = labels.tokens[idx]
    ro = build_rollout(g, P, student.n, None, tokens, labels.positions, constraints=False)
    kls = [g.kl_softmax(ro.logits[int(t)], g.const(labels.logits[idx, j].T), temperature)
           for j, t in enumerate(labels.positions)]
    g.set_output(g.scale(g.sum(g.add_n(kls)), temperature ** 2 / len(idx)))
    return g


def fit_student(student: CellParams, labels: TeacherLabels, dcfg: DistillConfig,
                teacher_id: str = "teacher") -> StudentArm:
    """Train ``student`` on a labeled corpus; the inner loop of :func:`distill`."""
    opt = dcfg.optim
    if len(labels) == 0:
        return StudentArm(teacher_id, student, 0, None)
    temp = dcfg.kd_temperature
    order_rng = rngmod.stream(opt.seed, "distill-order")
    initial = _corpus_loss(student, labels, temp)
    for epoch in range(opt.epochs):
        perm = order_rng.permutation(len(labels))
        for start in range(0, len(labels), opt.batch_size):
            g = _kd_graph(student, labels, perm[start:start + opt.batch_size], temp)
            value = g.forward(student.arrays())
            if not np.isfinite(value):
                raise TrainingDivergence(f"distill epoch {epoch + 1}: non-finite KD loss")
            grads = g.grads()
            student = sgd_step(student, _clip(grads, opt.clip), opt.lr)
    final = _corpus_loss(student, labels, temp)
    return StudentArm(teacher_id, student, len(labels), final, initial)


def distill(teacher: DeployedModel, student: CellParams, dcfg: DistillConfig,
            task: SequenceTask) -> StudentArm:
    """Draw ``dcfg.budget`` inputs, label them with the teacher, fit the student.

    Inputs come from the task's own distribution on a stream keyed by the
    student optimizer seed, so students of different teachers with the same
    seed see the same inputs in the same order.
    """
    if dcfg.budget == 0:
        return StudentArm(teacher.name, student, 0, None)
    batch = generate(task, dcfg.budget, task.rng("distill-data", dcfg.optim.seed))
    labels = label_with_teacher(teacher, batch.tokens, batch.positions)
    return fit_student(student, labels, dcfg, teacher_id=teacher.name)


def behavior_discrepancy(student: DeployedModel, teacher: DeployedModel, task: SequenceTask,
                         sample_size: int, seed: int) -> Tuple[float, float]:
    """Monte Carlo mean and standard error of the per-sequence KL at T=1."""
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    batch = generate(task, sample_size, rngmod.stream(seed, "discrepancy", task.kind))
    pos = batch.positions
    t = teacher.logits(batch.tokens)[pos].transpose(2, 0, 1)
    s = student.logits(batch.tokens)[pos].transpose(2, 0, 1)
    per_seq = np.maximum(_kl_rows(s, t, 1.0), 0.0).sum(axis=1)
    se = float(per_seq.std(ddof=1) / np.sqrt(sample_size)) if sample_size > 1 else 0.0
    return float(per_seq.mean()), se
