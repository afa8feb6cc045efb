"""Capability and stability measurements, gap metrics and outcome labels.

All probes are paired: every model evaluated under the same
:class:`ProbeConfig` sees the same evaluation sequences and the same noise
draws, so differences between models are not sampling noise between probes.
Evaluation streams are keyed only by the probe seed and probe name and never
overlap the training, data or distillation streams.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .dynamics import ConstraintConfig, DeployedModel
from .tasks import Batch, SequenceTask, extend_horizon, generate

PROFILE_FIELDS = ("acc_noise_005", "acc_noise_010", "acc_h2", "acc_h4",
                  "burden_violation_rate", "feasibility_violation_rate", "divergence")

CAPABILITY_GAP = "capability_gap"
STABILITY_GAP = "stability_gap"
HIDDEN_BURDEN = "hidden_burden"
PROPOSITION_VIOLATED = "proposition_violated"


class DegenerateRegressor(ValueError):
    """All capability gaps are equal, so no slope can be fitted."""


@dataclass(frozen=True)
class ProbeConfig:
    sample_size: int = 1000
    seed: int = 0
    noise_sigmas: Tuple[float, float] = (0.05, 0.10)
    horizon_factors: Tuple[int, int] = (2, 4)
    divergence_sigma: float = 0.05

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if len(self.noise_sigmas) != 2 or len(self.horizon_factors) != 2:
            raise ValueError("need exactly two noise levels and two horizon factors")

    def batch(self, task: SequenceTask, probe: str = "nominal") -> Batch:
        return generate(task, self.sample_size, rngmod.stream(self.seed, "probe", task.kind, probe))

    def noise(self, probe: str, shape) -> np.ndarray:
        return rngmod.stream(self.seed, "probe-noise", probe).standard_normal(shape)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise_sigmas"] = list(self.noise_sigmas)
        d["horizon_factors"] = list(self.horizon_factors)
        return d


@dataclass(frozen=True)
class CapabilityScore:
    accuracy: float
    sample_size: int
    standard_error: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


@dataclass(frozen=True)
class StabilityProfile:
    acc_noise_005: float
    acc_noise_010: float
    acc_h2: float
    acc_h4: float
    burden_violation_rate: float
    feasibility_violation_rate: float
    divergence: float

    def __post_init__(self):
        for name in PROFILE_FIELDS[:-1]:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.divergence < 0:
            raise ValueError("divergence must be >= 0")

    def components(self) -> np.ndarray:
        """The seven fields in [0, 1], divergence clamped at 1."""
        vals = [getattr(self, k) for k in PROFILE_FIELDS]
        vals[-1] = min(1.0, vals[-1])
        return np.array(vals)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CouplingEstimate:
    points: Tuple[Tuple[float, float], ...]
    slope: float
    intercept: float
    residual: float

    def to_dict(self) -> dict:
        return {"points": [list(p) for p in self.points], "slope": self.slope,
                "intercept": self.intercept, "residual": self.residual}


@dataclass(frozen=True)
class Thresholds:
    eps_K: float = 0.05
    eps_R: float = 0.10
    rho_b: float = 1.5


def accuracy_per_sequence(logits: np.ndarray, batch: Batch, label_classes: int) -> np.ndarray:
    """Fraction of target positions predicted exactly, per sequence.

    ``logits`` is ``(T, v, B)``. Predictions are the argmax over the task's
    label classes only.
    """
    picked = logits[batch.positions, :label_classes, :]      # (P, k, B)
    pred = picked.argmax(axis=1).T                           # (B, P)
    return (pred == batch.labels).mean(axis=1)


def _score(per_seq: np.ndarray) -> CapabilityScore:
    n = per_seq.size
    se = float(per_seq.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return CapabilityScore(float(per_seq.mean()), int(n), se)


def capability(model, task: SequenceTask, probe: ProbeConfig = ProbeConfig()) -> CapabilityScore:
    """Held-out exact-match accuracy at the nominal horizon.

    ``model`` is anything with a ``logits(tokens)`` method returning
    ``(T, v, B)`` arrays, normally a :class:`DeployedModel`.
    """
    batch = probe.batch(task)
    return _score(accuracy_per_sequence(model.logits(batch.tokens), batch, task.label_classes))


def _noise_tag(sigma: float) -> str:
    return f"embed-{sigma!r}"


def stability_profile(model: DeployedModel, constraint_cfg: ConstraintConfig,
                      task: SequenceTask, probe: ProbeConfig = ProbeConfig()) -> StabilityProfile:
    """All seven stability fields for ``model``.

    Violation rates are scored against ``constraint_cfg`` (the teacher
    family's yardstick) whatever the model was trained with.
    """
    batch = probe.batch(task)
    k = task.label_classes
    T = batch.tokens.shape[1]
    shape = (T, model.params.d, len(batch))
    clean = model.run(batch.tokens, cfg=constraint_cfg)

    noisy_acc = []
    pert = {}
    for sigma in probe.noise_sigmas:
        noise = sigma * probe.noise(_noise_tag(sigma), shape)
        rec = model.run(batch.tokens, cfg=constraint_cfg, embed_noise=noise)
        pert[sigma] = rec
        noisy_acc.append(float(accuracy_per_sequence(rec.logits, batch, k).mean()))

    sig = probe.divergence_sigma
    if sig in pert:
        drec = pert[sig]
    else:
        drec = model.run(batch.tokens, cfg=constraint_cfg,
                         embed_noise=sig * probe.noise(_noise_tag(sig), shape))
    diff = clean.states[-1] - drec.states[-1]
    divergence = float(np.sqrt(np.einsum("ij,ij->j", diff, diff)).mean() / np.sqrt(model.params.n))

    horizon_acc = []
    for f in probe.horizon_factors:
        long_task = extend_horizon(task, f)
        long_batch = probe.batch(long_task, f"horizon-x{f}")
        logits = model.run(long_batch.tokens, cfg=constraint_cfg).logits
        horizon_acc.append(float(accuracy_per_sequence(logits, long_batch, k).mean()))

    return StabilityProfile(
        acc_noise_005=noisy_acc[0],
        acc_noise_010=noisy_acc[1],
        acc_h2=horizon_acc[0],
        acc_h4=horizon_acc[1],
        burden_violation_rate=float(clean.burden_violations.mean()),
        feasibility_violation_rate=float(clean.feasibility_violations.mean()),
        divergence=divergence,
    )


def mean_burden(model: DeployedModel, constraint_cfg: ConstraintConfig, task: SequenceTask,
                probe: ProbeConfig = ProbeConfig()) -> float:
    """Average per-step burden on the nominal probe batch (a hidden-burden proxy)."""
    batch = probe.batch(task)
    return float(model.run(batch.tokens, cfg=constraint_cfg).burdens.mean())


def _acc(k) -> float:
    return float(k.accuracy) if isinstance(k, CapabilityScore) else float(k)


def gaps(teacher_K, student_K, teacher_R: StabilityProfile,
         student_R: StabilityProfile) -> Tuple[float, float]:
    """``(dK, dR)``: clamped capability shortfall and mean componentwise distance."""
    dK = max(0.0, _acc(teacher_K) - _acc(student_K))
    dR = float(np.abs(teacher_R.components() - student_R.components()).mean())
    return dK, dR


def coupling_fit(points: Sequence[Tuple[float, float]]) -> CouplingEstimate:
    """Ordinary least squares ``dR = slope * dK + intercept``."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        raise ValueError("coupling_fit needs at least two points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0.0:
        raise DegenerateRegressor("all capability gaps are equal; slope is undefined")
    slope = float(np.dot(xc, y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    return CouplingEstimate(tuple(pts), slope, intercept, float(np.dot(resid, resid)))


def proposition_outcome(dK: float, dR: float, student_burden_mean: float,
                        teacher_burden_mean: float,
                        thresholds: Thresholds = Thresholds()) -> List[str]:
    """Which disjuncts hold for one student, or ``["proposition_violated"]``."""
    out = []
    if dK > thresholds.eps_K:
        out.append(CAPABILITY_GAP)
    if dR > thresholds.eps_R:
        out.append(STABILITY_GAP)
    if student_burden_mean > thresholds.rho_b * teacher_burden_mean:
        out.append(HIDDEN_BURDEN)
    return out or [PROPOSITION_VIOLATED]
