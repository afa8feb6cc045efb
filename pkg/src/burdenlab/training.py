"""Constraint-coupled training objective and the SGD loop that fits teachers.

The objective for a batch is::

    total = task + lambda1 * hinge + lambda2 * feas + lambda3 * stab

``task`` is the mean softmax cross-entropy over target positions. ``hinge``
and ``feas`` are summed over time within a sequence and averaged over the
batch. ``stab`` is the mean normalized squared distance between the final
state of a clean rollout and of a rollout with Gaussian-perturbed embeddings.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import dynamics, numgrad
from . import rng as rngmod
from .dynamics import PARAM_NAMES, CellParams, ConstraintConfig
from .tasks import Batch, SequenceTask, generate

log = logging.getLogger(__name__)

COMPONENTS = ("task", "hinge", "feas", "stab")
PARAMS_FORMAT = "burdenlab.cellparams/1"


class TrainingDivergence(FloatingPointError):
    """Raised when a loss component becomes non-finite during training."""


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("objective weights must be >= 0")

    @property
    def is_baseline(self) -> bool:
        return self.lambda1 == self.lambda2 == self.lambda3 == 0.0


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    clip: float = 5.0
    seed: int = 0
    sigma_stab: float = 0.01
    steps_per_epoch: int = 10
    monitor_size: int = 256

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValueError("batch_size and steps_per_epoch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if self.sigma_stab < 0:
            raise ValueError("sigma_stab must be >= 0")


# ---------------------------------------------------------------------------
# standalone loss components (plain numpy)
# ---------------------------------------------------------------------------


def burden_hinge(burdens, B: float) -> float:
    b = np.asarray(burdens, dtype=np.float64)
    if np.any(b < 0):
        raise ValueError("burdens must be nonnegative")
    return float(np.maximum(b - B, 0.0).sum())


def stab_noise(rng: np.random.Generator, T: int, d: int, count: int, sigma: float) -> np.ndarray:
    """Embedding noise for one perturbed rollout, shape ``(T, d, count)``."""
    return sigma * rng.standard_normal((T, d, count))


def stability_loss(params: CellParams, cfg: ConstraintConfig, batch: Batch,
                   sigma_stab: float, rng: np.random.Generator) -> float:
    if sigma_stab < 0:
        raise ValueError("sigma_stab must be >= 0")
    tokens = batch.tokens
    noise = stab_noise(rng, tokens.shape[1], params.d, tokens.shape[0], sigma_stab)
    clean = dynamics.rollout(params, cfg, tokens)
    pert = dynamics.rollout(params, cfg, tokens, embed_noise=noise)
    diff = clean.states[-1] - pert.states[-1]
    return float(np.mean(np.einsum("ij,ij->j", diff, diff)) / params.n)


def task_loss_value(params: CellParams, cfg: ConstraintConfig, batch: Batch,
                    enforcement: Optional[str] = None) -> float:
    rec = dynamics.rollout(params, cfg, batch.tokens, enforcement=enforcement)
    logits = rec.logits[batch.positions]                     # (P, v, B)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    P, _, B = logits.shape
    picked = logp[np.arange(P)[:, None], batch.labels.T, np.arange(B)[None, :]]
    return float(-picked.mean())


# ---------------------------------------------------------------------------
# autodiff objective
# ---------------------------------------------------------------------------


def bind_params(g: numgrad.Graph) -> Dict[str, numgrad.Node]:
    return {k: g.input(k) for k in PARAM_NAMES}


@dataclass
class SymbolicRollout:
    states: List[numgrad.Node]
    burdens: List[numgrad.Node] = field(default_factory=list)
    feas: List[numgrad.Node] = field(default_factory=list)
    logits: Dict[int, numgrad.Node] = field(default_factory=dict)


def build_rollout(g: numgrad.Graph, P: Dict[str, numgrad.Node], n: int,
                  cfg: Optional[ConstraintConfig], tokens: np.ndarray,
                  logit_steps=(), noise: Optional[np.ndarray] = None,
                  enforcement: str = "soft", constraints: bool = True) -> SymbolicRollout:
    """Record a batched rollout (one sequence per column) on ``g``.

    With ``constraints=False`` no burden, load or feasibility nodes are built
    (``cfg`` may then be ``None``); hard enforcement needs them.
    """
    B, T = tokens.shape
    if enforcement == "hard" and not constraints:
        raise ValueError("hard enforcement needs the constraint machinery")
    h = g.const(np.zeros((n, B)))
    out = SymbolicRollout(states=[h])
    logit_steps = set(int(t) for t in logit_steps)
    sq_prev = None
    L = None
    r = g.const(np.full(B, cfg.r0)) if constraints else None
    for t in range(T):
        e = g.take_cols(P["E"], tokens[:, t])
        if noise is not None:
            e = g.add(e, g.const(noise[t]))
        z = g.sigmoid(g.add_col(g.add(g.matmul(P["U_h"], h), g.matmul(P["U_x"], e)), P["c"]))
        cand = g.tanh(g.add_col(g.add(g.matmul(P["W_h"], h), g.matmul(P["W_x"], e)), P["b"]))
        h_next = g.gate_mix(z, h, cand)
        if constraints:
            if enforcement == "hard":
                factor = g.div(r, g.maximum(g.col_norm(h_next), r))
                h_next = g.mul_cols(h_next, factor)
            norm = g.col_norm(h_next)
            out.feas.append(g.square(g.relu(g.sub(norm, r))))
            sq_next = g.col_sqnorm(h_next)
            if sq_prev is None:
                sq_prev = g.col_sqnorm(h)
            disp = g.scale(g.col_sqnorm(g.sub(h_next, h)), cfg.w_disp / n)
            grow = g.scale(g.relu(g.sub(sq_next, sq_prev)), cfg.w_grow / n)
            b = g.add(disp, grow)
            out.burdens.append(b)
            if cfg.path_mode == "uniform":
                inc = g.scale(b, cfg.alpha)
                L = inc if L is None else g.add(L, inc)
            else:
                L = b if L is None else g.add(g.scale(L, cfg.lambda_path), b)
            if t + 1 < T:
                r = g.floor(g.scale(g.exp(g.scale(L, -cfg.kappa)), cfg.r0), cfg.r_min)
            sq_prev = sq_next
        if t in logit_steps:
            out.logits[t] = g.add_col(g.matmul(P["W_o"], h_next), P["b_o"])
        out.states.append(h_next)
        h = h_next
    return out


@dataclass
class Objective:
    """A recorded objective with handles on its components."""

    graph: numgrad.Graph
    total: numgrad.Node
    parts: Dict[str, numgrad.Node]
    rollout: SymbolicRollout

    def breakdown(self) -> Dict[str, float]:
        return {k: float(node.value) for k, node in self.parts.items()}


def _batch_mean_of_time_sum(g, terms, B):
    return g.scale(g.sum(g.add_n(terms)), 1.0 / B)


def build_objective(params: CellParams, cfg: ConstraintConfig, weights: ObjectiveWeights,
                    batch: Batch, noise: Optional[np.ndarray],
                    check_finite: bool = True) -> Objective:
    """Record the constraint-coupled objective for ``batch``.

    ``noise`` is the stability perturbation ``(T, d, B)``; ``None`` skips the
    perturbed rollout and fixes the stability component at zero.
    """
    g = numgrad.Graph(check_finite=check_finite)
    P = bind_params(g)
    tokens = batch.tokens
    B = tokens.shape[0]
    n = params.n
    ro = build_rollout(g, P, n, cfg, tokens, batch.positions, enforcement=cfg.enforcement)
    xents = [g.xent(ro.logits[int(t)], batch.labels[:, j]) for j, t in enumerate(batch.positions)]
    task = g.scale(g.sum(g.add_n(xents)), 1.0 / (B * len(xents)))
    hinge = _batch_mean_of_time_sum(g, [g.hinge(b, cfg.B) for b in ro.burdens], B)
    feas = _batch_mean_of_time_sum(g, ro.feas, B)
    if noise is None:
        stab = g.const(0.0)
    else:
        pert = build_rollout(g, P, n, cfg, tokens, noise=noise, enforcement=cfg.enforcement,
                             constraints=cfg.enforcement == "hard")
        diff = g.sub(ro.states[-1], pert.states[-1])
        stab = g.scale(g.sum(g.col_sqnorm(diff)), 1.0 / (n * B))
    total = g.add(g.add(g.add(task, g.scale(hinge, weights.lambda1)),
                        g.scale(feas, weights.lambda2)),
                  g.scale(stab, weights.lambda3))
    g.set_output(total)
    return Objective(g, total, {"task": task, "hinge": hinge, "feas": feas, "stab": stab}, ro)


def build_task_objective(params: CellParams, batch: Batch,
                         check_finite: bool = True) -> Tuple[numgrad.Graph, numgrad.Node]:
    """The plain task loss with no constraint machinery at all."""
    g = numgrad.Graph(check_finite=check_finite)
    P = bind_params(g)
    B = batch.tokens.shape[0]
    ro = build_rollout(g, P, params.n, None, batch.tokens, batch.positions, constraints=False)
    xents = [g.xent(ro.logits[int(t)], batch.labels[:, j]) for j, t in enumerate(batch.positions)]
    task = g.scale(g.sum(g.add_n(xents)), 1.0 / (B * len(xents)))
    g.set_output(task)
    return g, task


def total_loss(params: CellParams, cfg: ConstraintConfig, weights: ObjectiveWeights,
               batch: Batch, rng: np.random.Generator,
               sigma_stab: float = 0.01) -> Tuple[float, Dict[str, float]]:
    """Objective value and its unweighted components for one batch."""
    noise = stab_noise(rng, batch.tokens.shape[1], params.d, len(batch), sigma_stab)
    obj = build_objective(params, cfg, weights, batch, noise)
    value = obj.graph.forward(params.arrays())
    return value, obj.breakdown()


# ---------------------------------------------------------------------------
# optimizer loop
# ---------------------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    task: float
    hinge: float
    feas: float
    stab: float
    burden_violation_rate: float
    feas_violation_rate: float

    FIELDS = ("epoch", "task", "hinge", "feas", "stab",
              "burden_violation_rate", "feas_violation_rate")


def monitor(params: CellParams, cfg: ConstraintConfig, batch: Batch, sigma_stab: float,
            noise_rng: np.random.Generator, epoch: int) -> EpochMetrics:
    """Observation-only metrics on a fixed monitoring batch."""
    rec = dynamics.rollout(params, cfg, batch.tokens)
    B = len(batch)
    hinge = float(np.maximum(rec.burdens - cfg.B, 0.0).sum() / B)
    norms = np.sqrt(np.einsum("tij,tij->tj", rec.states[1:], rec.states[1:]))
    feas = float((np.maximum(norms - rec.radii, 0.0) ** 2).sum() / B)
    return EpochMetrics(
        epoch=epoch,
        task=task_loss_value(params, cfg, batch),
        hinge=hinge,
        feas=feas,
        stab=stability_loss(params, cfg, batch, sigma_stab, noise_rng),
        burden_violation_rate=float(rec.burden_violations.mean()),
        feas_violation_rate=float(rec.feasibility_violations.mean()),
    )


def _clip(grads: Dict[str, np.ndarray], clip: float) -> Dict[str, np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(gr * gr)) for gr in grads.values())))
    if norm > clip:
        f = clip / norm
        return {k: gr * f for k, gr in grads.items()}
    return grads


def sgd_step(params: CellParams, grads: Dict[str, np.ndarray], lr: float) -> CellParams:
    return CellParams(**{k: getattr(params, k) - lr * grads[k] for k in PARAM_NAMES})


def train(params: CellParams, cfg: ConstraintConfig, weights: ObjectiveWeights,
          task: SequenceTask, optim: OptimConfig,
          constraint_free: bool = False) -> Tuple[CellParams, List[EpochMetrics]]:
    """Minibatch SGD with global-norm clipping on the objective.

    Each epoch takes ``optim.steps_per_epoch`` steps on fresh batches from the
    task's data stream. Data, stability noise and monitoring draw from
    separate streams, so changing the objective weights never changes the
    data a run sees. ``constraint_free=True`` trains on the bare task loss
    without recording any constraint term (only valid for zero weights).
    """
    if constraint_free and not weights.is_baseline:
        raise ValueError("constraint_free training requires zero objective weights")
    data_rng = task.rng("data", optim.seed)
    noise_rng = rngmod.stream(optim.seed, "stab-noise")
    mon_batch = generate(task, optim.monitor_size, task.rng("monitor", optim.seed))

    def mon(p, epoch):
        return monitor(p, cfg, mon_batch, optim.sigma_stab,
                       rngmod.stream(optim.seed, "monitor-noise", epoch), epoch)

    history = [mon(params, 0)]
    for epoch in range(1, optim.epochs + 1):
        for _ in range(optim.steps_per_epoch):
            batch = generate(task, optim.batch_size, data_rng)
            if constraint_free:
                g, _ = build_task_objective(params, batch, check_finite=False)
                value = g.forward(params.arrays())
                if not np.isfinite(value):
                    raise TrainingDivergence(f"epoch {epoch}: non-finite task loss")
            else:
                noise = None
                if weights.lambda3 > 0:
                    noise = stab_noise(noise_rng, batch.tokens.shape[1], params.d,
                                       len(batch), optim.sigma_stab)
                obj = build_objective(params, cfg, weights, batch, noise, check_finite=False)
                g = obj.graph
                value = g.forward(params.arrays())
                if not np.isfinite(value):
                    bad = [k for k, v in obj.breakdown().items() if not np.isfinite(v)]
                    raise TrainingDivergence(
                        f"epoch {epoch}: non-finite loss component(s) {bad or ['total']}")
            grads = g.grads()
            if not all(np.all(np.isfinite(gr)) for gr in grads.values()):
                raise TrainingDivergence(f"epoch {epoch}: non-finite gradient")
            params = sgd_step(params, _clip(grads, optim.clip), optim.lr)
        history.append(mon(params, epoch))
        log.debug("epoch %d task=%.4f", epoch, history[-1].task)
    return params, history


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def params_document(params: CellParams, cfg: Optional[ConstraintConfig] = None,
                    seed: Optional[int] = None, **extra) -> dict:
    doc = {"format": PARAMS_FORMAT}
    doc.update(params.to_dict())
    doc["config"] = cfg.to_dict() if cfg is not None else None
    doc["seed"] = seed
    doc.update(extra)
    return doc


def dump_params(path, params: CellParams, cfg: Optional[ConstraintConfig] = None,
                seed: Optional[int] = None, **extra) -> None:
    with open(path, "w") as fh:
        json.dump(params_document(params, cfg, seed, **extra), fh, sort_keys=True)
        fh.write("\n")


def load_params(path) -> Tuple[CellParams, Optional[ConstraintConfig], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError(f"{path}: not a {PARAMS_FORMAT} document")
    cfg = ConstraintConfig(**doc["config"]) if doc.get("config") else None
    return CellParams.from_dict(doc), cfg, doc


def metrics_csv(history: List[EpochMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EpochMetrics.FIELDS)
    for m in history:
        w.writerow([m.epoch] + [repr(getattr(m, k)) for k in EpochMetrics.FIELDS[1:]])
    return buf.getvalue()
