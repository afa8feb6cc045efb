"""Burden-bounded, path-dependent latent dynamics.

A gated recurrent cell drives the hidden state. Each transition is charged a
burden, burdens accumulate into a path load, and the load shrinks an L2 ball
of admissible next states. Under ``soft`` enforcement the constraint
machinery only observes (training adds penalties); under ``hard`` enforcement
every new state is projected into the current ball.

Step ``t`` (1-based) uses the radius derived from the load *before* the
transition, ``r_t = radius(L_{t-1})`` with ``L_0 = 0``, so the first step
always sees the full initial ball. The burden of a step is charged on the
realized (post-projection) state.

All functions accept a single state vector ``(n,)`` or a batch of states laid
out as columns ``(n, B)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

PARAM_NAMES = ("W_h", "W_x", "b", "U_h", "U_x", "c", "W_o", "b_o", "E")


@dataclass
class CellParams:
    """Weights of the gated recurrent cell, output head and embedding table."""

    W_h: np.ndarray
    W_x: np.ndarray
    b: np.ndarray
    U_h: np.ndarray
    U_x: np.ndarray
    c: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        n, d, v = self.n, self.d, self.v
        expected = {"W_h": (n, n), "W_x": (n, d), "b": (n,), "U_h": (n, n), "U_x": (n, d),
                    "c": (n,), "W_o": (v, n), "b_o": (v,), "E": (d, v)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def n(self) -> int:
        return self.W_h.shape[0]

    @property
    def d(self) -> int:
        return self.E.shape[0]

    @property
    def v(self) -> int:
        return self.E.shape[1]

    @classmethod
    def zeros(cls, n: int, d: int, v: int) -> "CellParams":
        return cls(**{k: np.zeros(s) for k, s in param_shapes(n, d, v).items()})

    @classmethod
    def init(cls, n: int, d: int, v: int, rng: np.random.Generator,
             scale: float = 0.2) -> "CellParams":
        """Uniform ``[-scale, scale]`` entries, drawn in ``PARAM_NAMES`` order."""
        shapes = param_shapes(n, d, v)
        return cls(**{k: rng.uniform(-scale, scale, size=shapes[k]) for k in PARAM_NAMES})

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "CellParams":
        return CellParams(**{k: a.copy() for k, a in self.arrays().items()})

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def to_dict(self) -> dict:
        return {"dims": {"n": self.n, "d": self.d, "v": self.v},
                "weights": {k: a.reshape(-1).tolist() for k, a in self.arrays().items()}}

    @classmethod
    def from_dict(cls, doc: dict) -> "CellParams":
        dims = doc["dims"]
        shapes = param_shapes(dims["n"], dims["d"], dims["v"])
        return cls(**{k: np.array(doc["weights"][k], dtype=np.float64).reshape(shapes[k])
                      for k in PARAM_NAMES})


def param_shapes(n: int, d: int, v: int) -> Dict[str, tuple]:
    return {"W_h": (n, n), "W_x": (n, d), "b": (n,), "U_h": (n, n), "U_x": (n, d),
            "c": (n,), "W_o": (v, n), "b_o": (v,), "E": (d, v)}


@dataclass(frozen=True)
class ConstraintConfig:
    w_disp: float = 1.0
    w_grow: float = 0.5
    B: float = 0.5
    path_mode: str = "uniform"
    alpha: float = 1.0
    lambda_path: float = 0.95
    r0: float = 3.0
    kappa: float = 0.05
    r_min: float = 0.5
    enforcement: str = "soft"

    def __post_init__(self):
        if self.w_disp < 0 or self.w_grow < 0 or self.alpha < 0:
            raise ValueError("w_disp, w_grow and alpha must be >= 0")
        if self.B <= 0:
            raise ValueError("B must be > 0")
        if not self.r0 > self.r_min > 0:
            raise ValueError("need r0 > r_min > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0 < self.lambda_path <= 1:
            raise ValueError("lambda_path must lie in (0, 1]")
        if self.path_mode not in ("uniform", "discounted"):
            raise ValueError(f"unknown path_mode {self.path_mode!r}")
        if self.enforcement not in ("soft", "hard"):
            raise ValueError(f"unknown enforcement {self.enforcement!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sigmoid(x):
    # Same formula as the autodiff kernel so both paths agree bit for bit.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _embed(params: CellParams, x):
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x >= params.v):
        raise IndexError(f"token id out of vocabulary (v={params.v})")
    return params.E[:, x]


def _bias(vec, like):
    return vec if like.ndim == 1 else vec[:, None]


def step(params: CellParams, h, x, embed_noise=None) -> np.ndarray:
    """One gated transition ``h -> (1 - z) * h + z * tanh(...)``."""
    e = _embed(params, x)
    if embed_noise is not None:
        e = e + embed_noise
    h = np.asarray(h, dtype=np.float64)
    z = sigmoid(params.U_h @ h + params.U_x @ e + _bias(params.c, h))
    cand = np.tanh(params.W_h @ h + params.W_x @ e + _bias(params.b, h))
    return (1.0 - z) * h + z * cand


def _sqnorm(h):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        return np.dot(h, h)
    return np.einsum("ij,ij->j", h, h)


def burden(h, h_next, cfg: ConstraintConfig, x=None):
    """Normalized squared displacement plus hinged growth of the squared norm.

    ``x`` is accepted for signature compatibility with input-dependent burden
    functionals; this one ignores it.
    """
    h = np.asarray(h, dtype=np.float64)
    h_next = np.asarray(h_next, dtype=np.float64)
    if h.shape != h_next.shape:
        raise ValueError(f"state shapes differ: {h.shape} vs {h_next.shape}")
    n = h.shape[0]
    disp = _sqnorm(h_next - h) / n
    grow = np.maximum(_sqnorm(h_next) - _sqnorm(h), 0.0) / n
    return cfg.w_disp * disp + cfg.w_grow * grow


def path_load_update(L_prev, b, cfg: ConstraintConfig):
    if np.any(np.asarray(b) < 0):
        raise ValueError("burden must be nonnegative")
    if cfg.path_mode == "uniform":
        return L_prev + cfg.alpha * b
    return cfg.lambda_path * L_prev + b


def feasible_radius(L, cfg: ConstraintConfig):
    return np.maximum(cfg.r_min, cfg.r0 * np.exp(-cfg.kappa * np.asarray(L, dtype=np.float64)))


def feasibility_penalty(h_next, r):
    return np.maximum(np.sqrt(_sqnorm(h_next)) - r, 0.0) ** 2


def project(h, r):
    """Radial projection onto the ball of radius ``r`` (per column)."""
    h = np.asarray(h, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    norm = np.sqrt(_sqnorm(h))
    factor = r / np.maximum(norm, r)
    out = h * factor if h.ndim == 1 else h * factor[None, :]
    # Rounding can leave a rescaled state an ulp outside the ball.
    over = np.sqrt(_sqnorm(out)) > r
    while np.any(over):
        shrink = np.where(over, 1.0 - 2.0 ** -50, 1.0)
        out = out * shrink if h.ndim == 1 else out * shrink[None, :]
        over = np.sqrt(_sqnorm(out)) > r
    return out


@dataclass
class TrajectoryRecord:
    """Per-step record of one rollout.

    For a batched rollout every per-step array carries the batch as its last
    axis: ``states`` is ``(T+1, n, B)``, ``burdens`` is ``(T, B)``, ``logits``
    is ``(T, v, B)``.
    """

    states: np.ndarray
    burdens: np.ndarray
    loads: np.ndarray
    radii: np.ndarray
    burden_violations: np.ndarray
    feasibility_violations: np.ndarray
    logits: np.ndarray

    @property
    def batched(self) -> bool:
        return self.burdens.ndim == 2

    def to_dict(self) -> dict:
        return {
            "states": self.states.tolist(),
            "burdens": self.burdens.tolist(),
            "loads": self.loads.tolist(),
            "radii": self.radii.tolist(),
            "burden_violations": self.burden_violations.tolist(),
            "feasibility_violations": self.feasibility_violations.tolist(),
            "logits": self.logits.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def rollout(params: CellParams, cfg: ConstraintConfig, tokens,
            enforcement: Optional[str] = None, embed_noise=None) -> TrajectoryRecord:
    """Run the cell from ``h_0 = 0`` over ``tokens``.

    ``tokens`` is a 1-D sequence or a ``(B, T)`` array of sequences.
    ``enforcement`` overrides ``cfg.enforcement``; ``embed_noise`` (shape
    ``(T, d)`` or ``(T, d, B)``) is added to the embedding at each step.
    """
    tokens = np.asarray(tokens)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None, :]
        if embed_noise is not None:
            embed_noise = np.asarray(embed_noise)[..., None]
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise ValueError("need a nonempty token sequence")
    mode = enforcement or cfg.enforcement
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown enforcement {mode!r}")
    B, T = tokens.shape
    n = params.n
    states = np.zeros((T + 1, n, B))
    burdens = np.zeros((T, B))
    loads = np.zeros((T, B))
    radii = np.zeros((T, B))
    feas = np.zeros((T, B), dtype=bool)
    logits = np.zeros((T, params.v, B))
    h = states[0]
    L = np.zeros(B)
    for t in range(T):
        r = feasible_radius(L, cfg)
        noise = None if embed_noise is None else embed_noise[t]
        h_next = step(params, h, tokens[:, t], noise)
        if mode == "hard":
            h_next = project(h_next, r)
        feas[t] = np.sqrt(_sqnorm(h_next)) > r
        b = burden(h, h_next, cfg)
        L = path_load_update(L, b, cfg)
        states[t + 1] = h_next
        burdens[t] = b
        loads[t] = L
        radii[t] = r
        logits[t] = params.W_o @ h_next + params.b_o[:, None]
        h = h_next
    rec = TrajectoryRecord(states, burdens, loads, radii, burdens > cfg.B, feas, logits)
    if single:
        rec = TrajectoryRecord(states[..., 0], burdens[:, 0], loads[:, 0], radii[:, 0],
                               rec.burden_violations[:, 0], feas[:, 0], logits[..., 0])
    return rec


@dataclass(frozen=True, eq=False)
class DeployedModel:
    """Parameters plus the way they are run: enforcement mode and constraint.

    Under ``soft`` enforcement the constraint only matters for bookkeeping;
    under ``hard`` it shapes the trajectory itself.
    """

    params: CellParams
    enforcement: str = "soft"
    cfg: ConstraintConfig = field(default_factory=ConstraintConfig)
    name: str = "model"

    def __post_init__(self):
        if self.enforcement not in ("soft", "hard"):
            raise ValueError(f"unknown enforcement {self.enforcement!r}")

    def run(self, tokens, cfg: Optional[ConstraintConfig] = None,
            embed_noise=None) -> TrajectoryRecord:
        """Roll out under this model's enforcement.

        ``cfg`` swaps in a different constraint yardstick; for a hard-enforced
        model that also changes the region it is projected into.
        """
        return rollout(self.params, cfg or self.cfg, tokens, enforcement=self.enforcement,
                       embed_noise=embed_noise)

    def logits(self, tokens, embed_noise=None) -> np.ndarray:
        return self.run(tokens, embed_noise=embed_noise).logits
