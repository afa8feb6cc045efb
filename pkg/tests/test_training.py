import math

import numpy as np
import pytest

from burdenlab import numgrad
from burdenlab.dynamics import CellParams, ConstraintConfig
from burdenlab.tasks import Batch, SequenceTask, generate
from burdenlab.training import (ObjectiveWeights, OptimConfig, TrainingDivergence,
                                build_objective, burden_hinge, dump_params, load_params,
                                metrics_csv, stab_noise, stability_loss, total_loss, train)


# --- burden hinge -----------------------------------------------------------

def test_hinge_all_under():
    assert burden_hinge([0.1, 0.2], 0.5) == 0.0


def test_hinge_single_active():
    assert burden_hinge([0.6, 0.4], 0.5) == pytest.approx(0.1, abs=1e-15)


def test_hinge_empty():
    assert burden_hinge([], 0.5) == 0.0


def test_hinge_rejects_negative():
    with pytest.raises(ValueError):
        burden_hinge([-0.1], 0.5)


# --- stability loss ---------------------------------------------------------

def _batch(kind="copy", count=6, seed=0, **kw):
    task = SequenceTask(kind, **kw)
    return task, generate(task, count, np.random.default_rng(seed))


def test_stab_zero_sigma(small_params, cfg):
    _, b = _batch(vocab=6, length=3)
    assert stability_loss(small_params, cfg, b, 0.0, np.random.default_rng(0)) == 0.0


def test_stab_zero_params(cfg):
    _, b = _batch(vocab=6, length=3)
    p = CellParams.zeros(4, 3, 6)
    assert stability_loss(p, cfg, b, 0.5, np.random.default_rng(0)) == 0.0


def test_stab_nonnegative_and_positive(small_params, cfg):
    _, b = _batch(vocab=6, length=3)
    val = stability_loss(small_params, cfg, b, 0.1, np.random.default_rng(0))
    assert val > 0.0


def test_stab_negative_sigma(small_params, cfg):
    _, b = _batch(vocab=6, length=3)
    with pytest.raises(ValueError):
        stability_loss(small_params, cfg, b, -1.0, np.random.default_rng(0))


# --- total loss ---------------------------------------------------------------

def test_zero_weights_total_is_task(small_params, cfg):
    _, b = _batch(vocab=6, length=3)
    value, parts = total_loss(small_params, cfg, ObjectiveWeights(), b, np.random.default_rng(1))
    assert value == parts["task"]


def test_inactive_constraints(cfg):
    # tiny weights keep every burden under B and every state inside the ball
    p = CellParams.init(4, 3, 6, np.random.default_rng(2), scale=0.01)
    _, b = _batch(vocab=6, length=3)
    w = ObjectiveWeights(1.0, 1.0, 0.5)
    value, parts = total_loss(p, cfg, w, b, np.random.default_rng(1))
    assert parts["hinge"] == 0.0 and parts["feas"] == 0.0
    assert value == pytest.approx(parts["task"] + 0.5 * parts["stab"], abs=1e-15)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _reference_components(p, cfg, tokens, positions, labels, noise):
    """Every component with scalar loops only."""
    n, d, v = p.n, p.d, p.v
    A = {k: np.asarray(a).tolist() for k, a in p.arrays().items()}

    def cell(h, tok, eps):
        e = [A["E"][i][tok] + eps[i] for i in range(d)]
        out = []
        for i in range(n):
            zi = _sig(sum(A["U_h"][i][j] * h[j] for j in range(n))
                      + sum(A["U_x"][i][j] * e[j] for j in range(d)) + A["c"][i])
            ci = math.tanh(sum(A["W_h"][i][j] * h[j] for j in range(n))
                           + sum(A["W_x"][i][j] * e[j] for j in range(d)) + A["b"][i])
            out.append((1 - zi) * h[i] + zi * ci)
        return out

    def run(seq, eps_seq):
        h, L = [0.0] * n, 0.0
        states, bs, radii = [h], [], []
        for t, tok in enumerate(seq):
            r = max(cfg.r_min, cfg.r0 * math.exp(-cfg.kappa * L))
            h2 = cell(h, tok, eps_seq[t])
            sq, sq2 = sum(x * x for x in h), sum(x * x for x in h2)
            disp = sum((a - c) ** 2 for a, c in zip(h2, h)) / n
            b = cfg.w_disp * disp + cfg.w_grow * max(0.0, sq2 - sq) / n
            L = L + cfg.alpha * b
            states.append(h2)
            bs.append(b)
            radii.append(r)
            h = h2
        return states, bs, radii

    B = len(tokens)
    zero = [[0.0] * d for _ in tokens[0]]
    task = hinge = feas = stab = 0.0
    for s, seq in enumerate(tokens):
        states, bs, radii = run(seq, zero)
        for j, t in enumerate(positions):
            h = states[t + 1]
            logits = [sum(A["W_o"][k][i] * h[i] for i in range(n)) + A["b_o"][k] for k in range(v)]
            m = max(logits)
            lse = m + math.log(sum(math.exp(x - m) for x in logits))
            task += lse - logits[labels[s][j]]
        hinge += sum(max(0.0, b - cfg.B) for b in bs)
        for h, r in zip(states[1:], radii):
            feas += max(0.0, math.sqrt(sum(x * x for x in h)) - r) ** 2
        eps = [[noise[t][i][s] for i in range(d)] for t in range(len(seq))]
        pert, _, _ = run(seq, eps)
        stab += sum((a - c) ** 2 for a, c in zip(states[-1], pert[-1])) / n
    return {"task": task / (B * len(positions)), "hinge": hinge / B, "feas": feas / B,
            "stab": stab / B}


def _handcrafted():
    p = CellParams.init(2, 2, 4, np.random.default_rng(11), scale=1.5)
    cfg = ConstraintConfig(B=0.05, r0=0.4, r_min=0.2, kappa=0.5)
    tokens = np.array([[0, 3, 1], [2, 2, 0]])
    b = Batch(tokens, np.array([1, 2]), np.array([[1, 0], [3, 2]]))
    return p, cfg, b


def test_handcrafted_components_match_reference():
    p, cfg, b = _handcrafted()
    w = ObjectiveWeights(0.7, 1.3, 0.4)
    value, parts = total_loss(p, cfg, w, b, np.random.default_rng(5), sigma_stab=0.3)
    noise = stab_noise(np.random.default_rng(5), 3, 2, 2, 0.3)
    ref = _reference_components(p, cfg, b.tokens.tolist(), [1, 2], b.labels.tolist(), noise)
    assert ref["hinge"] > 0 and ref["feas"] > 0 and ref["stab"] > 0
    for k in ref:
        assert parts[k] == pytest.approx(ref[k], rel=1e-12, abs=1e-14)
    expect = ref["task"] + 0.7 * ref["hinge"] + 1.3 * ref["feas"] + 0.4 * ref["stab"]
    assert value == pytest.approx(expect, rel=1e-12)


def test_breakdown_sums_to_total():
    p, cfg, b = _handcrafted()
    w = ObjectiveWeights(0.7, 1.3, 0.4)
    value, parts = total_loss(p, cfg, w, b, np.random.default_rng(5), sigma_stab=0.3)
    recon = parts["task"] + w.lambda1 * parts["hinge"] + w.lambda2 * parts["feas"] \
        + w.lambda3 * parts["stab"]
    assert abs(recon - value) <= 1e-12


@pytest.mark.parametrize("weights", [
    ObjectiveWeights(0, 0, 0), ObjectiveWeights(1, 0, 0), ObjectiveWeights(0, 1, 0),
    ObjectiveWeights(0, 0, 1), ObjectiveWeights(0.7, 1.3, 0.4),
])
@pytest.mark.parametrize("enforcement", ["soft", "hard"])
def test_objective_grad_check(weights, enforcement):
    p, cfg, b = _handcrafted()
    cfg = ConstraintConfig(**{**cfg.to_dict(), "enforcement": enforcement})
    noise = stab_noise(np.random.default_rng(5), 3, 2, 2, 0.3)
    obj = build_objective(p, cfg, weights, b, noise)
    obj.graph.forward(p.arrays())
    if enforcement == "soft":
        assert obj.graph.kink_distance() > 1e-4
    # Under projection the feasibility hinge sits exactly at its kink, where
    # the squared hinge is still differentiable, so only soft mode needs clearance.
    report = numgrad.grad_check(obj.graph, p.arrays(), step=1e-6, tolerance=1e-4)
    assert report.passed, report.max_error


# --- training loop ------------------------------------------------------------

SMALL = dict(vocab=6, length=3, delay=1)


def _small_run(weights, optim, cfg=ConstraintConfig(), **kw):
    task = SequenceTask("copy", **SMALL)
    p0 = CellParams.init(6, 4, 6, np.random.default_rng(0))
    return p0, train(p0, cfg, weights, task, optim, **kw)


def test_lr_zero_keeps_params():
    opt = OptimConfig(lr=0.0, epochs=3, steps_per_epoch=2, batch_size=4, monitor_size=8)
    p0, (p1, hist) = _small_run(ObjectiveWeights(1, 1, 0.5), opt)
    for k, a in p0.arrays().items():
        assert np.array_equal(a, p1.arrays()[k])
    assert len(hist) == 4 and hist[0].epoch == 0


def test_training_is_deterministic():
    opt = OptimConfig(lr=0.2, epochs=3, steps_per_epoch=3, batch_size=8, seed=7, monitor_size=16)
    _, (pa, ha) = _small_run(ObjectiveWeights(1, 1, 0.5), opt)
    _, (pb, hb) = _small_run(ObjectiveWeights(1, 1, 0.5), opt)
    assert metrics_csv(ha) == metrics_csv(hb)
    for k, a in pa.arrays().items():
        assert np.array_equal(a, pb.arrays()[k])


def test_baseline_equals_constraint_free_path():
    opt = OptimConfig(lr=0.2, epochs=4, steps_per_epoch=3, batch_size=8, seed=3, monitor_size=16)
    _, (pa, ha) = _small_run(ObjectiveWeights(), opt)
    _, (pb, hb) = _small_run(ObjectiveWeights(), opt, constraint_free=True)
    assert metrics_csv(ha) == metrics_csv(hb)
    for k, a in pa.arrays().items():
        assert np.array_equal(a, pb.arrays()[k])


def test_constraint_free_rejects_weights():
    opt = OptimConfig(epochs=1, steps_per_epoch=1)
    with pytest.raises(ValueError):
        _small_run(ObjectiveWeights(1, 0, 0), opt, constraint_free=True)


def test_divergence_names_component():
    task = SequenceTask("copy", **SMALL)
    p0 = CellParams.init(6, 4, 6, np.random.default_rng(0))
    p0.W_o[0, 0] = np.inf
    opt = OptimConfig(epochs=1, steps_per_epoch=1, batch_size=2, monitor_size=2)
    with pytest.raises((TrainingDivergence, FloatingPointError, ValueError)):
        train(p0, ConstraintConfig(), ObjectiveWeights(1, 1, 1), task, opt)


@pytest.mark.slow
def test_copy_descent_seed7():
    task = SequenceTask("copy", vocab=8, length=8, delay=2)
    p0 = CellParams.init(32, 8, 8, np.random.default_rng(7))
    opt = OptimConfig(epochs=200, steps_per_epoch=1, seed=7)
    _, hist = train(p0, ConstraintConfig(), ObjectiveWeights(), task, opt, constraint_free=True)
    assert hist[-1].task < hist[0].task


def test_hinge_weight_monotone():
    cfg = ConstraintConfig(B=0.02)
    opt = OptimConfig(lr=0.3, epochs=20, steps_per_epoch=5, batch_size=16, seed=1,
                      monitor_size=128)
    rates = []
    for lam in (0.0, 1.0, 10.0):
        _, (_, hist) = _small_run(ObjectiveWeights(lam, 0, 0), opt, cfg)
        rates.append(hist[-1].burden_violation_rate)
    assert rates[0] > 0
    assert rates[0] >= rates[1] >= rates[2]


# --- serialization ------------------------------------------------------------

def test_params_json_roundtrip(tmp_path, small_params, cfg):
    path = tmp_path / "m.json"
    dump_params(path, small_params, cfg, 7, arm="cc")
    p, c, doc = load_params(path)
    assert c == cfg and doc["seed"] == 7 and doc["arm"] == "cc"
    for k, a in small_params.arrays().items():
        assert np.array_equal(a, p.arrays()[k])


def test_params_wrong_format(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_params(path)


def test_metrics_csv_header_and_rows():
    opt = OptimConfig(lr=0.1, epochs=2, steps_per_epoch=1, batch_size=4, monitor_size=8)
    _, (_, hist) = _small_run(ObjectiveWeights(), opt)
    lines = metrics_csv(hist).splitlines()
    assert lines[0] == "epoch,task,hinge,feas,stab,burden_violation_rate,feas_violation_rate"
    assert len(lines) == 1 + 3
    assert float(lines[-1].split(",")[1]) == hist[-1].task


@pytest.mark.parametrize("kwargs", [{"lr": -1}, {"batch_size": 0}, {"clip": 0},
                                    {"sigma_stab": -0.1}])
def test_optim_validation(kwargs):
    with pytest.raises(ValueError):
        OptimConfig(**kwargs)


def test_weights_validation():
    with pytest.raises(ValueError):
        ObjectiveWeights(-1, 0, 0)
