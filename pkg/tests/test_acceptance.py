"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a single PASS/FAIL line; ``conftest.py`` prints them in
the terminal summary. The experiment-completion criterion runs the shipped
default configuration end to end and takes most of an hour on one core.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from burdenlab import dynamics, numgrad
from burdenlab.cli import main as cli_main
from burdenlab.dynamics import CellParams, ConstraintConfig, DeployedModel
from burdenlab.harness import (FAMILIES, deploy_teacher, distill_arm, load_config, run_experiment,
                               train_teacher)
from burdenlab.profiles import capability
from burdenlab.tasks import KINDS, SequenceTask, generate, reference_labels
from burdenlab.training import (ObjectiveWeights, build_objective, metrics_csv, stab_noise,
                                train)

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_INI = ROOT / "configs" / "default.ini"

RESULTS = []


def record(number, name, ok, detail):
    line = f"acceptance {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS.append(line)
    print(line)
    return ok


# 1 -----------------------------------------------------------------------------

def _grad_trial(rng):
    p = CellParams.init(2, 2, 4, rng, scale=float(rng.uniform(0.5, 2.0)))
    cfg = ConstraintConfig(B=float(rng.uniform(0.01, 0.2)), r0=float(rng.uniform(0.3, 1.0)),
                           r_min=0.1, kappa=float(rng.uniform(0.0, 1.0)))
    task = SequenceTask("parity", vocab=4, length=3)
    batch = generate(task, 3, rng)
    w = ObjectiveWeights(*rng.uniform(0.1, 2.0, size=3))
    noise = stab_noise(rng, 3, 2, 3, float(rng.uniform(0.05, 0.5)))
    obj = build_objective(p, cfg, w, batch, noise)
    obj.graph.forward(p.arrays())
    return obj, p


def test_1_gradient_check():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst, trials, resampled = 0.0, 0, 0
    while trials < 100:
        obj, p = _grad_trial(rng)
        if obj.graph.kink_distance() < 1e-4:
            resampled += 1
            continue
        rep = numgrad.grad_check(obj.graph, p.arrays(), step=1e-6, tolerance=1e-4)
        worst = max(worst, rep.max_error)
        trials += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 10
    assert record(1, "gradient check", ok,
                  f"max rel err {worst:.2e} over 100 trials, {resampled} resampled at kinks, "
                  f"{elapsed:.1f}s")


# 2 -----------------------------------------------------------------------------

def _constraint_properties(rng, cases):
    failures = []
    cfg = ConstraintConfig()
    for _ in range(cases):
        n = int(rng.integers(1, 9))
        h, h2 = rng.normal(scale=3, size=n), rng.normal(scale=3, size=n)
        w = ConstraintConfig(w_disp=float(rng.uniform(0, 3)), w_grow=float(rng.uniform(0, 3)))
        if dynamics.burden(h, h2, w) < 0:
            failures.append("burden >= 0")
        if dynamics.burden(h, h, w) != 0:
            failures.append("burden(h, h) == 0")

        bs = rng.exponential(size=int(rng.integers(1, 20)))
        L, prev = 0.0, 0.0
        for b in bs:
            L = dynamics.path_load_update(L, b, cfg)
            if L < prev:
                failures.append("uniform load nondecreasing")
            prev = L
        lam = float(rng.uniform(0.05, 1.0))
        disc = ConstraintConfig(path_mode="discounted", lambda_path=lam)
        L = 0.0
        for b in bs:
            new = dynamics.path_load_update(L, b, disc)
            if new < lam * L or new < 0:
                failures.append("discounted load >= lambda * previous")
            L = new

        r0 = float(rng.uniform(0.6, 5))
        rc = ConstraintConfig(r0=r0, r_min=float(rng.uniform(0.01, 0.59)),
                              kappa=float(rng.uniform(0, 2)))
        L1, L2 = np.sort(rng.exponential(scale=20, size=2))
        r1, r2 = dynamics.feasible_radius(L1, rc), dynamics.feasible_radius(L2, rc)
        if not (rc.r_min <= r2 <= r1 <= rc.r0):
            failures.append("radius bounded and nonincreasing")

        r = float(rng.uniform(0.01, 4))
        hp = dynamics.project(h2, r)
        if np.linalg.norm(hp) > r or not np.array_equal(dynamics.project(hp, r), hp):
            failures.append("projection inside and idempotent")
        if np.linalg.norm(h2) <= r and not np.array_equal(hp, h2):
            failures.append("projection leaves feasible states alone")
        pen = dynamics.feasibility_penalty(h2, r)
        if (pen == 0) != (np.linalg.norm(h2) <= r) or pen < 0:
            failures.append("penalty zero iff feasible")
    return failures


def test_2_constraint_properties():
    start = time.perf_counter()
    failures = _constraint_properties(np.random.default_rng(2), 1000)
    # hard rollouts over random cells stay inside the ball at every step
    rng = np.random.default_rng(22)
    for _ in range(1000):
        p = CellParams.init(4, 3, 5, rng, scale=3.0)
        cfg = ConstraintConfig(r0=float(rng.uniform(0.2, 1.0)), r_min=0.1, kappa=1.0,
                               enforcement="hard")
        rec = dynamics.rollout(p, cfg, rng.integers(0, 5, size=6))
        if rec.feasibility_violations.any():
            failures.append("hard rollout feasible")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 10
    assert record(2, "constraint properties", ok,
                  f"8 properties x 1000 cases, {len(failures)} failures, {elapsed:.1f}s")


# 3 -----------------------------------------------------------------------------

def test_3_baseline_bit_identity():
    cfg = load_config(DEFAULT_INI)
    task = cfg.task("copy", 0)
    optim = replace(cfg.optim, epochs=60, seed=0)
    p0 = CellParams.init(cfg.n, cfg.d, cfg.vocab, np.random.default_rng(0))
    start = time.perf_counter()
    pa, ha = train(p0, cfg.constraint, ObjectiveWeights(), task, optim)
    pb, hb = train(p0, cfg.constraint, ObjectiveWeights(), task, optim, constraint_free=True)
    elapsed = time.perf_counter() - start
    same = metrics_csv(ha) == metrics_csv(hb) and all(
        np.array_equal(a, pb.arrays()[k]) for k, a in pa.arrays().items())
    ok = same and elapsed < 120
    assert record(3, "zero-weight baseline identity", ok,
                  f"{len(ha)} log rows {'identical' if same else 'differ'}, {elapsed:.1f}s")


# 4 -----------------------------------------------------------------------------

def test_4_student_recovers_capability():
    cfg = load_config(DEFAULT_INI)
    cfg = replace(cfg, distill=replace(cfg.distill, shrink=1.0))
    start = time.perf_counter()
    params, _ = train_teacher(cfg, "copy", "base", 0)
    teacher = deploy_teacher(cfg, params, "base")
    arm = distill_arm(cfg, teacher, "copy", 0, 16000)
    task = cfg.task("copy", 0)
    probe = replace(cfg.probe, seed=0)
    kT = capability(teacher, task, probe).accuracy
    kS = capability(DeployedModel(arm.student), task, probe).accuracy
    elapsed = time.perf_counter() - start
    dK = max(0.0, kT - kS)
    ok = dK <= 0.05 and elapsed < 600
    assert record(4, "distilled student capability", ok,
                  f"K_T {kT:.4f}, K_S {kS:.4f}, dK {dK:.4f}, {elapsed:.0f}s")


# 5 -----------------------------------------------------------------------------

def test_5_hard_enforcement_never_violates():
    rng = np.random.default_rng(5)
    cfg = ConstraintConfig(r0=1.0, r_min=0.2, kappa=0.5, enforcement="hard")
    p = CellParams.init(32, 8, 8, rng, scale=1.5)
    tokens = rng.integers(0, 8, size=(10_000, 19))
    hard = DeployedModel(p, "hard", cfg).run(tokens)
    soft = DeployedModel(p, "soft", cfg).run(tokens)
    rate = float(hard.feasibility_violations.mean())
    ok = rate == 0.0
    assert record(5, "hard enforcement", ok,
                  f"violation rate {rate} over 1e4 sequences "
                  f"(soft rollout of the same cell: {soft.feasibility_violations.mean():.3f})")


# 6 -----------------------------------------------------------------------------

DETERMINISM_INI = """
[experiment]
seeds = 0 1
tasks = copy parity modsum
[teacher]
n = 8
d = 4
[optim]
lr = 0.3
epochs = 3
steps_per_epoch = 3
batch_size = 16
monitor_size = 64
[distill]
budgets = 50 100 200
epochs = 2
discrepancy_samples = 100
[probe]
sample_size = 200
"""


def test_6_experiment_determinism(tmp_path):
    ini = tmp_path / "det.ini"
    ini.write_text(DETERMINISM_INI)
    codes = [cli_main(["experiment", "--config", str(ini), "--out", str(tmp_path / run)])
             for run in ("a", "b")]
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    ok = codes == [0, 0] and a == b
    assert record(6, "report determinism", ok,
                  f"exit codes {codes}, report.json {len(a)} bytes, "
                  f"{'byte-identical' if a == b else 'differs'}")


# 7 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_7_default_experiment(tmp_path):
    cfg = load_config(DEFAULT_INI)
    out = tmp_path / "default"
    bundle = run_experiment(cfg, out)
    problems = []
    for r in bundle.records:
        if r["status"] != "ok":
            problems.append(f"seed {r['seed']} {r['task']} failed: {r.get('error')}")
            continue
        if set(r["hypotheses"]) != {"H1", "H2", "H3", "H4"}:
            problems.append("missing per-seed hypotheses")
        for fam in FAMILIES:
            if "slope" not in r["coupling"][fam]:
                problems.append(f"missing {fam} coupling")
        for a in r["students"]["cc"]:
            if not a["outcome"]:
                problems.append("cc student without outcome label")
    for kind in cfg.tasks:
        entry = bundle.pooled[kind]
        if set(entry["hypotheses"]) != {"H1", "H2", "H3", "H4"}:
            problems.append(f"missing pooled hypotheses for {kind}")
        if set(entry["coupling"]) != set(FAMILIES):
            problems.append(f"missing pooled coupling for {kind}")
    timings = json.loads((out / "timings.json").read_text())
    per_seed = {s: sum(v for k, v in timings.items() if k.startswith(f"seed{s}/"))
                for s in cfg.seeds}
    slow = {s: t for s, t in per_seed.items() if t >= 1800}
    ok = not problems and not slow and len(bundle.records) == 9
    secs = ", ".join(f"seed {s} {t / 60:.1f} min" for s, t in per_seed.items())
    assert record(7, "default experiment", ok,
                  f"{len(bundle.records)} arm sets, {len(problems)} problems, {secs}"), problems


# 8 -----------------------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_8_generator_matches_reference(kind):
    task = SequenceTask(kind)
    batch = generate(task, 100_000, np.random.default_rng(8))
    mismatches = sum(reference_labels(task, toks) != labs
                     for toks, labs in zip(batch.tokens.tolist(), batch.labels.tolist()))
    ok = mismatches == 0
    assert record(8, f"reference labels ({kind})", ok,
                  f"{mismatches} mismatches in 1e5 sequences")
