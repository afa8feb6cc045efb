"""Paired teacher/student experiment: train, distill, profile, summarize.

For every (seed, task) pair the harness trains a baseline teacher (zero
objective weights) and a constraint-coupled teacher from the same
initialization on the same data stream, distills a student from each at every
budget with shared student initialization and data order, profiles every
model, and summarizes the four hypotheses. Hypotheses are reported, never
gated.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import os
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import rng as rngmod
from .distillation import DistillConfig, behavior_discrepancy, distill, make_student
from .dynamics import CellParams, ConstraintConfig, DeployedModel
from .profiles import (DegenerateRegressor, ProbeConfig, Thresholds,
                       capability, coupling_fit, gaps, mean_burden, proposition_outcome,
                       stability_profile)
from .tasks import KINDS, SequenceTask
from .training import ObjectiveWeights, OptimConfig, dump_params, metrics_csv, train

log = logging.getLogger(__name__)

FAMILIES = ("base", "cc")
REPORT_FORMAT = "burdenlab.report/1"
OUT_ENV = "BURDENLAB_OUT"


# Pooled differences this close to zero are reported as "neutral".
DIRECTION_TOL = 1e-12

CC_DEFAULTS = {"lambda1": 1.0, "lambda2": 1.0, "lambda3": 0.5}


class ConfigError(ValueError):
    """The experiment configuration is missing, malformed or inconsistent."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple = (0, 1, 2)
    tasks: tuple = ("copy", "parity", "modsum")
    vocab: int = 8
    length: int = 8
    delay: int = 2
    modulus: int = 5
    n: int = 32
    d: int = 8
    init_scale: float = 0.2
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    cc_weights: ObjectiveWeights = field(default_factory=lambda: ObjectiveWeights(**CC_DEFAULTS))
    optim: OptimConfig = field(default_factory=OptimConfig)
    budgets: tuple = (1000, 4000, 16000)
    distill: DistillConfig = field(default_factory=DistillConfig)
    discrepancy_samples: int = 500
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    output_dir: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.tasks or any(t not in KINDS for t in self.tasks):
            raise ConfigError(f"tasks must be a nonempty subset of {KINDS}")
        if not self.budgets or any(b < 1 for b in self.budgets):
            raise ConfigError("budgets must be positive")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ConfigError("budgets must be strictly increasing")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def task(self, kind: str, seed: int) -> SequenceTask:
        return SequenceTask(kind, vocab=self.vocab, length=self.length, delay=self.delay,
                            modulus=self.modulus, seed=seed)

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds), "tasks": list(self.tasks),
            "task": {"vocab": self.vocab, "length": self.length, "delay": self.delay,
                     "modulus": self.modulus},
            "teacher": {"n": self.n, "d": self.d, "init_scale": self.init_scale},
            "constraint": self.constraint.to_dict(),
            "objective": dict(self.cc_weights.__dict__),
            "optim": dict(self.optim.__dict__),
            "distill": {"budgets": list(self.budgets),
                        "kd_temperature": self.distill.kd_temperature,
                        "shrink": self.distill.shrink,
                        "epsilon_target": self.distill.epsilon_target,
                        "optim": dict(self.distill.optim.__dict__),
                        "discrepancy_samples": self.discrepancy_samples,
                        "matching": "students of both families share init seed, "
                                    "distillation inputs and data order per (seed, budget)"},
            "probe": self.probe.to_dict(),
            "thresholds": dict(self.thresholds.__dict__),
        }


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


_SECTIONS = {
    "experiment": {"seeds", "tasks", "output_dir", "workers"},
    "task": {"vocab", "length", "delay", "modulus"},
    "teacher": {"n", "d", "init_scale"},
    "constraint": set(ConstraintConfig.__dataclass_fields__),
    "objective": {"lambda1", "lambda2", "lambda3"},
    "optim": set(OptimConfig.__dataclass_fields__) - {"seed"},
    "distill": {"budgets", "kd_temperature", "shrink", "epsilon_target", "lr", "epochs",
                "batch_size", "clip", "discrepancy_samples"},
    "probe": {"sample_size", "noise_sigmas", "horizon_factors", "divergence_sigma"},
    "thresholds": {"eps_K", "eps_R", "rho_b"},
}


def _typed(dc, section: configparser.SectionProxy, skip=()) -> dict:
    out = {}
    for key, f in dc.__dataclass_fields__.items():
        if key in skip or key not in section:
            continue
        raw = section[key]
        kind = type(f.default) if f.default is not None else str
        try:
            if kind is bool:
                out[key] = section.getboolean(key)
            elif kind is int:
                out[key] = int(raw)
            elif kind is float:
                out[key] = float(raw)
            else:
                out[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from None
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse the sectioned key/value experiment format (see ``configs/default.ini``)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        extra = set(cp[name]) - _SECTIONS[name]
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")

    def sec(name):
        return cp[name] if cp.has_section(name) else cp[configparser.DEFAULTSECT]

    try:
        kw = {}
        exp = sec("experiment")
        if "seeds" in exp:
            kw["seeds"] = _ints(exp["seeds"])
        if "tasks" in exp:
            kw["tasks"] = tuple(exp["tasks"].replace(",", " ").split())
        if "output_dir" in exp:
            kw["output_dir"] = exp["output_dir"].strip()
        if "workers" in exp:
            kw["workers"] = int(exp["workers"])
        for key in ("vocab", "length", "delay", "modulus"):
            if key in sec("task"):
                kw[key] = int(sec("task")[key])
        t = sec("teacher")
        if "n" in t:
            kw["n"] = int(t["n"])
        if "d" in t:
            kw["d"] = int(t["d"])
        if "init_scale" in t:
            kw["init_scale"] = float(t["init_scale"])
        kw["constraint"] = ConstraintConfig(**_typed(ConstraintConfig, sec("constraint")))
        kw["cc_weights"] = ObjectiveWeights(**{**CC_DEFAULTS,
                                               **_typed(ObjectiveWeights, sec("objective"))})
        kw["optim"] = OptimConfig(**_typed(OptimConfig, sec("optim"), skip=("seed",)))
        ds = sec("distill")
        if "budgets" in ds:
            kw["budgets"] = _ints(ds["budgets"])
        d_opt = _typed(OptimConfig, ds, skip=("seed", "sigma_stab", "steps_per_epoch",
                                             "monitor_size"))
        d_kw = _typed(DistillConfig, ds, skip=("budget", "optim"))
        kw["distill"] = DistillConfig(optim=replace(DistillConfig().optim, **d_opt), **d_kw)
        if "discrepancy_samples" in ds:
            kw["discrepancy_samples"] = int(ds["discrepancy_samples"])
        pr = sec("probe")
        p_kw = {}
        if "sample_size" in pr:
            p_kw["sample_size"] = int(pr["sample_size"])
        if "noise_sigmas" in pr:
            p_kw["noise_sigmas"] = _floats(pr["noise_sigmas"])
        if "horizon_factors" in pr:
            p_kw["horizon_factors"] = _ints(pr["horizon_factors"])
        if "divergence_sigma" in pr:
            p_kw["divergence_sigma"] = float(pr["divergence_sigma"])
        kw["probe"] = ProbeConfig(**p_kw)
        kw["thresholds"] = Thresholds(**_typed(Thresholds, sec("thresholds")))
        return ExperimentConfig(**kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUT_ENV) or cfg.output_dir)


# ---------------------------------------------------------------------------
# single arms
# ---------------------------------------------------------------------------


def teacher_weights(cfg: ExperimentConfig, arm: str) -> ObjectiveWeights:
    if arm == "base":
        return ObjectiveWeights()
    if arm == "cc":
        return cfg.cc_weights
    raise ValueError(f"unknown arm {arm!r}")


def teacher_init(cfg: ExperimentConfig, kind: str, seed: int) -> CellParams:
    """Shared initialization for both teacher arms of a (seed, task) pair."""
    return CellParams.init(cfg.n, cfg.d, cfg.vocab, rngmod.stream(seed, "init", kind),
                           scale=cfg.init_scale)


def train_teacher(cfg: ExperimentConfig, kind: str, arm: str, seed: int):
    task = cfg.task(kind, seed)
    optim = replace(cfg.optim, seed=seed)
    return train(teacher_init(cfg, kind, seed), cfg.constraint, teacher_weights(cfg, arm),
                 task, optim)


def deploy_teacher(cfg: ExperimentConfig, params: CellParams, arm: str) -> DeployedModel:
    # The baseline never trained with the constraint, so it always runs soft.
    enforcement = cfg.constraint.enforcement if arm == "cc" else "soft"
    return DeployedModel(params, enforcement, cfg.constraint, name=f"T_{arm}")


def student_seed(seed: int, budget: int) -> int:
    """Seed shared by both families' students at one (seed, budget)."""
    return int(rngmod.stream(seed, "student", budget).integers(2 ** 31))


def distill_arm(cfg: ExperimentConfig, teacher: DeployedModel, kind: str, seed: int,
                budget: int):
    task = cfg.task(kind, seed)
    s_seed = student_seed(seed, budget)
    dcfg = replace(cfg.distill, budget=budget, optim=replace(cfg.distill.optim, seed=s_seed))
    student = make_student((teacher.params.n, teacher.params.d, teacher.params.v),
                           dcfg.shrink, s_seed)
    return distill(teacher, student, dcfg, task)


def evaluate_model(cfg: ExperimentConfig, model: DeployedModel, kind: str, seed: int) -> dict:
    task = cfg.task(kind, seed)
    probe = replace(cfg.probe, seed=seed)
    cap = capability(model, task, probe)
    prof = stability_profile(model, cfg.constraint, task, probe)
    return {"accuracy": cap.accuracy, "accuracy_se": cap.standard_error,
            "sample_size": cap.sample_size, "profile": prof,
            "burden_mean": mean_burden(model, cfg.constraint, task, probe)}


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fit_or_none(points) -> dict:
    try:
        est = coupling_fit(points)
    except DegenerateRegressor as exc:
        return {"points": [list(p) for p in points], "slope": None, "intercept": None,
                "residual": None, "note": str(exc)}
    return est.to_dict()


def _mean(vals) -> Optional[float]:
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def _diff(a, b) -> Optional[float]:
    return None if a is None or b is None else float(a - b)


def _seed_hypotheses(students: Dict[str, List[dict]], coupling: Dict[str, dict],
                     eps_K: float) -> dict:
    h = {}
    base_slope, cc_slope = coupling["base"]["slope"], coupling["cc"]["slope"]
    h["H1"] = {"slope_base": base_slope, "slope_cc": cc_slope,
               "difference": _diff(cc_slope, base_slope)}
    h2 = {}
    for fam in FAMILIES:
        arms = students[fam]
        h2[f"drop_x2_{fam}"] = _mean([a["accuracy"] - a["profile"]["acc_h2"] for a in arms])
        h2[f"drop_x4_{fam}"] = _mean([a["accuracy"] - a["profile"]["acc_h4"] for a in arms])
    h2["difference_x2"] = _diff(h2["drop_x2_cc"], h2["drop_x2_base"])
    h2["difference_x4"] = _diff(h2["drop_x4_cc"], h2["drop_x4_base"])
    h["H2"] = h2
    h3 = {}
    for fam in FAMILIES:
        ok = [a["budget"] for a in students[fam] if a["dK"] <= eps_K]
        h3[f"min_budget_{fam}"] = min(ok) if ok else None
        h3[f"reached_{fam}"] = 1.0 if ok else 0.0
    h3["difference"] = _diff(h3["min_budget_cc"], h3["min_budget_base"])
    h["H3"] = h3
    h4 = {}
    for fam in FAMILIES:
        close = [a["dR"] for a in students[fam] if a["dK"] <= eps_K]
        h4[f"dR_{fam}"] = _mean(close)
        h4[f"n_{fam}"] = len(close)
    h4["difference"] = _diff(h4["dR_cc"], h4["dR_base"])
    h["H4"] = h4
    return h


def run_seed_task(cfg: ExperimentConfig, seed: int, kind: str, out: Path) -> dict:
    """One paired arm set; writes artifacts under ``out`` and returns its record."""
    art = out / "artifacts" / f"seed{seed}" / kind
    art.mkdir(parents=True, exist_ok=True)
    task = cfg.task(kind, seed)
    record = {"seed": seed, "task": kind, "status": "ok", "teachers": {}, "students": {}}
    teachers = {}
    for arm in FAMILIES:
        params, history = train_teacher(cfg, kind, arm, seed)
        dump_params(art / f"teacher_{arm}.json", params, cfg.constraint, seed,
                    arm=arm, task=task.to_dict(),
                    enforcement=deploy_teacher(cfg, params, arm).enforcement)
        (art / f"teacher_{arm}_metrics.csv").write_text(metrics_csv(history))
        teachers[arm] = deploy_teacher(cfg, params, arm)
        ev = evaluate_model(cfg, teachers[arm], kind, seed)
        record["teachers"][arm] = {
            "accuracy": ev["accuracy"], "accuracy_se": ev["accuracy_se"],
            "profile": ev["profile"].to_dict(), "burden_mean": ev["burden_mean"],
            "enforcement": teachers[arm].enforcement,
            "final_task_loss": history[-1].task, "initial_task_loss": history[0].task,
            "_profile": ev["profile"]}
    for arm in FAMILIES:
        t_rec = record["teachers"][arm]
        arms = []
        for budget in cfg.budgets:
            sa = distill_arm(cfg, teachers[arm], kind, seed, budget)
            student = DeployedModel(sa.student, "soft", cfg.constraint, name=f"S_{arm}_{budget}")
            d_mean, d_se = behavior_discrepancy(student, teachers[arm], task,
                                                cfg.discrepancy_samples, seed)
            sa.discrepancy, sa.discrepancy_se = d_mean, d_se
            stem = f"student_{arm}_{budget}"
            dump_params(art / f"{stem}.json", sa.student, cfg.constraint, seed,
                        arm=arm, budget=budget, task=task.to_dict(), enforcement="soft")
            (art / f"{stem}_arm.json").write_text(json.dumps(sa.to_dict(), sort_keys=True) + "\n")
            ev = evaluate_model(cfg, student, kind, seed)
            dK, dR = gaps(t_rec["accuracy"], ev["accuracy"], t_rec["_profile"], ev["profile"])
            arms.append({
                "budget": budget, "accuracy": ev["accuracy"], "accuracy_se": ev["accuracy_se"],
                "profile": ev["profile"].to_dict(), "burden_mean": ev["burden_mean"],
                "dK": dK, "dR": dR, "discrepancy": d_mean, "discrepancy_se": d_se,
                "distill_loss_initial": sa.initial_loss, "distill_loss_final": sa.final_loss,
                "student_n": sa.student.n,
                "outcome": proposition_outcome(dK, dR, ev["burden_mean"], t_rec["burden_mean"],
                                               cfg.thresholds),
            })
        record["students"][arm] = arms
    for arm in FAMILIES:
        del record["teachers"][arm]["_profile"]
    record["coupling"] = {fam: _fit_or_none([(a["dK"], a["dR"]) for a in record["students"][fam]])
                          for fam in FAMILIES}
    record["hypotheses"] = _seed_hypotheses(record["students"], record["coupling"],
                                            cfg.thresholds.eps_K)
    return record


def _guarded(cfg, seed, kind, out) -> dict:
    try:
        return run_seed_task(cfg, seed, kind, out)
    except Exception as exc:  # recorded, not dropped: a missing arm is evidence too
        log.error("seed %s task %s failed: %s", seed, kind, exc)
        return {"seed": seed, "task": kind, "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(limit=5)}


def _pooled(cfg: ExperimentConfig, records: List[dict]) -> dict:
    pooled = {}
    for kind in cfg.tasks:
        recs = [r for r in records if r["task"] == kind and r["status"] == "ok"]
        entry = {"seeds_ok": [r["seed"] for r in recs]}
        entry["coupling"] = {}
        for fam in FAMILIES:
            pts = [(a["dK"], a["dR"]) for r in recs for a in r["students"][fam]]
            entry["coupling"][fam] = _fit_or_none(pts) if len(pts) >= 2 else None
        hyp = {}
        for name in ("H1", "H2", "H3", "H4"):
            keys = sorted({k for r in recs for k in r["hypotheses"][name]})
            hyp[name] = {k: _mean([r["hypotheses"][name].get(k) for r in recs]) for k in keys}
        c = entry["coupling"]
        hyp["H1"]["pooled_slope_base"] = c["base"]["slope"] if c["base"] else None
        hyp["H1"]["pooled_slope_cc"] = c["cc"]["slope"] if c["cc"] else None
        hyp["H1"]["pooled_difference"] = _diff(hyp["H1"]["pooled_slope_cc"],
                                               hyp["H1"]["pooled_slope_base"])
        entry["hypotheses"] = hyp
        pooled[kind] = entry
    return pooled


def _direction(diff: Optional[float], favourable_sign: int) -> Optional[str]:
    if diff is None:
        return None
    if abs(diff) <= DIRECTION_TOL:
        return "neutral"
    return "supports" if diff * favourable_sign > 0 else "against"


def _directions(pooled: dict) -> dict:
    """Plain-language direction of each pooled hypothesis statistic."""
    out = {}
    for kind, entry in pooled.items():
        h = entry["hypotheses"]
        d3 = h["H3"].get("difference")
        if d3 is None:
            # Budgets are only comparable where both families got there; otherwise
            # a family that never reaches the target is the harder one to compress.
            rb, rc = h["H3"].get("reached_base"), h["H3"].get("reached_cc")
            if rb is not None and rc is not None and rb != rc:
                d3 = rb - rc
        out[kind] = {
            "H1": _direction(h["H1"].get("pooled_difference"), +1),
            "H2": _direction(h["H2"].get("difference_x4"), +1),
            "H3": _direction(d3, +1),
            "H4": _direction(h["H4"].get("difference"), -1),
        }
    return out


@dataclass
class ReportBundle:
    records: List[dict]
    pooled: dict
    directions: dict
    config: dict
    manifest: Dict[str, str]

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "config": self.config, "records": self.records,
                "pooled": self.pooled, "directions": self.directions,
                "manifest": self.manifest}

    @classmethod
    def from_dict(cls, doc: dict) -> "ReportBundle":
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError("not a burdenlab report bundle")
        return cls(doc["records"], doc["pooled"], doc["directions"], doc["config"],
                   doc["manifest"])

    @classmethod
    def load(cls, path) -> "ReportBundle":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _run_one(args):
    cfg, seed, kind, out = args
    start = time.perf_counter()
    record = _guarded(cfg, seed, kind, out)
    return record, time.perf_counter() - start


def run_experiment(cfg: ExperimentConfig, out: Optional[Path] = None) -> ReportBundle:
    """Run every (seed, task) arm set and assemble the report bundle."""
    out = Path(out) if out is not None else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, seed, kind, out) for seed in cfg.seeds for kind in cfg.tasks]
    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    records = [r for r, _ in results]
    # Wall-clock times live outside the report so the report stays reproducible.
    timings = {f"seed{r['seed']}/{r['task']}": secs for r, secs in results}
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    manifest = {}
    for path in sorted((out / "artifacts").rglob("*")):
        if path.is_file():
            manifest[path.relative_to(out).as_posix()] = _sha256(path)
    pooled = _pooled(cfg, records)
    return ReportBundle(records, pooled, _directions(pooled), cfg.to_dict(), manifest)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def report_json(bundle: ReportBundle) -> str:
    return json.dumps(bundle.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


SUMMARY_FIELDS = ("seed", "task", "family", "budget", "status", "teacher_accuracy",
                  "student_accuracy", "dK", "dR", "outcome", "burden_violation_rate",
                  "feasibility_violation_rate", "discrepancy")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def summary_rows(bundle: ReportBundle) -> List[dict]:
    rows = []
    budgets = bundle.config["distill"]["budgets"]
    for r in bundle.records:
        for fam in FAMILIES:
            if r["status"] != "ok":
                for b in budgets:
                    rows.append({"seed": r["seed"], "task": r["task"], "family": fam,
                                 "budget": b, "status": "failed"})
                continue
            for a in r["students"][fam]:
                rows.append({
                    "seed": r["seed"], "task": r["task"], "family": fam, "budget": a["budget"],
                    "status": "ok", "teacher_accuracy": r["teachers"][fam]["accuracy"],
                    "student_accuracy": a["accuracy"], "dK": a["dK"], "dR": a["dR"],
                    "outcome": "|".join(a["outcome"]),
                    "burden_violation_rate": a["profile"]["burden_violation_rate"],
                    "feasibility_violation_rate": a["profile"]["feasibility_violation_rate"],
                    "discrepancy": a["discrepancy"]})
    return rows


HYPOTHESIS_FIELDS = ("task", "seed", "hypothesis", "statistic", "value")


def hypothesis_rows(bundle: ReportBundle) -> List[dict]:
    rows = []
    for r in bundle.records:
        if r["status"] != "ok":
            continue
        for h, stats in sorted(r["hypotheses"].items()):
            for k, v in sorted(stats.items()):
                rows.append({"task": r["task"], "seed": r["seed"], "hypothesis": h,
                             "statistic": k, "value": v})
    for kind, entry in bundle.pooled.items():
        for h, stats in sorted(entry["hypotheses"].items()):
            for k, v in sorted(stats.items()):
                rows.append({"task": kind, "seed": "pooled", "hypothesis": h,
                             "statistic": k, "value": v})
    return rows


def _write_csv(path: Path, fields, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in fields})
    path.write_text(buf.getvalue())


def emit_report(bundle: ReportBundle, fmt: str, out) -> List[Path]:
    """Write ``report.json`` (``fmt="json"``) or the two CSV tables (``fmt="csv"``)."""
    if not bundle.records:
        raise ValueError("refusing to emit a report with no seed records")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from None
    if fmt == "json":
        path = out / "report.json"
        path.write_text(report_json(bundle))
        return [path]
    if fmt == "csv":
        s, h = out / "summary.csv", out / "hypotheses.csv"
        _write_csv(s, SUMMARY_FIELDS, summary_rows(bundle))
        _write_csv(h, HYPOTHESIS_FIELDS, hypothesis_rows(bundle))
        return [s, h]
    raise ValueError(f"unknown report format {fmt!r}")
