"""Command-line entry point: ``burdenlab <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .distillation import distill, make_student
from .dynamics import DeployedModel
from .harness import (ConfigError, ExperimentConfig, ReportBundle, deploy_teacher, emit_report,
                      evaluate_model, load_config, output_dir, run_experiment, student_seed,
                      train_teacher)
from .tasks import SequenceTask
from .training import dump_params, load_params, metrics_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def cmd_train_teacher(args) -> int:
    cfg = _config(args.config)
    kind = args.task or cfg.tasks[0]
    if kind not in cfg.tasks and args.task is None:
        raise ConfigError(f"unknown task {kind!r}")
    params, history = train_teacher(cfg, kind, args.arm, args.seed)
    out = Path(args.out) if args.out else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"teacher_{args.arm}_{kind}_seed{args.seed}"
    enforcement = deploy_teacher(cfg, params, args.arm).enforcement
    dump_params(f"{stem}.json", params, cfg.constraint, args.seed, arm=args.arm,
                task=cfg.task(kind, args.seed).to_dict(), enforcement=enforcement)
    Path(f"{stem}_metrics.csv").write_text(metrics_csv(history))
    print(f"{stem}.json")
    return EXIT_OK


def _model_from(path):
    params, cfg, doc = load_params(path)
    if cfg is None or "task" not in doc:
        raise ConfigError(f"{path}: model document lacks its constraint config or task")
    task = SequenceTask(**doc["task"])
    model = DeployedModel(params, doc.get("enforcement", "soft"), cfg, name=Path(path).stem)
    return model, task, doc


def cmd_distill(args) -> int:
    cfg = _config(args.config)
    teacher, task, doc = _model_from(args.teacher)
    seed = doc.get("seed") or 0
    s_seed = student_seed(seed, args.budget)
    dcfg = replace(cfg.distill, budget=args.budget, optim=replace(cfg.distill.optim, seed=s_seed))
    student = make_student((teacher.params.n, teacher.params.d, teacher.params.v),
                           dcfg.shrink, s_seed)
    arm = distill(teacher, student, dcfg, task)
    out = Path(args.out) if args.out else Path(args.teacher).with_name(
        f"{Path(args.teacher).stem}_student_{args.budget}.json")
    dump_params(out, arm.student, teacher.cfg, seed, budget=args.budget, task=task.to_dict(),
                enforcement="soft", teacher=str(args.teacher))
    out.with_name(out.stem + "_arm.json").write_text(json.dumps(arm.to_dict(), sort_keys=True))
    print(out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args.config)
    model, task, doc = _model_from(args.model)
    cfg = replace(cfg, constraint=model.cfg, vocab=task.vocab, length=task.length,
                  delay=task.delay, modulus=task.modulus)
    ev = evaluate_model(cfg, model, task.kind, task.seed)
    ev["profile"] = ev["profile"].to_dict()
    print(json.dumps(ev, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else output_dir(cfg)
    bundle = run_experiment(cfg, out)
    for fmt in ("json", "csv"):
        for path in emit_report(bundle, fmt, out):
            print(path)
    failed = [r for r in bundle.records if r["status"] != "ok"]
    return EXIT_RUN if failed and len(failed) == len(bundle.records) else EXIT_OK


def cmd_report(args) -> int:
    bundle = ReportBundle.load(args.bundle)
    out = Path(args.out) if args.out else Path(args.bundle).parent
    for path in emit_report(bundle, args.format, out):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="burdenlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-teacher", help="train one teacher arm")
    s.add_argument("--config")
    s.add_argument("--arm", choices=("base", "cc"), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--task", choices=("copy", "parity", "modsum"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_teacher)

    s = sub.add_parser("distill", help="distill a student from a saved teacher")
    s.add_argument("--teacher", required=True)
    s.add_argument("--budget", type=int, required=True)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("evaluate", help="capability and stability profile of a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="run the full paired experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="re-emit a report bundle")
    s.add_argument("--bundle", required=True)
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
