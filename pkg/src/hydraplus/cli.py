"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from .config import load_config
from .datasets import make_dataset, make_eval_grid, write_dataset_csv
from .exceptions import ConfigError, NumericError, TrainingError
from .losses import teachers_per_head
from .models import load_checkpoint, save_checkpoint
from .training import (
    LambdaSchedule,
    apply_preset,
    distill_student,
    evaluate,
    read_reference,
    toy_lambda,
    train_teacher,
    write_json,
    write_log,
    write_report,
)

logger = logging.getLogger("hydraplus")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load(args):
    try:
        exp = load_config(args.config)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {args.config}", EXIT_CONFIG) from exc
    run = exp.run
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    if getattr(args, "heads", None) is not None:
        run = replace(run, n_heads=args.heads, lambda_schedule=toy_lambda(run.task, args.heads))
    if getattr(args, "preset", None) is not None:
        run = apply_preset(run, args.preset)
        exp = replace(exp, preset=args.preset)
    exp = replace(exp, run=run)
    out = args.out or exp.out
    os.makedirs(out, exist_ok=True)
    return exp, out


def _sidecar(out, command, exp, started):
    """Timestamps live only here so every other output is reproducible."""
    write_json(
        os.path.join(out, f"run_{command}.json"),
        {
            "command": command,
            "version": __version__,
            "started": started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "config": exp.to_dict(),
        },
    )


def _load_model(path, task=None):
    if not os.path.isfile(path):
        raise CliError(f"checkpoint not found: {path}", EXIT_IO)
    model, manifest = load_checkpoint(path)
    if task is not None and model.task != task:
        raise CliError(f"{path} holds a {model.task} model but the config task is {task}", EXIT_CONFIG)
    return model, manifest


def _teacher(exp, out, data):
    train, val, _ = data
    teacher, log = train_teacher(exp.run, train, val)
    save_checkpoint(os.path.join(out, "teacher.ckpt"), teacher, {"seed": exp.run.seed, "run": exp.run.to_dict()})
    if exp.export["log"]:
        write_log(os.path.join(out, "teacher_log.jsonl"), log)
    return teacher


def _distill(teacher, run, out, data, name="student"):
    train, val, _ = data
    student, log = distill_student(teacher, run, train, val)
    extra = {
        "seed": run.seed,
        "run": run.to_dict(),
        "teachers_per_head": teachers_per_head(len(teacher), run.n_heads).tolist(),
    }
    save_checkpoint(os.path.join(out, f"{name}.ckpt"), student, extra)
    write_log(os.path.join(out, "distill_log.jsonl"), log)
    return student


def _evaluate(model, exp, out, test, reference=None):
    grid = make_eval_grid(model.task, exp.grid_resolution) if exp.export["grid"] else None
    report = evaluate(model, test, grid, exp.hist_bins, reference)
    if not exp.export["histograms"]:
        report.histograms, report.reference_histograms = {}, {}
    write_report(report, out)
    return report


def cmd_train_teacher(args):
    exp, out = _load(args)
    data = make_dataset(exp.run.task, exp.run.data_seed)
    _teacher(exp, out, data)
    return exp, out


def cmd_distill(args):
    exp, out = _load(args)
    teacher, _ = _load_model(args.teacher, exp.run.task)
    run = replace(exp.run, n_members=len(teacher))
    run.check_heads()
    _distill(teacher, run, out, make_dataset(run.task, run.data_seed))
    return exp, out


def cmd_evaluate(args):
    exp, out = _load(args)
    model, _ = _load_model(args.model, exp.run.task)
    _, _, test = make_dataset(exp.run.task, exp.run.data_seed)
    reference = None
    if args.reference:
        if os.path.isdir(args.reference):
            try:
                reference = read_reference(args.reference)
            except OSError as exc:
                raise CliError(f"cannot read reference report: {exc}", EXIT_IO) from exc
        else:
            ref_model, _ = _load_model(args.reference, exp.run.task)
            reference = evaluate(ref_model, test, None, exp.hist_bins)
    _evaluate(model, exp, out, test, reference)
    return exp, out


def ablation_cells(exp):
    """``(name, RunConfig)`` for the beta x lambda grid and the head-count sweep."""
    base = exp.run
    cells = []
    for beta in exp.ablation.betas:
        for on in exp.ablation.lambda_on:
            schedule = base.lambda_schedule if on else LambdaSchedule.constant(0.0)
            run = replace(base, loss=replace(base.loss, beta=beta), lambda_schedule=schedule)
            cells.append((f"beta{beta:g}_lambda{'on' if on else 'off'}", run))
    for m in exp.ablation.heads:
        run = replace(base, n_heads=m, lambda_schedule=toy_lambda(base.task, m))
        if exp.preset == "hydra":
            run = apply_preset(run, "hydra")
        cells.append((f"heads{m}", run))
    return cells


def cmd_ablate(args):
    exp, out = _load(args)
    cells = ablation_cells(exp)
    if not cells:
        logger.info("empty sweep; nothing to do")
        return exp, out
    data = make_dataset(exp.run.task, exp.run.data_seed)
    if args.teacher:
        teacher, _ = _load_model(args.teacher, exp.run.task)
    else:
        teacher = _teacher(exp, out, data)
    teacher_dir = os.path.join(out, "teacher_report")
    teacher_report = _evaluate(teacher, exp, teacher_dir, data[2])
    summary = []
    for name, run in cells:
        run = replace(run, n_members=len(teacher))
        run.check_heads()
        cell_dir = os.path.join(out, name)
        os.makedirs(cell_dir, exist_ok=True)
        student = _distill(teacher, run, cell_dir, data)
        report = _evaluate(student, exp, cell_dir, data[2], teacher_report)
        summary.append({"cell": name, "n_heads": run.n_heads, "beta": run.loss.beta,
                        "lambda_schedule": run.lambda_schedule.to_dict(), "metrics": report.metrics, "tv": report.tv})
    write_json(os.path.join(out, "ablation.json"), summary)
    return exp, out


def cmd_dump_dataset(args):
    exp, out = _load(args)
    write_dataset_csv(os.path.join(out, "dataset.csv"), make_dataset(exp.run.task, exp.run.data_seed))
    return exp, out


def build_parser():
    parser = argparse.ArgumentParser(prog="hydraplus", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        if seed:
            p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("train-teacher", help="train the deep-ensemble teacher")
    common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill a teacher checkpoint into a multi-head student")
    common(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--heads", type=int, help="number of student heads M")
    p.add_argument("--preset", choices=["hydra", "hydra-plus"])
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="metrics, grid uncertainty and histograms for a checkpoint")
    common(p, seed=False)
    p.add_argument("--model", required=True, help="checkpoint to evaluate")
    p.add_argument("--reference", help="reference checkpoint or report directory for total variation")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="beta x lambda grid and head-count sweep")
    common(p)
    p.add_argument("--teacher", help="reuse a trained teacher checkpoint")
    p.add_argument("--preset", choices=["hydra", "hydra-plus"])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-dataset", help="write the toy dataset splits to CSV")
    common(p, seed=False)
    p.set_defaults(func=cmd_dump_dataset)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        exp, out = args.func(args)
        _sidecar(out, args.command, exp, started)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
