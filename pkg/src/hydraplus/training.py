"""Teacher training, one-session student distillation and evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .datasets import make_eval_grid
from .exceptions import ConfigError, TrainingError
from .losses import (
    LossConfig,
    l1_classification,
    l1_regression,
    l2_classification,
    l2_regression,
    l3_classification,
    l3_regression,
    l4_diversity,
    teachers_per_head,
    total_loss,
)
from .metrics import (
    build_histogram,
    ece,
    error_rate,
    histogram_rows,
    nll_gaussian,
    shared_range,
    total_variation,
)
from .models import (
    TOY_TEACHER_WIDTHS,
    EnsembleTeacher,
    Mlp,
    MlpSpec,
    MultiHeadNet,
    MultiHeadSpec,
    combine_predictions,
    count_flops,
    count_params,
    predict_members,
)
from .nn import AdamState, adam_step, clip_global_norm, cosine_lr, weight_decay_term
from .uncertainty import KINDS, decompose

logger = logging.getLogger(__name__)


# -- lambda schedule --------------------------------------------------------


@dataclass(frozen=True)
class LambdaSchedule:
    """Constant weight, or a linear ramp from 0 at ``start`` to ``peak`` at ``end``."""

    kind: str = "constant"
    value: float = 0.0
    start: int = 0
    end: int = 0
    peak: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.value < 0:
                raise ConfigError("lambda must be non-negative")
        elif self.kind == "ramp":
            if not 0 <= self.start < self.end:
                raise ConfigError("ramp needs 0 <= start < end")
            if self.peak < 0:
                raise ConfigError("lambda must be non-negative")
        else:
            raise ConfigError(f"unknown lambda schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def ramp(cls, start, end, peak):
        return cls("ramp", start=int(start), end=int(end), peak=float(peak))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", "constant")
        allowed = {"constant": {"value"}, "ramp": {"start", "end", "peak"}}.get(kind)
        if allowed is None:
            raise ConfigError(f"unknown lambda schedule kind {kind!r}")
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown lambda schedule keys {sorted(unknown)}")
        return cls(kind, **d)

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": "ramp", "start": self.start, "end": self.end, "peak": self.peak}


def lambda_at(schedule, epoch):
    if schedule.kind == "constant":
        return schedule.value
    if epoch <= schedule.start:
        return 0.0
    if epoch >= schedule.end:
        return schedule.peak
    return schedule.peak * (epoch - schedule.start) / (schedule.end - schedule.start)


# -- configuration ----------------------------------------------------------

# Toy hyperparameters per task; lambda values keyed by head count.
TOY_SETTINGS = {
    "classification": {
        "lr": 0.01,
        "teacher_weight_decay": 1e-4,
        "loss": LossConfig(alpha=0.9, beta=0.5, t_ind=3.0, t_mean=1.0, weight_decay=1e-8),
        "lambdas": {20: LambdaSchedule.constant(4.0), 10: LambdaSchedule.constant(7.0), 5: LambdaSchedule.constant(9.0)},
    },
    "regression": {
        "lr": 0.05,
        "teacher_weight_decay": 1e-5,
        "loss": LossConfig(alpha=0.9, beta=0.5, t_ind=1.0, t_mean=1.0, weight_decay=1e-8),
        "lambdas": {
            20: LambdaSchedule.ramp(50, 150, 2e-3),
            10: LambdaSchedule.ramp(50, 150, 0.02),
            5: LambdaSchedule.ramp(50, 150, 0.6),
        },
    },
}

PRESETS = ("hydra-plus", "hydra")


def toy_lambda(task, n_heads):
    """Lambda schedule for ``n_heads``; unlisted counts use the nearest listed one."""
    table = TOY_SETTINGS[task]["lambdas"]
    nearest = min(table, key=lambda m: (abs(m - n_heads), m))
    return table[nearest]


@dataclass(frozen=True)
class RunConfig:
    task: str
    seed: int = 0
    data_seed: int = 0
    epochs: int = 200
    batch_size: int = 256
    lr: float = 0.01
    teacher_weight_decay: float = 1e-4
    n_members: int = 20
    n_heads: int = 20
    head_layers: int = 2
    clip_norm: float = 5.0
    teacher_widths: tuple = ()
    loss: LossConfig = field(default_factory=LossConfig)
    lambda_schedule: LambdaSchedule = field(default_factory=LambdaSchedule)

    def __post_init__(self):
        if self.task not in TOY_TEACHER_WIDTHS:
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.teacher_widths:
            object.__setattr__(self, "teacher_widths", TOY_TEACHER_WIDTHS[self.task])
        object.__setattr__(self, "teacher_widths", tuple(int(w) for w in self.teacher_widths))
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch size must be positive")
        if self.n_members < 1:
            raise ConfigError("need at least one teacher member")
        if self.n_heads < 2:
            raise ConfigError(f"a multi-head student needs M >= 2, got M={self.n_heads}")
        if not 1 <= self.head_layers < len(self.teacher_widths) - 1:
            raise ConfigError("head_layers must leave at least one core layer")
        if self.lr <= 0 or self.clip_norm <= 0 or self.teacher_weight_decay < 0:
            raise ConfigError("lr and clip_norm must be positive, weight decay non-negative")
        s = self.lambda_schedule
        if s.kind == "ramp" and s.end > self.epochs:
            raise ConfigError("lambda ramp must end within the epoch budget")

    @property
    def teacher_spec(self):
        return MlpSpec(self.teacher_widths, self.task)

    @property
    def student_spec(self):
        w = self.teacher_widths
        k = self.head_layers
        return MultiHeadSpec(w[: len(w) - k], w[len(w) - k - 1 :], self.n_heads, self.task)

    def check_heads(self):
        """Distillation needs ``M <= N``; teacher-only runs may use fewer members."""
        if self.n_heads > self.n_members:
            raise ConfigError(f"need 2 <= M <= N, got M={self.n_heads}, N={self.n_members}")

    def to_dict(self):
        d = asdict(self)
        d["teacher_widths"] = list(self.teacher_widths)
        d["loss"] = self.loss.to_dict()
        d["lambda_schedule"] = self.lambda_schedule.to_dict()
        return d


def toy_config(task, n_heads=20, preset="hydra-plus", **overrides):
    """Toy-experiment settings; ``preset='hydra'`` gives alpha = beta = 1, lambda = 0."""
    if task not in TOY_SETTINGS:
        raise ConfigError(f"unknown task {task!r}")
    s = TOY_SETTINGS[task]
    loss, schedule = s["loss"], toy_lambda(task, n_heads)
    if preset == "hydra":
        loss = replace(loss, alpha=1.0, beta=1.0)
        schedule = LambdaSchedule.constant(0.0)
    elif preset != "hydra-plus":
        raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    base = dict(
        task=task,
        lr=s["lr"],
        teacher_weight_decay=s["teacher_weight_decay"],
        n_heads=n_heads,
        loss=loss,
        lambda_schedule=schedule,
    )
    base.update(overrides)
    return RunConfig(**base)


def apply_preset(cfg, preset):
    """Swap loss weights and lambda for a named preset, keeping everything else."""
    ref = toy_config(cfg.task, cfg.n_heads, preset)
    loss = replace(cfg.loss, alpha=ref.loss.alpha, beta=ref.loss.beta)
    return replace(cfg, loss=loss, lambda_schedule=ref.lambda_schedule)


# -- training loop ----------------------------------------------------------


def _run_epochs(store, n_examples, cfg, seed, step, epoch_end, log_extra=None):
    """Mini-batch Adam with per-epoch cosine LR and global-norm clipping."""
    state = AdamState()
    log = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
        order = np.random.default_rng([seed, epoch]).permutation(n_examples)
        sums = {}
        for start in range(0, n_examples, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            store.zero_grad()
            loss, parts = step(idx, epoch)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            clip_global_norm(store, cfg.clip_norm)
            adam_step(store, state, lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v) * len(idx)
        record = {"epoch": epoch, "lr": lr}
        if log_extra:
            record.update(log_extra)
        record.update({k: v / n_examples for k, v in sums.items()})
        record.update(epoch_end(epoch))
        log.append(record)
    return log


def _validation_metric(model, val):
    if val is None:
        return {}
    out = predict_members(model, val.inputs)
    if out.task == "classification":
        return {"val_error": error_rate(combine_predictions(out), val.targets)}
    mean, var = combine_predictions(out)
    return {"val_nll": nll_gaussian(mean, var, val.targets)}


def _teacher_loss(member, x, y, weight_decay):
    raw = member.forward(Tensor(x))
    if member.task == "classification":
        fit = l1_classification(ag.softmax(raw)[None], y)
    else:
        fit = l1_regression(raw[:, 0][None], ag.exp(raw[:, 1])[None], y)
    return fit + weight_decay_term(member.params, weight_decay), fit


def train_teacher(cfg, train, val=None):
    """Train ``cfg.n_members`` networks independently from seeds ``seed + n``.

    Returns the ensemble and a list of per-epoch records (tagged by member).
    """
    spec = cfg.teacher_spec
    x, y = train.inputs, train.targets
    members, seeds, log = [], [], []
    for n in range(cfg.n_members):
        member_seed = cfg.seed + n
        member = Mlp.build(spec, member_seed)

        def step(idx, epoch, member=member):
            loss, fit = _teacher_loss(member, x[idx], y[idx], cfg.teacher_weight_decay)
            return loss, {"loss": fit.item(), "total": loss.item()}

        def epoch_end(epoch, member=member):
            return _validation_metric(member, val)

        try:
            log += _run_epochs(member.params, len(x), cfg, member_seed, step, epoch_end, {"member": n})
        except TrainingError as exc:
            raise TrainingError(f"teacher member {n}: {exc}") from exc
        logger.info("trained teacher member %d/%d", n + 1, cfg.n_members)
        members.append(member)
        seeds.append(member_seed)
    return EnsembleTeacher(spec, members, seeds), log


@dataclass(frozen=True)
class TeacherCache:
    """Frozen teacher outputs on the training inputs."""

    logits: np.ndarray | None = None
    means: np.ndarray | None = None
    variances: np.ndarray | None = None

    @classmethod
    def from_teacher(cls, teacher, x):
        raw = teacher.member_raw(x)
        if teacher.task == "classification":
            return cls(logits=raw)
        return cls(means=raw[..., 0].copy(), variances=np.exp(raw[..., 1]))


def distillation_parts(student, cache, idx, x, y, cfg, epoch):
    """Loss components and their weighted total for one mini-batch."""
    raw = student.forward(Tensor(x))
    lc = cfg.loss
    if student.task == "classification":
        t = cache.logits[:, idx]
        l1 = l1_classification(ag.softmax(raw), y)
        l2 = l2_classification(t, raw, lc.t_mean)
        l3 = l3_classification(t, raw, lc.t_ind)
    else:
        mu, var = raw[..., 0], ag.exp(raw[..., 1])
        tm, tv = cache.means[:, idx], cache.variances[:, idx]
        l1 = l1_regression(mu, var, y)
        l2 = l2_regression(tm, tv, mu, var)
        l3 = l3_regression(tm, tv, mu, var)
    l4 = l4_diversity(student.head_weights())
    lam = lambda_at(cfg.lambda_schedule, epoch)
    wd = weight_decay_term(student.params, lc.weight_decay)
    total = total_loss(lc, l1, l2, l3, l4, lam, wd)
    parts = {"l1": l1.item(), "l2": l2.item(), "l3": l3.item(), "l4": l4.item(), "weight_decay": wd.item()}
    return total, parts, lam


def distill_student(teacher, cfg, train, val=None):
    """Train a fresh multi-head student against the frozen teacher in one session."""
    if teacher.task != cfg.task:
        raise ConfigError(f"teacher task {teacher.task!r} != config task {cfg.task!r}")
    if cfg.n_heads > len(teacher):
        raise ConfigError(f"M={cfg.n_heads} heads exceed N={len(teacher)} teachers")
    student = MultiHeadNet.build(cfg.student_spec, cfg.seed)
    x, y = train.inputs, train.targets
    cache = TeacherCache.from_teacher(teacher, x)
    per_head = teachers_per_head(len(teacher), cfg.n_heads).tolist()

    def step(idx, epoch):
        total, parts, lam = distillation_parts(student, cache, idx, x[idx], y[idx], cfg, epoch)
        parts["total"] = total.item()
        return total, parts

    def epoch_end(epoch):
        out = {"lambda": lambda_at(cfg.lambda_schedule, epoch)}
        out.update(_validation_metric(student, val))
        return out

    log = _run_epochs(student.params, len(x), cfg, cfg.seed, step, epoch_end, {"teachers_per_head": per_head})
    return student, log


# -- evaluation -------------------------------------------------------------


@dataclass
class Report:
    task: str
    metrics: dict
    grid: np.ndarray
    grid_uncertainty: dict
    test_uncertainty: dict
    grid_mean: np.ndarray | None = None
    histograms: dict = field(default_factory=dict)
    reference_histograms: dict = field(default_factory=dict)
    tv: dict | None = None


def _triple_arrays(triple):
    return {k: np.atleast_1d(np.asarray(v, dtype=np.float64)) for k, v in triple.as_dict().items()}


def evaluate(model, test, grid=None, bins=50, reference=None):
    """Test metrics, per-grid-point uncertainty and uncertainty histograms.

    ``reference`` is another :class:`Report` (or a mapping of test-set
    uncertainty arrays); when given, both sides are binned on the union of
    their ranges and total variation is reported per kind.
    """
    if reference is not None:
        ref_task = reference.task if isinstance(reference, Report) else None
        if ref_task is not None and ref_task != model.task:
            raise ConfigError("reference report is for a different task")
    task = model.task
    out = predict_members(model, test.inputs)
    metrics = {"param_count": count_params(model), "flop_count": count_flops(model), "n_members": out.n_members}
    if task == "classification":
        probs = combine_predictions(out)
        metrics["error"] = error_rate(probs, test.targets)
        metrics["ece"] = ece(probs, test.targets, bins=10)
    else:
        mean, var = combine_predictions(out)
        metrics["nll"] = nll_gaussian(mean, var, test.targets)
    test_unc = _triple_arrays(decompose(out))

    grid_mean = None
    if grid is None:
        grid = np.empty((0, test.inputs.shape[1]))
        grid_unc = {k: np.empty(0) for k in KINDS}
    else:
        grid_out = predict_members(model, grid)
        grid_unc = _triple_arrays(decompose(grid_out))
        if task == "regression":
            grid_mean = combine_predictions(grid_out)[0]

    report = Report(task, metrics, np.asarray(grid), grid_unc, test_unc, grid_mean)
    ref_unc = None
    if reference is not None:
        ref_unc = reference.test_uncertainty if isinstance(reference, Report) else reference
        report.tv = {}
    for kind in KINDS:
        if ref_unc is None:
            report.histograms[kind] = build_histogram(test_unc[kind], bins)
            continue
        rng = shared_range(test_unc[kind], ref_unc[kind])
        report.histograms[kind] = build_histogram(test_unc[kind], bins, rng)
        report.reference_histograms[kind] = build_histogram(ref_unc[kind], bins, rng)
        report.tv[kind] = total_variation(report.histograms[kind], report.reference_histograms[kind])
    return report


def evaluate_toy(model, test, resolution, bins=50, reference=None):
    return evaluate(model, test, make_eval_grid(model.task, resolution), bins, reference)


# -- report files -----------------------------------------------------------


def _fmt(v):
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report(report, out_dir):
    """Write ``metrics.json``, ``grid.csv``, ``hist_<kind>.csv``,
    ``test_uncertainty.csv`` and, with a reference, ``tv.json``."""
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "metrics.json"), report.metrics)
    dim = report.grid.shape[1] if report.grid.ndim == 2 else 1
    coords = ["x"] if dim == 1 else [f"x{i + 1}" for i in range(dim)]
    g = report.grid_uncertainty
    if report.task == "regression":
        std = np.sqrt(g["predictive"])
        mean = report.grid_mean if report.grid_mean is not None else np.empty(0)
        header = coords + ["mean", "lower", "upper"] + list(KINDS)
        cols = [report.grid[:, i] for i in range(dim)] + [mean, mean - std, mean + std]
    else:
        header = coords + list(KINDS)
        cols = [report.grid[:, i] for i in range(dim)]
    cols += [g[k] for k in KINDS]
    _write_csv(os.path.join(out_dir, "grid.csv"), header, zip(*cols))
    _write_csv(
        os.path.join(out_dir, "test_uncertainty.csv"),
        list(KINDS),
        zip(*[report.test_uncertainty[k] for k in KINDS]),
    )
    for kind, h in report.histograms.items():
        rows = histogram_rows(h, report.reference_histograms.get(kind))
        _write_csv(os.path.join(out_dir, f"hist_{kind}.csv"), ["bin_left", "bin_right", "mass_a", "mass_b"], rows)
    if report.tv is not None:
        write_json(os.path.join(out_dir, "tv.json"), report.tv)


def read_reference(report_dir):
    """Test-set uncertainties previously written by :func:`write_report`."""
    path = os.path.join(report_dir, "test_uncertainty.csv")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in KINDS}


def write_log(path, records):
    """One JSON object per line."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
