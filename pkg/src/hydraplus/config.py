"""JSON experiment configuration.

Example (every key but ``task`` is optional; omitted values come from the
toy presets)::

    {
      "task": "classification",
      "seed": 0,
      "preset": "hydra-plus",
      "n_members": 20,
      "n_heads": 20,
      "loss": {"alpha": 0.9, "beta": 0.5},
      "lambda_schedule": {"kind": "constant", "value": 4.0},
      "out": "runs/spiral",
      "grid_resolution": 61,
      "hist_bins": 50,
      "export": {"grid": true, "histograms": true, "log": true},
      "ablation": {"betas": [1.0, 0.5], "lambda_on": [false, true], "heads": [20, 10, 5]}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .exceptions import ConfigError
from .losses import LossConfig
from .training import PRESETS, LambdaSchedule, RunConfig, toy_config

RUN_KEYS = {
    "seed", "data_seed", "epochs", "batch_size", "lr", "teacher_weight_decay",
    "n_members", "n_heads", "head_layers", "clip_norm", "teacher_widths",
}
TOP_KEYS = RUN_KEYS | {
    "task", "preset", "loss", "lambda_schedule", "out", "grid_resolution", "hist_bins", "export", "ablation",
}
LOSS_KEYS = {"alpha", "beta", "t_ind", "t_mean", "weight_decay"}
EXPORT_KEYS = {"grid", "histograms", "log"}
ABLATION_KEYS = {"betas", "lambda_on", "heads"}


@dataclass(frozen=True)
class Ablation:
    betas: tuple = (1.0, 0.5)
    lambda_on: tuple = (False, True)
    heads: tuple = (20, 10, 5)

    @property
    def empty(self):
        return not (self.betas and self.lambda_on) and not self.heads


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig
    preset: str = "hydra-plus"
    out: str = "runs"
    grid_resolution: int = 61
    hist_bins: int = 50
    export: dict = field(default_factory=lambda: {"grid": True, "histograms": True, "log": True})
    ablation: Ablation = field(default_factory=Ablation)

    def to_dict(self):
        return {
            "run": self.run.to_dict(),
            "preset": self.preset,
            "out": self.out,
            "grid_resolution": self.grid_resolution,
            "hist_bins": self.hist_bins,
            "export": dict(self.export),
            "ablation": {
                "betas": list(self.ablation.betas),
                "lambda_on": list(self.ablation.lambda_on),
                "heads": list(self.ablation.heads),
            },
        }


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _positive_int(d, key, default):
    v = d.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"{key} must be a positive integer")
    return v


def parse_config(d):
    """Validate a decoded JSON object and build an :class:`ExperimentConfig`."""
    _reject_unknown(d, TOP_KEYS, "config")
    if "task" not in d:
        raise ConfigError("config needs a 'task'")
    preset = d.get("preset", "hydra-plus")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}")
    run_kw = {k: d[k] for k in RUN_KEYS - {"n_heads"} if k in d}
    try:
        # preset defaults first, then every override at once so validation sees the final values
        base = toy_config(d["task"], d.get("n_heads", 20), preset)
        if "loss" in d:
            _reject_unknown(d["loss"], LOSS_KEYS, "loss")
            run_kw["loss"] = LossConfig(**{**base.loss.to_dict(), **d["loss"]})
        if "lambda_schedule" in d:
            _reject_unknown(d["lambda_schedule"], {"kind", "value", "start", "end", "peak"}, "lambda_schedule")
            run_kw["lambda_schedule"] = LambdaSchedule.from_dict(d["lambda_schedule"])
        run = replace(base, **run_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    export = {"grid": True, "histograms": True, "log": True}
    if "export" in d:
        _reject_unknown(d["export"], EXPORT_KEYS, "export")
        export.update({k: bool(v) for k, v in d["export"].items()})
    ablation = Ablation()
    if "ablation" in d:
        a = d["ablation"]
        _reject_unknown(a, ABLATION_KEYS, "ablation")
        ablation = Ablation(
            betas=tuple(float(b) for b in a.get("betas", ablation.betas)),
            lambda_on=tuple(bool(x) for x in a.get("lambda_on", ablation.lambda_on)),
            heads=tuple(int(m) for m in a.get("heads", ablation.heads)),
        )
        for b in ablation.betas:
            if not 0.0 <= b <= 1.0:
                raise ConfigError("ablation betas must lie in [0, 1]")
        for m in ablation.heads:
            if not 2 <= m <= run.n_members:
                raise ConfigError(f"ablation head count {m} outside [2, N={run.n_members}]")
    out = d.get("out", "runs")
    if not isinstance(out, str) or not out:
        raise ConfigError("out must be a non-empty path")
    grid_resolution = _positive_int(d, "grid_resolution", 61)
    if grid_resolution < 2:
        raise ConfigError("grid_resolution must be >= 2")
    return ExperimentConfig(
        run=run,
        preset=preset,
        out=out,
        grid_resolution=grid_resolution,
        hist_bins=_positive_int(d, "hist_bins", 50),
        export=export,
        ablation=ablation,
    )


def load_config(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)
