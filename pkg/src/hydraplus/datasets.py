"""Toy datasets: three interleaved spirals and a noisy cubic-plus-sine curve."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

SPLIT_SIZES = {"train": 240, "val": 30, "test": 30}
N_SPIRAL_CLASSES = 3
SPIRAL_JITTER = 0.05
CUBIC_RANGE = (-6.0, 6.0)


@dataclass(frozen=True)
class LabelledSet:
    """Inputs ``(n, d)`` with integer labels or float targets ``(n,)``."""

    inputs: np.ndarray
    targets: np.ndarray
    split: str

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")

    def __len__(self):
        return len(self.inputs)


def cubic_sine(x):
    """sin(x) - 0.1 x + 0.1 x^2 + 0.01 x^3"""
    x = np.asarray(x, dtype=np.float64)
    return np.sin(x) - 0.1 * x + 0.1 * x**2 + 0.01 * x**3


def _spiral_points(rng, n_per_class):
    xs, ys = [], []
    for k in range(N_SPIRAL_CLASSES):
        t = 1.0 - rng.random(n_per_class)  # (0, 1]
        theta = 3.0 * np.pi * t + 2.0 * np.pi * k / N_SPIRAL_CLASSES
        pts = np.column_stack([t * np.sin(theta), t * np.cos(theta)])
        xs.append(pts + rng.normal(0.0, SPIRAL_JITTER, size=pts.shape))
        ys.append(np.full(n_per_class, k, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def make_spiral(seed=0):
    """Three spirals from the origin, 240/30/30 points split evenly by class."""
    rng = np.random.default_rng(seed)
    sets = []
    for split, n in SPLIT_SIZES.items():
        x, y = _spiral_points(rng, n // N_SPIRAL_CLASSES)
        sets.append(LabelledSet(x, y, split))
    return tuple(sets)


def make_cubic_sine(seed=0):
    """1-D regression on [-6, 6]; N(0, 1) noise on the training targets only."""
    rng = np.random.default_rng(seed)
    sets = []
    for split, n in SPLIT_SIZES.items():
        x = rng.uniform(*CUBIC_RANGE, size=n)
        y = cubic_sine(x)
        if split == "train":
            y = y + rng.normal(0.0, 1.0, size=n)
        sets.append(LabelledSet(x.reshape(-1, 1), y, split))
    return tuple(sets)


def make_dataset(task, seed=0):
    if task == "classification":
        return make_spiral(seed)
    if task == "regression":
        return make_cubic_sine(seed)
    raise ConfigError(f"unknown task {task!r}")


def make_eval_grid(task, resolution):
    """Evaluation inputs: a 2-D grid on [-3, 3]^2 or a 1-D grid on [-9, 9].

    The 2-D grid is ordered with the first coordinate varying fastest.
    """
    if resolution < 2:
        raise ConfigError("grid resolution must be >= 2")
    if task == "classification":
        axis = np.linspace(-3.0, 3.0, resolution)
        g1, g2 = np.meshgrid(axis, axis)
        return np.column_stack([g1.ravel(), g2.ravel()])
    if task == "regression":
        return np.linspace(-9.0, 9.0, resolution).reshape(-1, 1)
    raise ConfigError(f"unknown task {task!r}")


def write_dataset_csv(path, sets):
    """Dump splits to CSV with header ``x1[,x2],target,split``."""
    dim = sets[0].inputs.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(dim)] + ["target", "split"])
        for s in sets:
            for x, t in zip(s.inputs, s.targets):
                target = int(t) if s.targets.dtype.kind == "i" else format(float(t), ".17g")
                writer.writerow([format(float(v), ".17g") for v in x] + [target, s.split])
