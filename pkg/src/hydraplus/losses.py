"""Distillation objective: correctness, aggregation, individuality, diversity.

Every loss takes the member axis first and an optional batch axis second,
averages over the batch, and returns a scalar :class:`Tensor`.  Additive
constants that do not depend on the student are dropped.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ConfigError, NumericError, ShapeError
from .uncertainty import aggregate_gaussian

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.9
    beta: float = 0.5
    t_ind: float = 1.0
    t_mean: float = 1.0
    weight_decay: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigError("alpha and beta must lie in [0, 1]")
        if self.t_ind < 1.0 or self.t_mean < 1.0:
            raise ConfigError("temperatures must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")

    def to_dict(self):
        return asdict(self)


def _batched(t, event_dims):
    """Insert a batch axis after the member axis for single-example input."""
    t = ag.as_tensor(t)
    if t.ndim == 1 + event_dims:
        return t.reshape((t.shape[0], 1) + t.shape[1:])
    if t.ndim != 2 + event_dims:
        raise ShapeError(f"unexpected shape {t.shape}")
    return t


def _check_positive(*tensors):
    for t in tensors:
        if np.any(ag.as_tensor(t).data <= 0):
            raise NumericError("variances must be positive")


def assignment(n_teachers, n_heads):
    """Head index for every teacher: ``n mod M``."""
    if n_heads > n_teachers:
        raise ConfigError(f"M={n_heads} heads exceed N={n_teachers} teachers")
    return np.arange(n_teachers) % n_heads


def teachers_per_head(n_teachers, n_heads):
    return np.bincount(assignment(n_teachers, n_heads), minlength=n_heads)


def l1_classification(student_probs, labels):
    """Mean over heads of the cross-entropy against the true label."""
    probs = _batched(student_probs, 1)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (probs.shape[1],):
        raise ShapeError("one label per example")
    picked = probs[:, np.arange(labels.size), labels]
    return -ag.clamped_log(picked, PROB_FLOOR).mean()


def l1_regression(means, variances, targets):
    """Gaussian NLL averaged over heads (constant dropped)."""
    mu, var = _batched(means, 0), _batched(variances, 0)
    _check_positive(var)
    y = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    r = mu - y
    return 0.5 * (r * r / var + ag.log(var)).mean()


def l2_classification(teacher_logits, student_logits, temperature=1.0):
    """Cross-entropy between the member-averaged teacher and student."""
    t = _batched(teacher_logits, 1)
    s = _batched(student_logits, 1)
    t_mean = ag.softmax(t, temperature=temperature).data.mean(axis=0)
    s_mean = ag.softmax(s, temperature=temperature).mean(axis=0)
    return -(ag.clamped_log(s_mean, PROB_FLOOR) * t_mean).sum(axis=-1).mean()


def gaussian_kl_part(t_mean, t_var, s_mean, s_var):
    """KL(N_t || N_s) without the terms constant in the student."""
    d = t_mean - s_mean
    return 0.5 * ((t_var + d * d) / s_var + ag.log(ag.as_tensor(s_var)))


def l2_regression(teacher_means, teacher_variances, student_means, student_variances):
    """KL between the aggregated teacher and aggregated student Gaussians."""
    tm, tv = _batched(teacher_means, 0), _batched(teacher_variances, 0)
    sm, sv = _batched(student_means, 0), _batched(student_variances, 0)
    _check_positive(tv, sv)
    t_mu, t_ale, t_epi = aggregate_gaussian(tm.data, tv.data)
    s_mu, s_ale, s_epi = aggregate_gaussian(sm, sv)
    return gaussian_kl_part(t_mu, t_ale + t_epi, s_mu, s_ale + s_epi).mean()


def l3_classification(teacher_logits, student_logits, temperature=1.0):
    """Teacher ``n`` is matched by head ``n mod M``."""
    t = _batched(teacher_logits, 1)
    s = _batched(student_logits, 1)
    heads = assignment(t.shape[0], s.shape[0])
    t_probs = ag.softmax(t, temperature=temperature).data
    s_log = ag.clamped_log(ag.softmax(s, temperature=temperature), PROB_FLOOR)
    ce = -(s_log[heads] * t_probs).sum(axis=-1)  # (N, B)
    return ce.mean()


def l3_regression(teacher_means, teacher_variances, student_means, student_variances):
    tm, tv = _batched(teacher_means, 0), _batched(teacher_variances, 0)
    sm, sv = _batched(student_means, 0), _batched(student_variances, 0)
    _check_positive(tv, sv)
    heads = assignment(tm.shape[0], sm.shape[0])
    return gaussian_kl_part(tm.data, tv.data, sm[heads], sv[heads]).mean()


def l4_diversity(head_weights):
    """Rescaled cosine similarity of each head's weights to the head mean.

    ``head_weights`` holds one ``(M, out, in)`` tensor per head layer.  Each
    node (row) is compared with the matching row of the mean weight; node
    cosines are averaged within a layer, mapped to ``(1 + cos) / 2`` and summed
    over layers and heads.  A cosine involving a near-zero vector counts as 0.
    """
    total = None
    for w in head_weights:
        w = ag.as_tensor(w)
        if w.ndim != 3 or w.shape[0] < 2:
            raise ShapeError("expected stacked (M >= 2, out, in) head weights")
        mean = w.mean(axis=0)
        dot = (w * mean).sum(axis=-1)  # (M, out)
        sq_w = (w * w).sum(axis=-1)
        sq_m = (mean * mean).sum(axis=-1)
        degenerate = (sq_w.data < NORM_FLOOR**2) | (sq_m.data < NORM_FLOOR**2)
        # swap in 1.0 before the sqrt so masked entries carry no inf gradient
        denom = ag.sqrt(ag.where(degenerate, 1.0, sq_w)) * ag.sqrt(ag.where(degenerate, 1.0, sq_m))
        cos = ag.where(degenerate, 0.0, dot / denom)
        term = (0.5 * (1.0 + cos.mean(axis=-1))).sum()
        total = term if total is None else total + term
    return total


def _coerce(x):
    return x if isinstance(x, Tensor) else float(x)


def total_loss(cfg, l1, l2, l3, l4, lam, weight_decay=0.0):
    """Weighted combination of the four parts, plus the weight-decay term.

    Distillation terms computed at temperature ``T > 1`` are rescaled by
    ``T ** 2``.
    """
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    s_mean = cfg.t_mean**2 if cfg.t_mean > 1 else 1.0
    s_ind = cfg.t_ind**2 if cfg.t_ind > 1 else 1.0
    l1, l2, l3, l4 = map(_coerce, (l1, l2, l3, l4))
    distill = (1.0 - cfg.beta) * s_mean * l2 + cfg.beta * s_ind * l3
    return (1.0 - cfg.alpha) * l1 + cfg.alpha * distill + lam * l4 + _coerce(weight_decay)
