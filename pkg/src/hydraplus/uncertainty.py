"""Predictive / aleatoric / epistemic decomposition over ensemble members.

The member axis is always axis 0, so both a single input ``(S, K)`` and a
batch ``(S, B, K)`` are accepted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .exceptions import NumericError, ShapeError


@dataclass(frozen=True)
class UncertaintyTriple:
    """``predictive == aleatoric + epistemic`` holds exactly."""

    predictive: np.ndarray | float
    aleatoric: np.ndarray | float
    epistemic: np.ndarray | float

    def as_dict(self):
        return {"predictive": self.predictive, "aleatoric": self.aleatoric, "epistemic": self.epistemic}


KINDS = ("predictive", "aleatoric", "epistemic")


def entropy(probs, axis=-1):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    return entr(np.asarray(probs, dtype=np.float64)).sum(axis=axis)


def _scalar(a):
    return float(a) if np.ndim(a) == 0 else a


def decompose_classification(member_probs):
    probs = np.asarray(member_probs, dtype=np.float64)
    if probs.ndim < 2:
        raise ShapeError("expected (members, ..., classes) probabilities")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-6) or np.any(probs < 0):
        raise NumericError("member rows are not probability vectors")
    total = entropy(probs.mean(axis=0))
    aleatoric = entropy(probs).mean(axis=0)
    epistemic = total - aleatoric
    # re-add so the identity is exact in floating point
    predictive = aleatoric + epistemic
    return UncertaintyTriple(_scalar(predictive), _scalar(aleatoric), _scalar(epistemic))


def aggregate_gaussian(means, variances):
    """Mixture moments of member Gaussians along axis 0.

    Returns ``(mean, aleatoric, epistemic)`` where aleatoric is the mean
    variance and epistemic the population variance of the means.  Works on
    numpy arrays and autograd tensors alike.
    """
    mean = means.mean(axis=0)
    diff = means - mean
    return mean, variances.mean(axis=0), (diff * diff).mean(axis=0)


def decompose_regression(means, variances):
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if means.shape != variances.shape or means.ndim < 1:
        raise ShapeError("means and variances must share a (members, ...) shape")
    if np.any(variances <= 0):
        raise NumericError("variances must be positive")
    _, aleatoric, epistemic = aggregate_gaussian(means, variances)
    return UncertaintyTriple(_scalar(aleatoric + epistemic), _scalar(aleatoric), _scalar(epistemic))


def decompose(outputs):
    """Decompose a :class:`~hydraplus.models.MemberOutputs`."""
    if outputs.task == "classification":
        return decompose_classification(outputs.probs)
    return decompose_regression(outputs.means, outputs.variances)
