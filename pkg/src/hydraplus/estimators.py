"""scikit-learn compatible estimators wrapping teacher training and distillation.

    >>> teacher = DeepEnsembleClassifier(n_members=5, epochs=50).fit(X, y)
    >>> student = HydraClassifier(teacher, n_heads=5, epochs=50).fit(X, y)
    >>> student.predict_uncertainty(X_grid).epistemic
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import LabelledSet
from .losses import LossConfig
from .models import combine_predictions, count_flops, count_params, predict_members
from .training import LambdaSchedule, RunConfig, distill_student, train_teacher
from .uncertainty import decompose


def _as_schedule(value):
    if isinstance(value, LambdaSchedule):
        return value
    if isinstance(value, dict):
        return LambdaSchedule.from_dict(value)
    return LambdaSchedule.constant(float(value))


class _NetworkMixin:
    """Shared fit plumbing; subclasses set ``_task``."""

    _task = None

    def _validate_fit(self, X, y):
        if self._task == "classification":
            X, y = check_X_y(X, y, dtype=np.float64)
            check_classification_targets(y)
            self.classes_, y = np.unique(y, return_inverse=True)
            if len(self.classes_) < 2:
                raise ValueError("need at least two classes")
        else:
            X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        return X, y

    def _validate_predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def _output_width(self):
        return len(self.classes_) if self._task == "classification" else 2

    def member_outputs(self, X):
        """Per-member (or per-head) distributions, member axis first."""
        X = self._validate_predict(X)
        return predict_members(self.model_, X)

    def predict_uncertainty(self, X):
        """:class:`~hydraplus.uncertainty.UncertaintyTriple` of arrays, one entry per row."""
        return decompose(self.member_outputs(X))

    @property
    def n_params_(self):
        check_is_fitted(self, "model_")
        return count_params(self.model_)

    @property
    def n_flops_(self):
        check_is_fitted(self, "model_")
        return count_flops(self.model_)


class _ClassifierOutputs:
    def predict_proba(self, X):
        return combine_predictions(self.member_outputs(X))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class _RegressorOutputs:
    def predict_dist(self, X):
        """Combined ``(mean, predictive variance)``."""
        return combine_predictions(self.member_outputs(X))

    def predict(self, X, return_std=False):
        mean, var = self.predict_dist(X)
        return (mean, np.sqrt(var)) if return_std else mean


class _DeepEnsemble(_NetworkMixin, BaseEstimator):
    def __init__(
        self,
        hidden_layer_sizes=(100, 100, 100, 100),
        n_members=20,
        epochs=200,
        batch_size=256,
        learning_rate=0.01,
        weight_decay=1e-4,
        clip_norm=5.0,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.n_members = n_members
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        widths = (X.shape[1], *self.hidden_layer_sizes, self._output_width())
        if len(widths) < 3:
            raise ValueError("need at least one hidden layer")
        cfg = RunConfig(
            # the head split only matters for students; keep it valid for shallow nets
            head_layers=min(2, len(widths) - 2),
            task=self._task,
            seed=int(self.random_state),
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            teacher_weight_decay=self.weight_decay,
            n_members=self.n_members,
            clip_norm=self.clip_norm,
            teacher_widths=widths,
        )
        self.model_, self.history_ = train_teacher(cfg, LabelledSet(X, y, "train"))
        return self


class DeepEnsembleClassifier(_ClassifierOutputs, _DeepEnsemble, ClassifierMixin):
    """Deep ensemble of ReLU MLPs trained with cross-entropy."""

    _task = "classification"


class DeepEnsembleRegressor(_RegressorOutputs, _DeepEnsemble, RegressorMixin):
    """Deep ensemble of ReLU MLPs predicting a Gaussian mean and variance."""

    _task = "regression"

    def __init__(
        self,
        hidden_layer_sizes=(50, 50, 50),
        n_members=20,
        epochs=200,
        batch_size=256,
        learning_rate=0.05,
        weight_decay=1e-5,
        clip_norm=5.0,
        random_state=0,
    ):
        super().__init__(
            hidden_layer_sizes, n_members, epochs, batch_size, learning_rate, weight_decay, clip_norm, random_state
        )


class _Hydra(_NetworkMixin, BaseEstimator):
    def __init__(
        self,
        teacher,
        n_heads=20,
        head_layers=2,
        alpha=0.9,
        beta=0.5,
        t_ind=1.0,
        t_mean=1.0,
        lambda_schedule=0.0,
        epochs=200,
        batch_size=256,
        learning_rate=0.01,
        weight_decay=1e-8,
        clip_norm=5.0,
        random_state=0,
    ):
        self.teacher = teacher
        self.n_heads = n_heads
        self.head_layers = head_layers
        self.alpha = alpha
        self.beta = beta
        self.t_ind = t_ind
        self.t_mean = t_mean
        self.lambda_schedule = lambda_schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _fitted_teacher(self, X, y):
        try:
            check_is_fitted(self.teacher, "model_")
            return self.teacher
        except NotFittedError:
            return clone(self.teacher).fit(X, y)

    def fit(self, X, y):
        """Distill the (pre-fitted or freshly fitted) teacher into a multi-head student."""
        self.teacher_ = self._fitted_teacher(X, y)
        X, y_enc = self._validate_fit(X, y)
        if self._task == "classification" and not np.array_equal(self.classes_, self.teacher_.classes_):
            raise ValueError("student and teacher were fitted on different classes")
        ensemble = self.teacher_.model_
        cfg = RunConfig(
            task=self._task,
            seed=int(self.random_state),
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            n_members=len(ensemble),
            n_heads=self.n_heads,
            head_layers=self.head_layers,
            clip_norm=self.clip_norm,
            teacher_widths=ensemble.spec.widths,
            loss=LossConfig(self.alpha, self.beta, self.t_ind, self.t_mean, self.weight_decay),
            lambda_schedule=_as_schedule(self.lambda_schedule),
        )
        self.model_, self.history_ = distill_student(ensemble, cfg, LabelledSet(X, y_enc, "train"))
        return self

    def head_outputs(self, X):
        return self.member_outputs(X)


class HydraClassifier(_ClassifierOutputs, _Hydra, ClassifierMixin):
    """Shared-core multi-head student distilled from a :class:`DeepEnsembleClassifier`.

    Defaults follow the toy spiral settings (``t_ind=3``, ``lambda=4``).  Set
    ``alpha=beta=1`` and ``lambda_schedule=0`` for the plain Hydra baseline.
    """

    _task = "classification"

    def __init__(
        self,
        teacher,
        n_heads=20,
        head_layers=2,
        alpha=0.9,
        beta=0.5,
        t_ind=3.0,
        t_mean=1.0,
        lambda_schedule=4.0,
        epochs=200,
        batch_size=256,
        learning_rate=0.01,
        weight_decay=1e-8,
        clip_norm=5.0,
        random_state=0,
    ):
        super().__init__(
            teacher, n_heads, head_layers, alpha, beta, t_ind, t_mean, lambda_schedule,
            epochs, batch_size, learning_rate, weight_decay, clip_norm, random_state,
        )


class HydraRegressor(_RegressorOutputs, _Hydra, RegressorMixin):
    """Multi-head Gaussian student distilled from a :class:`DeepEnsembleRegressor`."""

    _task = "regression"

    def __init__(
        self,
        teacher,
        n_heads=20,
        head_layers=2,
        alpha=0.9,
        beta=0.5,
        t_ind=1.0,
        t_mean=1.0,
        lambda_schedule=LambdaSchedule.ramp(50, 150, 2e-3),
        epochs=200,
        batch_size=256,
        learning_rate=0.05,
        weight_decay=1e-8,
        clip_norm=5.0,
        random_state=0,
    ):
        super().__init__(
            teacher, n_heads, head_layers, alpha, beta, t_ind, t_mean, lambda_schedule,
            epochs, batch_size, learning_rate, weight_decay, clip_norm, random_state,
        )
