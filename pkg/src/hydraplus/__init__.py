"""Uncertainty-aware distillation of deep ensembles into multi-head students."""

from .datasets import make_cubic_sine, make_eval_grid, make_spiral
from .losses import LossConfig
from .models import (
    EnsembleTeacher,
    MlpSpec,
    MultiHeadNet,
    MultiHeadSpec,
    build_student,
    combine_predictions,
    count_flops,
    count_params,
    student_forward,
)
from .training import LambdaSchedule, RunConfig, distill_student, evaluate, toy_config, train_teacher
from .uncertainty import UncertaintyTriple, decompose_classification, decompose_regression

__version__ = "0.1.0"
