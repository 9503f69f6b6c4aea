"""Discriminative clustering for unsupervised domain adaptation, on a small autodiff engine."""

from .autodiff import Tensor, backward, grad_check
from .model import AdaptationModel, predict, softmax_T
from .objectives import VARIANTS, LossBreakdown, Temperatures, Variant, total_loss
from .schedules import lambda_at, lr_at

__all__ = ["Tensor", "backward", "grad_check", "AdaptationModel", "predict", "softmax_T",
           "VARIANTS", "LossBreakdown", "Temperatures", "Variant", "total_loss",
           "lambda_at", "lr_at"]
__version__ = "0.1.0"
