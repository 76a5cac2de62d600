"""Autodiff, loss primitives and the Adam optimizer."""

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .functional import finite_diff_grad, kl_div, relative_error, softmax
from .optim import AdamState, adam_step

__all__ = [
    "ad",
    "Tensor",
    "backward",
    "no_grad",
    "softmax",
    "kl_div",
    "finite_diff_grad",
    "relative_error",
    "AdamState",
    "adam_step",
]
