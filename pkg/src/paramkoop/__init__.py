"""Parametric Koopman decompositions learned from trajectory data.

The package trains a state dictionary jointly with a parameter-dependent
lifted evolution matrix, then uses the learned model for multi-step
prediction, receding-horizon tracking control, and controllability
diagnosis. Baseline operator families (constant, affine-in-control,
bilinear, polynomial-expansion) are included for comparison.
"""

from .autodiff import NonFiniteError, Tensor, gradient, value_and_grad
from .networks import NetworkSpec, forward, forward_batch, init_params
from .optim import AdamState, BoxBounds, adam_init, adam_step, minimize_box

__all__ = [
    "NonFiniteError",
    "Tensor",
    "gradient",
    "value_and_grad",
    "NetworkSpec",
    "forward",
    "forward_batch",
    "init_params",
    "AdamState",
    "BoxBounds",
    "adam_init",
    "adam_step",
    "minimize_box",
]

__version__ = "0.1.0"
