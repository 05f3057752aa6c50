"""Small numpy autodiff core: tensors, ops, Adam and checkpoints."""

from . import ops
from .optim import Adam
from .params import ModelParams, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad, parameter

__all__ = ["ops", "Adam", "ModelParams", "load_checkpoint", "save_checkpoint", "Tensor", "no_grad", "parameter"]
