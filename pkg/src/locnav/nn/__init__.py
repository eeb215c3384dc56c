"""Numpy networks for the navigation policy and value function."""

from .autograd import GraphReuseError, Tensor
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .network import Architecture, NavNet, forward_policy, forward_value, stack_observations
from .optim import Adam

__all__ = ["Adam", "Architecture", "Checkpoint", "CheckpointError", "GraphReuseError", "NavNet",
           "Tensor", "forward_policy", "forward_value", "load_checkpoint", "save_checkpoint",
           "stack_observations"]
