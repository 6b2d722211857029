"""Minimal float64 tensor library with reverse-mode autodiff."""
from .core import Tensor, as_tensor, backward, graph_nodes
from .optim import AdamState, adam_step
from . import ops

__all__ = ["Tensor", "as_tensor", "backward", "graph_nodes", "AdamState", "adam_step", "ops"]
