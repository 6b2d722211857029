"""Tensor type and reverse-mode differentiation.

Every op result records its inputs and a backward closure. Node ids come
from a global counter, so ordering reachable nodes by decreasing id is a
valid reverse topological order.
"""
from __future__ import annotations

import itertools

import numpy as np

from ..errors import NotScalar, ShapeError

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_ids)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data, parents, backward, op: str) -> Tensor:
    """Create an op output; the graph is only recorded when some input needs it."""
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op=op, parents=parents, backward=backward)
    return Tensor(data, False, op=op)


def graph_nodes(root: Tensor) -> list:
    """Nodes reachable from ``root`` that take part in differentiation, in append order."""
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in seen or not node.requires_grad:
            continue
        seen[node.node_id] = node
        stack.extend(node._parents)
    return [seen[k] for k in sorted(seen)]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf with requires_grad."""
    if loss.data.size != 1:
        raise NotScalar(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = graph_nodes(loss)
    grads = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(f"{node.op}: gradient shape {pg.shape} != input shape {parent.shape}")
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
