"""A small reverse-mode autodiff tape over numpy arrays.

Every ``Tensor`` produced by an op records its parents and a closure mapping the
output gradient to parent gradients. ``Tensor.backward`` replays the closures in
reverse creation order, so accumulation order is fixed and results are reproducible.
"""
from __future__ import annotations

import itertools

import numpy as np

from ..errors import ContractError

_ids = itertools.count()
DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "node_id", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.backward_fn = backward_fn
        self.node_id = next(_ids)
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ContractError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.shape:
            raise ContractError(f"gradient shape {grad.shape} != tensor shape {self.shape}")
        nodes, seen, stack = [], set(), [self]
        while stack:
            t = stack.pop()
            if t.node_id in seen:
                continue
            seen.add(t.node_id)
            nodes.append(t)
            stack.extend(p for p in t.parents if p.requires_grad)
        nodes.sort(key=lambda t: t.node_id, reverse=True)
        pending = {self.node_id: grad}
        for t in nodes:
            g = pending.pop(t.node_id, None)
            if g is None:
                continue
            if t.backward_fn is None:
                t.grad = g if t.grad is None else t.grad + g
                continue
            for parent, pg in zip(t.parents, t.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(parent.node_id)
                pending[parent.node_id] = pg if prev is None else prev + pg

    # operator sugar -----------------------------------------------------------------
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def make(data, parents, backward_fn):
    """Create an op output; the closure is dropped when no parent needs gradients."""
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn)
    return Tensor(data)
