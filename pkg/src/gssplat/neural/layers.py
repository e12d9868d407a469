"""Parameter containers built on the autodiff ops."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, parameter


class Module:
    """Collects parameters from attributes (tensors, modules, lists of modules) in definition order."""

    def named_parameters(self, prefix=""):
        out = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def kaiming_uniform(rng, shape, fan_in, gain=1.0):
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, cin, cout, rng, bias=True, gain=1.0):
        self.weight = parameter(kaiming_uniform(rng, (cin, cout), cin, gain))
        self.bias = parameter(np.zeros(cout)) if bias else None

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin, cout, rng, kernel=3, stride=1, gain=1.0):
        self.stride = stride
        self.weight = parameter(kaiming_uniform(rng, (kernel, kernel, cin, cout),
                                                kernel * kernel * cin, gain))
        self.bias = parameter(np.zeros(cout))

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride)


class GroupNorm(Module):
    def __init__(self, channels, groups):
        self.groups = groups
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))

    def __call__(self, x):
        return ops.group_norm(x, self.groups, self.gamma, self.beta)


class ResBlock(Module):
    """x + conv(relu(gn(conv(relu(gn(x))))))."""

    def __init__(self, channels, groups, rng):
        self.norm1 = GroupNorm(channels, groups)
        self.conv1 = Conv2d(channels, channels, rng)
        self.norm2 = GroupNorm(channels, groups)
        self.conv2 = Conv2d(channels, channels, rng, gain=0.5)

    def __call__(self, x):
        h = self.conv1(ops.relu(self.norm1(x)))
        h = self.conv2(ops.relu(self.norm2(h)))
        return x + h


class SelfAttention(Module):
    """Pre-norm residual self-attention over the flattened spatial grid of each view."""

    def __init__(self, channels, groups, rng):
        self.norm = GroupNorm(channels, groups)
        self.wq = Linear(channels, channels, rng)
        self.wk = Linear(channels, channels, rng)
        self.wv = Linear(channels, channels, rng, gain=0.5)

    def __call__(self, x):
        n, h, w, c = x.shape
        tokens = self.norm(x).reshape(n, h * w, c)
        att = ops.self_attention(tokens, self.wq.weight, self.wk.weight, self.wv.weight,
                                 self.wq.bias, self.wk.bias, self.wv.bias)
        return x + att.reshape(n, h, w, c)
