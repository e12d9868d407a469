"""Bias-corrected Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)  # per-tensor update counts; skipped steps don't count
    skipped: int = 0


def _lookup(lr, name):
    if not isinstance(lr, dict):
        return lr
    best = None
    for prefix, value in lr.items():
        if prefix != "default" and name.startswith(prefix):
            if best is None or len(prefix) > len(best[0]):
                best = (prefix, value)
    return best[1] if best else lr.get("default", 0.0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Update ``params`` (name -> ndarray) in place from ``grads`` (name -> ndarray or None).

    ``lr`` is a float or a mapping of name prefix -> rate (longest prefix wins, key
    ``"default"`` as fallback). A tensor whose gradient holds a non-finite value is left
    untouched and ``state.skipped`` is incremented.
    """
    state.step += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            continue
        rate = _lookup(lr, name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        if rate == 0:
            continue
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= rate * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


class Adam:
    """Adam over autodiff tensors (name -> Tensor)."""

    def __init__(self, named_params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self):
        adam_step({n: p.data for n, p in self.params.items()},
                  {n: p.grad for n, p in self.params.items()},
                  self.state, self.lr, *self.betas, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
