"""Per-point Gaussian parameter heads (offset probability, offset, scale, rotation,
opacity, payload)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..field import COLOR, scale_bounds
from . import ops
from .layers import Module, kaiming_uniform
from .tensor import Tensor, parameter

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
# raw output layout: t̂ | t (3) | log-scale (3) | rotation (4) | opacity logit | payload
_SLICES = dict(prob=slice(0, 1), offset=slice(1, 4), scale=slice(4, 7), rot=slice(7, 11),
               opacity=slice(11, 12))
_PAYLOAD_START = 12


@dataclass
class HeadOutput:
    offset_prob: Tensor   # N
    offset: Tensor        # N x 3, |t| <= unit interval componentwise
    log_scales: Tensor    # N x 3
    quaternions: Tensor   # N x 4 unit
    opacity_logits: Tensor  # N, α = sigmoid
    payloads: Tensor      # N x C


class GaussianHeads(Module):
    def __init__(self, features, kind, channels, rng, init_gain=0.1):
        self.kind = kind
        self.channels = channels
        width = _PAYLOAD_START + channels
        self.weight = parameter(kaiming_uniform(rng, (features, width), features, init_gain))
        bias = np.zeros(width)
        bias[_SLICES["rot"]] = IDENTITY_QUAT
        self.bias = parameter(bias)

    def __call__(self, features, unit_interval, scene_extent, log_base_scale=None):
        return self.forward(features, unit_interval, scene_extent, log_base_scale)

    def forward(self, features, unit_interval, scene_extent, log_base_scale=None):
        raw = ops.linear(features, self.weight, self.bias)
        n = raw.shape[0]
        prob = ops.sigmoid(raw[:, _SLICES["prob"]].reshape(n))
        offset = ops.tanh(raw[:, _SLICES["offset"]]) * unit_interval
        log_s = raw[:, _SLICES["scale"]]
        if log_base_scale is not None:
            log_s = log_s + np.asarray(log_base_scale).reshape(n, 1)
        lo, hi = scale_bounds(scene_extent)
        log_s = ops.clip(log_s, lo, hi)
        quat = ops.normalize_rows(raw[:, _SLICES["rot"]], fallback=IDENTITY_QUAT)
        opacity = raw[:, _SLICES["opacity"]].reshape(n)
        payload = raw[:, _PAYLOAD_START:]
        if self.kind == COLOR:
            payload = ops.sigmoid(payload)
        return HeadOutput(prob, offset, log_s, quat, opacity, payload)
