"""Expose ``rasterize`` as an op on the autodiff tape."""
from __future__ import annotations

from ..field import GaussianField
from ..neural.tensor import Tensor, make
from .core import RasterConfig, rasterize, rasterize_backward


def render(centers: Tensor, quaternions: Tensor, log_scales: Tensor, opacity_logits: Tensor,
           payloads: Tensor, camera, config: RasterConfig = RasterConfig(), kind="color",
           scene_extent=1.0):
    """Differentiable render. Returns ``(channels tensor H x W x C, RenderOutput)``.

    Gradients reach all five parameter tensors through the channel output only.
    """
    field = GaussianField(centers.data, quaternions.data, log_scales.data, opacity_logits.data,
                          payloads.data, kind, scene_extent)
    out, state = rasterize(field, camera, config, return_state=True)

    def backward(g):
        grads = rasterize_backward(field, camera, config, state, g)
        return grads.as_tuple()

    parents = (centers, quaternions, log_scales, opacity_logits, payloads)
    return make(out.channels, parents, backward), out
