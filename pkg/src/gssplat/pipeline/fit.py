"""Per-scene optimisation of colour and semantic fields directly against posed views."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError, ReconstructionError
from ..field import COLOR, SEMANTIC, GaussianField, scale_bounds
from ..geometry import unproject_depth
from ..neural.optim import AdamState, adam_step
from ..objective import IGNORE_INDEX, psnr_from_mse
from ..rasterizer import RasterConfig, rasterize, rasterize_backward
from .model import select_pixels
from .views import ViewSet

PARAMS = ("centers", "quaternions", "log_scales", "opacity_logits", "payloads")


@dataclass(frozen=True)
class FitConfig:
    steps: int = 2000
    semantic_steps: int | None = 600    # None: same as ``steps``
    semantic_from_color: bool = True    # start semantic logits on the fitted colour geometry
    stride: int = 3                 # initialise from every stride-th pixel
    init_opacity: float = 0.5
    mse_weight: float = 10.0
    lr_centers: float = 2e-4        # multiplied by the scene extent
    lr_quaternions: float = 2e-3
    lr_log_scales: float = 5e-3
    lr_opacity: float = 2e-2
    lr_payloads: float = 1e-2
    lr_semantic: float = 5e-2       # semantic logits
    lr_decay: float = 0.1           # final rate as a fraction of the initial one
    raster: RasterConfig = field(default_factory=lambda: RasterConfig(tile_size=8))
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.stride < 1:
            raise ConfigurationError("steps >= 0 and stride >= 1 required")
        if self.semantic_steps is not None and self.semantic_steps < 0:
            raise ConfigurationError("semantic_steps must be >= 0")
        if not 0 < self.init_opacity < 1:
            raise ConfigurationError("init_opacity must lie in (0, 1)")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)

    @property
    def n_semantic_steps(self):
        return self.steps if self.semantic_steps is None else self.semantic_steps


def initial_fields(views: ViewSet, config: FitConfig = FitConfig()):
    """One isotropic Gaussian per selected pixel, coloured by that pixel.

    Semantic payloads start at zero logits; both fields share the initial geometry.
    """
    mask = select_pixels(views.depths, config.stride)
    if not mask.any():
        raise ReconstructionError(f"scene {views.scene_id!r}: no valid depth pixel")
    centers, colors, scales = [], [], []
    for k, cam in enumerate(views.cameras):
        d = np.where(mask[k], views.depths[k], 0.0)
        centers.append(unproject_depth(cam, d))
        rows, cols = np.nonzero(mask[k])
        colors.append(views.images[k][rows, cols])
        scales.append(views.depths[k][rows, cols] / cam.intrinsics.fx * config.stride)
    n = sum(len(c) for c in centers)
    lo, hi = scale_bounds(views.scene_extent)
    log_s = np.clip(np.log(np.concatenate(scales)), lo, hi)
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    logit = np.log(config.init_opacity / (1 - config.init_opacity))
    color = GaussianField(np.concatenate(centers), quats, np.repeat(log_s[:, None], 3, axis=1),
                          np.full(n, logit), np.clip(np.concatenate(colors), 0, 1), COLOR,
                          views.scene_extent)
    eta = views.n_classes or (int(views.labels[views.labels != IGNORE_INDEX].max()) + 1
                              if views.labels is not None else 1)
    return color, color.with_payloads(np.zeros((n, eta)), SEMANTIC)


def _ce_grad(logits, labels):
    """Mean cross-entropy over labelled pixels and its gradient w.r.t. ``logits``."""
    valid = labels != IGNORE_INDEX
    n = int(valid.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    lab = np.where(valid, labels, 0)
    picked = np.take_along_axis(p, lab[..., None], -1)[..., 0]
    loss = -np.log(np.maximum(picked[valid], 1e-300)).sum() / n
    g = p.copy()
    np.put_along_axis(g, lab[..., None], np.take_along_axis(g, lab[..., None], -1) - 1, -1)
    g[~valid] = 0.0
    return loss, g / n


@dataclass
class FitResult:
    color: GaussianField
    semantic: GaussianField
    history: dict
    seconds: float


def _mse_grad(rendered, target, weight):
    resid = rendered - target
    return float(np.mean(resid ** 2)), 2.0 * weight * resid / resid.size


def optimize_field(start: GaussianField, views: ViewSet, config: FitConfig, semantic=False,
                   steps=None):
    """Adam on all five parameter groups, one source view per step.

    ``steps`` defaults to ``config.steps``.

    Colour fields minimise λ·MSE, semantic fields the cross-entropy against view labels.
    Returns ``(field, history)``.
    """
    rng = np.random.default_rng(config.seed + int(semantic))
    ext = views.scene_extent
    lr0 = {"centers": config.lr_centers * ext, "quaternions": config.lr_quaternions,
           "log_scales": config.lr_log_scales, "opacity_logits": config.lr_opacity,
           "payloads": config.lr_semantic if semantic else config.lr_payloads}
    params = {name: np.array(getattr(start, name)) for name in PARAMS}
    state = AdamState()
    raster = config.raster
    lo, hi = scale_bounds(ext)
    history = []
    order = np.array([], dtype=np.int64)
    steps = config.steps if steps is None else steps
    for step in range(steps):
        if order.size == 0:
            order = rng.permutation(len(views))
        k, order = int(order[0]), order[1:]
        cam = views.cameras[k]
        decay = config.lr_decay ** (step / max(steps - 1, 1))
        cur = GaussianField(**params, kind=start.kind, scene_extent=ext)
        out, st = rasterize(cur, cam, raster, return_state=True)
        if semantic:
            loss, grad = _ce_grad(out.channels, views.labels[k])
            entry = {"step": step, "view": k, "ce": loss}
        else:
            loss, grad = _mse_grad(out.channels, views.images[k], config.mse_weight)
            entry = {"step": step, "view": k, "mse": loss, "psnr": psnr_from_mse(loss)}
        g = rasterize_backward(cur, cam, raster, st, grad)
        adam_step(params, dict(zip(PARAMS, g.as_tuple())), state,
                  {n: v * decay for n, v in lr0.items()})
        q = params["quaternions"]
        q /= np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        np.clip(params["log_scales"], lo, hi, out=params["log_scales"])
        if not semantic:
            np.clip(params["payloads"], 0.0, 1.0, out=params["payloads"])
        history.append(entry)
    return GaussianField(**params, kind=start.kind, scene_extent=ext), history


def fit_scene(views: ViewSet, config: FitConfig = FitConfig(), init=None,
              fields=("color", "semantic")) -> FitResult:
    """Fit colour and semantic fields from a shared initialisation.

    The colour field is fitted first. With ``config.semantic_from_color`` the semantic
    field then starts from the fitted colour geometry with zero logits, which places
    its Gaussians on surfaces before the cross-entropy steps begin. ``fields`` selects
    which of the two are optimised; the other is returned as initialised, as is
    everything when ``config.steps == 0``.
    """
    color, semantic = init if init is not None else initial_fields(views, config)
    color, semantic = color.copy(), semantic.copy()
    history = {}
    start = time.perf_counter()
    if config.steps > 0 and "color" in fields:
        color, history["color"] = optimize_field(color, views, config)
        if config.semantic_from_color:
            semantic = color.with_payloads(np.zeros_like(semantic.payloads), SEMANTIC)
    n_sem = config.n_semantic_steps
    if config.steps > 0 and n_sem > 0 and "semantic" in fields and views.labels is not None:
        semantic, history["semantic"] = optimize_field(semantic, views, config, semantic=True,
                                                       steps=n_sem)
    return FitResult(color, semantic, history, time.perf_counter() - start)
