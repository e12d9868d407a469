"""Feed-forward reconstruction: network features lifted onto unprojected depth points,
point interaction per feature space, per-point Gaussian heads and offsets."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError, FormatError, ReconstructionError
from ..field import COLOR, SEMANTIC, GaussianField
from ..geometry import unproject_depth, valid_depth_mask
from ..interaction import (DEFAULT_INTERVAL_DIVISOR, DIS_MODES, PointInteraction,
                           apply_offsets_tensor, build_grid, default_unit_interval,
                           offset_statistics)
from ..neural import GaussianHeads, HybridNet, HybridNetConfig, Module, ops
from ..neural.checkpoint import load_weights, save_weights
from ..neural.tensor import Tensor
from .views import ViewSet

STAGES = ("network", "init", "interaction", "heads")


@dataclass(frozen=True)
class ReconstructionConfig:
    unit_interval: float | None = None   # None: bounding-box diagonal / interval_divisor
    interval_divisor: float = DEFAULT_INTERVAL_DIVISOR
    interaction: bool = True
    dis_mode: str = "normalized"
    straight_through: bool = False
    subsample_stride: int = 1
    scale_prior: bool = True             # head log-scale is relative to the pixel footprint

    def __post_init__(self):
        if self.unit_interval is not None and not self.unit_interval > 0:
            raise ConfigurationError("unit_interval must be positive")
        if not self.interval_divisor > 0:
            raise ConfigurationError("interval_divisor must be positive")
        if self.dis_mode not in DIS_MODES:
            raise ConfigurationError(f"dis_mode must be one of {DIS_MODES}")
        if int(self.subsample_stride) < 1:
            raise ConfigurationError("subsample_stride must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class FieldTensors:
    """One predicted field still attached to the tape."""

    kind: str
    centers: Tensor
    quaternions: Tensor
    log_scales: Tensor
    opacity_logits: Tensor
    payloads: Tensor
    offset_prob: Tensor
    scene_extent: float

    def to_field(self) -> GaussianField:
        return GaussianField(self.centers.data, self.quaternions.data, self.log_scales.data,
                             self.opacity_logits.data, self.payloads.data, self.kind,
                             self.scene_extent)

    def render_args(self):
        return (self.centers, self.quaternions, self.log_scales, self.opacity_logits,
                self.payloads)


@dataclass
class SceneForward:
    positions: np.ndarray      # N x 3 unprojected centres μ0 shared by both fields
    pixel_index: np.ndarray    # N flat indices into K x H x W
    unit_interval: float
    color: FieldTensors
    semantic: FieldTensors
    seg2d: Tensor              # K x H x W x η
    timings: dict = field(default_factory=dict)


def select_pixels(depths, stride=1):
    """Valid-depth mask, optionally thinned to every ``stride``-th row and column."""
    mask = valid_depth_mask(depths)
    if stride > 1:
        keep = np.zeros_like(mask)
        keep[:, ::stride, ::stride] = True
        mask &= keep
    return mask


class GSsplatModel(Module):
    """Network, two interaction modules and two independent head sets."""

    def __init__(self, net_config: HybridNetConfig = HybridNetConfig(),
                 config: ReconstructionConfig = ReconstructionConfig()):
        self.net_config = net_config
        self.config = config
        self.net = HybridNet(net_config)
        rng = np.random.default_rng(net_config.seed + 1)
        cd = net_config.decoder_channels
        self.color_interaction = PointInteraction(cd, rng, config.interaction, config.dis_mode)
        self.semantic_interaction = PointInteraction(cd, rng, config.interaction,
                                                     config.dis_mode)
        self.color_head = GaussianHeads(cd, COLOR, 3, rng)
        self.semantic_head = GaussianHeads(cd, SEMANTIC, net_config.n_classes, rng)

    def weights(self):
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_weights(self, arrays):
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise ConfigurationError(f"checkpoint lacks tensors: {missing[:5]}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ConfigurationError(f"{name}: checkpoint shape {arrays[name].shape} "
                                         f"!= model shape {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)

    def forward_scene(self, views: ViewSet) -> SceneForward:
        cfg = self.config
        clock = time.perf_counter
        t0 = clock()
        maps = self.net(views.images, views.depths, views.scene_extent)
        t1 = clock()
        mask = select_pixels(views.depths, int(cfg.subsample_stride))
        if not mask.any():
            raise ReconstructionError(f"scene {views.scene_id!r}: no valid depth pixel")
        positions = []
        for k, cam in enumerate(views.cameras):
            positions.append(unproject_depth(cam, np.where(mask[k], views.depths[k], 0.0)))
        positions = np.concatenate(positions)
        pixel_index = np.flatnonzero(mask)  # row-major per view, views in order
        fx = np.array([c.intrinsics.fx for c in views.cameras])
        kk = pixel_index // (views.height * views.width)
        footprint = views.depths.reshape(-1)[pixel_index] / fx[kk] * cfg.subsample_stride
        log_base = np.log(footprint) if cfg.scale_prior else None
        interval = cfg.unit_interval or default_unit_interval(positions, cfg.interval_divisor)
        cd = self.net_config.decoder_channels
        feat_c = ops.gather_rows(maps.color.reshape(-1, cd), pixel_index)
        feat_s = ops.gather_rows(maps.semantic.reshape(-1, cd), pixel_index)
        t2 = clock()
        grid = build_grid(positions, interval)
        feat_c = self.color_interaction(feat_c, grid, positions)
        feat_s = self.semantic_interaction(feat_s, grid, positions)
        t3 = clock()
        extent = views.scene_extent
        fields = []
        for head, feats, kind in ((self.color_head, feat_c, COLOR),
                                  (self.semantic_head, feat_s, SEMANTIC)):
            out = head(feats, interval, extent, log_base)
            mu = apply_offsets_tensor(positions, out.offset_prob, out.offset,
                                      cfg.straight_through)
            fields.append(FieldTensors(kind, mu, out.quaternions, out.log_scales,
                                       out.opacity_logits, out.payloads, out.offset_prob,
                                       extent))
        t4 = clock()
        timings = {"network": t1 - t0, "init": t2 - t1, "interaction": t3 - t2,
                   "heads": t4 - t3}
        return SceneForward(positions, pixel_index, interval, fields[0], fields[1],
                            maps.seg2d, timings)


@dataclass
class ReconstructionResult:
    color: GaussianField
    semantic: GaussianField
    offset_fraction_color: float
    offset_fraction_semantic: float
    timings: dict
    unit_interval: float
    positions: np.ndarray
    offset_prob_color: np.ndarray
    offset_prob_semantic: np.ndarray

    @property
    def n_gaussians(self):
        return len(self.color)


def reconstruct(model: GSsplatModel, views: ViewSet) -> ReconstructionResult:
    """Predict colour and semantic fields for ``views`` in one forward pass."""
    start = time.perf_counter()
    fw = model.forward_scene(views)
    color, semantic = fw.color.to_field(), fw.semantic.to_field()
    timings = dict(fw.timings)
    timings["total"] = time.perf_counter() - start
    return ReconstructionResult(
        color, semantic,
        offset_statistics(fw.color.offset_prob.data),
        offset_statistics(fw.semantic.offset_prob.data),
        timings, fw.unit_interval, fw.positions,
        fw.color.offset_prob.data.copy(), fw.semantic.offset_prob.data.copy())


def save_model(path, model: GSsplatModel, extra=None):
    """Checkpoint the weights; the sidecar records both configs (and ``extra``)."""
    doc = {"network": asdict(model.net_config), "reconstruction": model.config.to_dict(),
           **(extra or {})}
    save_weights(path, model.weights(), json.dumps(doc, indent=1, sort_keys=True))


def load_model(path) -> GSsplatModel:
    arrays, doc = load_weights(path)
    if doc is None:
        raise FormatError(f"{path}: checkpoint has no JSON sidecar with its configuration")
    try:
        net = HybridNetConfig.from_dict(doc["network"])
        recon = ReconstructionConfig(**doc["reconstruction"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed configuration sidecar ({exc})") from exc
    model = GSsplatModel(net, recon)
    model.load_weights(arrays)
    return model
