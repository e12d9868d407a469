"""Training loop for the feed-forward model."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import ConfigurationError, NumericalError
from ..interaction import offset_group_loss
from ..neural import Adam
from ..objective import LossWeights, color_loss, semantic_loss, total_loss
from ..rasterizer import RasterConfig
from ..rasterizer.autograd import render
from .model import GSsplatModel, SceneForward
from .views import ViewSet

log = logging.getLogger(__name__)

FULL_SCALE_BATCH_SCENES = 2  # scenes per step at full scale; desk scale uses 1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 5e-4
    n_source: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    raster: RasterConfig = field(default_factory=RasterConfig)
    seed: int = 0
    batch_scenes: int = 1
    max_skip_fraction: float = 0.01
    smooth_l1_beta: float = 1.0
    partition_gradient: bool = True     # pull t̂ by depth consistency (see offset_group_loss)
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 0 or self.n_source < 1 or self.batch_scenes < 1:
            raise ConfigurationError("steps >= 0, n_source >= 1 and batch_scenes >= 1 required")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")

    def to_dict(self):
        doc = asdict(self)
        doc["raster"]["background"] = None if self.raster.background is None else \
            list(self.raster.background)
        return doc


def pool_views(source: ViewSet, novel: ViewSet | None):
    """All views of a training scene as one set (targets are drawn from it)."""
    if novel is None:
        return source
    return ViewSet(np.concatenate([source.images, novel.images]),
                   np.concatenate([source.depths, novel.depths]),
                   list(source.cameras) + list(novel.cameras),
                   None if source.labels is None or novel.labels is None
                   else np.concatenate([source.labels, novel.labels]),
                   source.scene_id, source.scene_extent, source.n_classes)


def sample_views(rng, n_views, n_source):
    """Distinct source indices plus one target index disjoint from them."""
    if n_views < n_source + 1:
        raise ConfigurationError(f"scene has {n_views} views; need n_source + 1 = "
                                 f"{n_source + 1}")
    picks = rng.choice(n_views, size=n_source + 1, replace=False)
    return np.sort(picks[:n_source]), int(picks[n_source])


def scene_losses(model: GSsplatModel, src: ViewSet, target: ViewSet, config: TrainConfig,
                 fw: SceneForward | None = None):
    """Forward one (sources, target) sample; returns ``(total tensor, LossReport)``."""
    fw = fw or model.forward_scene(src)
    cam = target.cameras[0]
    raster = config.raster
    img, _ = render(*fw.color.render_args(), cam, raster, "color", src.scene_extent)
    sem, _ = render(*fw.semantic.render_args(), cam, raster, "semantic", src.scene_extent)
    lc = color_loss(img, target.images[0], config.weights)
    if target.labels is not None:
        ls, _ = semantic_loss(sem, target.labels[0], fw.seg2d, src.labels)
    else:
        ls = sem.sum() * 0.0
    lf = 0.0
    for ft in (fw.color, fw.semantic):
        part, _ = offset_group_loss(ft.centers, ft.offset_prob, src.cameras, src.depths,
                                    config.smooth_l1_beta, config.partition_gradient,
                                    anchors=fw.positions)
        lf = part + lf
    total, report = total_loss((lc, ls, lf, 0.0), config.weights)
    report.breakdown.update({"offset_fraction_color": float(np.mean(fw.color.offset_prob.data > 0.5)),
                             "offset_fraction_semantic":
                                 float(np.mean(fw.semantic.offset_prob.data > 0.5))})
    return total, report


@dataclass
class TrainResult:
    model: GSsplatModel
    history: list
    skipped: int
    seconds: float


def train(scenes, model: GSsplatModel | None = None, config: TrainConfig = TrainConfig(),
          callback=None) -> TrainResult:
    """Optimize ``model`` on a list of ``(source, novel)`` scene pairs.

    Each step draws ``batch_scenes`` scenes, ``n_source`` input views and one disjoint
    target view per scene, and applies one Adam update on the summed loss.
    """
    if not scenes:
        raise ConfigurationError("training needs at least one scene")
    pooled = [pool_views(s, n) for s, n in scenes]
    if any(v.labels is None for v in pooled):
        raise ConfigurationError("training scenes need semantic labels")
    n_classes = pooled[0].n_classes
    if model is None:
        from ..neural import HybridNetConfig
        model = GSsplatModel(HybridNetConfig(n_classes=n_classes or 6, seed=config.seed))
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.named_parameters(), lr=config.lr)
    history, skipped = [], 0
    budget = config.max_skip_fraction * max(config.steps, 1)
    start = time.perf_counter()
    for step in range(config.steps):
        opt.zero_grad()
        reports, totals = [], []
        for _ in range(config.batch_scenes):
            views = pooled[int(rng.integers(len(pooled)))]
            src_idx, tgt_idx = sample_views(rng, len(views), config.n_source)
            total, report = scene_losses(model, views.subset(src_idx), views.subset(tgt_idx),
                                         config)
            totals.append(total)
            reports.append(report)
        loss = totals[0]
        for t in totals[1:]:
            loss = loss + t
        entry = {k: float(np.mean([r.as_dict()[k] for r in reports])) for k in reports[0].as_dict()}
        entry["step"] = step
        if not math.isfinite(float(loss.data)):
            skipped += 1
            entry["skipped"] = True
            history.append(entry)
            log.warning("step %d: non-finite loss, update skipped", step)
        else:
            loss.backward()
            before = opt.state.skipped
            opt.step()
            entry["skipped"] = opt.state.skipped > before
            skipped += int(entry["skipped"])
            history.append(entry)
        if skipped > budget:
            raise NumericalError(f"{skipped} of {step + 1} steps skipped for non-finite values "
                                 f"(limit {config.max_skip_fraction:.0%} of {config.steps}); "
                                 f"last losses: {history[-1]}")
        if config.log_every and step % config.log_every == 0:
            log.info("step %d total %.4f L_C %.4f L_S %.4f L_f %.4f", step, entry["total"],
                     entry["L_C"], entry["L_S"], entry["L_f"])
        if callback is not None:
            callback(step, entry)
    return TrainResult(model, history, skipped, time.perf_counter() - start)


def with_weights(config: TrainConfig, **kwargs):
    """Copy of ``config`` with loss-weight fields replaced."""
    return replace(config, weights=replace(config.weights, **kwargs))
