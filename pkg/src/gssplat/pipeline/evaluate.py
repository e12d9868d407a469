"""Novel-view evaluation of reconstructed or fitted fields."""
from __future__ import annotations

import json
import time
import warnings
from pathlib import Path

import numpy as np

from ..errors import ContractError
from ..field import GaussianField
from ..interaction import OFFSET_THRESHOLD, offset_group_loss
from ..objective import confusion_matrix, psnr, segmentation_scores, ssim
from ..rasterizer import RasterConfig, rasterize
from .model import GSsplatModel, reconstruct
from .views import ViewSet

REPORT_VERSION = 1
METRIC_KEYS = ("psnr", "ssim", "miou", "acc", "class_acc", "offset_fraction_color",
               "offset_fraction_semantic", "depth_residual")
TIMING_KEYS = ("network", "init", "interaction", "heads", "render_color", "render_semantic")


def depth_residual(positions, prob, cameras, depths):
    """Smooth-L1 projective depth residual of centres that keep their position."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        loss, info = offset_group_loss(positions, prob, cameras, depths,
                                       partition_gradient=False)
    return float("nan") if info.empty else float(loss.data)


def score_views(color: GaussianField, semantic: GaussianField | None, views: ViewSet,
                raster: RasterConfig = RasterConfig()):
    """Mean PSNR/SSIM over views and segmentation scores over their pooled confusion."""
    psnrs, ssims = [], []
    eta = semantic.channels if semantic is not None else None
    conf = np.zeros((eta, eta), dtype=np.int64) if eta else None
    t_color = t_sem = 0.0
    for k, cam in enumerate(views.cameras):
        t0 = time.perf_counter()
        img = rasterize(color, cam, raster).channels
        t1 = time.perf_counter()
        t_color += t1 - t0
        psnrs.append(psnr(img, views.images[k]))
        ssims.append(ssim(img, views.images[k]))
        if semantic is not None and views.labels is not None:
            t1 = time.perf_counter()
            pred = rasterize(semantic, cam, raster).argmax()
            t_sem += time.perf_counter() - t1
            conf += confusion_matrix(pred, views.labels[k], eta)
    out = {"psnr": float(np.mean(psnrs)), "ssim": float(np.mean(ssims))}
    seg = segmentation_scores(conf) if conf is not None and conf.sum() else \
        {"miou": float("nan"), "acc": float("nan"), "class_acc": float("nan")}
    out.update(seg)
    n = len(views)
    return out, {"render_color": t_color / n, "render_semantic": t_sem / n}


def _targets(source, novel):
    return (novel, "novel") if novel is not None else (source, "source")


def evaluate(scenes, model: GSsplatModel | None = None, fields=None,
             raster: RasterConfig = RasterConfig()):
    """Metric report for ``scenes`` (list of ``(source, novel)`` pairs).

    Fields come from ``model`` (one reconstruction per scene) or from ``fields``, a list
    of ``(color, semantic)`` pairs aligned with ``scenes``. Metrics use the novel views,
    or the source views when a scene has none.
    """
    if (model is None) == (fields is None):
        raise ContractError("pass exactly one of model or fields")
    if fields is not None and len(fields) != len(scenes):
        raise ContractError("one (color, semantic) pair per scene is required")
    per_scene = []
    for i, (source, novel) in enumerate(scenes):
        targets, which = _targets(source, novel)
        entry = {"scene_id": source.scene_id, "views": which, "n_views": len(targets)}
        timing = {}
        if model is not None:
            res = reconstruct(model, source)
            color, semantic = res.color, res.semantic
            entry["offset_fraction_color"] = res.offset_fraction_color
            entry["offset_fraction_semantic"] = res.offset_fraction_semantic
            resid = [depth_residual(res.color.centers, res.offset_prob_color, source.cameras,
                                    source.depths),
                     depth_residual(res.semantic.centers, res.offset_prob_semantic,
                                    source.cameras, source.depths)]
            # a field whose centres are all offset has no residual; average the others
            resid = [r for r in resid if np.isfinite(r)]
            entry["depth_residual"] = float(np.mean(resid)) if resid else float("nan")
            timing.update({k: res.timings[k] for k in ("network", "init", "interaction",
                                                         "heads")})
        else:
            color, semantic = fields[i]
            entry["offset_fraction_color"] = 0.0
            entry["offset_fraction_semantic"] = 0.0
            keep = np.zeros(len(color))
            entry["depth_residual"] = depth_residual(color.centers, keep, source.cameras,
                                                     source.depths)
        scores, render_t = score_views(color, semantic, targets, raster)
        entry.update(scores)
        entry["n_gaussians"] = len(color)
        timing.update(render_t)
        entry["timing"] = timing
        per_scene.append(entry)
    report = {"version": REPORT_VERSION, "n_scenes": len(per_scene)}
    for key in METRIC_KEYS:
        vals = [s[key] for s in per_scene if np.isfinite(s.get(key, np.nan))]
        report[key] = float(np.mean(vals)) if vals else None
    report["timing"] = {k: float(np.mean([s["timing"][k] for s in per_scene]))
                        for k in TIMING_KEYS if all(k in s["timing"] for s in per_scene)}
    report["offset_threshold"] = OFFSET_THRESHOLD
    report["scenes"] = per_scene
    return report


def _clean(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


def write_report(path, report):
    Path(path).write_text(json.dumps(_clean(report), indent=1, sort_keys=True))


def without_timing(report):
    """Report copy with wall-clock fields removed (these differ between runs)."""
    out = {k: v for k, v in report.items() if k != "timing"}
    out["scenes"] = [{k: v for k, v in s.items() if k != "timing"} for s in report["scenes"]]
    return out
