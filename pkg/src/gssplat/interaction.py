"""Point-level interaction inside spatial units and geometry-supervised offset learning."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geometry import Camera, project_points
from .neural import ops
from .neural.layers import Linear, Module
from .neural.tensor import Tensor, as_tensor, make

OFFSET_THRESHOLD = 0.5
DEFAULT_INTERVAL_DIVISOR = 64.0
DIS_MODES = ("normalized", "raw", "inverse")


def default_unit_interval(positions, divisor=DEFAULT_INTERVAL_DIVISOR):
    positions = np.asarray(positions, dtype=np.float64)
    diag = np.linalg.norm(positions.max(axis=0) - positions.min(axis=0))
    return float(diag / divisor) if diag > 0 else 1.0


@dataclass
class SpatialGrid:
    interval: float
    origin: np.ndarray
    cell_index: np.ndarray   # N x 3 integer cell coordinates
    cell_of_point: np.ndarray  # N compact cell ids
    cell_keys: np.ndarray    # L x 3 integer coordinates of occupied cells
    counts: np.ndarray       # L

    @property
    def n_cells(self):
        return self.cell_keys.shape[0]

    @property
    def cell_centers(self):
        return self.origin + (self.cell_keys + 0.5) * self.interval

    def point_cell_centers(self):
        return self.cell_centers[self.cell_of_point]

    def members(self):
        """Cell coordinate tuple -> sorted member point indices."""
        order = np.argsort(self.cell_of_point, kind="stable")
        splits = np.cumsum(self.counts).astype(np.int64)[:-1]
        return {tuple(int(c) for c in key): idx
                for key, idx in zip(self.cell_keys, np.split(order, splits))}

    def mean_features(self, features):
        """L x C average of member features (AvgPool per unit)."""
        features = np.asarray(features, dtype=np.float64)
        sums = np.zeros((self.n_cells, features.shape[1]))
        np.add.at(sums, self.cell_of_point, features)
        return sums / self.counts[:, None]

    def distance_factor(self, positions, mode="normalized"):
        """Per-point multiplier on pooled features from the distance to the unit centre."""
        d = np.linalg.norm(np.asarray(positions) - self.point_cell_centers(), axis=1)
        half_diag = 0.5 * np.sqrt(3.0) * self.interval
        if mode == "normalized":
            return np.minimum(d / half_diag, 1.0)
        if mode == "raw":
            return d
        if mode == "inverse":
            return 1.0 / (1.0 + d / half_diag)
        raise ContractError(f"unknown distance mode {mode!r}")


def build_grid(positions, unit_interval, origin=None) -> SpatialGrid:
    """Assign each point to the cube cell ``floor((p - origin) / interval)``."""
    if not unit_interval > 0:
        raise ContractError("unit_interval must be positive")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if positions.shape[0] == 0:
        raise ContractError("cannot build a grid over zero points")
    origin = positions.min(axis=0) if origin is None else np.asarray(origin, dtype=np.float64)
    cells = np.floor((positions - origin) / unit_interval).astype(np.int64)
    keys, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    return SpatialGrid(float(unit_interval), origin, cells, inverse.reshape(-1), keys,
                       counts.astype(np.float64))


class PointInteraction(Module):
    """V' = V + Linear([V ; AvgPool(unit) * Dis])."""

    def __init__(self, channels, rng, enabled=True, dis_mode="normalized", gain=0.0):
        if dis_mode not in DIS_MODES:
            raise ContractError(f"dis_mode must be one of {DIS_MODES}")
        self.enabled = enabled
        self.dis_mode = dis_mode
        self.fuse = Linear(2 * channels, channels, rng, gain=gain)

    def __call__(self, features, grid, positions):
        if not self.enabled:
            return features
        return aggregate(features, grid, positions, self.fuse.weight, self.fuse.bias,
                         self.dis_mode)


def aggregate(features, grid: SpatialGrid, positions, weight, bias=None, dis_mode="normalized"):
    """Fuse each point's feature with the mean feature of its unit scaled by distance."""
    features = as_tensor(features)
    if features.shape[0] != grid.cell_of_point.shape[0]:
        raise ContractError("feature rows do not match grid points")
    pooled = ops.segment_mean(features, grid.cell_of_point, grid.n_cells)
    dis = grid.distance_factor(positions, dis_mode)[:, None]
    fused = ops.linear(ops.concat([features, pooled * dis], axis=-1), weight, bias)
    return features + fused


# --- offsets ---------------------------------------------------------------------------

@dataclass
class OffsetPrediction:
    prob: np.ndarray    # N in [0, 1]
    offset: np.ndarray  # N x 3

    @property
    def mask(self):
        return np.asarray(self.prob) > OFFSET_THRESHOLD


def apply_offsets(positions, prediction: OffsetPrediction):
    """μ = x + t·Mask(t̂) with Mask(t̂) = t̂ > 0.5 (strict)."""
    positions = np.asarray(positions, dtype=np.float64)
    offset = np.asarray(prediction.offset, dtype=np.float64)
    if offset.shape != positions.shape or np.shape(prediction.prob) != positions.shape[:1]:
        raise ContractError("offset prediction does not match positions")
    return positions + offset * prediction.mask[:, None]


def _mask_op(prob, straight_through):
    hard = (prob.data > OFFSET_THRESHOLD).astype(np.float64)
    if not straight_through:
        return Tensor(hard)
    return make(hard, (prob,), lambda g: (g,))


def apply_offsets_tensor(positions, prob: Tensor, offset: Tensor, straight_through=False):
    """Tape version of ``apply_offsets``; optional straight-through gradient to t̂."""
    mask = _mask_op(prob, straight_through)
    return as_tensor(positions) + offset * mask.reshape(-1, 1)


def _smooth_l1_np(e, beta):
    e = np.abs(e)
    return np.where(e < beta, 0.5 * e * e / beta, e - 0.5 * beta)


def _partition_pressure(prob, weight, target):
    """Zero-valued term whose gradient w.r.t. the logit of t̂ is ``weight * (t̂ - target)``.

    That is the gradient of a weighted logistic loss pulling t̂ towards ``target``.
    """
    p = prob.data
    scaled = weight * (p - target) / np.maximum(p * (1.0 - p), 1e-12)
    return make(np.zeros(()), (prob,), lambda g: (g * scaled,))


@dataclass
class GroupLossInfo:
    per_view: list
    visible_counts: list
    empty: bool


def nearest_depth_lookup(camera: Camera, depth_map, points):
    """Projected depth, sampled depth at the nearest pixel and a visibility mask."""
    uv, z, front = project_points(camera, points)
    h, w = depth_map.shape
    col = np.floor(uv[:, 0]).astype(np.int64)
    row = np.floor(uv[:, 1]).astype(np.int64)
    inside = front & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    sample = np.zeros(len(z))
    sample[inside] = depth_map[row[inside], col[inside]]
    visible = inside & np.isfinite(sample) & (sample > 0)
    return z, sample, visible


def offset_group_loss(positions, prob, cameras, depths, beta=1.0, partition_gradient=True,
                      anchors=None):
    """Projective depth invariance on Gaussian centres without offset.

    ``L_f = 1/K Σ_v mean_i smoothL1(z_v(x_i) - D_v[nearest pixel])`` over points with
    t̂ <= 0.5 that land inside view ``v`` on a valid depth sample. Returns
    ``(loss tensor, GroupLossInfo)``; ``info.empty`` flags that no such point exists.

    The hard mask has no derivative, so with ``partition_gradient`` t̂ is instead pulled
    towards 1 for points whose residual at their ``anchors`` position (pre-offset centres,
    defaults to ``positions``) exceeds the mean ``r̄_v`` over all ``n_v`` visible anchors,
    and towards 0 otherwise, with per-view weight ``1 / (K n_v)``. The
    reference mean covers every visible point, so emptying the group never lowers it.
    The pull adds nothing to the returned value.
    """
    positions = as_tensor(positions)
    prob = as_tensor(prob)
    if positions.shape[0] != prob.shape[0]:
        raise ContractError("offset probabilities do not match positions")
    if len(cameras) == 0 or len(cameras) != len(depths):
        raise ContractError("need one depth map per camera and at least one view")
    anchors = positions.data if anchors is None else np.asarray(anchors, dtype=np.float64)
    if anchors.shape != positions.shape:
        raise ContractError("anchors must match positions")
    keep_mask = prob.data <= OFFSET_THRESHOLD
    keep = Tensor(keep_mask.astype(np.float64))
    total = Tensor(0.0)
    weight = np.zeros(len(keep_mask))
    above = np.zeros(len(keep_mask))
    per_view, counts = [], []
    for cam, dmap in zip(cameras, depths):
        dmap = np.asarray(dmap, dtype=np.float64)
        r, t = cam.pose.world_to_camera()
        if partition_gradient:
            za, sa, va = nearest_depth_lookup(cam, dmap, anchors)
            if va.any():
                dev = _smooth_l1_np(za[va] - sa[va], beta)
                dev = dev - dev.mean()
                w = 1.0 / (va.sum() * len(cameras))
                # weighted vote across views for the target label
                weight[va] += w
                above[va] += w * (dev > 0)
        z, sample, visible = nearest_depth_lookup(cam, dmap, positions.data)
        n_vis = int(np.count_nonzero(visible & keep_mask))
        counts.append(n_vis)
        if n_vis == 0:
            per_view.append(0.0)
            continue
        z_t = ops.linear(positions, Tensor(r[2:3].T)).reshape(-1) + float(t[2])
        resid = ops.smooth_l1(z_t - Tensor(np.where(visible, sample, 0.0)), beta)
        wvis = keep * Tensor(visible.astype(np.float64))
        loss_v = (wvis * resid).sum() * (1.0 / n_vis)
        per_view.append(float(loss_v.data))
        total = total + loss_v
    empty = sum(counts) == 0
    if empty:
        warnings.warn("offset_group_loss: no centre without offset is visible in any view",
                      RuntimeWarning, stacklevel=2)
    total = total * (1.0 / len(cameras))
    if partition_gradient:
        target = np.divide(above, weight, out=np.zeros_like(weight), where=weight > 0)
        total = total + _partition_pressure(prob, weight, target)
    return total, GroupLossInfo(per_view, counts, empty)


def offset_statistics(prob):
    """Fraction of centres that receive an offset."""
    prob = np.asarray(prob)
    return float(np.mean(prob > OFFSET_THRESHOLD)) if prob.size else 0.0
