"""Tile-based differentiable splatting of Gaussian fields with arbitrary channel counts."""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .._threads import resolve_threads
from ..errors import ContractError
from ..field import SEMANTIC, GaussianField, build_covariance, scale_bounds
from ..geometry import Camera
from . import _kernels as K


@dataclass(frozen=True)
class RasterConfig:
    tile_size: int = 16
    near: float = 0.01
    transmittance_cutoff: float = 1e-4
    radius_sigma: float = 3.0
    background: tuple | None = None  # per channel; None means zeros
    low_pass: float = 0.3
    semantic_payload: str = "logits"  # or "probabilities"
    n_threads: int | None = None

    def __post_init__(self):
        if self.tile_size < 4:
            raise ContractError("tile_size must be >= 4")
        if not 0.0 < self.transmittance_cutoff < 1.0:
            raise ContractError("transmittance_cutoff must lie in (0, 1)")
        if self.near <= 0:
            raise ContractError("near plane must be positive")
        if self.radius_sigma <= 0:
            raise ContractError("radius_sigma must be positive")
        if self.semantic_payload not in ("logits", "probabilities"):
            raise ContractError("semantic_payload must be 'logits' or 'probabilities'")

    def background_for(self, channels):
        if self.background is None:
            return np.zeros(channels)
        bg = np.asarray(self.background, dtype=np.float64).reshape(-1)
        if bg.size == 1:
            return np.full(channels, bg[0])
        if bg.size != channels:
            raise ContractError(f"background has {bg.size} values for {channels} channels")
        return bg


@dataclass(frozen=True)
class Splat2D:
    mean: np.ndarray       # (u, v)
    covariance: np.ndarray  # 2 x 2, low-pass included
    depth: float
    opacity: float
    index: int


@dataclass
class RenderOutput:
    channels: np.ndarray  # H x W x C
    alpha: np.ndarray     # H x W
    depth: np.ndarray     # H x W, expected depth

    def argmax(self):
        return np.argmax(self.channels, axis=-1)


@dataclass
class FieldGradients:
    centers: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    payloads: np.ndarray

    def as_tuple(self):
        return (self.centers, self.quaternions, self.log_scales, self.opacity_logits,
                self.payloads)


@dataclass
class RasterState:
    """Forward intermediates needed by ``rasterize_backward``."""

    fingerprint: tuple
    mean2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    radius: np.ndarray
    cov3d: np.ndarray
    opacity: np.ndarray
    feats: np.ndarray
    bg_ext: np.ndarray
    entry_gauss: np.ndarray
    ranges: np.ndarray
    n_contrib: np.ndarray
    raw_depth: np.ndarray
    alpha: np.ndarray
    payload_probs: np.ndarray | None = None
    tiles: tuple = dc_field(default=(0, 0))


def _fingerprint(field, camera, config):
    crc = 0
    for arr in (field.centers, field.quaternions, field.log_scales, field.opacity_logits,
                field.payloads):
        crc = zlib.crc32(np.ascontiguousarray(arr).tobytes(), crc)
    pose = camera.pose.matrix().tobytes()
    return (len(field), field.channels, camera.width, camera.height, crc, zlib.crc32(pose),
            config.tile_size)


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(np.int64)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(parts) if bounds[i + 1] > bounds[i]]


def _run(fn, n, n_threads, *args):
    """Call ``fn(start, stop, *args)`` over ``[0, n)`` split into ``n_threads`` ranges."""
    if n == 0:
        return
    spans = _chunks(n, n_threads * 4 if n_threads > 1 else 1)
    if n_threads <= 1 or len(spans) == 1:
        for a, b in spans:
            fn(a, b, *args)
        return
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        list(pool.map(lambda ab: fn(ab[0], ab[1], *args), spans))


def _camera_terms(camera):
    r, t = camera.pose.world_to_camera()
    k = camera.intrinsics
    return np.ascontiguousarray(r), np.ascontiguousarray(t), k


def _softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def project_gaussian(camera: Camera, field: GaussianField, index: int,
                     config: RasterConfig = RasterConfig()):
    """Screen-space splat of one Gaussian, or ``None`` when culled."""
    sub = field.subset(slice(index, index + 1))
    state = _project(sub, camera, config, n_threads=1)
    if state["radius"][0] == 0:
        return None
    a, b, c = state["cov2d"]
    return Splat2D(state["mean2d"][0].copy(), np.array([[a, b], [b, c]]),
                   float(state["depth"][0]), float(sub.opacities[0]), index)


def _project(field, camera, config, n_threads):
    n = len(field)
    wrot, wtrans, k = _camera_terms(camera)
    ts = config.tile_size
    tiles_x = (k.width + ts - 1) // ts
    tiles_y = (k.height + ts - 1) // ts
    lo, hi = scale_bounds(field.scene_extent)
    mean2d = np.zeros((n, 2))
    conic = np.zeros((n, 3))
    depth = np.zeros(n)
    radius = np.zeros(n, dtype=np.int64)
    rect = np.zeros((n, 4), dtype=np.int64)
    cov3d = np.zeros((n, 3, 3))
    centers = np.ascontiguousarray(field.centers)
    quats = np.ascontiguousarray(field.quaternions)
    log_s = np.ascontiguousarray(field.log_scales)
    _run(K.preprocess, n, n_threads, centers, quats, log_s, lo, hi, wrot, wtrans,
         k.fx, k.fy, k.cx, k.cy, k.width, k.height, config.near, config.low_pass,
         config.radius_sigma, ts, tiles_x, tiles_y, mean2d, conic, depth, radius, rect, cov3d)
    out = dict(mean2d=mean2d, conic=conic, depth=depth, radius=radius, rect=rect, cov3d=cov3d,
               tiles=(tiles_x, tiles_y))
    if n == 1 and radius[0] > 0:
        det = 1.0 / (conic[0, 0] * conic[0, 2] - conic[0, 1] ** 2)
        out["cov2d"] = (conic[0, 2] * det, -conic[0, 1] * det, conic[0, 0] * det)
    return out


def _bin(proj):
    rect = proj["rect"]
    tiles_x, tiles_y = proj["tiles"]
    counts = (rect[:, 2] - rect[:, 0]) * (rect[:, 3] - rect[:, 1])
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    m = int(offsets[-1])
    entry_tile = np.empty(m, dtype=np.int64)
    entry_gauss = np.empty(m, dtype=np.int64)
    if m:
        K.fill_entries(rect, offsets[:-1], tiles_x, entry_tile, entry_gauss)
    # canonical order: tile, then depth, then Gaussian index
    order = np.lexsort((entry_gauss, proj["depth"][entry_gauss], entry_tile))
    entry_tile = entry_tile[order]
    entry_gauss = np.ascontiguousarray(entry_gauss[order])
    n_tiles = tiles_x * tiles_y
    ids = np.arange(n_tiles)
    ranges = np.stack([np.searchsorted(entry_tile, ids, "left"),
                       np.searchsorted(entry_tile, ids, "right")], axis=1).astype(np.int64)
    return entry_gauss, ranges


def _payload(field, config):
    if field.kind == SEMANTIC and config.semantic_payload == "probabilities" and len(field):
        probs = _softmax(field.payloads)
        return probs, probs
    return field.payloads, None


def rasterize(field: GaussianField, camera: Camera, config: RasterConfig = RasterConfig(),
              channels: int | None = None, return_state: bool = False):
    """Render ``field`` from ``camera``: composited channels, accumulated alpha, expected depth.

    Splats are composited front to back per pixel in (depth, index) order; the remaining
    transmittance is filled with the configured background.
    """
    c = field.channels
    if channels is not None and channels != c:
        raise ContractError(f"field carries {c} channels but {channels} were requested")
    n_threads = resolve_threads(config.n_threads)
    h, w = camera.height, camera.width
    proj = _project(field, camera, config, n_threads)
    entry_gauss, ranges = _bin(proj)
    payload, probs = _payload(field, config)
    opacity = field.opacities
    feats = np.empty((len(field), c + 2))
    feats[:, :c] = payload
    feats[:, c] = proj["depth"]
    feats[:, c + 1] = 1.0
    bg_ext = np.concatenate([config.background_for(c), [0.0, 0.0]])
    out = np.empty((h, w, c + 2))
    final_t = np.empty((h, w))
    n_contrib = np.zeros((h, w), dtype=np.int64)
    tiles_x, tiles_y = proj["tiles"]
    ts = config.tile_size
    _run(K.render_tiles, tiles_x * tiles_y, n_threads, ranges, entry_gauss, proj["mean2d"],
         proj["conic"], opacity, feats, bg_ext, w, h, ts, tiles_x,
         config.transmittance_cutoff, out, final_t, n_contrib)
    alpha = out[..., c + 1]
    raw_depth = out[..., c]
    depth = raw_depth / np.maximum(alpha, 1e-8)
    result = RenderOutput(out[..., :c].copy(), np.clip(alpha, 0.0, 1.0), depth)
    if not return_state:
        return result
    state = RasterState(_fingerprint(field, camera, config), proj["mean2d"], proj["conic"],
                        proj["depth"], proj["radius"], proj["cov3d"], opacity, feats, bg_ext,
                        entry_gauss, ranges, n_contrib, raw_depth.copy(), alpha.copy(), probs,
                        (tiles_x, tiles_y))
    return result, state


def rasterize_backward(field: GaussianField, camera: Camera, config: RasterConfig,
                       state: RasterState, grad_channels, grad_alpha=None, grad_depth=None):
    """Exact adjoints of ``rasterize`` for every Gaussian parameter."""
    if state is None or state.fingerprint != _fingerprint(field, camera, config):
        raise ContractError("backward state does not match this field/camera/config")
    c = field.channels
    h, w = camera.height, camera.width
    grad_channels = np.asarray(grad_channels, dtype=np.float64)
    if grad_channels.shape != (h, w, c):
        raise ContractError(f"channel gradient must be {(h, w, c)}, got {grad_channels.shape}")
    n = len(field)
    n_threads = resolve_threads(config.n_threads)
    g_ext = np.zeros((h, w, c + 2))
    g_ext[..., :c] = grad_channels
    if grad_alpha is not None:
        # clip() in the forward is the identity on the reachable range [0, 1]
        g_ext[..., c + 1] += np.asarray(grad_alpha, dtype=np.float64)
    if grad_depth is not None:
        gd = np.asarray(grad_depth, dtype=np.float64)
        live = state.alpha > 1e-8
        denom = np.maximum(state.alpha, 1e-8)
        g_ext[..., c] += gd / denom
        g_ext[..., c + 1] += np.where(live, -gd * state.raw_depth / denom ** 2, 0.0)
    m = state.entry_gauss.shape[0]
    e_mean = np.zeros((m, 2))
    e_conic = np.zeros((m, 3))
    e_opac = np.zeros(m)
    e_feat = np.zeros((m, c + 2))
    tiles_x, tiles_y = state.tiles
    _run(K.backward_tiles, tiles_x * tiles_y, n_threads, state.ranges, state.entry_gauss,
         state.mean2d, state.conic, state.opacity, state.feats, state.bg_ext, w, h,
         config.tile_size, tiles_x, state.n_contrib, g_ext, e_mean, e_conic, e_opac, e_feat)
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_feat = np.zeros((n, c + 2))
    if m:
        K.reduce_entries(state.entry_gauss, e_mean, e_conic, e_opac, e_feat,
                         g_mean, g_conic, g_opac, g_feat)
    wrot, wtrans, k = _camera_terms(camera)
    lo, hi = scale_bounds(field.scene_extent)
    g_centers = np.zeros((n, 3))
    g_quats = np.zeros((n, 4))
    g_log = np.zeros((n, 3))
    g_depth = np.ascontiguousarray(g_feat[:, c])
    _run(K.preprocess_backward, n, n_threads, np.ascontiguousarray(field.centers),
         np.ascontiguousarray(field.quaternions), np.ascontiguousarray(field.log_scales),
         lo, hi, wrot, wtrans, k.fx, k.fy, state.radius, state.conic, state.cov3d,
         g_mean, g_conic, g_depth, g_centers, g_quats, g_log)
    op = state.opacity
    g_logit = g_opac * op * (1.0 - op)
    g_pay = g_feat[:, :c]
    if state.payload_probs is not None:
        p = state.payload_probs
        g_pay = p * (g_pay - np.sum(g_pay * p, axis=1, keepdims=True))
    return FieldGradients(g_centers, g_quats, g_log, g_logit, np.ascontiguousarray(g_pay))


def render_covariance_reference(field, camera, config=RasterConfig()):
    """Pure-numpy screen covariances (N x 2 x 2) for cross-checking the kernel."""
    r, t = camera.pose.world_to_camera()
    k = camera.intrinsics
    pc = field.centers @ r.T + t
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    j = np.zeros((len(field), 2, 3))
    j[:, 0, 0] = k.fx / z
    j[:, 0, 2] = -k.fx * x / z ** 2
    j[:, 1, 1] = k.fy / z
    j[:, 1, 2] = -k.fy * y / z ** 2
    tm = j @ r
    cov = build_covariance(field.quaternions, field.log_scales, field.scene_extent)
    return tm @ cov @ np.swapaxes(tm, 1, 2) + config.low_pass * np.eye(2)
