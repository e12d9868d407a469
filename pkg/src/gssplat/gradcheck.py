"""Central finite-difference checks of every analytic gradient in the package.

Each check builds a scalar from leaf tensors, compares the tape gradient with
``(f(x + ε) - f(x - ε)) / 2ε`` on a random subset of entries and reports the normwise
relative error ``max|analytic - numeric| / max|numeric|``.
"""
from __future__ import annotations

import time

import numpy as np

from .field import random_field
from .geometry import Camera, CameraIntrinsics, Pose
from .interaction import aggregate, build_grid, offset_group_loss
from .neural import GaussianHeads, HybridNetConfig, ops
from .neural.tensor import Tensor, parameter
from .objective import color_loss, cross_entropy
from .rasterizer import RasterConfig
from .rasterizer.autograd import render

OPS_TOL = 1e-3
RASTER_TOL = 1e-3
END_TO_END_TOL = 1e-2


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def check_gradients(fn, inputs, eps=1e-3, max_entries=24, rng=None):
    """Worst relative error over ``inputs`` for scalar-valued ``fn(*tensors)``.

    ``inputs`` are arrays; each becomes a leaf tensor. At most ``max_entries`` randomly
    chosen entries per input are probed.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [parameter(a) for a in arrays]
    out = fn(*leaves)
    out.backward()
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        grad = np.zeros_like(arr) if leaf.grad is None else leaf.grad
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = old - eps
            fm = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = old
            numeric[n] = (fp - fm) / (2 * eps)
        worst = max(worst, relative_error(grad.reshape(-1)[idx], numeric))
    return worst


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _weighted_sum(y, seed=7):
    """Fixed random linear functional of ``y`` so every output entry matters."""
    return (y * Tensor(np.random.default_rng(seed).normal(size=y.shape))).sum()


def check_ops(seed=0, eps=1e-3):
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    ws = _weighted_sum
    target = np.clip(r(4, 4, 3), 0, 1)
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    attn_w = [r(4, 4) * 0.5 for _ in range(3)]
    cases = {
        "add": (lambda a, b: ws(a + b), [r(3, 4), r(4)]),
        "sub": (lambda a, b: ws(a - b), [r(3, 4), r(3, 1)]),
        "mul": (lambda a, b: ws(a * b), [r(3, 4), r(3, 4)]),
        "div": (lambda a, b: ws(ops.div(a, b)), [r(3, 4), pos]),
        "exp": (lambda a: ws(ops.exp(a)), [r(3, 4)]),
        "log": (lambda a: ws(ops.log(a)), [pos]),
        "abs": (lambda a: ws(ops.abs(a)), [_away_from_zero(rng, (3, 4))]),
        "square": (lambda a: ws(ops.square(a)), [r(3, 4)]),
        "relu": (lambda a: ws(ops.relu(a)), [_away_from_zero(rng, (3, 4))]),
        "sigmoid": (lambda a: ws(ops.sigmoid(a)), [r(3, 4)]),
        "tanh": (lambda a: ws(ops.tanh(a)), [r(3, 4)]),
        "smooth_l1": (lambda a: ws(ops.smooth_l1(a, 1.0)),
                      [np.array([[-2.0, -0.5, 0.3, 1.7]])]),
        "sum_axis": (lambda a: ws(ops.sum(a, axis=1)), [r(3, 4)]),
        "mean": (lambda a: ws(ops.mean(a, axis=0, keepdims=True)), [r(3, 4)]),
        "getitem": (lambda a: ws(a[1:, ::2]), [r(3, 4)]),
        "gather_rows": (lambda a: ws(ops.gather_rows(a, np.array([2, 0, 2]))), [r(3, 4)]),
        "concat": (lambda a, b: ws(ops.concat([a, b], axis=-1)), [r(3, 2), r(3, 3)]),
        "matmul": (lambda a, b: ws(ops.matmul(a, b)), [r(3, 4), r(4, 2)]),
        "linear": (lambda x, w, b: ws(ops.linear(x, w, b)), [r(5, 3), r(3, 4), r(4)]),
        "softmax": (lambda a: ws(ops.softmax(a)), [r(3, 5)]),
        "log_softmax": (lambda a: ws(ops.log_softmax(a)), [r(3, 5)]),
        "self_attention": (lambda x, q, k, v: ws(ops.self_attention(x, q, k, v)),
                           [r(2, 5, 4)] + attn_w),
        "conv2d": (lambda x, w, b: ws(ops.conv2d(x, w, b)), [r(1, 5, 6, 2), r(3, 3, 2, 3), r(3)]),
        "conv2d_stride2": (lambda x, w: ws(ops.conv2d(x, w, stride=2)),
                           [r(2, 6, 6, 2), r(3, 3, 2, 2)]),
        "group_norm": (lambda x, g, b: ws(ops.group_norm(x, 2, g, b)),
                       [r(2, 3, 3, 4), r(4), r(4)]),
        "upsample2x": (lambda x: ws(ops.upsample2x(x)), [r(1, 3, 4, 2)]),
        "normalize_rows": (lambda x: ws(ops.normalize_rows(x)), [r(4, 4)]),
        "segment_mean": (lambda x: ws(ops.segment_mean(x, np.array([0, 1, 0, 2]), 3)),
                         [r(4, 3)]),
        "color_loss": (lambda x: color_loss(x, target), [r(4, 4, 3)]),
        "cross_entropy": (lambda x: cross_entropy(x, np.array([[0, 2, 255], [1, 1, 0]]))[0],
                          [r(2, 3, 3)]),
    }
    return {name: check_gradients(fn, args, eps, rng=rng) for name, (fn, args) in cases.items()}


def probe_camera(width=32, height=32, distance=2.5):
    intr = CameraIntrinsics.from_fov(width, height, 50.0)
    return Camera(intr, Pose.look_at((0.3, -distance, 0.4), (0.0, 0.0, 0.0)))


def check_rasterizer(seed=0, eps=1e-4, n=10, size=32):
    """All five parameter groups of the colour and semantic cases plus alpha/depth outputs."""
    rng = np.random.default_rng(seed)
    cam = probe_camera(size, size)
    raster = RasterConfig(tile_size=8)
    out = {}
    for kind, channels in (("color", 3), ("semantic", 4)):
        f = random_field(n, channels, kind, seed=seed, extent=2.0, scale_range=(0.08, 0.25))
        f.centers[:] = rng.uniform(-0.5, 0.5, size=(n, 3))
        weights = rng.normal(size=(size, size, channels))

        def loss(c, q, s, o, p, kind=kind, weights=weights):
            img, _ = render(c, q, s, o, p, cam, raster, kind, 2.0)
            return (img * Tensor(weights)).sum()

        out[f"render_{kind}"] = check_gradients(
            loss, [f.centers, f.quaternions, f.log_scales, f.opacity_logits, f.payloads],
            eps, max_entries=40, rng=rng)
    from .rasterizer import rasterize, rasterize_backward
    f = random_field(n, 3, "color", seed=seed + 1, extent=2.0, scale_range=(0.08, 0.25))
    f.centers[:] = rng.uniform(-0.5, 0.5, size=(n, 3))
    wa, wd = rng.normal(size=(size, size)), rng.normal(size=(size, size))

    def scalar(field):
        o = rasterize(field, cam, raster)
        return float(np.sum(o.alpha * wa) + np.sum(o.depth * wd))

    _, st = rasterize(f, cam, raster, return_state=True)
    g = rasterize_backward(f, cam, raster, st, np.zeros((size, size, 3)), wa, wd)
    worst = 0.0
    for name in ("centers", "log_scales", "opacity_logits"):
        arr = getattr(f, name)
        analytic = getattr(g, name)
        flat = arr.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = scalar(f)
            flat[i] = old - eps
            fm = scalar(f)
            flat[i] = old
            numeric[i] = (fp - fm) / (2 * eps)
        worst = max(worst, relative_error(analytic.reshape(-1), numeric))
    out["alpha_depth"] = worst
    return out


def check_interaction(seed=0, eps=1e-3):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 1, size=(12, 3))
    grid = build_grid(pos, 0.45)
    feats = rng.normal(size=(12, 4))
    results = {"aggregate": check_gradients(
        lambda v, w, b: _weighted_sum(aggregate(v, grid, pos, w, b)),
        [feats, rng.normal(size=(8, 4)), rng.normal(size=4)], eps, rng=rng)}
    cam = probe_camera(24, 24)
    depth = np.full((24, 24), 2.4) + rng.uniform(-0.3, 0.3, size=(24, 24))
    pts = rng.uniform(-0.3, 0.3, size=(15, 3))
    prob = rng.uniform(0, 1, size=15)
    prob[np.abs(prob - 0.5) < 0.05] = 0.2

    # mask held fixed: the probability input is a constant here
    def group(p):
        return offset_group_loss(p, Tensor(prob), [cam], [depth], 1.0)[0]

    results["offset_group_loss"] = check_gradients(group, [pts], eps, rng=rng)
    heads = GaussianHeads(6, "semantic", 3, rng, init_gain=1.0)
    feats6 = rng.normal(size=(5, 6))

    def head_sum(x, w):
        heads.weight = w
        out = heads(x, 0.1, 2.0)
        return sum(_weighted_sum(t, i) for i, t in enumerate(
                   (out.offset_prob, out.offset, out.log_scales, out.quaternions,
                    out.opacity_logits, out.payloads)))

    results["gaussian_heads"] = check_gradients(head_sum, [feats6, heads.weight.data.copy()],
                                                eps, rng=rng)
    return results


def micro_scene(seed=0, size=16, n_views=3):
    """A 16 x 16 scene: K source views plus one target, labels for η = 3."""
    from .pipeline.scenes import OrbitSpec, Primitive, SceneSpec, generate_scene
    spec = SceneSpec(seed=seed, width=size, height=size, n_classes=3,
                     primitives=[Primitive("sphere", (0.0, 0.0, 0.2), (0.2, 0.2, 0.2), 2,
                                           (0.8, 0.3, 0.2), pattern=8.0)],
                     orbit=OrbitSpec(n_source=n_views, n_novel=0))
    return generate_scene(spec).source


def check_end_to_end(seed=0, eps=1e-5, n_probe=5):
    """Scalar training loss with respect to ``n_probe`` random network weights.

    The offset mask is held fixed, so the t̂ partition pull (which is not the derivative
    of any loss value) is switched off.
    """
    from .pipeline.model import GSsplatModel
    from .pipeline.train import TrainConfig, scene_losses
    views = micro_scene(seed)
    src, tgt = views.subset([0, 1]), views.subset([2])
    model = GSsplatModel(HybridNetConfig(encoder_channels=8, decoder_channels=8, n_classes=3,
                                         attention_layers=1, seed=seed))
    config = TrainConfig(raster=RasterConfig(tile_size=8), partition_gradient=False)
    params = model.named_parameters()
    names = sorted(params)
    rng = np.random.default_rng(seed)
    loss, _ = scene_losses(model, src, tgt, config)
    loss.backward()
    analytic, numeric = [], []
    picked = rng.choice(len(names), n_probe, replace=False)
    for j in picked:
        p = params[names[j]]
        flat = p.data.reshape(-1)
        i = int(rng.integers(flat.size))
        analytic.append(p.grad.reshape(-1)[i] if p.grad is not None else 0.0)
        old = flat[i]
        flat[i] = old + eps
        fp = float(scene_losses(model, src, tgt, config)[0].data)
        flat[i] = old - eps
        fm = float(scene_losses(model, src, tgt, config)[0].data)
        flat[i] = old
        numeric.append((fp - fm) / (2 * eps))
    return {"end_to_end": relative_error(analytic, numeric)}


CHECKS = {
    "ops": (check_ops, OPS_TOL),
    "rasterizer": (check_rasterizer, RASTER_TOL),
    "interaction": (check_interaction, OPS_TOL),
    "end_to_end": (check_end_to_end, END_TO_END_TOL),
}


def run(modules=None, seed=0):
    """Returns ``{module: {"errors": {...}, "max": .., "tolerance": .., "passed": ..}}``."""
    modules = list(CHECKS) if not modules else list(modules)
    report = {}
    for name in modules:
        fn, tol = CHECKS[name]
        start = time.perf_counter()
        errors = fn(seed=seed)
        worst = max(errors.values())
        report[name] = {"errors": errors, "max": worst, "tolerance": tol,
                        "passed": bool(worst < tol), "seconds": time.perf_counter() - start}
    return report
