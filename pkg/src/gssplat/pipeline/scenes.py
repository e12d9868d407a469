"""Deterministic synthetic indoor scenes with analytic depth and per-primitive labels.

Two renderers are available:

* ``"primitives"``: textured boxes, panels and ellipsoids inside a room (floor = class 0,
  walls/ceiling = class 1), ray cast analytically with Lambertian shading.
* ``"reference_field"``: a random Gaussian field rendered by the splatting rasterizer;
  used as a known-answer target for per-scene fitting.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ContractError
from ..field import COLOR, SEMANTIC, GaussianField, normalize_quaternions
from ..geometry import Camera, CameraIntrinsics, Pose, pixel_rays, unproject_depth
from ..rasterizer import RasterConfig, rasterize
from .views import ViewSet

PRIMITIVE_TYPES = ("sphere", "ellipsoid", "box", "plane")
FLOOR_CLASS = 0
WALL_CLASS = 1


@dataclass
class Primitive:
    type: str
    center: tuple
    size: tuple          # radii for sphere/ellipsoid, half extents for box/plane
    class_id: int
    color: tuple
    yaw: float = 0.0     # rotation about +z, radians
    pattern: float = 0.0  # checker frequency (cycles per metre), 0 = plain

    def __post_init__(self):
        if self.type not in PRIMITIVE_TYPES:
            raise ConfigurationError(f"unknown primitive type {self.type!r}")


@dataclass
class OrbitSpec:
    radius: float = 1.2
    height: float = 0.8
    target: tuple = (0.0, 0.0, 0.2)
    n_source: int = 4
    n_novel: int = 2
    arc_degrees: float = 90.0
    start_degrees: float = 0.0
    jitter: float = 0.0


@dataclass
class SceneSpec:
    seed: int = 0
    primitives: list = field(default_factory=list)
    light_direction: tuple = (0.4, -0.3, 1.0)
    orbit: OrbitSpec = field(default_factory=OrbitSpec)
    width: int = 32
    height: int = 32
    fov_degrees: float = 60.0
    n_classes: int = 6
    renderer: str = "primitives"
    room_half_size: float = 1.6
    room_height: float = 1.6
    reference_gaussians: int = 500
    scene_id: str = "scene"

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        prims = [p if isinstance(p, Primitive) else Primitive(**p)
                 for p in doc.pop("primitives", [])]
        orbit = doc.pop("orbit", {})
        orbit = orbit if isinstance(orbit, OrbitSpec) else OrbitSpec(**orbit)
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        unknown = set(doc) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown scene spec keys: {sorted(unknown)}")
        return cls(primitives=prims, orbit=orbit, **known)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return asdict(self)


def random_scene_spec(seed, n_classes=6, n_objects=None, width=32, height=32, **kwargs):
    """A room with a few random objects; object classes cycle over 2..η-1."""
    if n_classes < 3:
        raise ConfigurationError("need at least 3 classes (floor, wall, one object class)")
    rng = np.random.default_rng(seed)
    n_obj = n_objects or (n_classes - 2) + int(rng.integers(0, 2))
    classes = [2 + (i % (n_classes - 2)) for i in range(n_obj)]
    rng.shuffle(classes)
    # one colour family per class so semantics are learnable across scenes
    base = np.random.default_rng(1234).uniform(0.15, 0.95, size=(n_classes, 3))
    kinds = ("box", "sphere", "ellipsoid", "plane")
    prims = []
    angles = rng.uniform(0, 2 * np.pi) + np.arange(n_obj) * 2 * np.pi / n_obj
    for i, cls_id in enumerate(classes):
        kind = kinds[(cls_id + i) % len(kinds)] if rng.uniform() < 0.5 else kinds[cls_id % 4]
        r = rng.uniform(0.15, 0.4)
        cx, cy = r * np.cos(angles[i]), r * np.sin(angles[i])
        s = rng.uniform(0.08, 0.16, size=3)
        if kind == "sphere":
            s = np.full(3, s[0])
        if kind == "plane":
            s = np.array([s[0] * 1.5, 0.01, s[2] * 1.5])
        cz = s[2] if kind != "plane" else s[2] + rng.uniform(0.0, 0.1)
        color = np.clip(base[cls_id] + rng.normal(scale=0.05, size=3), 0.02, 1.0)
        prims.append(Primitive(kind, (float(cx), float(cy), float(cz)), tuple(map(float, s)),
                               int(cls_id), tuple(map(float, color)),
                               yaw=float(rng.uniform(0, np.pi)),
                               pattern=float(rng.choice([0.0, 12.0]))))
    orbit = OrbitSpec(start_degrees=float(rng.uniform(0, 360)))
    return SceneSpec(seed=seed, primitives=prims, width=width, height=height,
                     n_classes=n_classes, orbit=orbit, scene_id=f"scene_{seed:03d}", **kwargs)


# --- cameras -----------------------------------------------------------------------------

def orbit_cameras(spec: SceneSpec, rng):
    """Source views evenly spaced over the arc; novel views on interleaved angles."""
    o = spec.orbit
    if o.radius <= 0 or o.n_source < 1 or o.n_novel < 0:
        raise ConfigurationError("degenerate camera orbit")
    if spec.width % 4 or spec.height % 4:
        raise ConfigurationError("image width and height must be multiples of 4")
    intr = CameraIntrinsics.from_fov(spec.width, spec.height, spec.fov_degrees)
    n = o.n_source + o.n_novel
    angles = np.deg2rad(o.start_degrees) + np.deg2rad(o.arc_degrees) * np.arange(n) / max(n - 1, 1)
    if abs(o.arc_degrees) >= 360:
        angles = np.deg2rad(o.start_degrees) + 2 * np.pi * np.arange(n) / n
    # interleave: novel views take every other slot inside the arc
    order = np.arange(n)
    if o.n_novel:
        novel_slots = np.linspace(1, n - 2 if n > 2 else n - 1, o.n_novel).round().astype(int)
        novel_slots = np.unique(np.clip(novel_slots, 0, n - 1))
        while len(novel_slots) < o.n_novel:
            extra = np.setdiff1d(order, novel_slots)[: o.n_novel - len(novel_slots)]
            novel_slots = np.sort(np.concatenate([novel_slots, extra]))
    else:
        novel_slots = np.array([], dtype=int)
    source_slots = np.setdiff1d(order, novel_slots)
    cams = []
    for a in angles:
        eye = np.array([o.radius * np.cos(a), o.radius * np.sin(a), o.height])
        if o.jitter:
            eye = eye + rng.normal(scale=o.jitter, size=3)
        horiz = np.hypot(*(eye[:2] - np.asarray(o.target[:2])))
        if horiz < 1e-6:
            raise ConfigurationError("degenerate camera orbit: view direction parallel to up")
        cams.append(Camera(intr, Pose.look_at(eye, o.target)))
    return [cams[i] for i in source_slots], [cams[i] for i in novel_slots]


# --- ray casting ---------------------------------------------------------------------------

def _rot_z(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _hit_ellipsoid(o, d, center, radii, yaw):
    r = _rot_z(yaw)
    lo = (o - center) @ r / radii           # ray in unit-sphere frame
    ld = d @ r / radii
    a = np.sum(ld * ld, axis=-1)
    b = 2 * np.sum(ld * lo, axis=-1)
    c = np.sum(lo * lo) - 1.0
    disc = b * b - 4 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 1e-6, t0, t1)
    ok &= t > 1e-6
    p_local = lo + t[..., None] * ld
    n_local = p_local / radii                # gradient of |x/r|^2
    n = n_local @ r.T
    n /= np.linalg.norm(n, axis=-1, keepdims=True) + 1e-12
    return np.where(ok, t, np.inf), n


def _hit_box(o, d, center, half, yaw, inside=False):
    r = _rot_z(yaw)
    lo = (o - center) @ r
    ld = d @ r
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(np.abs(ld) < 1e-12, 1e-12, ld)
        t1 = (-np.asarray(half) - lo) * inv
        t2 = (np.asarray(half) - lo) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    if inside:
        t = t_far
        axis = np.argmin(tmax, axis=-1)
        ok = (t_far > 1e-6) & (t_near <= t_far)
        sign = -np.sign(np.take_along_axis(ld, axis[..., None], -1)[..., 0])
    else:
        t = t_near
        axis = np.argmax(tmin, axis=-1)
        ok = (t_near <= t_far) & (t_near > 1e-6)
        sign = -np.sign(np.take_along_axis(ld, axis[..., None], -1)[..., 0])
    n_local = np.zeros(d.shape)
    np.put_along_axis(n_local, axis[..., None], sign[..., None], -1)
    return np.where(ok, t, np.inf), n_local @ r.T


def _checker(points, freq):
    if freq <= 0:
        return np.ones(points.shape[:-1])
    cells = np.floor(np.nan_to_num(points * freq, posinf=0.0, neginf=0.0))
    k = cells.astype(np.int64).sum(axis=-1)
    return np.where(k % 2 == 0, 1.0, 0.65)


def raycast(spec: SceneSpec, camera: Camera):
    """Returns (rgb H x W x 3, planar depth H x W, labels H x W)."""
    origin, dirs = pixel_rays(camera)   # dirs have camera-z = 1, so t is planar depth
    h, w = camera.height, camera.width
    best_t = np.full((h, w), np.inf)
    normal = np.zeros((h, w, 3))
    albedo = np.zeros((h, w, 3))
    labels = np.full((h, w), 255, dtype=np.int64)
    L, H = spec.room_half_size, spec.room_height
    t_room, n_room = _hit_box(origin, dirs, np.array([0.0, 0.0, H / 2]),
                              np.array([L, L, H / 2]), 0.0, inside=True)
    hit_p = origin + t_room[..., None] * dirs
    is_floor = n_room[..., 2] > 0.5
    floor_col = np.array([0.55, 0.5, 0.45]) * _checker(hit_p[..., :2], 4.0)[..., None]
    wall_col = np.array([0.75, 0.78, 0.8]) * (0.8 + 0.2 * np.clip(hit_p[..., 2:3] / H, 0, 1))
    ok = np.isfinite(t_room)
    best_t = np.where(ok, t_room, best_t)
    normal = np.where(ok[..., None], n_room, normal)
    albedo = np.where(is_floor[..., None], floor_col, wall_col)
    labels = np.where(ok, np.where(is_floor, FLOOR_CLASS, WALL_CLASS), labels)
    for prim in spec.primitives:
        c = np.asarray(prim.center, dtype=np.float64)
        s = np.asarray(prim.size, dtype=np.float64)
        if prim.type in ("sphere", "ellipsoid"):
            t, n = _hit_ellipsoid(origin, dirs, c, s, prim.yaw)
        else:
            t, n = _hit_box(origin, dirs, c, s, prim.yaw)
        closer = t < best_t
        if not closer.any():
            continue
        p = origin + t[..., None] * dirs
        col = np.asarray(prim.color)[None, None, :] * _checker(p - c, prim.pattern)[..., None]
        best_t = np.where(closer, t, best_t)
        normal = np.where(closer[..., None], n, normal)
        albedo = np.where(closer[..., None], col, albedo)
        labels = np.where(closer, prim.class_id, labels)
    light = np.asarray(spec.light_direction, dtype=np.float64)
    light /= np.linalg.norm(light)
    shade = 0.35 + 0.65 * np.clip(normal @ light, 0.0, None)
    rgb = np.clip(albedo * shade[..., None], 0.0, 1.0)
    valid = np.isfinite(best_t)
    depth = np.where(valid, best_t, 0.0)
    rgb = np.where(valid[..., None], rgb, 0.0)
    return rgb, depth, np.where(valid, labels, 255)


# --- reference-field scenes -------------------------------------------------------------------

def reference_fields(spec: SceneSpec):
    """Random colour field and a one-hot semantic field with identical geometry."""
    rng = np.random.default_rng(spec.seed)
    n = spec.reference_gaussians
    r = 0.45 * rng.uniform(0, 1, size=n) ** (1 / 3)
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    centers = direction * r[:, None] + np.asarray(spec.orbit.target)
    quats = normalize_quaternions(rng.normal(size=(n, 4)))
    log_s = np.log(rng.uniform(0.025, 0.07, size=(n, 3)))
    opacity = rng.normal(1.5, 0.7, size=n)
    colors = rng.uniform(0.05, 0.95, size=(n, 3))
    # classes are spatially coherent: each Gaussian takes the label of its nearest anchor
    anchors = rng.normal(size=(spec.n_classes, 3))
    anchors = 0.4 * anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
    anchors += np.asarray(spec.orbit.target)
    classes = np.argmin(np.linalg.norm(centers[:, None] - anchors[None], axis=2), axis=1)
    onehot = np.eye(spec.n_classes)[classes]
    extent = 2.0
    color = GaussianField(centers, quats, log_s, opacity, colors, COLOR, extent)
    return color, color.with_payloads(onehot, SEMANTIC)


def render_reference_views(color, semantic, cameras, raster=RasterConfig(), alpha_valid=0.5):
    images, depths, labels = [], [], []
    for cam in cameras:
        out_c = rasterize(color, cam, raster)
        out_s = rasterize(semantic, cam, raster)
        valid = out_c.alpha > alpha_valid
        images.append(np.clip(out_c.channels, 0, 1))
        depths.append(np.where(valid, out_c.depth, 0.0))
        labels.append(np.where(valid, out_s.argmax(), 255))
    return np.stack(images), np.stack(depths), np.stack(labels)


@dataclass
class SceneData:
    source: ViewSet
    novel: ViewSet
    reference: GaussianField
    semantic_reference: GaussianField | None = None
    spec: SceneSpec | None = None


def _reference_from_views(views: ViewSet, stride=2):
    """Coarse colour field: one isotropic Gaussian per strided source pixel."""
    centers, colors, scales = [], [], []
    for k, cam in enumerate(views.cameras):
        d = views.depths[k].copy()
        keep = np.zeros_like(d, dtype=bool)
        keep[::stride, ::stride] = True
        d[~keep] = 0.0
        pts = unproject_depth(cam, d)
        rows, cols = np.nonzero(d > 0)
        centers.append(pts)
        colors.append(views.images[k][rows, cols])
        scales.append(d[rows, cols] / cam.intrinsics.fx * stride)
    c = np.concatenate(centers)
    s = np.log(np.concatenate(scales))
    n = len(c)
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianField(c, quats, np.repeat(s[:, None], 3, axis=1), np.full(n, 2.0),
                         np.concatenate(colors), COLOR, views.scene_extent)


def generate_scene(spec: SceneSpec) -> SceneData:
    """Render source/novel view sets deterministically from ``spec``."""
    if spec.renderer not in ("primitives", "reference_field"):
        raise ConfigurationError(f"unknown renderer {spec.renderer!r}")
    rng = np.random.default_rng(spec.seed)
    src_cams, novel_cams = orbit_cameras(spec, rng)
    if spec.renderer == "reference_field":
        color, semantic = reference_fields(spec)
        extent = color.scene_extent

        def build(cams):
            if not cams:
                return None
            img, dep, lab = render_reference_views(color, semantic, cams)
            return ViewSet(img, dep, cams, lab, spec.scene_id, extent, spec.n_classes)

        return SceneData(build(src_cams), build(novel_cams), color, semantic, spec)
    for prim in spec.primitives:
        if not 0 <= prim.class_id < spec.n_classes:
            raise ContractError(f"primitive class {prim.class_id} outside [0, {spec.n_classes})")
    extent = float(2 * spec.room_half_size)

    def build(cams):
        if not cams:
            return None
        imgs, deps, labs = zip(*(raycast(spec, c) for c in cams))
        return ViewSet(np.stack(imgs), np.stack(deps), cams, np.stack(labs), spec.scene_id,
                       extent, spec.n_classes)

    source = build(src_cams)
    return SceneData(source, build(novel_cams), _reference_from_views(source), None, spec)
