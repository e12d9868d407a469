"""Pinhole cameras, rigid poses and pixel <-> world mapping.

Conventions:

* ``Pose`` stores the *world-from-camera* transform; projection applies its inverse.
* Integer pixel ``(i, j)`` (column, row) is sampled at continuous ``(i + 0.5, j + 0.5)``.
* Depth is planar camera-frame ``z``, never ray length.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

BEHIND_EPS = 1e-8


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ContractError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def from_fov(cls, width, height, fov_x_deg):
        fx = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_x_deg))
        return cls(float(fx), float(fx), width / 2.0, height / 2.0, int(width), int(height))

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class Pose:
    """Rigid world-from-camera transform."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if self.check:
            if np.abs(r @ r.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
                raise ContractError("pose rotation is not a proper orthonormal matrix")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (16,):
            m = m.reshape(4, 4)
        if m.shape != (4, 4):
            raise ContractError(f"expected a 4x4 transform, got shape {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)):
        """Camera at ``eye`` looking at ``target``; camera axes x right, y down, z forward."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(z)
        if norm < 1e-12:
            raise ContractError("look_at: eye and target coincide")
        z = z / norm
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-9:
            raise ContractError("look_at: view direction parallel to up vector")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.stack([x, y, z], axis=1), eye)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def world_to_camera(self):
        """(R, t) such that ``p_cam = R @ p_world + t``."""
        r = self.rotation.T
        return r, -r @ self.translation

    def transform(self, points):
        """Map camera-frame points to world frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    @property
    def optical_axis(self):
        return self.rotation[:, 2].copy()


def compose(pose_a: Pose, pose_b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return Pose(pose_a.rotation @ pose_b.rotation,
                pose_a.rotation @ pose_b.translation + pose_a.translation, check=False)


def invert(pose: Pose) -> Pose:
    r = pose.rotation.T
    return Pose(r, -r @ pose.translation, check=False)


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: Pose

    @property
    def width(self):
        return self.intrinsics.width

    @property
    def height(self):
        return self.intrinsics.height

    def to_dict(self):
        return {"intrinsics": self.intrinsics.to_dict(),
                "world_from_camera": self.pose.matrix().reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, doc):
        try:
            intr = doc["intrinsics"]
            intrinsics = CameraIntrinsics(
                float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"]),
                int(intr["width"]), int(intr["height"]),
            )
            matrix = doc["world_from_camera"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"camera entry missing field: {exc}") from exc
        if len(matrix) != 16:
            raise FormatError("world_from_camera must hold 16 row-major values")
        try:
            pose = Pose.from_matrix(np.asarray(matrix, dtype=np.float64))
        except ContractError as exc:
            raise FormatError(str(exc)) from exc
        return cls(intrinsics, pose)


@dataclass(frozen=True)
class PixelCoord:
    u: float
    v: float
    depth: float


def project_point(camera: Camera, x):
    """Project a world point. Returns ``PixelCoord`` or ``None`` when behind the camera."""
    r, t = camera.pose.world_to_camera()
    xc, yc, zc = r @ np.asarray(x, dtype=np.float64) + t
    if zc <= BEHIND_EPS:
        return None
    k = camera.intrinsics
    return PixelCoord(k.fx * xc / zc + k.cx, k.fy * yc / zc + k.cy, float(zc))


def project_points(camera: Camera, points):
    """Vectorised projection.

    Returns ``(uv, depth, in_front)`` where ``uv`` is N x 2; rows with
    ``in_front == False`` hold garbage.
    """
    r, t = camera.pose.world_to_camera()
    pc = np.asarray(points, dtype=np.float64) @ r.T + t
    z = pc[:, 2]
    in_front = z > BEHIND_EPS
    zs = np.where(in_front, z, 1.0)
    k = camera.intrinsics
    uv = np.stack([k.fx * pc[:, 0] / zs + k.cx, k.fy * pc[:, 1] / zs + k.cy], axis=1)
    return uv, z, in_front


def unproject_pixels(camera: Camera, u, v, depth):
    """Lift continuous pixel coordinates with planar depth into world points."""
    k = camera.intrinsics
    depth = np.asarray(depth, dtype=np.float64)
    xc = (np.asarray(u, dtype=np.float64) - k.cx) / k.fx * depth
    yc = (np.asarray(v, dtype=np.float64) - k.cy) / k.fy * depth
    return camera.pose.transform(np.stack([xc, yc, depth], axis=-1))


def valid_depth_mask(depth):
    depth = np.asarray(depth)
    return np.isfinite(depth) & (depth > 0)


def unproject_depth(camera: Camera, depth):
    """One world point per strictly positive depth pixel, row-major order."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (camera.height, camera.width):
        raise ContractError(
            f"depth map {depth.shape} does not match camera {camera.height}x{camera.width}"
        )
    rows, cols = np.nonzero(valid_depth_mask(depth))
    if rows.size == 0:
        return np.zeros((0, 3))
    return unproject_pixels(camera, cols + 0.5, rows + 0.5, depth[rows, cols])


def pixel_centers(width, height):
    """Continuous (u, v) of every pixel centre, each H x W."""
    u, v = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    return u, v


def pixel_rays(camera: Camera):
    """World-frame ray origins and *unnormalised* directions with camera-z component 1."""
    k = camera.intrinsics
    u, v = pixel_centers(k.width, k.height)
    dirs_cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    dirs = dirs_cam @ camera.pose.rotation.T
    return camera.pose.translation, dirs


# --- camera files -------------------------------------------------------------------------

CAMERA_FILE_VERSION = 1


def save_cameras(path, cameras, extra=None, meta=None):
    """Write a camera file: ``{"version", "views": [{"intrinsics", "world_from_camera", ...}]}``.

    ``extra`` holds one dict of additional keys per view, ``meta`` top-level keys.
    """
    views = []
    for i, cam in enumerate(cameras):
        entry = cam.to_dict()
        entry["name"] = f"{i:04d}"
        if extra is not None:
            entry.update(extra[i])
        views.append(entry)
    doc = {"version": CAMERA_FILE_VERSION, **(meta or {}), "views": views}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_cameras(path):
    """Parse a camera file; returns ``(cameras, raw_view_entries)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "views" not in doc:
        raise FormatError(f"{path}: missing 'views'")
    if doc.get("version", CAMERA_FILE_VERSION) != CAMERA_FILE_VERSION:
        raise FormatError(f"{path}: unsupported camera file version {doc.get('version')}")
    cams = [Camera.from_dict(v) for v in doc["views"]]
    return cams, doc["views"]
