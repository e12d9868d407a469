"""Gaussian radiance fields: storage, covariance math and the ``.gspl`` file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CorruptionError, FormatError, VersionError

COLOR = "color"
SEMANTIC = "semantic"
_KIND_CODES = {COLOR: 0, SEMANTIC: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

SCALE_FLOOR = 1e-6  # relative to scene extent

MAGIC = b"GSPL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIBf")


def normalize_quaternions(q):
    """Row-normalise (w, x, y, z) quaternions; near-zero rows map to identity."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    ident = np.zeros_like(q)
    ident[..., 0] = 1.0
    safe = np.where(norm > 1e-12, norm, 1.0)
    return np.where(norm > 1e-12, q / safe, ident)


def quaternion_to_matrix(q):
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4) in (w, x, y, z) order."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def scale_bounds(scene_extent):
    return np.log(SCALE_FLOOR * scene_extent), np.log(scene_extent)


def build_covariance(rotation, log_scale, scene_extent=None):
    """Σ = R S Sᵀ Rᵀ with S = diag(exp(log_scale)); broadcasts over leading axes."""
    r = quaternion_to_matrix(normalize_quaternions(rotation))
    log_scale = np.asarray(log_scale, dtype=np.float64)
    if scene_extent is not None:
        lo, hi = scale_bounds(scene_extent)
        log_scale = np.clip(log_scale, lo, hi)
    m = r * np.exp(log_scale)[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def evaluate_density(center, rotation, log_scale, x):
    """Unnormalised Gaussian G(x) = exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ)); equals 1 at the centre."""
    # Σ⁻¹ = R S⁻² Rᵀ, avoids an explicit inverse.
    r = quaternion_to_matrix(normalize_quaternions(rotation))
    d = np.asarray(x, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    local = (d[..., None, :] @ r)[..., 0, :] * np.exp(-np.asarray(log_scale, dtype=np.float64))
    return np.exp(-0.5 * np.sum(local * local, axis=-1))


@dataclass
class GaussianField:
    """Structure-of-arrays of N Gaussians carrying C-channel payloads."""

    centers: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    payloads: np.ndarray
    kind: str = COLOR
    scene_extent: float = 1.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = self.centers.shape[0]
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        payloads = np.asarray(self.payloads, dtype=np.float64)
        if payloads.ndim != 2 or payloads.shape[0] != n:
            raise ContractError(f"payloads must be N x C with N={n}, got {payloads.shape}")
        self.payloads = payloads
        if self.kind not in _KIND_CODES:
            raise ContractError(f"unknown field kind {self.kind!r}")
        if self.kind == COLOR and self.channels != 3:
            raise ContractError(f"color fields carry 3 channels, got {self.channels}")
        if self.channels < 1:
            raise ContractError("fields need at least one payload channel")
        if not self.scene_extent > 0:
            raise ContractError("scene_extent must be positive")
        self.scene_extent = float(self.scene_extent)

    def __len__(self):
        return self.centers.shape[0]

    @property
    def channels(self):
        return self.payloads.shape[1]

    @property
    def opacities(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    @property
    def scales(self):
        lo, hi = scale_bounds(self.scene_extent)
        return np.exp(np.clip(self.log_scales, lo, hi))

    def covariances(self):
        return build_covariance(self.quaternions, self.log_scales, self.scene_extent)

    def density(self, index, x):
        return evaluate_density(self.centers[index], self.quaternions[index],
                                np.log(self.scales[index]), x)

    @classmethod
    def empty(cls, channels=3, kind=COLOR, scene_extent=1.0):
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, channels)), kind, scene_extent)

    def subset(self, index):
        return GaussianField(self.centers[index], self.quaternions[index], self.log_scales[index],
                             self.opacity_logits[index], self.payloads[index], self.kind,
                             self.scene_extent)

    def with_payloads(self, payloads, kind=None):
        return GaussianField(self.centers, self.quaternions, self.log_scales, self.opacity_logits,
                             payloads, kind or self.kind, self.scene_extent)

    def copy(self):
        return self.subset(slice(None))

    def check_invariants(self, atol=1e-6):
        """Raise ``ContractError`` if stored values break the Gaussian3D invariants."""
        q_norm = np.linalg.norm(self.quaternions, axis=1)
        if len(self) and np.abs(q_norm - 1).max() > atol:
            raise ContractError("quaternions are not unit length")
        for name in ("centers", "quaternions", "log_scales", "opacity_logits", "payloads"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"non-finite values in {name}")


def random_field(n, channels=3, kind=COLOR, seed=0, extent=1.0, scale_range=(0.02, 0.08)):
    rng = np.random.default_rng(seed)
    q = normalize_quaternions(rng.normal(size=(n, 4)))
    log_s = np.log(rng.uniform(*scale_range, size=(n, 3)) * extent)
    if kind == COLOR:
        pay = rng.uniform(0, 1, size=(n, channels))
    else:
        pay = rng.normal(size=(n, channels))
    return GaussianField(rng.uniform(-0.5, 0.5, size=(n, 3)) * extent, q, log_s,
                         rng.normal(size=n), pay, kind, extent)


def serialize_field(field: GaussianField) -> bytes:
    """Little-endian binary; values are stored as float32."""
    n, c = len(field), field.channels
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, n, c, _KIND_CODES[field.kind],
                          field.scene_extent)]
    for arr in (field.centers, field.quaternions, field.log_scales, field.opacity_logits,
                field.payloads):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize_field(buf: bytes) -> GaussianField:
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise CorruptionError("field stream shorter than header")
    magic, version, n, c, kind, extent = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported field format version {version}")
    if kind not in _KIND_NAMES:
        raise FormatError(f"unknown field kind code {kind}")
    widths = (3, 4, 3, 1, c)
    expected = _HEADER.size + 4 * n * sum(widths)
    if len(buf) < expected:
        raise CorruptionError(f"field stream truncated: {len(buf)} < {expected} bytes")
    if len(buf) > expected:
        raise CorruptionError("trailing bytes after field payload")
    arrays, offset = [], _HEADER.size
    for w in widths:
        count = n * w
        arrays.append(np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
                      .astype(np.float64).reshape(n, w))
        offset += 4 * count
    centers, quats, log_s, opac, pay = arrays
    return GaussianField(centers, quats, log_s, opac[:, 0], pay, _KIND_NAMES[kind], float(extent))


def save_field(path, field):
    with open(path, "wb") as fh:
        fh.write(serialize_field(field))


def load_field(path):
    with open(path, "rb") as fh:
        return deserialize_field(fh.read())
