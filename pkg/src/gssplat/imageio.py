"""Minimal Netpbm (PPM/PGM) and PFM readers and writers.

* PPM: binary ``P6``, maxval 255, RGB rows top to bottom.
* PGM: binary ``P5``, maxval 255, used for 8-bit label maps.
* PFM: ``PF`` (3 channels) or ``Pf`` (1 channel), scale ``-1.0`` (little-endian float32),
  rows stored bottom to top as the format requires.
"""
from pathlib import Path

import numpy as np

from .errors import FormatError


def to_uint8(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _read_tokens(data, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("unexpected end of Netpbm header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def write_ppm(path, rgb):
    """``rgb``: H x W x 3 floats in [0, 1] or uint8."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = to_uint8(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"PPM needs H x W x 3, got {rgb.shape}")
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb).tobytes())


def write_pgm(path, gray):
    gray = np.asarray(gray)
    if gray.dtype != np.uint8:
        if gray.min(initial=0) < 0 or gray.max(initial=0) > 255:
            raise FormatError("PGM values must lie in [0, 255]")
        gray = gray.astype(np.uint8)
    h, w = gray.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(gray).tobytes())


def _read_netpbm(path, magic, channels):
    data = Path(path).read_bytes()
    if data[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} file")
    (w, h, maxval), pos = _read_tokens(data[2:], 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    body = data[2 + pos:]
    need = w * h * channels
    if len(body) < need:
        raise FormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(body[:need], dtype=np.uint8)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def read_ppm(path):
    """Returns H x W x 3 float64 in [0, 1]."""
    return _read_netpbm(path, b"P6", 3).astype(np.float64) / 255.0


def read_pgm(path):
    return _read_netpbm(path, b"P5", 1).copy()


def write_pfm(path, arr):
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise FormatError(f"PFM needs H x W or H x W x 3, got {arr.shape}")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(arr[::-1]).tobytes()
    Path(path).write_bytes(magic + b"\n%d %d\n-1.0\n" % (w, h) + body)


def read_pfm(path):
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: not a PFM file")
    (w, h, scale), pos = _read_tokens(data[2:], 3)
    w, h, scale = int(w), int(h), float(scale)
    channels = 3 if magic == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * channels * 4
    body = data[2 + pos:]
    if len(body) < need:
        raise FormatError(f"{path}: truncated PFM data")
    arr = np.frombuffer(body[:need], dtype=dtype).astype(np.float64)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return arr[::-1].copy()
