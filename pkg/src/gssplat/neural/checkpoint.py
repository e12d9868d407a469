"""Weight checkpoints: ``GSNN`` binary of ordered named tensors plus a JSON config sidecar.

Layout (little-endian)::

    magic "GSNN" | u32 version | u32 count
    repeated: u16 name_len | name utf-8 | u8 dtype (0=f32, 1=f64) | u8 ndim | u32 dims... | data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptionError, FormatError, VersionError

MAGIC = b"GSNN"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}


def save_weights(path, named_arrays, config_json=None, dtype="f8"):
    code = 1 if dtype == "f8" else 0
    parts = [MAGIC, struct.pack("<II", VERSION, len(named_arrays))]
    for name, arr in named_arrays.items():
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path = Path(path)
    path.write_bytes(b"".join(parts))
    if config_json is not None:
        sidecar(path).write_text(config_json)


def sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_weights(path):
    """Returns ``(ordered dict name -> float64 array, config dict or None)``."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: not a GSNN checkpoint")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise VersionError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            dt = np.dtype(_DTYPES[code])
            size = int(np.prod(shape)) * dt.itemsize
            if pos + size > len(buf):
                raise CorruptionError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)),
                                      offset=pos).astype(np.float64).reshape(shape)
            pos += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CorruptionError(f"{path}: malformed checkpoint ({exc})") from exc
    config = None
    side = sidecar(path)
    if side.exists():
        config = json.loads(side.read_text())
    return out, config
