"""VVOL: a minimal binary container for volumes and label maps.

Header, little-endian, 57 bytes::

    offset  size  field
    0       4     magic b"VVOL"
    4       4     u32 version (1)
    8       1     u8 dtype code: 0 = float32 intensities, 1 = int8 labels
    9       24    3 x u64 dims (depth, height, width)
    33      12    3 x f32 spacing (mm)
    45      12    3 x f32 origin (mm)
    57      ...   payload, C order (width fastest)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..voxcore import LabelMap, Volume

MAGIC = b"VVOL"
VERSION = 1
HEADER = struct.Struct("<4sIB3Q3f3f")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1")}


def vvol_bytes(obj) -> bytes:
    if isinstance(obj, LabelMap):
        code, data = 1, obj.data.astype("i1")
    elif isinstance(obj, Volume):
        code, data = 0, obj.data.astype("<f4")
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as VVOL")
    head = HEADER.pack(MAGIC, VERSION, code, *data.shape, *obj.spacing, *obj.origin)
    return head + np.ascontiguousarray(data).tobytes()


def vvol_from_bytes(buf: bytes, kind: str | None = None):
    """Parse a VVOL buffer. ``kind`` may demand 'volume' or 'label'."""
    if len(buf) < HEADER.size:
        raise ValueError("truncated header")
    magic, version, code, d, h, w, *geo = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    if code not in DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    want = {"volume": 0, "label": 1}.get(kind) if kind else code
    if want is None:
        raise ValueError(f"kind must be 'volume' or 'label', got {kind!r}")
    if want != code:
        raise ValueError(f"dtype mismatch: file holds {'labels' if code else 'intensities'}, expected {kind}")
    dt = DTYPES[code]
    payload = memoryview(buf)[HEADER.size:]
    if len(payload) != d * h * w * dt.itemsize:
        raise ValueError(f"payload length mismatch: {len(payload)} bytes for dims {(d, h, w)}")
    data = np.frombuffer(payload, dtype=dt).reshape(d, h, w).copy()
    spacing, origin = tuple(geo[:3]), tuple(geo[3:])
    if code == 1:
        return LabelMap(data, spacing, origin)
    return Volume(data, spacing, origin)


def write_vvol(path, obj) -> None:
    Path(path).write_bytes(vvol_bytes(obj))


def read_vvol(path, kind: str | None = None):
    return vvol_from_bytes(Path(path).read_bytes(), kind)
