"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"CNCK"                 magic
    u32                     format version (1)
    u32 + bytes             NetworkConfig as UTF-8 JSON
    u32                     number of tensors
    per tensor:
        u16 + bytes         UTF-8 parameter name
        u8                  ndim
        u64 * ndim          dims
        f32 * prod(dims)    payload, C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Network, NetworkConfig

MAGIC = b"CNCK"
VERSION = 1


def checkpoint_bytes(net: Network) -> bytes:
    cfg = json.dumps(net.cfg.as_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(net.params))]
    for name, p in net.params.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}Q", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(buf: bytes) -> Network:
    if buf[:4] != MAGIC:
        raise ValueError("bad checkpoint magic")
    pos = 4
    (version,) = struct.unpack_from("<I", buf, pos)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos += 4
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    cfg = NetworkConfig.from_dict(json.loads(buf[pos:pos + n].decode()))
    pos += n
    net = Network(cfg, np.float32, init=False)
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + size > len(buf):
            raise ValueError(f"payload length mismatch for {name}")
        net.params[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += size
    if pos != len(buf):
        raise ValueError("payload length mismatch: trailing bytes")
    return net


def save_checkpoint(path, net: Network) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def load_checkpoint(path) -> Network:
    return checkpoint_from_bytes(Path(path).read_bytes())
