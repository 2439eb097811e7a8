"""Shared containers and numeric primitives.

Layout convention for dense network tensors: ``(batch, channel, depth,
height, width)``, C-order, width fastest. Volumes and label maps are stored
as ``(depth, height, width)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

NUM_CLASSES = 5
CLASS_NAMES = ("background", "kidney", "tumor", "artery", "vein")


@dataclass
class Volume:
    """3D intensity grid with physical geometry in millimetres."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass
class LabelMap:
    """3D integer class map over {0..4} sharing Volume's geometry fields."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    num_classes: int = field(default=NUM_CLASSES, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"label map must be 3D, got shape {data.shape}")
        if data.size and (data.min() < 0 or data.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes - 1}]")
        self.data = data.astype(np.int8)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


def same_geometry(a, b, atol: float = 1e-6) -> bool:
    return (
        a.dims == b.dims
        and np.allclose(a.spacing, b.spacing, rtol=0, atol=atol)
        and np.allclose(a.origin, b.origin, rtol=0, atol=atol)
    )


class Rng:
    """Seeded counter-based generator (Philox-4x64 via numpy).

    Uniform draws are 53-bit doubles in [0, 1). Normal draws use the
    Box-Muller transform on pairs of uniforms, so the normal stream is
    fully determined by the uniform stream.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    @property
    def counter(self) -> int:
        state = self._gen.bit_generator.state["state"]["counter"]
        return int(sum(int(c) << (64 * i) for i, c in enumerate(state)))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return low + (high - low) * self._gen.random(size)

    def normal(self, size=None):
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        n = int(np.prod(shape, dtype=np.int64))
        out = _box_muller(self._gen.random(2 * ((n + 1) // 2)))[:n]
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self) -> "Rng":
        """Independent stream seeded from this one."""
        return Rng(int(self._gen.integers(0, 2**63 - 1)))


def _box_muller(u: np.ndarray) -> np.ndarray:
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).ravel()


def rng_normal(rng: Rng, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    return rng.normal(int(n)) if n else np.zeros(0)


def softmax_channels(t: np.ndarray) -> np.ndarray:
    """Softmax over axis 1 of a (B, C, D, H, W) tensor, max-subtracted."""
    t = np.asarray(t)
    if t.ndim != 5:
        raise ValueError(f"expected a 5D tensor, got shape {t.shape}")
    if t.shape[1] < 1:
        raise ValueError("need at least one channel")
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite logits")
    e = np.exp(t - t.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def percentile(values, p: float) -> float:
    """Linear interpolation between order statistics at rank p/100*(n-1)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"p must lie in [0, 100], got {p}")
    rank = p / 100.0 * (v.size - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, v.size - 1)
    frac = rank - lo
    return float(v[lo] + (v[hi] - v[lo]) * frac)


_TENSOR_MAGIC = b"T5D1"


def tensor_to_bytes(t: np.ndarray) -> bytes:
    """Little-endian float32 serialization with a dims header."""
    t = np.asarray(t, dtype="<f4")
    if t.ndim != 5:
        raise ValueError(f"expected a 5D tensor, got shape {t.shape}")
    return _TENSOR_MAGIC + struct.pack("<5Q", *t.shape) + np.ascontiguousarray(t).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != _TENSOR_MAGIC:
        raise ValueError("bad tensor magic")
    dims = struct.unpack("<5Q", buf[4:44])
    payload = buf[44:]
    if len(payload) != 4 * int(np.prod(dims)):
        raise ValueError("payload length mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
