"""Resampling, intensity normalization and training-time augmentation."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .voxcore import LabelMap, Rng, Volume, percentile

CLIP_PERCENTILES = (0.05, 99.5)
CLIP_PERCENTILES_CONVENTIONAL = (0.5, 99.5)


def median_spacing(spacings) -> tuple[float, float, float]:
    s = np.asarray(list(spacings), dtype=np.float64)
    if s.size == 0:
        raise ValueError("median_spacing needs at least one spacing")
    if s.ndim != 2 or s.shape[1] != 3:
        raise ValueError("spacings must be (mm, mm, mm) triples")
    return tuple(percentile(s[:, i], 50.0) for i in range(3))


# --------------------------------------------------------------------------
# interpolation kernels
# --------------------------------------------------------------------------

def catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Weights for taps at offsets -1, 0, 1, 2 given fractional position t."""
    t2 = t * t
    t3 = t2 * t
    return np.stack([
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ])


def _output_dims(dims, spacing, target, out_dims):
    if any(t <= 0 for t in target):
        raise ValueError(f"target spacing must be positive, got {target}")
    if out_dims is not None:
        return tuple(int(n) for n in out_dims)
    return tuple(max(1, int(round(n * s / t))) for n, s, t in zip(dims, spacing, target))


def _sample_positions(n_out: int, scale: float) -> np.ndarray:
    # center-aligned: output voxel j sits at input coordinate (j + 0.5) * scale - 0.5
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    r = np.round(x)
    return np.where(np.abs(x - r) < 1e-9, r, x)


def _cubic_axis(data: np.ndarray, axis: int, pos: np.ndarray) -> np.ndarray:
    n = data.shape[axis]
    i0 = np.floor(pos).astype(np.int64)
    w = catmull_rom_weights(pos - i0)
    out = 0.0
    for k in range(4):
        idx = np.clip(i0 + k - 1, 0, n - 1)
        shape = [1] * data.ndim
        shape[axis] = -1
        out = out + np.take(data, idx, axis=axis) * w[k].reshape(shape)
    return out


def _nearest_axis(data: np.ndarray, axis: int, pos: np.ndarray) -> np.ndarray:
    idx = np.clip(np.floor(pos + 0.5).astype(np.int64), 0, data.shape[axis] - 1)
    return np.take(data, idx, axis=axis)


def _resampled_origin(origin, spacing, target):
    return tuple(o + (0.5 * t / s - 0.5) * s for o, s, t in zip(origin, spacing, target))


def resample_image(v: Volume, target, out_dims=None) -> Volume:
    """Separable Catmull-Rom cubic resampling to ``target`` spacing."""
    target = tuple(float(t) for t in target)
    dims = _output_dims(v.dims, v.spacing, target, out_dims)
    data = v.data.astype(np.float64)
    for axis in range(3):
        scale = v.dims[axis] / dims[axis] if out_dims is not None else target[axis] / v.spacing[axis]
        if dims[axis] == v.dims[axis] and abs(scale - 1.0) < 1e-12:
            continue
        data = _cubic_axis(data, axis, _sample_positions(dims[axis], scale))
    return Volume(data.astype(np.float32), target, _resampled_origin(v.origin, v.spacing, target))


def resample_mask(m: LabelMap, target, out_dims=None) -> LabelMap:
    """Nearest-center resampling; never introduces new labels."""
    target = tuple(float(t) for t in target)
    dims = _output_dims(m.dims, m.spacing, target, out_dims)
    data = m.data
    for axis in range(3):
        scale = m.dims[axis] / dims[axis] if out_dims is not None else target[axis] / m.spacing[axis]
        if dims[axis] == m.dims[axis] and abs(scale - 1.0) < 1e-12:
            continue
        data = _nearest_axis(data, axis, _sample_positions(dims[axis], scale))
    return LabelMap(data, target, _resampled_origin(m.origin, m.spacing, target), m.num_classes)


# --------------------------------------------------------------------------
# intensity statistics
# --------------------------------------------------------------------------

@dataclass
class PrepStats:
    target_spacing: tuple[float, float, float]
    clip_lo: float
    clip_hi: float
    mu: float
    sigma: float

    def __post_init__(self):
        self.target_spacing = tuple(float(s) for s in self.target_spacing)
        if self.clip_lo > self.clip_hi:
            raise ValueError("clip_lo must not exceed clip_hi")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if min(self.target_spacing) <= 0:
            raise ValueError("target spacing must be positive")

    def save(self, path) -> None:
        """Write as ``key = value`` lines; floats use repr so reads are bit-exact."""
        lines = [
            "target_spacing = " + " ".join(repr(s) for s in self.target_spacing),
            f"clip_lo = {self.clip_lo!r}",
            f"clip_hi = {self.clip_hi!r}",
            f"mu = {self.mu!r}",
            f"sigma = {self.sigma!r}",
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PrepStats":
        kv = {}
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        missing = {"target_spacing", "clip_lo", "clip_hi", "mu", "sigma"} - kv.keys()
        if missing:
            raise ValueError(f"stats file missing keys: {sorted(missing)}")
        return cls(
            target_spacing=tuple(float(x) for x in kv["target_spacing"].split()),
            clip_lo=float(kv["clip_lo"]),
            clip_hi=float(kv["clip_hi"]),
            mu=float(kv["mu"]),
            sigma=float(kv["sigma"]),
        )

    def as_dict(self) -> dict:
        return asdict(self)


def foreground_stats(volumes, masks, target_spacing=None, clip_percentiles=CLIP_PERCENTILES) -> PrepStats:
    """Dataset-wide clip bounds and z-score moments over foreground voxels.

    Intensities are pooled in input order, so the result does not depend on
    how the caller schedules work. Moments are taken after clipping.
    """
    volumes, masks = list(volumes), list(masks)
    if len(volumes) != len(masks):
        raise ValueError("need one mask per volume")
    pool = []
    for v, m in zip(volumes, masks):
        if v.dims != m.dims:
            raise ValueError(f"volume/mask dims differ: {v.dims} vs {m.dims}")
        pool.append(v.data[m.data != 0].astype(np.float64))
    pool = np.concatenate(pool) if pool else np.zeros(0)
    if pool.size == 0:
        raise ValueError("empty foreground")
    lo = percentile(pool, clip_percentiles[0])
    hi = percentile(pool, clip_percentiles[1])
    clipped = np.clip(pool, lo, hi)
    if target_spacing is None:
        target_spacing = median_spacing([v.spacing for v in volumes])
    return PrepStats(target_spacing, lo, hi, float(clipped.mean()), float(clipped.std()))


def clip_normalize(v: Volume, s: PrepStats) -> Volume:
    x = np.clip(v.data.astype(np.float64), s.clip_lo, s.clip_hi)
    if s.sigma < 1e-8:
        z = np.zeros_like(x)
    else:
        z = (x - s.mu) / s.sigma
    return Volume(z.astype(np.float32), v.spacing, v.origin)


def preprocess_case(v: Volume, s: PrepStats, m: LabelMap | None = None):
    """Resample to the stats' target spacing, then clip and normalize."""
    out = clip_normalize(resample_image(v, s.target_spacing), s)
    if m is None:
        return out
    return out, resample_mask(m, s.target_spacing)


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    scale_range: tuple[float, float] = (0.85, 1.25)
    rotation_max: float = 30.0  # degrees
    elastic: bool = True
    elastic_alpha: float = 4.0  # mm
    elastic_sigma: float = 6.0  # mm
    gamma_range: tuple[float, float] = (0.7, 1.5)
    p_scale: float = 0.2
    p_rotation: float = 0.2
    p_elastic: float = 0.2
    p_gamma: float = 0.2

    def __post_init__(self):
        for name in ("scale_range", "gamma_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")
        for name in ("p_scale", "p_rotation", "p_elastic", "p_gamma"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(p_scale=0.0, p_rotation=0.0, p_elastic=0.0, p_gamma=0.0)


def _snap(coords: np.ndarray) -> np.ndarray:
    r = np.round(coords)
    return np.where(np.abs(coords - r) < 1e-6, r, coords)


def sample_cubic(data: np.ndarray, coords: np.ndarray, cval: float) -> np.ndarray:
    """Tricubic Catmull-Rom sampling at voxel coordinates ``coords`` (3, ...)."""
    pad = 3
    padded = np.pad(data.astype(np.float64), pad, mode="constant", constant_values=cval)
    coords = _snap(coords)
    base, weights = [], []
    for axis in range(3):
        c = coords[axis] + pad
        # anything beyond the pad band reads cval
        c = np.clip(c, 1.0, padded.shape[axis] - 3.0)
        i0 = np.floor(c).astype(np.int64)
        base.append(i0)
        weights.append(catmull_rom_weights(c - i0))
    out = np.zeros(coords.shape[1:])
    for a in range(4):
        ia = base[0] + a - 1
        for b in range(4):
            ib = base[1] + b - 1
            wab = weights[0][a] * weights[1][b]
            for c in range(4):
                out += wab * weights[2][c] * padded[ia, ib, base[2] + c - 1]
    return out


def sample_nearest(data: np.ndarray, coords: np.ndarray, cval=0) -> np.ndarray:
    idx = np.floor(_snap(coords) + 0.5).astype(np.int64)
    inside = np.ones(coords.shape[1:], dtype=bool)
    for axis in range(3):
        inside &= (idx[axis] >= 0) & (idx[axis] < data.shape[axis])
        idx[axis] = np.clip(idx[axis], 0, data.shape[axis] - 1)
    return np.where(inside, data[idx[0], idx[1], idx[2]], cval)


def rotation_matrix(axis: int, degrees: float) -> np.ndarray:
    """Rotation in the plane of the two axes other than ``axis``."""
    th = np.deg2rad(degrees)
    c, s = np.cos(th), np.sin(th)
    c = 0.0 if abs(c) < 1e-12 else c
    s = 0.0 if abs(s) < 1e-12 else s
    p, q = [a for a in range(3) if a != axis]
    rot = np.eye(3)
    rot[p, p], rot[p, q], rot[q, p], rot[q, q] = c, -s, s, c
    return rot


def _identity_grid(dims) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"))


def warp_pair(v: Volume, m: LabelMap, coords: np.ndarray):
    """Resample image (cubic) and mask (nearest) at the given input coordinates."""
    img = sample_cubic(v.data, coords, cval=float(v.data.min()))
    lab = sample_nearest(m.data, coords, cval=0)
    return Volume(img.astype(np.float32), v.spacing, v.origin), LabelMap(lab, m.spacing, m.origin, m.num_classes)


def spatial_coords(dims, spacing=(1.0, 1.0, 1.0), scale=None, rotation=None, displacement=None):
    """Input coordinates for each output voxel under an elastic/rotate/scale map.

    ``rotation`` is a 3x3 matrix applied about the volume center, ``scale``
    an isotropic zoom factor (>1 enlarges content), ``displacement`` a
    (3, D, H, W) field in voxels.
    """
    grid = _identity_grid(dims)
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    rel = grid - center.reshape(3, 1, 1, 1)
    if displacement is not None:
        rel = rel + displacement
    if rotation is not None:
        rel = np.einsum("ij,j...->i...", np.asarray(rotation).T, rel)
    if scale is not None:
        rel = rel / scale
    return rel + center.reshape(3, 1, 1, 1)


def elastic_displacement(dims, spacing, alpha: float, sigma: float, rng: Rng) -> np.ndarray:
    """Gaussian-smoothed random field, amplitude ``alpha`` mm, smoothness ``sigma`` mm."""
    fields = []
    for axis in range(3):
        noise = rng.uniform(size=tuple(dims), low=-1.0, high=1.0)
        smooth = gaussian_filter(noise, sigma=[sigma / s for s in spacing], mode="constant")
        peak = np.abs(smooth).max()
        if peak > 0:
            smooth = smooth / peak
        fields.append(smooth * alpha / spacing[axis])
    return np.stack(fields)


def gamma_transform(v: Volume, gamma: float) -> Volume:
    x = v.data.astype(np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return Volume(v.data.copy(), v.spacing, v.origin)
    y = ((x - lo) / (hi - lo)) ** gamma * (hi - lo) + lo
    return Volume(y.astype(np.float32), v.spacing, v.origin)


def augment(v: Volume, m: LabelMap, cfg: AugmentConfig, rng: Rng):
    """Random scale/rotation/elastic warp (shared grid) followed by gamma."""
    if v.dims != m.dims:
        raise ValueError(f"volume/mask dims differ: {v.dims} vs {m.dims}")
    scale = rotation = displacement = None
    if rng.uniform() < cfg.p_elastic and cfg.elastic:
        displacement = elastic_displacement(v.dims, v.spacing, cfg.elastic_alpha, cfg.elastic_sigma, rng)
    if rng.uniform() < cfg.p_rotation:
        axis = int(rng.integers(0, 3))
        rotation = rotation_matrix(axis, rng.uniform(low=-cfg.rotation_max, high=cfg.rotation_max))
    if rng.uniform() < cfg.p_scale:
        scale = rng.uniform(low=cfg.scale_range[0], high=cfg.scale_range[1])
    if scale is None and rotation is None and displacement is None:
        out_v, out_m = Volume(v.data.copy(), v.spacing, v.origin), LabelMap(m.data.copy(), m.spacing, m.origin)
    else:
        coords = spatial_coords(v.dims, v.spacing, scale, rotation, displacement)
        out_v, out_m = warp_pair(v, m, coords)
    if rng.uniform() < cfg.p_gamma:
        out_v = gamma_transform(out_v, rng.uniform(low=cfg.gamma_range[0], high=cfg.gamma_range[1]))
    return out_v, out_m
