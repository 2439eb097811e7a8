"""Synthetic kidney phantoms with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..voxcore import LabelMap, Rng, Volume

BACKGROUND, KIDNEY, TUMOR, ARTERY, VEIN = range(5)


@dataclass
class PhantomConfig:
    background_hu: float = -60.0
    background_ramp_hu: float = 60.0  # total rise across the width axis
    kidney_hu: float = 160.0
    tumor_hu: float = 60.0
    artery_hu: float = 380.0
    vein_hu: float = 270.0
    noise_sd: float = 12.0
    # fraction of the grid volume each structure must occupy
    kidney_fraction: tuple[float, float] = (0.01, 0.15)
    tumor_fraction: tuple[float, float] = (0.0005, 0.05)
    vessel_fraction: tuple[float, float] = (0.0005, 0.05)
    min_dim: int = 32


def _ellipsoid(grid, center, semi):
    return sum(((g - c) / s) ** 2 for g, c, s in zip(grid, center, semi)) <= 1.0


def _tube(grid, dims, h0, w0, amp, phase, radius):
    """Curved tube running along depth; cross-sections are discs."""
    D = dims[0]
    d, h, w = grid
    t = d / max(D - 1, 1)
    hc = h0 + amp[0] * np.sin(2 * np.pi * t + phase[0])
    wc = w0 + amp[1] * np.sin(np.pi * t + phase[1])
    return (h - hc) ** 2 + (w - wc) ** 2 <= radius ** 2


def gen_phantom(rng: Rng, dims=(48, 48, 48), spacing=(1.0, 1.0, 1.0), cfg: PhantomConfig | None = None):
    """Return (Volume, LabelMap) with kidney, inner tumor, artery and vein."""
    cfg = cfg or PhantomConfig()
    dims = tuple(int(n) for n in dims)
    if min(dims) < cfg.min_dim:
        raise ValueError(f"phantom dims must be >= {cfg.min_dim} per axis, got {dims}")
    D, H, W = dims
    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    jit = rng.uniform(size=8, low=-1.0, high=1.0)

    # kidney on the lateral (high-width) side, vessels medial
    semi = np.array([0.30 * D, 0.22 * H, 0.17 * W]) * (1.0 + 0.08 * jit[:3])
    center = np.array([0.5 * D, 0.5 * H, 0.70 * W]) + np.array([0.03 * D, 0.03 * H, 0.02 * W]) * jit[3:6]
    kidney = _ellipsoid(grid, center, semi)

    r_tumor = 0.6 * semi.min()
    offset = (semi[0] - r_tumor) * 0.5 * jit[6]
    t_center = center + np.array([offset, 0.0, 0.0])
    while True:
        tumor = _ellipsoid(grid, t_center, (r_tumor,) * 3)
        if not np.any(tumor & ~_ellipsoid(grid, center, semi - 1.0)):
            break
        r_tumor *= 0.9

    radius = max(1.5, 0.05 * min(H, W))
    phase = rng.uniform(size=4, low=0.0, high=2 * np.pi)
    artery = _tube(grid, dims, 0.42 * H, 0.18 * W, (0.10 * H, 0.05 * W), phase[:2], radius)
    vein = _tube(grid, dims, 0.58 * H, 0.38 * W, (0.10 * H, 0.05 * W), phase[2:], radius * 1.2)
    vein &= ~artery

    labels = np.zeros(dims, dtype=np.int8)
    labels[artery] = ARTERY
    labels[vein] = VEIN
    labels[kidney] = KIDNEY
    labels[tumor] = TUMOR

    means = np.array([cfg.background_hu, cfg.kidney_hu, cfg.tumor_hu, cfg.artery_hu, cfg.vein_hu])
    img = means[labels]
    ramp = cfg.background_ramp_hu * (grid[2] / max(W - 1, 1) - 0.5)
    img = img + np.where(labels == BACKGROUND, ramp, 0.0)
    img = img + cfg.noise_sd * rng.normal(dims)

    n = float(np.prod(dims))
    for name, lab, (lo, hi) in (("kidney", [KIDNEY, TUMOR], cfg.kidney_fraction),
                                ("tumor", [TUMOR], cfg.tumor_fraction),
                                ("artery", [ARTERY], cfg.vessel_fraction),
                                ("vein", [VEIN], cfg.vessel_fraction)):
        frac = np.isin(labels, lab).sum() / n
        if not lo <= frac <= hi:
            raise ValueError(f"{name} occupies {frac:.4f} of the grid, outside [{lo}, {hi}]")
    return Volume(img.astype(np.float32), spacing), LabelMap(labels, spacing)
