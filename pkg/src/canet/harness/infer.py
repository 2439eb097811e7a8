"""Whole-case inference: preprocess, tile, blend, label, clean up, resample back."""
from __future__ import annotations

import math

import numpy as np

from ..net.model import Network
from ..postproc import DEFAULT_CLEAN_CLASSES, argmax_labels, postprocess
from ..prep import PrepStats, preprocess_case, resample_mask
from ..voxcore import LabelMap, Volume, softmax_channels


def window_starts(n: int, p: int, overlap: float = 0.5) -> list[int]:
    """Evenly spread window origins covering [0, n) with at least ``overlap`` shared."""
    if n <= p:
        return [0]
    step = max(1, int(p * (1.0 - overlap)))
    k = math.ceil((n - p) / step) + 1
    return [int(round(i * (n - p) / (k - 1))) for i in range(k)]


def gaussian_weight(patch, sigma_scale: float = 1.0 / 8) -> np.ndarray:
    """Separable Gaussian centered on the patch, sigma = patch * sigma_scale, peak 1."""
    w = np.ones(patch, dtype=np.float64)
    for axis, p in enumerate(patch):
        x = np.arange(p, dtype=np.float64) - (p - 1) / 2.0
        g = np.exp(-0.5 * (x / (p * sigma_scale)) ** 2)
        shape = [1, 1, 1]
        shape[axis] = p
        w = w * g.reshape(shape)
    w /= w.max()
    # keep edges strictly positive so every voxel gets some weight
    floor = w[w > 0].min()
    return np.maximum(w, floor).astype(np.float32)


def blend_windows(probs, starts, dims, weight) -> np.ndarray:
    """Weighted average of per-window probabilities (K, *patch) placed at ``starts``."""
    k = probs[0].shape[0]
    acc = np.zeros((k, *dims), dtype=np.float64)
    wsum = np.zeros(dims, dtype=np.float64)
    for p, s in zip(probs, starts):
        sl = tuple(slice(a, a + n) for a, n in zip(s, weight.shape))
        acc[(slice(None),) + sl] += p * weight
        wsum[sl] += weight
    return (acc / wsum).astype(np.float32)


def _pad_volume(data: np.ndarray, dims) -> np.ndarray:
    pads = [(0, max(0, t - n)) for t, n in zip(dims, data.shape)]
    if not any(b for _, b in pads):
        return data
    return np.pad(data, pads, constant_values=float(data.min()))


def sliding_window_probs(net: Network, data: np.ndarray, patch, overlap: float = 0.5,
                         sigma_scale: float = 1.0 / 8) -> np.ndarray:
    """(K, D, H, W) class probabilities of a preprocessed array."""
    dims = data.shape
    padded = _pad_volume(data, [max(n, p) for n, p in zip(dims, patch)])
    grid = [window_starts(n, p, overlap) for n, p in zip(padded.shape, patch)]
    starts = [(a, b, c) for a in grid[0] for b in grid[1] for c in grid[2]]
    probs = []
    for s in starts:
        sl = tuple(slice(a, a + p) for a, p in zip(s, patch))
        logits = net.forward(padded[sl][None, None], keep_cache=False)
        probs.append(softmax_channels(logits)[0])
    if len(starts) == 1:
        out = probs[0]  # single window: no blending round-off
    else:
        out = blend_windows(probs, starts, padded.shape, gaussian_weight(patch, sigma_scale))
    return out[(slice(None),) + tuple(slice(0, n) for n in dims)]


def whole_volume_probs(net: Network, data: np.ndarray) -> np.ndarray:
    """Single forward pass over the whole array, padded to the network's stride."""
    f = 2 ** (net.cfg.stages - 1)
    dims = data.shape
    padded = _pad_volume(data, [-(-n // f) * f for n in dims])
    logits = net.forward(padded[None, None], keep_cache=False)
    return softmax_channels(logits)[0][(slice(None),) + tuple(slice(0, n) for n in dims)]


def infer(volume: Volume, net: Network, stats: PrepStats, patch=(64, 64, 64), mode: str = "sliding",
          overlap: float = 0.5, clean_classes=DEFAULT_CLEAN_CLASSES, postproc: str = "largest") -> LabelMap:
    """Label map in ``volume``'s native geometry."""
    if not isinstance(volume, Volume):
        raise TypeError("infer expects a Volume")
    if net.cfg.in_channels != 1:
        raise ValueError(f"checkpoint expects {net.cfg.in_channels} input channels; volumes have 1")
    f = 2 ** (net.cfg.stages - 1)
    patch = tuple(int(p) for p in patch)
    if mode == "sliding" and any(p % f for p in patch):
        raise ValueError(f"patch {patch} is not divisible by {f} for a {net.cfg.stages}-stage network")
    z = preprocess_case(volume, stats)
    if mode == "sliding":
        probs = sliding_window_probs(net, z.data, patch, overlap)
    elif mode == "whole":
        probs = whole_volume_probs(net, z.data)
    else:
        raise ValueError(f"unknown inference mode {mode!r}")
    labels = argmax_labels(probs[None], z)
    labels = postprocess(labels, clean_classes, postproc)
    if labels.dims != volume.dims:
        labels = resample_mask(labels, volume.spacing, out_dims=volume.dims)
    return LabelMap(labels.data, volume.spacing, volume.origin)
