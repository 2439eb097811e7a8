"""Soft dice + cross-entropy segmentation loss with analytic logit gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .voxcore import softmax_channels

CE_CLAMP = 1e-7


@dataclass
class LossConfig:
    smooth: float = 1e-5
    class_weights: tuple[float, ...] | None = None
    dice_aggregation: str = "foreground"  # or "all"

    def __post_init__(self):
        if self.smooth < 0:
            raise ValueError("smooth must be non-negative")
        if self.dice_aggregation not in ("foreground", "all"):
            raise ValueError("dice_aggregation must be 'foreground' or 'all'")
        if self.class_weights is not None:
            self.class_weights = tuple(float(w) for w in self.class_weights)
            if min(self.class_weights) <= 0:
                raise ValueError("class weights must be positive")


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """(B, D, H, W) integer labels -> (B, K, D, H, W) one-hot."""
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[None]
    eye = np.eye(num_classes, dtype=dtype)
    return np.ascontiguousarray(np.moveaxis(eye[labels], -1, 1))


def _check(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.ndim != 5:
        raise ValueError(f"expected 5D tensors, got {pred.ndim}D")


def _dice_terms(pred, target, smooth):
    axes = (0, 2, 3, 4)
    inter = (pred * target).sum(axis=axes, dtype=np.float64)
    denom = pred.sum(axis=axes, dtype=np.float64) + target.sum(axis=axes, dtype=np.float64) + smooth
    return inter, denom


def dice_coefficient(pred, target, smooth: float = 1e-5) -> np.ndarray:
    """Per-class soft dice pooled over the batch; 0/0 counts as 1."""
    _check(pred, target)
    inter, denom = _dice_terms(pred, target, smooth)
    num = 2.0 * inter + smooth
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, num / safe, 1.0)


def _aggregate_weights(num_classes, cfg: LossConfig):
    w = np.ones(num_classes)
    if cfg.dice_aggregation == "foreground":
        w[0] = 0.0
    if cfg.class_weights is not None:
        if len(cfg.class_weights) != num_classes:
            raise ValueError("class_weights length must equal the number of classes")
        w = w * np.asarray(cfg.class_weights)
    return w / w.sum()


def dice_loss(pred, target, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    dsc = dice_coefficient(pred, target, cfg.smooth)
    return float(1.0 - (_aggregate_weights(pred.shape[1], cfg) * dsc).sum())


def ce_loss(pred, target) -> float:
    """Mean over voxels of -sum_c t_c log(max(p_c, 1e-7))."""
    _check(pred, target)
    logp = np.log(np.maximum(pred, CE_CLAMP))
    n_vox = pred.size // pred.shape[1]
    return float(-(target * logp).sum(dtype=np.float64) / n_vox)


def total_loss(logits, target, cfg: LossConfig | None = None):
    """Dice + CE on softmax(logits).

    Returns ``(loss, grad_logits, parts)`` where ``parts`` holds the dice
    and CE components and the per-class soft dice.
    """
    cfg = cfg or LossConfig()
    pred = softmax_channels(logits)
    _check(pred, target)
    K = pred.shape[1]
    n_vox = pred.size // K

    inter, denom = _dice_terms(pred, target, cfg.smooth)
    live = denom > 0
    safe = np.where(live, denom, 1.0)
    dsc = np.where(live, (2.0 * inter + cfg.smooth) / safe, 1.0)
    w = _aggregate_weights(K, cfg)
    l_dice = float(1.0 - (w * dsc).sum())
    l_ce = ce_loss(pred, target)

    # dL/dp for dice: -w_c * (2 t (P+T+s) - (2I+s)) / (P+T+s)^2
    a = np.where(live, 2.0 / safe, 0.0)
    b = np.where(live, (2.0 * inter + cfg.smooth) / safe ** 2, 0.0)
    shape = (1, K, 1, 1, 1)
    gp = -(w * a).reshape(shape) * target + (w * b).reshape(shape)
    unclamped = pred > CE_CLAMP
    gp = gp - np.where(unclamped, target / np.where(unclamped, pred, 1.0), 0.0) / n_vox
    # softmax Jacobian
    g_logits = pred * (gp - (pred * gp).sum(axis=1, keepdims=True))
    parts = {"dice": l_dice, "ce": l_ce, "dsc": dsc}
    return l_dice + l_ce, g_logits.astype(logits.dtype, copy=False), parts


def soft_dice(logits, target, cfg: LossConfig | None = None) -> float:
    """Mean foreground soft dice of softmax(logits); 1 - dice loss."""
    cfg = cfg or LossConfig()
    return 1.0 - dice_loss(softmax_channels(logits), target, cfg)
