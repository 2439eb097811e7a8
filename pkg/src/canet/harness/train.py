"""Patch-based training loop.

Every random decision for a step (patch location, augmentation draws) comes
from a child Rng split off the master stream before the step's data is
built. Loading therefore gives the same batches whether it runs on one
worker or several, and ``deterministic=True`` simply pins it to one.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..loss import one_hot, total_loss
from ..net.model import Network, NetworkConfig
from ..prep import augment
from ..voxcore import NUM_CLASSES, LabelMap, Rng, Volume
from .config import TrainConfig, resolved


class TrainingDiverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------

class NesterovSGD:
    """v <- mu v + g ; p <- p - lr (g + mu v), with L2 decay folded into g."""

    def __init__(self, params, momentum=0.99, weight_decay=3e-5):
        self.mu, self.wd = float(momentum), float(weight_decay)
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params, grads, lr):
        lr = float(lr)
        for k, p in params.items():
            g = grads[k] + self.wd * p if self.wd else grads[k]
            v = self.v[k]
            v *= self.mu
            v += g
            p -= lr * (g + self.mu * v)


class Adam:
    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=3e-5):
        self.b1, self.b2 = betas
        self.eps, self.wd = eps, float(weight_decay)
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k] + self.wd * p if self.wd else grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= float(lr) * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return Adam(params, weight_decay=cfg.weight_decay)
    return NesterovSGD(params, cfg.momentum, cfg.weight_decay)


def poly_lr(base: float, epoch: int, max_epochs: int, exponent: float = 0.9) -> float:
    return base * (1.0 - epoch / max_epochs) ** exponent


# --------------------------------------------------------------------------
# patch sampling
# --------------------------------------------------------------------------

def pad_to(v: Volume, m: LabelMap, patch):
    """Pad (end-side) so every axis is at least ``patch``; image with its min, labels with 0."""
    pads = [(0, max(0, p - n)) for p, n in zip(patch, v.dims)]
    if not any(b for _, b in pads):
        return v, m
    fill = float(v.data.min())
    return (Volume(np.pad(v.data, pads, constant_values=fill), v.spacing, v.origin),
            LabelMap(np.pad(m.data, pads), m.spacing, m.origin))


def crop(v: Volume, m: LabelMap, start, patch):
    sl = tuple(slice(s, s + p) for s, p in zip(start, patch))
    return Volume(v.data[sl].copy(), v.spacing, v.origin), LabelMap(m.data[sl].copy(), m.spacing, m.origin)


def sample_patch(v: Volume, m: LabelMap, patch, fg_fraction: float, rng: Rng):
    """Random crop; with probability ``fg_fraction`` it is centered on a foreground voxel."""
    v, m = pad_to(v, m, patch)
    hi = [n - p for n, p in zip(v.dims, patch)]
    want_fg = rng.uniform() < fg_fraction
    fg = np.flatnonzero(m.data) if want_fg else None
    if want_fg and fg.size:
        center = np.unravel_index(int(fg[rng.integers(0, fg.size)]), m.dims)
        start = [min(max(int(c) - p // 2, 0), h) for c, p, h in zip(center, patch, hi)]
    else:
        start = [int(rng.integers(0, h + 1)) for h in hi]
    return crop(v, m, start, patch)


def center_patch(v: Volume, m: LabelMap, patch):
    """Deterministic crop around the foreground centroid (validation)."""
    v, m = pad_to(v, m, patch)
    idx = np.argwhere(m.data)
    center = idx.mean(axis=0) if len(idx) else np.array(v.dims) / 2.0
    start = [min(max(int(round(c)) - p // 2, 0), n - p) for c, p, n in zip(center, patch, v.dims)]
    return crop(v, m, start, patch)


def _make_example(case, cfg: TrainConfig, rng: Rng):
    v, m = case
    pv, pm = sample_patch(v, m, cfg.patch, cfg.fg_fraction, rng)
    return augment(pv, pm, cfg.augment, rng)


def _stack(examples):
    x = np.stack([v.data for v, _ in examples])[:, None].astype(np.float32)
    t = np.concatenate([one_hot(m.data, NUM_CLASSES) for _, m in examples])
    return x, t


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_soft_dice: float
    val_soft_dice: float | None
    seconds: float


@dataclass
class TrainResult:
    net: Network
    history: list[EpochLog]
    config: dict[str, str]
    steps: int
    reached_target: bool = False
    best_soft_dice: float = field(default=float("nan"))


def validate(net: Network, cases, cfg: TrainConfig) -> float:
    """Mean soft dice over one centroid patch per validation case."""
    scores = []
    for v, m in cases:
        pv, pm = center_patch(v, m, cfg.patch)
        logits = net.forward(pv.data[None, None], keep_cache=False)
        _, _, parts = total_loss(logits, one_hot(pm.data, NUM_CLASSES), cfg.loss)
        scores.append(1.0 - parts["dice"])
    return float(np.mean(scores))


def train(cases, cfg: TrainConfig, netcfg: NetworkConfig, val_cases=(), log=None) -> TrainResult:
    """Train a fresh network on preprocessed (Volume, LabelMap) pairs.

    ``log`` receives one line per epoch when given. Early stopping happens
    only if ``cfg.target_soft_dice`` is set, and compares against the soft
    dice of the batch just seen.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("no training cases")
    cfg.check_patch(netcfg)
    net = Network(netcfg)
    opt = make_optimizer(cfg, net.params)
    master = Rng(cfg.seed)
    workers = 1 if cfg.deterministic else max(1, cfg.workers)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    history, step, best, reached = [], 0, -math.inf, False
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = poly_lr(cfg.lr, epoch, cfg.epochs, cfg.poly_exponent)
            losses, dices = [], []
            for _ in range(cfg.steps_per_epoch):
                jobs = [(cases[int(master.integers(0, len(cases)))], master.child()) for _ in range(cfg.batch_size)]
                if pool is None:
                    examples = [_make_example(c, cfg, r) for c, r in jobs]
                else:
                    examples = list(pool.map(lambda j: _make_example(j[0], cfg, j[1]), jobs))
                x, t = _stack(examples)
                logits = net.forward(x)
                if not np.isfinite(logits).all():
                    raise TrainingDiverged(f"non-finite logits at epoch {epoch}, step {step} (lr {lr:.3g})")
                loss, g, parts = total_loss(logits, t, cfg.loss)
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss {loss} at epoch {epoch}, step {step} (lr {lr:.3g}); "
                        f"dice {parts['dice']}, ce {parts['ce']}")
                grads = net.backward(g, input_grad=False)
                opt.step(net.params, grads, lr)
                step += 1
                sd = 1.0 - parts["dice"]
                losses.append(loss)
                dices.append(sd)
                best = max(best, sd)
                if cfg.target_soft_dice is not None and sd >= cfg.target_soft_dice:
                    reached = True
                    break
            val = validate(net, val_cases, cfg) if val_cases else None
            entry = EpochLog(epoch, lr, float(np.mean(losses)), float(np.mean(dices)), val,
                             time.perf_counter() - t0)
            history.append(entry)
            if log:
                vs = "-" if val is None else f"{val:.4f}"
                log(f"epoch {epoch} lr {lr:.5g} loss {entry.train_loss:.4f} "
                    f"train_dice {entry.train_soft_dice:.4f} val_dice {vs} ({entry.seconds:.1f}s)")
            if reached:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(net, history, resolved(cfg, netcfg), step, reached, best)


def write_history(path, history) -> None:
    """Tab-separated per-epoch log."""
    lines = ["epoch\tlr\ttrain_loss\ttrain_soft_dice\tval_soft_dice\tseconds"]
    for e in history:
        val = "nan" if e.val_soft_dice is None else repr(e.val_soft_dice)
        lines.append(f"{e.epoch}\t{e.lr!r}\t{e.train_loss!r}\t{e.train_soft_dice!r}\t{val}\t{e.seconds:.3f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
