"""Encoder-decoder segmentation network with channel extending and AAC blocks."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict

import numpy as np

from ..voxcore import Rng
from . import attention, ops

BASELINE_CAP = 320
EXTENDED_CAP = 512


@dataclass
class NetworkConfig:
    stages: int = 6
    base_filters: int = 32
    channel_extend: bool = True
    aac_enabled: bool = True
    aac_sequential: bool = False
    aac_stages: tuple[int, ...] | None = None  # decoder stages that get AAC; None = all
    in_channels: int = 1
    num_classes: int = 5
    heads: int = 1
    norm_eps: float = 1e-5
    up_kernel: int = 2
    max_axis_len: int = 128  # positional table length at full resolution
    seed: int = 0

    def __post_init__(self):
        if self.stages < 2:
            raise ValueError("stages must be at least 2")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.base_filters < 1 or self.base_filters > self.filter_cap:
            raise ValueError("base_filters must lie in [1, filter_cap]")
        if self.up_kernel not in (2, 3):
            raise ValueError("up_kernel must be 2 or 3")
        if self.aac_stages is not None:
            self.aac_stages = tuple(int(s) for s in self.aac_stages)

    @property
    def filter_cap(self) -> int:
        return EXTENDED_CAP if self.channel_extend else BASELINE_CAP

    def uses_aac(self, stage: int) -> bool:
        return self.aac_enabled and (self.aac_stages is None or stage in self.aac_stages)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def filter_schedule(cfg: NetworkConfig, stage: int) -> tuple[int, int]:
    """(encoder_filters, decoder_filters) at ``stage``.

    Channel extending widens only the encoder: its cap rises to 512 while
    the decoder keeps the baseline cap of 320.
    """
    if not 0 <= stage < cfg.stages:
        raise ValueError(f"stage {stage} out of range for {cfg.stages} stages")
    n = cfg.base_filters * 2 ** stage
    return min(n, cfg.filter_cap), min(n, BASELINE_CAP)


def _he(rng, shape, fan_in, dtype):
    return (rng.normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Network:
    """Parameters plus an explicit forward/backward pass.

    Parameters live in ``self.params`` (name -> array), in creation order.
    ``forward`` caches intermediates; ``backward`` consumes them and returns
    a dict of gradients keyed like ``params`` plus ``"input"``.
    """

    def __init__(self, cfg: NetworkConfig, dtype=np.float32, init: bool = True):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self._cache = None
        if init:
            self._init_params(Rng(cfg.seed))

    # -- construction ------------------------------------------------------

    def _add(self, name, value):
        self.params[name] = np.ascontiguousarray(value, dtype=self.dtype)

    def _conv_block(self, prefix, cin, cout, rng):
        for j, ci in enumerate((cin, cout)):
            self._add(f"{prefix}.conv{j}.w", _he(rng, (cout, ci, 3, 3, 3), ci * 27, self.dtype))
            self._add(f"{prefix}.norm{j}.scale", np.ones(cout))
            self._add(f"{prefix}.norm{j}.shift", np.zeros(cout))

    def _init_params(self, rng: Rng):
        cfg = self.cfg
        enc = [filter_schedule(cfg, s)[0] for s in range(cfg.stages)]
        dec = [filter_schedule(cfg, s)[1] for s in range(cfg.stages)]
        cin = cfg.in_channels
        for s in range(cfg.stages):
            self._conv_block(f"enc{s}", cin, enc[s], rng)
            cin = enc[s]
        below = enc[-1]
        k = cfg.up_kernel
        for s in reversed(range(cfg.stages - 1)):
            c = dec[s]
            self._add(f"dec{s}.up.w", _he(rng, (below, c, k, k, k), below * k ** 3 / 8, self.dtype))
            if cfg.uses_aac(s):
                cap = max(1, cfg.max_axis_len >> s)
                for br in attention.BRANCHES:
                    for m in ("q", "k", "v"):
                        self._add(f"dec{s}.aac.{br}.{m}", rng.normal((c, c)) / np.sqrt(c))
                    self._add(f"dec{s}.aac.{br}.pos", np.zeros((cap, c)))
                self._add(f"dec{s}.aac.merge.w", np.zeros((c, 3 * c, 1, 1, 1)))
                self._add(f"dec{s}.aac.merge.b", np.zeros(c))
            self._conv_block(f"dec{s}", c + enc[s], c, rng)
            below = c
        self._add("out.w", _he(rng, (cfg.num_classes, dec[0], 1, 1, 1), dec[0], self.dtype))
        self._add("out.b", np.zeros(cfg.num_classes))

    def astype(self, dtype) -> "Network":
        net = Network(self.cfg, dtype, init=False)
        for name, p in self.params.items():
            net._add(name, p)
        return net

    def copy(self) -> "Network":
        return self.astype(self.dtype)

    def param_count(self) -> int:
        return param_count(self)

    # -- forward / backward --------------------------------------------------

    def _block_fwd(self, prefix, x, stride, tape):
        p = self.params
        for j in range(2):
            w = p[f"{prefix}.conv{j}.w"]
            s = stride if j == 0 else 1
            y, cols = ops.conv3d(x, w, stride=s, return_cols=True)
            z, nc = ops.instance_norm_act(y, p[f"{prefix}.norm{j}.scale"], p[f"{prefix}.norm{j}.shift"],
                                          eps=self.cfg.norm_eps)
            tape.append(("block", prefix, j, x, s, nc, cols))
            x = z
        return x

    def check_input(self, x):
        cfg = self.cfg
        if x.ndim != 5:
            raise ValueError(f"input must be 5D (B, C, D, H, W), got shape {x.shape}")
        if x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
        factor = 2 ** (cfg.stages - 1)
        for name, n in zip(("depth", "height", "width"), x.shape[2:]):
            if n % factor:
                raise ValueError(f"{name} size {n} is not divisible by {factor}")

    def forward(self, x, keep_cache: bool = True):
        cfg, p = self.cfg, self.params
        self.check_input(x)
        x = np.asarray(x, dtype=self.dtype)
        tape = []
        skips = []
        h = x
        for s in range(cfg.stages):
            h = self._block_fwd(f"enc{s}", h, 1 if s == 0 else 2, tape)
            skips.append(h)
        for s in reversed(range(cfg.stages - 1)):
            w = p[f"dec{s}.up.w"]
            up = ops.transposed_conv3d(h, w)
            tape.append(("up", s, h))
            h = up
            if cfg.uses_aac(s):
                sub = {k[len(f"dec{s}.aac."):]: v for k, v in p.items() if k.startswith(f"dec{s}.aac.")}
                h, ac = attention.aac_forward(h, sub, cfg.heads, cfg.aac_sequential)
                tape.append(("aac", s, ac))
            cat = np.concatenate([h, skips[s]], axis=1)
            tape.append(("cat", s, h.shape[1]))
            h = self._block_fwd(f"dec{s}", cat, 1, tape)
        logits, cols = ops.conv3d(h, p["out.w"], p["out.b"], padding=0, return_cols=True)
        tape.append(("out", h, cols))
        self._cache = tape if keep_cache else None
        return logits

    def backward(self, logit_grad, input_grad: bool = True):
        """Reverse pass over the cached forward. Skipping the input gradient
        (``input_grad=False``) saves one full-resolution convolution."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        p = self.params
        g = np.asarray(logit_grad, dtype=self.dtype)
        grads = {}
        skip_grads = {}
        for entry in reversed(self._cache):
            kind = entry[0]
            if kind == "out":
                g, grads["out.w"], grads["out.b"] = ops.conv3d_backward(
                    g, entry[1], p["out.w"], padding=0, with_bias=True, cols=entry[2])
            elif kind == "block":
                _, prefix, j, xin, stride, nc, cols = entry
                gy, grads[f"{prefix}.norm{j}.scale"], grads[f"{prefix}.norm{j}.shift"] = \
                    ops.instance_norm_act_backward(g, nc)
                first = prefix == "enc0" and j == 0
                g, grads[f"{prefix}.conv{j}.w"] = ops.conv3d_backward(
                    gy, xin, p[f"{prefix}.conv{j}.w"], stride, cols=cols, need_input=input_grad or not first)
                if prefix.startswith("enc") and j == 0 and int(prefix[3:]) > 0:
                    # g now flows into the previous encoder stage, whose output also fed a skip
                    g = g + skip_grads.pop(int(prefix[3:]) - 1)
            elif kind == "cat":
                _, s, c = entry
                skip_grads[s] = g[:, c:]
                g = g[:, :c]
            elif kind == "aac":
                _, s, ac = entry
                g, sub = attention.aac_backward(g, ac)
                for k, v in sub.items():
                    grads[f"dec{s}.aac.{k}"] = v
            elif kind == "up":
                _, s, hin = entry
                g, grads[f"dec{s}.up.w"] = ops.transposed_conv3d_backward(g, hin, p[f"dec{s}.up.w"])
        grads["input"] = g
        return grads

    def zero_like_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def param_count(net) -> int:
    params = net.params if hasattr(net, "params") else net
    return int(sum(v.size for v in params.values()))


def build(cfg: NetworkConfig, dtype=np.float32) -> Network:
    return Network(cfg, dtype)
