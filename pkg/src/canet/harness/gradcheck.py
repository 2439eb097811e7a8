"""Central finite-difference check of every network parameter, in float64."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..loss import LossConfig, one_hot, total_loss
from ..net.model import Network, NetworkConfig
from ..voxcore import Rng


@dataclass
class TensorCheck:
    name: str
    size: int
    max_rel_err: float
    max_abs_err: float
    refined: int = 0  # entries that needed a smaller step to stay off a leaky-ReLU kink
    skipped: int = 0  # entries where no step avoided the kink


def rel_err(a, b, floor: float = 1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _relu_pattern(net: Network) -> bytes:
    """Sign pattern of every leaky-ReLU input in the cached forward pass."""
    return b"".join(np.packbits(e[5][2]).tobytes() for e in net._cache if e[0] == "block")


def gradcheck(netcfg: NetworkConfig, dims=(8, 8, 8), seed: int = 0, h: float = 1e-4,
              loss_cfg: LossConfig | None = None, refinements: int = 3) -> list[TensorCheck]:
    """Compare analytic gradients with central differences for all parameters.

    The objective is total_loss(net(x), T) + <net(x), R> with random input,
    labels and probe R. The probe keeps gradients well away from zero so
    relative errors stay meaningful; the loss term exercises its own
    backward pass through the same chain.

    A central difference is only valid where the objective is smooth on
    [p - h, p + h]. If either probe flips the sign of some leaky-ReLU input,
    the step is divided by 10 and retried, up to ``refinements`` times.
    """
    loss_cfg = loss_cfg or LossConfig()
    rng = Rng(seed)
    net = Network(netcfg, dtype=np.float64)
    # nonzero AAC merge and positional weights so every path carries gradient
    for k, p in net.params.items():
        if ".aac." in k and (k.endswith("merge.w") or k.endswith(".pos")):
            p[...] = 0.1 * rng.normal(p.shape)
    x = rng.normal((1, netcfg.in_channels, *dims))
    t = one_hot(rng.integers(0, netcfg.num_classes, size=dims), netcfg.num_classes, np.float64)
    probe = rng.normal((1, netcfg.num_classes, *dims))

    def objective():
        logits = net.forward(x)
        value = total_loss(logits, t, loss_cfg)[0] + float((logits * probe).sum())
        return value, _relu_pattern(net)

    logits = net.forward(x)
    base = _relu_pattern(net)
    _, g, _ = total_loss(logits, t, loss_cfg)
    grads = net.backward(g + probe, input_grad=False)
    out = []
    for name, p in net.params.items():
        flat = p.reshape(-1)
        ana = grads[name].reshape(-1)
        num = ana.copy()  # skipped entries compare equal
        refined = skipped = 0
        for i in range(flat.size):
            keep = flat[i]
            step = h
            for attempt in range(refinements + 1):
                flat[i] = keep + step
                up, sig_up = objective()
                flat[i] = keep - step
                down, sig_down = objective()
                flat[i] = keep
                if sig_up == base and sig_down == base:
                    num[i] = (up - down) / (2 * step)
                    refined += attempt > 0
                    break
                step /= 10
            else:
                skipped += 1
        out.append(TensorCheck(name, flat.size, float(rel_err(ana, num).max()),
                               float(np.abs(ana - num).max()), refined, skipped))
    return out


def format_report(rows) -> str:
    lines = ["param\tsize\tmax_rel_err\tmax_abs_err\trefined\tskipped"]
    lines += [f"{r.name}\t{r.size}\t{r.max_rel_err:.3e}\t{r.max_abs_err:.3e}\t{r.refined}\t{r.skipped}"
              for r in rows]
    return "\n".join(lines) + "\n"
