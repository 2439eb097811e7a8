"""Axial versus full attention: analytic MACs and wall time per cube edge."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..net.attention import BRANCHES, attention_flops, axial_attention, full_attention_branch
from ..voxcore import Rng

FULL_TOKEN_LIMIT = 4096  # dense N x N scores beyond this do not fit a desk machine


@dataclass
class BenchRow:
    edge: int
    tokens: int
    axial_flops: int
    full_flops: int
    axial_s: float
    full_s: float  # nan when skipped

    @property
    def flops_ratio(self) -> float:
        return self.full_flops / self.axial_flops


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_attention(sizes=(4, 8, 16, 24), channels: int = 8, repeats: int = 3, seed: int = 0,
                    modes=("axial", "full"), full_limit: int = FULL_TOKEN_LIMIT) -> list[BenchRow]:
    """Time one three-branch attention pass per cube edge in ``sizes``.

    Full attention is skipped (time reported as nan) when the token count
    exceeds ``full_limit``.
    """
    rng = Rng(seed)
    rows = []
    for n in sizes:
        if n < 1:
            raise ValueError(f"cube edge must be positive, got {n}")
        dims = (n, n, n)
        x = rng.normal((1, channels, *dims)).astype(np.float32)
        w = [rng.normal((channels, channels)).astype(np.float32) / np.sqrt(channels) for _ in range(3)]
        pos = np.zeros((n, channels), dtype=np.float32)

        def run_axial():
            for axis in BRANCHES:
                axial_attention(x, axis, *w, pos)

        def run_full():
            for _ in BRANCHES:
                full_attention_branch(x, *w)

        ax_t = _best_of(run_axial, repeats) if "axial" in modes else float("nan")
        full_t = float("nan")
        if "full" in modes and n ** 3 <= full_limit:
            full_t = _best_of(run_full, repeats)
        rows.append(BenchRow(n, n ** 3, attention_flops(dims, channels, "axial")["total"],
                             attention_flops(dims, channels, "full")["total"], ax_t, full_t))
    return rows


def format_report(rows) -> str:
    head = "edge\ttokens\taxial_macs\tfull_macs\tmacs_ratio\taxial_s\tfull_s"
    lines = [head]
    for r in rows:
        lines.append(f"{r.edge}\t{r.tokens}\t{r.axial_flops}\t{r.full_flops}\t{r.flops_ratio:.2f}\t"
                     f"{r.axial_s:.6f}\t{r.full_s:.6f}")
    return "\n".join(lines) + "\n"
