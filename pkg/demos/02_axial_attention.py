"""
Axial attention, one axis at a time
===================================

Attending along a single axis treats every line of voxels as its own short
sequence. The cost then grows with N * (D + H + W) instead of N^2.
"""
import time

import numpy as np

from canet.harness.bench import bench_attention, format_report
from canet.net import attention_flops, axial_attention
from canet.voxcore import Rng

rng = Rng(1)
C = 4
x = rng.normal((1, C, 6, 5, 7))
wq, wk, wv = (rng.normal((C, C)) for _ in range(3))
pos = np.zeros((8, C))

out, _ = axial_attention(x, "width", wq, wk, wv, pos)
print("input", x.shape, "-> output", out.shape)

# a width line only ever sees its own voxels: changing another line leaves it untouched
y = x.copy()
y[0, :, 0, 0, :] += 10.0
out2, _ = axial_attention(y, "width", wq, wk, wv, pos)
print("other lines unchanged:", np.array_equal(out[0, :, 1:], out2[0, :, 1:]))

for edge in (8, 16, 32, 64):
    a = attention_flops((edge,) * 3, 32, "axial")["score"]
    f = attention_flops((edge,) * 3, 32, "full")["score"]
    print(f"edge {edge:3d}: axial score MACs {a:.3g}, full {f:.3g}, ratio {f / a:.0f}x")

t0 = time.perf_counter()
print(format_report(bench_attention((4, 8, 12), channels=8, repeats=2)), end="")
print("bench took %.1fs" % (time.perf_counter() - t0))
