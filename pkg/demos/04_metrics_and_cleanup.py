"""
Scoring and cleaning label maps
===============================

Distances are measured between surface voxels in millimetres, so anisotropic
spacing matters. Cleanup keeps the largest 26-connected blob of kidney and
tumor and leaves the thin vessels alone.
"""
import numpy as np

from canet.metrics import avd_mm, eval_dsc, hausdorff_mm
from canet.postproc import connected_components, keep_largest
from canet.voxcore import LabelMap

gt = np.zeros((12, 12, 12), np.int8)
gt[3:9, 3:9, 3:9] = 1
pred = gt.copy()
pred[3:9, 3:9, 9] = 1          # one slab too thick
pred[0, 0, 0] = 1              # a stray voxel far away

for spacing in [(1.0, 1.0, 1.0), (3.0, 0.8, 0.8)]:
    p, g = LabelMap(pred, spacing), LabelMap(gt, spacing)
    print(f"spacing {spacing}: DSC {eval_dsc(p, g, 1):.4f}, HD {hausdorff_mm(p, g, 1):.2f} mm, "
          f"AVD {avd_mm(p, g, 1):.3f} mm")

print("components before cleanup:", connected_components(pred, 26, label=1).sizes)
clean = keep_largest(LabelMap(pred))
print("components after cleanup:", connected_components(clean.data, 26, label=1).sizes)
print("HD after cleanup: %.2f mm" % hausdorff_mm(clean, LabelMap(gt), 1))
