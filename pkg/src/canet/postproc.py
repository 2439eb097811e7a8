"""Logit-to-label conversion and connected-component cleanup."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .voxcore import LabelMap

DEFAULT_CLEAN_CLASSES = (1, 2)  # kidney, tumor; vessels branch legitimately


def _structure(connectivity: int):
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def argmax_labels(logits: np.ndarray, geometry=None) -> LabelMap:
    """Per-voxel argmax over channels; ties go to the lower class id.

    ``logits`` is (1, K, D, H, W) or (K, D, H, W). ``geometry`` is any
    object with ``spacing``/``origin`` (a Volume or LabelMap) or None.
    """
    logits = np.asarray(logits)
    if logits.ndim == 5:
        if logits.shape[0] != 1:
            raise ValueError("argmax_labels takes a single case")
        logits = logits[0]
    labels = np.argmax(logits, axis=0)
    spacing = getattr(geometry, "spacing", (1.0, 1.0, 1.0))
    origin = getattr(geometry, "origin", (0.0, 0.0, 0.0))
    return LabelMap(labels, spacing, origin, num_classes=max(logits.shape[0], 5))


@dataclass
class Component:
    size: int
    voxels: np.ndarray  # (n, 3) indices in scan order


@dataclass
class ComponentSet:
    label: int | None
    components: list[Component]
    label_image: np.ndarray  # 0 = outside; k = index k-1 in ``components``

    def __len__(self):
        return len(self.components)

    @property
    def sizes(self) -> list[int]:
        return [c.size for c in self.components]


def connected_components(mask, connectivity: int = 26, label: int | None = None) -> ComponentSet:
    """Maximal connected components, numbered by first voxel in scan order."""
    mask = np.asarray(mask.data if isinstance(mask, LabelMap) else mask)
    mask = mask == label if label is not None else mask.astype(bool)
    raw, n = ndimage.label(mask, structure=_structure(connectivity))
    if n == 0:
        return ComponentSet(label, [], np.zeros(mask.shape, dtype=np.int32))
    flat = raw.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    order = ids[keep][np.argsort(first[keep], kind="stable")]
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order] = np.arange(1, n + 1, dtype=np.int32)
    ordered = remap[raw]
    sizes = np.bincount(ordered.ravel(), minlength=n + 1)[1:]
    coords = np.argwhere(ordered)  # scan order
    ids_at = ordered[tuple(coords.T)]
    sort = np.argsort(ids_at, kind="stable")
    splits = np.cumsum(sizes)[:-1]
    groups = np.split(coords[sort], splits)
    comps = [Component(int(s), g) for s, g in zip(sizes, groups)]
    return ComponentSet(label, comps, ordered)


def keep_largest(labels: LabelMap, class_ids=DEFAULT_CLEAN_CLASSES, connectivity: int = 26) -> LabelMap:
    """Send every voxel outside its class's largest component to background."""
    out = labels.data.copy()
    for cid in class_ids:
        cs = connected_components(labels.data, connectivity, label=cid)
        if len(cs) <= 1:
            continue
        best = int(np.argmax(cs.sizes)) + 1  # argmax picks the earliest on ties
        out[(cs.label_image > 0) & (cs.label_image != best)] = 0
    return LabelMap(out, labels.spacing, labels.origin, labels.num_classes)


def close_gaps(labels: LabelMap, class_ids=DEFAULT_CLEAN_CLASSES, iterations: int = 1) -> LabelMap:
    """Alternative cleanup: morphological closing per class, filling background only."""
    out = labels.data.copy()
    st = _structure(26)
    for cid in class_ids:
        closed = ndimage.binary_closing(labels.data == cid, structure=st, iterations=iterations)
        out[closed & (out == 0)] = cid
    return LabelMap(out, labels.spacing, labels.origin, labels.num_classes)


def postprocess(labels: LabelMap, class_ids=DEFAULT_CLEAN_CLASSES, mode: str = "largest",
                connectivity: int = 26) -> LabelMap:
    if mode == "largest":
        return keep_largest(labels, class_ids, connectivity)
    if mode == "closing":
        return close_gaps(labels, class_ids)
    if mode == "none":
        return labels
    raise ValueError(f"unknown postprocessing mode {mode!r}")
