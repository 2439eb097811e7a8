"""Evaluation metrics: dice, Hausdorff distance and average surface distance.

Distances are measured centre-to-centre between surface voxels in
millimetres. A surface voxel is a foreground voxel with at least one
6-neighbour outside the mask; voxels on the grid border count as surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure

from .voxcore import CLASS_NAMES, LabelMap, same_geometry

EVAL_CLASSES = (1, 2, 3, 4)
REPORT_COLUMNS = ("case", "class", "dsc", "hd_mm", "avd_mm", "flags")


def _check_geometry(pred: LabelMap, gt: LabelMap):
    if not same_geometry(pred, gt):
        raise ValueError(
            f"geometry mismatch: pred {pred.dims}@{pred.spacing} vs gt {gt.dims}@{gt.spacing}")


def _binary(m, class_id=None):
    data = m.data if isinstance(m, LabelMap) else np.asarray(m)
    return data == class_id if class_id is not None else data.astype(bool)


def eval_dsc(pred: LabelMap, gt: LabelMap, class_id: int) -> float:
    """Hard dice for one class; two empty masks score 1.0."""
    _check_geometry(pred, gt)
    p, g = _binary(pred, class_id), _binary(gt, class_id)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def surface_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    interior = binary_erosion(mask, generate_binary_structure(3, 1), border_value=0)
    return mask & ~interior


def surface_voxels(mask) -> set[tuple[int, int, int]]:
    return {tuple(int(i) for i in idx) for idx in np.argwhere(surface_mask(_binary(mask)))}


def _directed_distances(src_surface, dst_surface, spacing):
    """Distance from each surface voxel of ``src`` to the nearest of ``dst``."""
    dt = distance_transform_edt(~dst_surface, sampling=spacing)
    return dt[src_surface]


def surface_distances(a: np.ndarray, b: np.ndarray, spacing) -> tuple[np.ndarray, np.ndarray]:
    sa, sb = surface_mask(a), surface_mask(b)
    if not sa.any() or not sb.any():
        raise ValueError("surface distances undefined for an empty mask")
    return _directed_distances(sa, sb, spacing), _directed_distances(sb, sa, spacing)


def hausdorff_mm(pred: LabelMap, gt: LabelMap, class_id: int) -> float:
    """Symmetric maximum surface distance; NaN when either mask is empty."""
    _check_geometry(pred, gt)
    p, g = _binary(pred, class_id), _binary(gt, class_id)
    if not p.any() or not g.any():
        return math.nan
    d_pg, d_gp = surface_distances(p, g, pred.spacing)
    return float(max(d_pg.max(), d_gp.max()))


def avd_mm(pred: LabelMap, gt: LabelMap, class_id: int) -> float:
    """Mean of nearest-surface distances pooled over both directions."""
    _check_geometry(pred, gt)
    p, g = _binary(pred, class_id), _binary(gt, class_id)
    if not p.any() or not g.any():
        return math.nan
    d_pg, d_gp = surface_distances(p, g, pred.spacing)
    return float((d_pg.sum() + d_gp.sum()) / (d_pg.size + d_gp.size))


@dataclass
class ClassScores:
    dsc: float
    hd_mm: float
    avd_mm: float
    flags: tuple[str, ...] = ()

    @property
    def distances_defined(self) -> bool:
        return not (math.isnan(self.hd_mm) or math.isnan(self.avd_mm))


@dataclass
class EvalReport:
    case: str
    scores: dict[int, ClassScores] = field(default_factory=dict)

    def rows(self):
        for cid in sorted(self.scores):
            s = self.scores[cid]
            yield (self.case, CLASS_NAMES[cid], s.dsc, s.hd_mm, s.avd_mm, "|".join(s.flags) or "-")


def evaluate_case(pred: LabelMap, gt: LabelMap, case: str = "case", classes=EVAL_CLASSES) -> EvalReport:
    _check_geometry(pred, gt)
    report = EvalReport(case)
    for cid in classes:
        p, g = _binary(pred, cid), _binary(gt, cid)
        flags = []
        if not p.any() and not g.any():
            flags.append("both_empty")
        elif not p.any():
            flags.append("pred_empty")
        elif not g.any():
            flags.append("gt_empty")
        dsc = eval_dsc(pred, gt, cid)
        if flags:
            hd = avd = math.nan
            flags.append("distance_undefined")
        else:
            d_pg, d_gp = surface_distances(p, g, pred.spacing)
            hd = float(max(d_pg.max(), d_gp.max()))
            avd = float((d_pg.sum() + d_gp.sum()) / (d_pg.size + d_gp.size))
        report.scores[cid] = ClassScores(dsc, hd, avd, tuple(flags))
    return report


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_report(path, reports) -> None:
    """Tab-separated, one row per case per class, header first."""
    lines = ["\t".join(REPORT_COLUMNS)]
    for rep in reports:
        for case, cls, dsc, hd, avd, flags in rep.rows():
            lines.append("\t".join((case, cls, _fmt(dsc), _fmt(hd), _fmt(avd), flags)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> list[EvalReport]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != REPORT_COLUMNS:
        raise ValueError(f"{path}: not an evaluation report (bad header)")
    by_case: dict[str, EvalReport] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        case, cls, dsc, hd, avd, flags = line.split("\t")
        rep = by_case.setdefault(case, EvalReport(case))
        rep.scores[CLASS_NAMES.index(cls)] = ClassScores(
            float(dsc), float(hd), float(avd), tuple(f for f in flags.split("|") if f != "-"))
    return list(by_case.values())


def aggregate(reports) -> dict[str, dict[str, float]]:
    """Per-class means; undefined distances are skipped, not imputed."""
    out = {}
    for cid in EVAL_CLASSES:
        rows = [r.scores[cid] for r in reports if cid in r.scores]
        if not rows:
            continue
        hd = [s.hd_mm for s in rows if not math.isnan(s.hd_mm)]
        avd = [s.avd_mm for s in rows if not math.isnan(s.avd_mm)]
        out[CLASS_NAMES[cid]] = {
            "dsc": float(np.mean([s.dsc for s in rows])),
            "hd_mm": float(np.mean(hd)) if hd else math.nan,
            "avd_mm": float(np.mean(avd)) if avd else math.nan,
            "n": len(rows),
            "n_distance": len(hd),
        }
    return out
