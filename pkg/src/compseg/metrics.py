"""Segmentation evaluation: Dice similarity coefficient (percent), average
symmetric surface distance (mm), largest-connected-component post-processing,
and fold-wise aggregation with CSV/table reporting.

Conventions (documented because the empty-mask cases matter for datasets
with negative examples): DSC of two empty masks is 100; ASSD is undefined
(NaN) whenever either mask is empty for the class, and undefined entries are
excluded from aggregation but counted. Boundaries and components use
4-connectivity by default; pixels beyond the image border count as
background, so foreground pixels on the border are boundary pixels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

_STRUCTURES = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    8: np.ones((3, 3), dtype=bool),
}


def dsc(pred: np.ndarray, target: np.ndarray, class_id: int, num_classes: int | None = None) -> float:
    """Dice similarity coefficient as a percentage; both-empty convention is 100."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if class_id < 0 or (num_classes is not None and class_id > num_classes):
        raise ValueError(f"unknown class_id {class_id}")
    a = pred == class_id
    b = target == class_id
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 100.0
    return 100.0 * 2.0 * int((a & b).sum()) / (na + nb)


def boundary_pixels(binary: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """(N, 2) row/col coordinates of foreground pixels adjacent to background.

    Adjacency uses the given connectivity; outside the image counts as
    background.
    """
    binary = np.asarray(binary, dtype=bool)
    padded = np.pad(binary, 1, mode="constant", constant_values=False)
    eroded = ndimage.binary_erosion(padded, structure=_STRUCTURES[connectivity])[1:-1, 1:-1]
    return np.argwhere(binary & ~eroded)


def assd(
    pred: np.ndarray,
    target: np.ndarray,
    class_id: int,
    spacing: tuple[float, float] = (1.0, 1.0),
    connectivity: int = 4,
) -> float:
    """Average symmetric surface distance in mm; NaN when either mask is empty.

    Mean of the two directed average boundary distances, with coordinates
    scaled by the pixel spacing before measuring.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if spacing[0] <= 0 or spacing[1] <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    a = pred == class_id
    b = target == class_id
    if not a.any() or not b.any():
        return math.nan
    scale = np.asarray(spacing, dtype=np.float64)
    pts_a = boundary_pixels(a, connectivity) * scale
    pts_b = boundary_pixels(b, connectivity) * scale
    d_ab = cKDTree(pts_b).query(pts_a)[0]
    d_ba = cKDTree(pts_a).query(pts_b)[0]
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def largest_component(pred: np.ndarray, class_id: int, connectivity: int = 4) -> np.ndarray:
    """Keep only the largest connected component of one class.

    Removed pixels of the class become background; all other classes are
    untouched. Size ties are broken by the smallest top-left (row-major
    first) pixel. Idempotent; an empty class is returned unchanged.
    """
    pred = np.asarray(pred)
    binary = pred == class_id
    if not binary.any() or class_id == 0:
        return pred.copy()
    labels, n = ndimage.label(binary, structure=_STRUCTURES[connectivity])
    if n <= 1:
        return pred.copy()
    sizes = np.bincount(labels.ravel())[1:]  # skip background label 0
    best_size = sizes.max()
    candidates = np.flatnonzero(sizes == best_size) + 1
    if len(candidates) == 1:
        keep = candidates[0]
    else:
        flat = labels.ravel()
        keep = min(candidates, key=lambda lid: int(np.flatnonzero(flat == lid)[0]))
    out = pred.copy()
    out[binary & (labels != keep)] = 0
    return out


def apply_largest_component(pred: np.ndarray, num_classes: int, connectivity: int = 4) -> np.ndarray:
    """Largest-component post-processing applied to every foreground class."""
    out = np.asarray(pred).copy()
    for class_id in range(1, num_classes + 1):
        out = largest_component(out, class_id, connectivity)
    return out


# ---------------------------------------------------------------------------
# Per-image records and aggregation


@dataclass
class ImageMetrics:
    image_id: str
    fold: int
    class_id: int
    dsc: float  # percent
    assd: float  # mm, NaN when undefined


@dataclass
class ClassSummary:
    class_id: int
    dsc_mean: float
    dsc_std: float
    assd_mean: float  # NaN if undefined in every fold
    assd_std: float
    n_undefined_assd: int
    per_fold_dsc: list[float] = field(default_factory=list)
    per_fold_assd: list[float] = field(default_factory=list)


@dataclass
class MetricsReport:
    classes: list[ClassSummary]
    folds: list[int]
    post_processed: bool

    def mean_dsc(self) -> float:
        return float(np.mean([c.dsc_mean for c in self.classes]))


def per_image_metrics(
    pred: np.ndarray,
    target: np.ndarray,
    num_classes: int,
    spacing: tuple[float, float],
    image_id: str,
    fold: int,
    connectivity: int = 4,
) -> list[ImageMetrics]:
    rows = []
    for class_id in range(1, num_classes + 1):
        rows.append(
            ImageMetrics(
                image_id=image_id,
                fold=fold,
                class_id=class_id,
                dsc=dsc(pred, target, class_id),
                assd=assd(pred, target, class_id, spacing, connectivity),
            )
        )
    return rows


def aggregate(rows: list[ImageMetrics], post_processed: bool = False) -> MetricsReport:
    """Per-fold means first, then cross-fold mean and population std.

    Undefined ASSD entries are excluded from the fold means and counted in
    the summary; a fold with no defined ASSD contributes nothing to the
    cross-fold ASSD statistics.
    """
    if not rows:
        raise ValueError("cannot aggregate an empty metrics list")
    folds = sorted({r.fold for r in rows})
    class_ids = sorted({r.class_id for r in rows})
    summaries = []
    for class_id in class_ids:
        fold_dsc, fold_assd = [], []
        n_undef = 0
        for fold in folds:
            sub = [r for r in rows if r.fold == fold and r.class_id == class_id]
            if not sub:
                continue
            fold_dsc.append(float(np.mean([r.dsc for r in sub])))
            defined = [r.assd for r in sub if not math.isnan(r.assd)]
            n_undef += sum(1 for r in sub if math.isnan(r.assd))
            fold_assd.append(float(np.mean(defined)) if defined else math.nan)
        assd_vals = [v for v in fold_assd if not math.isnan(v)]
        summaries.append(
            ClassSummary(
                class_id=class_id,
                dsc_mean=float(np.mean(fold_dsc)),
                dsc_std=float(np.std(fold_dsc)),
                assd_mean=float(np.mean(assd_vals)) if assd_vals else math.nan,
                assd_std=float(np.std(assd_vals)) if assd_vals else math.nan,
                n_undefined_assd=n_undef,
                per_fold_dsc=fold_dsc,
                per_fold_assd=fold_assd,
            )
        )
    return MetricsReport(classes=summaries, folds=folds, post_processed=post_processed)


def write_metrics_csv(rows: list[ImageMetrics], path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fold", "image_id", "class_id", "dsc_percent", "assd_mm"])
        for r in rows:
            writer.writerow([r.fold, r.image_id, r.class_id,
                             f"{r.dsc:.6f}", "" if math.isnan(r.assd) else f"{r.assd:.6f}"])


def format_table(
    report: MetricsReport,
    class_names: list[str] | None = None,
    row_label: str = "model",
) -> str:
    """Plain-text results table: one column pair (DSC, ASSD) per class."""
    names = {}
    for c in report.classes:
        if class_names and 1 <= c.class_id <= len(class_names):
            names[c.class_id] = class_names[c.class_id - 1]
        else:
            names[c.class_id] = f"class{c.class_id}"
    header = [row_label.ljust(16)]
    for c in report.classes:
        header.append(f"{names[c.class_id]:>10} DSC(%)  ASSD(mm)")
    lines = ["  ".join(header)]
    cells = [("post-processed" if report.post_processed else "raw").ljust(16)]
    for c in report.classes:
        assd_txt = "undef" if math.isnan(c.assd_mean) else f"{c.assd_mean:.1f}+-{c.assd_std:.1f}"
        cells.append(f"{c.dsc_mean:>10.1f}+-{c.dsc_std:<4.1f}  {assd_txt:>8}")
    lines.append("  ".join(cells))
    if any(c.n_undefined_assd for c in report.classes):
        undef = ", ".join(f"{names[c.class_id]}: {c.n_undefined_assd}" for c in report.classes)
        lines.append(f"undefined ASSD entries excluded ({undef})")
    return "\n".join(lines)
