"""Detection and localization metrics.

* AU-ROC in the Mann-Whitney form: the probability that a random positive
  outscores a random negative, with ties credited 1/2.
* Average precision: mean of precision at each positive's rank under a
  stable descending sort (ties broken by original sample order).
* F1_max: best F1 over thresholds placed at the unique score values
  (prediction rule: score >= threshold).
* AU-PRO: per-region overlap (connected components of the ground-truth
  masks, 4-connectivity) averaged over all regions as the threshold
  sweeps, integrated over false-positive rate in [0, fpr_cap] and
  normalized by the cap (default 0.3 by convention).

Pixel-level AU-ROC/AP/F1 pool all pixels of the test set; AU-PRO is
regionwise by definition. All metrics are rank statistics: invariant under
strictly increasing score transformations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import UndefinedMetricError

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    if scores.size == 0:
        raise UndefinedMetricError("empty input")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("labels must be binary")
    return scores, labels


def au_roc(scores, labels) -> float:
    """Mann-Whitney AU-ROC with half credit for ties."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AU-ROC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # average ranks over tie runs (1-based), vectorized
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    runs = np.concatenate([[0], boundaries, [scores.size]])
    avg_rank = 0.5 * (runs[:-1] + 1 + runs[1:])
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.repeat(avg_rank, np.diff(runs))
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _descending(scores, labels):
    order = np.argsort(-scores, kind="stable")
    return labels[order], scores[order]


def average_precision(scores, labels) -> float:
    scores, labels = _validate(scores, labels)
    if labels.sum() == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    sorted_labels, _ = _descending(scores, labels)
    cum_tp = np.cumsum(sorted_labels)
    pos = np.flatnonzero(sorted_labels == 1)
    return float(np.mean(cum_tp[pos] / (pos + 1)))


def f1_max(scores, labels) -> float:
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("F1 needs at least one positive")
    sorted_labels, sorted_scores = _descending(scores, labels)
    cum_tp = np.cumsum(sorted_labels)
    # evaluate at the inclusive end of every equal-score run
    run_ends = np.flatnonzero(np.diff(sorted_scores) != 0)
    run_ends = np.concatenate([run_ends, [scores.size - 1]])
    tp = cum_tp[run_ends]
    predicted = run_ends + 1
    f1 = 2.0 * tp / (predicted + n_pos)  # == 2TP / (2TP + FP + FN)
    return float(f1.max())


def label_regions(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Connected components of a binary mask, 4-connectivity."""
    lab, n = ndimage.label(np.asarray(mask) != 0, structure=_FOUR_CONN)
    return lab, int(n)


def au_pro(maps, masks, fpr_cap: float = 0.3) -> float:
    """Area under the per-region-overlap curve up to ``fpr_cap``."""
    if not 0.0 < fpr_cap <= 1.0:
        raise ValueError("fpr_cap must be in (0, 1]")
    if len(maps) != len(masks) or not maps:
        raise ValueError("need equally many maps and masks")

    region_ids = []   # per pixel: global region index, or -1 for background
    areas = []
    for amap, mask in zip(maps, masks):
        amap = np.asarray(amap)
        mask = np.asarray(mask)
        if amap.shape != mask.shape:
            raise ValueError("map/mask shape mismatch")
        lab, n = label_regions(mask)
        ids = np.where(lab > 0, lab - 1 + len(areas), -1)
        areas.extend(ndimage.sum_labels(np.ones_like(lab), lab, index=range(1, n + 1)))
        region_ids.append(ids.reshape(-1))
    if not areas:
        raise UndefinedMetricError("AU-PRO needs at least one anomalous region")
    areas = np.asarray(areas, dtype=np.float64)
    n_regions = len(areas)

    scores = np.concatenate([np.asarray(m, dtype=np.float64).reshape(-1) for m in maps])
    regions = np.concatenate(region_ids)
    total_neg = int((regions < 0).sum())
    if total_neg == 0:
        raise UndefinedMetricError("AU-PRO needs negative pixels")

    # Each mask pixel contributes 1/(R * area) to the mean region overlap;
    # prefix sums along the descending sweep give the whole curve at once.
    weights = np.where(regions >= 0, 1.0 / (n_regions * areas[np.maximum(regions, 0)]), 0.0)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    cum_pro = np.cumsum(weights[order])
    cum_fp = np.cumsum((regions[order] < 0).astype(np.float64))

    run_ends = np.flatnonzero(np.diff(sorted_scores) != 0)
    run_ends = np.concatenate([run_ends, [scores.size - 1]])
    fpr = np.concatenate([[0.0], cum_fp[run_ends] / total_neg])
    pro = np.concatenate([[0.0], cum_pro[run_ends]])
    return _integrate_to_cap(fpr, pro, fpr_cap)


def _integrate_to_cap(fpr: np.ndarray, pro: np.ndarray, cap: float) -> float:
    """Trapezoidal area of the sweep-ordered curve over FPR in [0, cap]."""
    inside = fpr <= cap
    fs, ps = list(fpr[inside]), list(pro[inside])
    k = int(inside.sum())
    if k < fpr.size and fs[-1] < cap:
        f0, f1 = fpr[k - 1], fpr[k]
        p0, p1 = pro[k - 1], pro[k]
        ps.append(p0 + (p1 - p0) * (cap - f0) / (f1 - f0))
        fs.append(cap)
    area = np.trapezoid(ps, fs)
    return float(area / cap)


@dataclass(frozen=True)
class MetricsReport:
    """Image- and pixel-level metrics plus their mean (mAD)."""

    image_auroc: float
    image_ap: float
    image_f1max: float
    pixel_auroc: float
    pixel_ap: float
    pixel_f1max: float
    aupro: float

    CSV_HEADER = "auroc_img,ap_img,f1max_img,auroc_px,ap_px,f1max_px,aupro,mad"

    @property
    def mad(self) -> float:
        return (self.image_auroc + self.image_ap + self.image_f1max
                + self.pixel_auroc + self.pixel_ap + self.pixel_f1max
                + self.aupro) / 7.0

    def csv_row(self) -> str:
        fields = [self.image_auroc, self.image_ap, self.image_f1max,
                  self.pixel_auroc, self.pixel_ap, self.pixel_f1max,
                  self.aupro, self.mad]
        return ",".join(repr(float(v)) for v in fields)


def compute_report(image_scores, image_labels, maps, masks,
                   fpr_cap: float = 0.3) -> MetricsReport:
    """Full report; pixel-level AU-ROC/AP/F1 pool all pixels."""
    px_scores = np.concatenate([np.asarray(m, dtype=np.float64).reshape(-1) for m in maps])
    px_labels = np.concatenate([(np.asarray(m) != 0).astype(np.int64).reshape(-1) for m in masks])
    return MetricsReport(
        image_auroc=au_roc(image_scores, image_labels),
        image_ap=average_precision(image_scores, image_labels),
        image_f1max=f1_max(image_scores, image_labels),
        pixel_auroc=au_roc(px_scores, px_labels),
        pixel_ap=average_precision(px_scores, px_labels),
        pixel_f1max=f1_max(px_scores, px_labels),
        aupro=au_pro(maps, masks, fpr_cap=fpr_cap),
    )
