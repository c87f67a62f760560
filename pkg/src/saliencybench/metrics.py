"""The three evaluation metrics.

* Perturbation fidelity: mask pixels most- or least-important first, track
  the balanced accuracy, and integrate the area between the two curves.
* ROC concordance: per-pixel agreement between (normalized) importance
  scores and binary ground-truth masks, averaged across images.
* Region overlap: segment the image, rank regions by mean importance,
  reveal the top percentage, and score Dice overlap against the mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .model import TrainedModel, balanced_accuracy, predict_class
from .segmentation import (FelzParams, RankedRegions, RegionMap,
                           felzenszwalb_segment, region_mean_scores)

DEFAULT_PERCENT_GRID = (1, 2, 3, 4, 5, 7.5, 10, 15, 20, 30, 50)


@dataclass
class PerturbationCurve:
    fractions: np.ndarray      # 0, 0.025, ..., 1.0
    accuracies: np.ndarray     # balanced accuracy at each fraction
    order: str                 # "mif" or "lif"


@dataclass
class RocCurve:
    thresholds: np.ndarray     # descending; last entry is a below-min sentinel
    mean_fpr: np.ndarray
    mean_tpr: np.ndarray


@dataclass
class DscCurve:
    percents: np.ndarray
    mean_dsc: np.ndarray
    max_dsc: float
    argmax_percent: float


def pixel_ranking(scores: np.ndarray, order: str) -> np.ndarray:
    """Flat pixel indices, most (mif) or least (lif) important first.
    Ties resolve to the lower pixel index."""
    flat = scores.ravel()
    if order == "mif":
        return np.argsort(-flat, kind="stable")
    if order == "lif":
        return np.argsort(flat, kind="stable")
    raise ValueError(f"order must be 'mif' or 'lif', got {order!r}")


def perturbation_curves(model: TrainedModel, images: np.ndarray,
                        labels: np.ndarray, heatmaps: np.ndarray,
                        order: str, fraction_step: float = 0.025) -> PerturbationCurve:
    """Mask an increasing pixel fraction per the ranking and re-evaluate.

    Masking is label-dependent: value 0 for contrast images (label 1) and
    value 1 otherwise, removing the contrast evidence either way.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    if heatmaps.shape != images.shape:
        raise ShapeMismatchError(
            f"heatmap stack {heatmaps.shape} != image stack {images.shape}")
    n, h, w = images.shape
    p = h * w
    rankings = np.stack([pixel_ranking(heatmaps[i], order) for i in range(n)])
    fill = np.where(labels == 1, 0.0, 1.0)
    fractions = np.arange(0.0, 1.0 + fraction_step / 2, fraction_step)
    accuracies = np.empty_like(fractions)
    flat = images.reshape(n, p)
    for j, f in enumerate(fractions):
        count = int(round(f * p))
        masked = flat.copy()
        if count:
            rows = np.repeat(np.arange(n), count)
            cols = rankings[:, :count].ravel()
            masked[rows, cols] = np.repeat(fill, count)
        preds = predict_class(model, masked.reshape(n, h, w))
        accuracies[j] = balanced_accuracy(labels, preds)
    return PerturbationCurve(fractions, accuracies, order)


def fidelity(mif: PerturbationCurve, lif: PerturbationCurve) -> float:
    """Area between the curves, trapezoidal over the fraction grid."""
    if mif.fractions.shape != lif.fractions.shape or \
            not np.allclose(mif.fractions, lif.fractions):
        raise ShapeMismatchError("perturbation curves use different fraction grids")
    return float(np.trapezoid(lif.accuracies - mif.accuracies, mif.fractions))


def roc_curve_mean(heatmaps: np.ndarray, masks: np.ndarray,
                   threshold_count: int = 101) -> RocCurve:
    """Pointwise-averaged ROC over the eval set.

    Heatmaps must already be minmax-normalized per image. A positive
    prediction is a score strictly above the threshold; images whose mask
    is empty or full are excluded (rates undefined) with a warning. The
    grid is descending over [0, 1] plus a below-minimum sentinel so the
    curve runs from (0, 0) to (1, 1).
    """
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if heatmaps.shape != masks.shape:
        raise ShapeMismatchError(
            f"heatmap stack {heatmaps.shape} != mask stack {masks.shape}")
    thresholds = np.append(np.linspace(1.0, 0.0, threshold_count), -1.0)
    tprs, fprs = [], []
    for i in range(heatmaps.shape[0]):
        mask = masks[i].ravel()
        pos = int(mask.sum())
        if pos == 0 or pos == mask.size:
            warnings.warn(f"image {i}: mask empty or full, excluded from ROC mean")
            continue
        scores = heatmaps[i].ravel()
        above = scores[None, :] > thresholds[:, None]
        tprs.append(above[:, mask].sum(axis=1) / pos)
        fprs.append(above[:, ~mask].sum(axis=1) / (mask.size - pos))
    if not tprs:
        raise ValueError("no image had a usable mask")
    return RocCurve(thresholds,
                    np.mean(fprs, axis=0), np.mean(tprs, axis=0))


def auc(curve: RocCurve, method: str = "mean_tpr") -> float:
    """Area under the ROC curve.

    'mean_tpr' is the headline estimator (mean of the TPR heights over the
    grid); 'trapezoid' integrates TPR over FPR.
    """
    if method == "mean_tpr":
        return float(curve.mean_tpr.mean())
    if method == "trapezoid":
        order = np.argsort(curve.mean_fpr, kind="stable")
        return float(np.trapezoid(curve.mean_tpr[order], curve.mean_fpr[order]))
    raise ValueError(f"unknown AUC method {method!r}")


def xrai_top_percent(ranked: RankedRegions, regions: RegionMap, p: float) -> np.ndarray:
    """Binary map of the top-ranked regions covering at least p% of pixels.

    Regions are atomic: the region crossing the budget is included whole.
    """
    if not 0 < p <= 100:
        raise ValueError(f"percentage must be in (0, 100], got {p}")
    total = regions.labels.size
    budget = p / 100.0 * total
    included = np.zeros(regions.labels.shape, dtype=bool)
    covered = 0
    for rid in ranked.order:
        included |= regions.labels == rid
        covered += int(regions.sizes[rid])
        if covered >= budget:
            break
    return included


def dsc(x: np.ndarray, y: np.ndarray) -> float:
    """Dice similarity coefficient 2|X&Y| / (|X|+|Y|); 1 when both empty."""
    x = np.asarray(x, dtype=bool)
    y = np.asarray(y, dtype=bool)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"mask shapes differ: {x.shape} vs {y.shape}")
    denom = int(x.sum()) + int(y.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((x & y).sum()) / denom


def dsc_curve(heatmaps: np.ndarray, images: np.ndarray, masks: np.ndarray,
              felz_params: FelzParams = FelzParams(),
              percent_grid: tuple[float, ...] = DEFAULT_PERCENT_GRID,
              region_maps: list[RegionMap] | None = None) -> DscCurve:
    """Mean Dice overlap of top-p% region maps against the masks.

    Per sample: segment the image, rank regions by mean heatmap score,
    reveal the top p percent, compare with the ground-truth mask. Passing
    precomputed region_maps skips the (deterministic) segmentation step.
    """
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    n = images.shape[0]
    if region_maps is None:
        region_maps = [felzenszwalb_segment(images[i], felz_params) for i in range(n)]
    percents = np.asarray(percent_grid, dtype=np.float64)
    scores = np.zeros((n, percents.size))
    for i in range(n):
        ranked = region_mean_scores(region_maps[i], heatmaps[i])
        for j, p in enumerate(percents):
            top = xrai_top_percent(ranked, region_maps[i], p)
            scores[i, j] = dsc(top, masks[i])
    mean_dsc = scores.mean(axis=0)
    best = int(np.argmax(mean_dsc))
    return DscCurve(percents, mean_dsc, float(mean_dsc[best]), float(percents[best]))
