"""Anomaly maps and detection metrics.

The anomaly map is |min-max normalized input - min-max normalized
counterfactual| smoothed by a small median filter. Detection quality is
scored four ways: mean per-sample max-Dice over a full threshold sweep,
pixel-pooled average precision (step interpolation) and Mann-Whitney
AUC (tie corrected), and the false positive rate at the single global
threshold that maximizes mean Dice over the cohort. Ties in threshold
sweeps resolve toward the higher threshold, i.e. the smaller prediction.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError
from .kernels import median2d
from .synthdata import PhantomSpec

HIGHER_BETTER = {"dice": True, "ap": True, "auc": True, "fpr": False}

# report column labels, in fixed order, keyed by internal metric name
REPORT_COLUMNS = (("dice", "Dice"), ("ap", "AP_pix"), ("auc", "AUC_pix"), ("fpr", "FPR"))


def min_max_normalize(img: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; a constant image maps to all zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def anomaly_map(original: np.ndarray, counterfactual: np.ndarray,
                smooth_radius: int = 1) -> np.ndarray:
    """Non-negative per-pixel anomaly score; smooth_radius 0 skips the filter."""
    original = np.asarray(original, dtype=np.float64)
    counterfactual = np.asarray(counterfactual, dtype=np.float64)
    if original.ndim != 2 or original.shape != counterfactual.shape:
        raise ContractError(
            f"expected matching 2d images, got {original.shape} and {counterfactual.shape}"
        )
    if not (np.all(np.isfinite(original)) and np.all(np.isfinite(counterfactual))):
        raise ContractError("anomaly_map inputs must be finite")
    diff = np.abs(min_max_normalize(original) - min_max_normalize(counterfactual))
    if smooth_radius == 0:
        return diff
    return median2d(diff, smooth_radius)


def _check_binary(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ContractError(f"{name} must be binary (0/1 values only)")
    return arr.astype(bool)


def dice(pred, gt) -> float:
    """2|A n B| / (|A| + |B|); two empty masks count as perfect agreement."""
    pred = _check_binary(pred, "pred")
    gt = _check_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise ContractError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    denom = int(pred.sum()) + int(gt.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / denom


def _sweep_curves(amap: np.ndarray, gt: np.ndarray, thresholds: np.ndarray):
    """(n_pred, tp) counts for pred = amap >= theta at each threshold."""
    vals = np.sort(amap.ravel())
    pos_vals = np.sort(amap.ravel()[gt.ravel()])
    n_pred = vals.size - np.searchsorted(vals, thresholds, side="left")
    tp = pos_vals.size - np.searchsorted(pos_vals, thresholds, side="left")
    return n_pred, tp


def max_dice_per_sample(amap: np.ndarray, gt) -> tuple:
    """Best Dice over all thresholds of one map: (dice, threshold).

    The sweep covers every distinct map value plus one value above the
    maximum (the empty prediction); equal Dice resolves to the higher
    threshold.
    """
    amap = np.asarray(amap, dtype=np.float64)
    gt = _check_binary(gt, "gt")
    if amap.shape != gt.shape:
        raise ContractError(f"map shape {amap.shape} does not match mask {gt.shape}")
    uniq = np.unique(amap.ravel())
    thresholds = np.append(uniq, uniq[-1] + 1.0)
    n_pred, tp = _sweep_curves(amap, gt, thresholds)
    denom = n_pred + int(gt.sum())
    scores = np.where(denom == 0, 1.0, 2.0 * tp / np.maximum(denom, 1))
    best = scores.size - 1 - int(np.argmax(scores[::-1]))
    return float(scores[best]), float(thresholds[best])


def auc_mann_whitney(scores, labels) -> float:
    """Probability a positive outranks a negative, ties at half credit."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _check_binary(labels, "labels").ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"scores {scores.shape} and labels {labels.shape} differ")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[labels].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _check_binary(labels, "labels").ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"scores {scores.shape} and labels {labels.shape} differ")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DomainError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    # groups of tied scores collapse to one operating point
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.append(boundary, scores.size - 1)
    tp = np.cumsum(sorted_labels)[ends]
    total = ends + 1
    precision = tp / total
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def _cohort_mean_dice(maps, masks, thresholds: np.ndarray) -> np.ndarray:
    total = np.zeros(thresholds.size)
    for amap, gt in zip(maps, masks):
        n_pred, tp = _sweep_curves(np.asarray(amap, dtype=np.float64), gt, thresholds)
        denom = n_pred + int(gt.sum())
        total += np.where(denom == 0, 1.0, 2.0 * tp / np.maximum(denom, 1))
    return total / len(maps)


def global_dice_threshold(maps, masks) -> tuple:
    """(threshold, mean_dice): one threshold for the whole cohort."""
    if len(maps) == 0 or len(maps) != len(masks):
        raise ContractError(f"need equal non-empty lists, got {len(maps)} maps, {len(masks)} masks")
    masks = [_check_binary(m, "mask") for m in masks]
    pooled = np.unique(np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps]))
    thresholds = np.append(pooled, pooled[-1] + 1.0)
    mean_dice = _cohort_mean_dice(maps, masks, thresholds)
    best = mean_dice.size - 1 - int(np.argmax(mean_dice[::-1]))
    return float(thresholds[best]), float(mean_dice[best])


def fpr_at_global_threshold(maps, masks) -> float:
    """Pooled FP / (FP + TN) at the cohort-best mean-Dice threshold."""
    theta, _ = global_dice_threshold(maps, masks)
    fp = 0
    negatives = 0
    for amap, gt in zip(maps, masks):
        gt = _check_binary(gt, "mask")
        neg = ~gt
        fp += int(np.logical_and(np.asarray(amap, dtype=np.float64) >= theta, neg).sum())
        negatives += int(neg.sum())
    if negatives == 0:
        raise DomainError("FPR undefined: no negative pixels in the cohort")
    return fp / negatives


def toy_segment(img: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    """Nearest-centre labels over {background} + band midpoints.

    Exact midpoints between two centres go to the lower class index; by
    construction of the default bands no in-band value sits on one.
    """
    img = np.asarray(img, dtype=np.float64)
    centers = spec.class_centers
    dist = np.abs(img[..., None] - centers)
    return np.argmin(dist, axis=-1).astype(np.int32)


def label_dice_table(pred_label: np.ndarray, gt_label: np.ndarray, n_classes: int) -> dict:
    """Per-tissue-class Dice of two label maps, classes 1..n_classes."""
    pred_label = np.asarray(pred_label)
    gt_label = np.asarray(gt_label)
    if pred_label.shape != gt_label.shape:
        raise ContractError(f"label shapes differ: {pred_label.shape} vs {gt_label.shape}")
    if n_classes < 1:
        raise ContractError(f"n_classes must be >= 1, got {n_classes}")
    return {
        k: dice((pred_label == k).astype(np.uint8), (gt_label == k).astype(np.uint8))
        for k in range(1, n_classes + 1)
    }


def region_dice_table(gt_healthy, counterfactuals, spec: PhantomSpec) -> dict:
    """Mean per-tissue-class Dice of segmented counterfactuals vs truth.

    Both cohorts are segmented with toy_segment and the class-wise Dice
    is averaged over the cohort; classes are 1..len(spec.bands).
    """
    if len(gt_healthy) == 0 or len(gt_healthy) != len(counterfactuals):
        raise ContractError(
            f"need equal non-empty cohorts, got {len(gt_healthy)} and {len(counterfactuals)}"
        )
    n_classes = len(spec.bands)
    totals = {k: 0.0 for k in range(1, n_classes + 1)}
    for truth, cf in zip(gt_healthy, counterfactuals):
        row = label_dice_table(toy_segment(cf, spec), toy_segment(truth, spec), n_classes)
        for k, v in row.items():
            totals[k] += v
    return {k: v / len(gt_healthy) for k, v in totals.items()}


def average_rank(table: dict) -> dict:
    """Mean rank of each method across metrics, direction aware.

    table maps method -> {metric: value}; every method must report the
    same metrics, each listed in HIGHER_BETTER. Rank 1 is best; tied
    values share the mean of their positions.
    """
    methods = list(table)
    if not methods:
        raise ContractError("rank table is empty")
    metrics = list(table[methods[0]])
    for m in methods:
        if list(table[m]) != metrics:
            raise ContractError(f"method {m!r} reports different metrics")
    for metric in metrics:
        if metric not in HIGHER_BETTER:
            raise ContractError(f"unknown metric {metric!r}; known: {sorted(HIGHER_BETTER)}")
    ranks = {m: 0.0 for m in methods}
    for metric in metrics:
        vals = np.array([table[m][metric] for m in methods], dtype=np.float64)
        if not HIGHER_BETTER[metric]:
            vals = -vals
        for i, m in enumerate(methods):
            better = int(np.sum(vals > vals[i]))
            equal = int(np.sum(vals == vals[i]))
            ranks[m] += better + (equal + 1) / 2.0
    return {m: ranks[m] / len(metrics) for m in methods}


def per_sample_max_dice(maps, masks) -> list:
    """(max_dice, best_threshold) per cohort sample, in order."""
    if len(maps) == 0 or len(maps) != len(masks):
        raise ContractError(f"need equal non-empty lists, got {len(maps)} maps, {len(masks)} masks")
    return [max_dice_per_sample(m, g) for m, g in zip(maps, masks)]


def cohort_metrics(maps, masks) -> dict:
    """dice / ap / auc / fpr for one method over a cohort of maps."""
    if len(maps) == 0 or len(maps) != len(masks):
        raise ContractError(f"need equal non-empty lists, got {len(maps)} maps, {len(masks)} masks")
    dice_scores = [max_dice_per_sample(m, g)[0] for m, g in zip(maps, masks)]
    pooled_scores = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps])
    pooled_labels = np.concatenate([np.asarray(g).ravel() for g in masks])
    return {
        "dice": float(np.mean(dice_scores)),
        "ap": average_precision(pooled_scores, pooled_labels),
        "auc": auc_mann_whitney(pooled_scores, pooled_labels),
        "fpr": fpr_at_global_threshold(maps, masks),
    }


def evaluate_counterfactuals(inputs, counterfactuals, masks, smooth_radius: int = 1) -> dict:
    maps = [
        anomaly_map(x, cf, smooth_radius)
        for x, cf in zip(np.asarray(inputs), np.asarray(counterfactuals))
    ]
    return cohort_metrics(maps, list(masks))


def _rank_column(table: dict) -> dict:
    stripped = {m: {k: vals[k] for k, _ in REPORT_COLUMNS} for m, vals in table.items()}
    return average_rank(stripped)


def format_report_table(table: dict) -> str:
    """Fixed-width summary: method rows, columns Dice AP_pix AUC_pix FPR Rank."""
    rank = _rank_column(table)
    header = ["method"] + [label for _, label in REPORT_COLUMNS] + ["Rank"]
    rows = [header]
    for m, vals in table.items():
        rows.append([m] + [f"{vals[k]:.4f}" for k, _ in REPORT_COLUMNS] + [f"{rank[m]:.2f}"])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines)


def write_report_csv(path, table: dict, per_sample: dict | None = None,
                     region_dice: dict | None = None) -> None:
    """Metrics report: per-sample rows, then aggregate footer rows.

    per_sample maps method -> [(id, max_dice, best_threshold), ...];
    region_dice maps method -> {class: mean dice}. Sections are blocks
    with their own header line, separated by a blank line.
    """
    rank = _rank_column(table)
    blocks = []
    if per_sample:
        lines = ["method,id,max_dice,best_threshold"]
        for m, rows in per_sample.items():
            for sample_id, dice_val, thr in rows:
                lines.append(f"{m},{sample_id},{dice_val:.10g},{thr:.10g}")
        blocks.append("\n".join(lines))
    header = ",".join(["method"] + [label for _, label in REPORT_COLUMNS] + ["Rank"])
    lines = [header]
    for m, vals in table.items():
        cells = [m] + [f"{vals[k]:.10g}" for k, _ in REPORT_COLUMNS] + [f"{rank[m]:.10g}"]
        lines.append(",".join(cells))
    blocks.append("\n".join(lines))
    if region_dice:
        lines = ["method,region,dice"]
        for m, per_class in region_dice.items():
            for k in sorted(per_class):
                lines.append(f"{m},{k},{per_class[k]:.10g}")
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
