"""Measurement machinery: pixel F1/IoU, object P/R/F1, and COCO-style AP.

Pixel scores come from integer confusion counts, so dataset-level
accumulation is exact. Object metrics use greedy score-ordered matching.
AP follows the COCO recipe: greedy matching per IoU threshold, a
101-point interpolated precision-recall curve, the mean over thresholds
0.50:0.05:0.95, and size strata with out-of-band ground truth ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import BoundingBox, boxes_to_array
from .kernels import confusion_matrix, iou_matrix
from .masks import validate_mask

N_CLASSES = 3
CLASS_NAMES = ("background", "undamaged", "damaged")

IOU_THRESHOLDS = tuple(t / 100.0 for t in range(50, 100, 5))
RECALL_POINTS = np.arange(101) / 100.0

# gt-area strata in px^2, the detection-benchmark convention
AREA_BANDS: dict[str, tuple[float, float]] = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0**2),
    "med": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}


# ---------------------------------------------------------------------------
# Pixel metrics
# ---------------------------------------------------------------------------


@dataclass
class ConfusionCounts:
    """Per-class pixel counts as a (gt, pred) matrix."""

    matrix: np.ndarray  # (K, K) int64

    @classmethod
    def zero(cls, n_classes: int = N_CLASSES) -> "ConfusionCounts":
        return cls(matrix=np.zeros((n_classes, n_classes), dtype=np.int64))

    @classmethod
    def from_masks(
        cls, pred: np.ndarray, gt: np.ndarray, n_classes: int = N_CLASSES
    ) -> "ConfusionCounts":
        if pred.shape != gt.shape:
            raise DataError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
        pred = validate_mask(pred, max_value=n_classes - 1)
        gt = validate_mask(gt, max_value=n_classes - 1)
        return cls(matrix=confusion_matrix(pred, gt, n_classes))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(matrix=self.matrix + other.matrix)

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.matrix)

    @property
    def fp(self) -> np.ndarray:
        return self.matrix.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.matrix.sum(axis=1) - self.tp

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


@dataclass
class ClassReport:
    f1: np.ndarray
    iou: np.ndarray
    mean_f1: float
    mean_iou: float
    vacuous: np.ndarray  # classes absent from both pred and gt, scored 1.0

    def to_json(self) -> dict:
        keys = ("B", "U", "D")
        out: dict = {}
        for i, key in enumerate(keys):
            out[f"F1_{key}"] = float(self.f1[i])
            out[f"IoU_{key}"] = float(self.iou[i])
        out["mF1"] = self.mean_f1
        out["mIoU"] = self.mean_iou
        out["vacuous_classes"] = [
            CLASS_NAMES[i] for i in range(len(self.vacuous)) if self.vacuous[i]
        ]
        return out


def scores_from_counts(counts: ConfusionCounts) -> ClassReport:
    tp = counts.tp.astype(np.float64)
    fp = counts.fp.astype(np.float64)
    fn = counts.fn.astype(np.float64)
    support = tp + fp + fn
    vacuous = support == 0
    f1 = np.ones_like(tp)
    iou = np.ones_like(tp)
    np.divide(2 * tp, 2 * tp + fp + fn, out=f1, where=~vacuous)
    np.divide(tp, support, out=iou, where=~vacuous)
    return ClassReport(
        f1=f1,
        iou=iou,
        mean_f1=float(f1.mean()),
        mean_iou=float(iou.mean()),
        vacuous=vacuous,
    )


def pixel_scores(pred: np.ndarray, gt: np.ndarray) -> ClassReport:
    """Per-class F1 and IoU over one mask pair.

    A class absent from prediction and truth alike scores 1.0 so means
    stay meaningful on scenes lacking a class; such classes are flagged.
    """
    return scores_from_counts(ConfusionCounts.from_masks(pred, gt))


def binarize_presence(mask: np.ndarray) -> np.ndarray:
    """Collapse an evaluation mask to building-present / background."""
    return (np.asarray(mask) > 0).astype(np.uint8)


def remap_gt_classes(raw: np.ndarray) -> np.ndarray:
    """Collapse 5-level damage ground truth onto {0,1,2}.

    Level 1 (no damage) maps to undamaged; levels 2-4 (minor, major,
    destroyed) all map to damaged; background stays 0.
    """
    raw = validate_mask(raw, max_value=4)
    lut = np.array([0, 1, 2, 2, 2], dtype=np.uint8)
    return lut[raw]


# ---------------------------------------------------------------------------
# Object metrics
# ---------------------------------------------------------------------------


def greedy_match(
    pred_boxes: list[BoundingBox],
    scores: list[float],
    gts: list[BoundingBox],
    iou_thr: float,
) -> list[int | None]:
    """Greedy one-to-one matching in descending-score order.

    Each prediction takes the highest-IoU unmatched ground truth with
    IoU >= iou_thr; ties in score break by input order. Returns the
    matched gt index per prediction (input order), None where unmatched.
    """
    n_pred, n_gt = len(pred_boxes), len(gts)
    matched: list[int | None] = [None] * n_pred
    if not n_pred or not n_gt:
        return matched
    order = sorted(range(n_pred), key=lambda i: (-scores[i], i))
    ious = iou_matrix(
        boxes_to_array([pred_boxes[i] for i in order]), boxes_to_array(gts)
    )
    taken = np.zeros(n_gt, dtype=bool)
    for row, i in enumerate(order):
        candidates = np.where(~taken & (ious[row] >= iou_thr))[0]
        if candidates.size:
            best = int(candidates[np.argmax(ious[row][candidates])])
            taken[best] = True
            matched[i] = best
    return matched


def object_prf(
    preds: list[tuple[BoundingBox, float]],
    gts: list[BoundingBox],
    iou_thr: float,
) -> tuple[float, float, float]:
    """Precision/recall/F1 from greedy matching; empty denominators give 0."""
    if not 0.0 < iou_thr < 1.0:
        raise ValueError(f"iou_thr outside (0,1): {iou_thr}")
    matched = greedy_match(
        [b for b, _ in preds], [s for _, s in preds], gts, iou_thr
    )
    tp = sum(m is not None for m in matched)
    precision = tp / len(preds) if preds else 0.0
    recall = tp / len(gts) if gts else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f1


def damage_label_accuracy(
    preds: list[tuple[BoundingBox, float, int]],
    gts: list[tuple[BoundingBox, bool]],
    iou_thr: float,
) -> tuple[float | None, int]:
    """Label agreement over matched prediction/ground-truth pairs.

    A prediction is correct when its label equals 2 for a damaged ground
    truth building and 1 otherwise. Returns (accuracy, matched count);
    accuracy is None when nothing matches.
    """
    matched = greedy_match(
        [b for b, _, _ in preds],
        [s for _, s, _ in preds],
        [b for b, _ in gts],
        iou_thr,
    )
    correct = 0
    total = 0
    for (_, _, label), gt_idx in zip(preds, matched):
        if gt_idx is None:
            continue
        total += 1
        expected = 2 if gts[gt_idx][1] else 1
        if label == expected:
            correct += 1
    return (correct / total if total else None), total


@dataclass
class APReport:
    ap: float
    ap50: float
    ap75: float
    ap_small: float
    ap_med: float
    ap_large: float
    empty_gt: bool = False

    def to_json(self) -> dict:
        return {
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "AP_small": self.ap_small,
            "AP_med": self.ap_med,
            "AP_large": self.ap_large,
            "empty_gt": self.empty_gt,
        }


@dataclass
class _ImageEval:
    # per prediction, aligned to descending-score order within the image
    scores: np.ndarray
    tp: np.ndarray
    ignored: np.ndarray


def _match_image(
    preds: list[tuple[BoundingBox, float]],
    gts: list[BoundingBox],
    iou_thr: float,
    band: tuple[float, float],
) -> tuple[_ImageEval, int]:
    """Match one image's predictions at one IoU threshold and area band.

    Ground truth outside the band is ignorable: predictions may match it
    without counting either way. Unmatched predictions whose own area is
    outside the band are ignored too; the rest are false positives.
    """
    lo, hi = band
    gt_active = np.array([lo <= g.area < hi for g in gts], dtype=bool)
    n_active = int(gt_active.sum())
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
    scores = np.array([preds[i][1] for i in order], dtype=np.float64)
    tp = np.zeros(len(order), dtype=bool)
    ignored = np.zeros(len(order), dtype=bool)
    if order and gts:
        ious = iou_matrix(
            boxes_to_array([preds[i][0] for i in order]), boxes_to_array(gts)
        )
        taken = np.zeros(len(gts), dtype=bool)
        for row in range(len(order)):
            overlapping = ious[row] >= iou_thr
            active_cand = np.where(overlapping & ~taken & gt_active)[0]
            if active_cand.size:
                best = active_cand[np.argmax(ious[row][active_cand])]
                taken[best] = True
                tp[row] = True
                continue
            ignore_cand = np.where(overlapping & ~taken & ~gt_active)[0]
            if ignore_cand.size:
                best = ignore_cand[np.argmax(ious[row][ignore_cand])]
                taken[best] = True
                ignored[row] = True
    for row, i in enumerate(order):
        if not tp[row] and not ignored[row]:
            area = preds[i][0].area
            if not lo <= area < hi:
                ignored[row] = True
    return _ImageEval(scores=scores, tp=tp, ignored=ignored), n_active


def _interpolated_ap(
    evals: list[_ImageEval], total_gt: int
) -> float:
    if total_gt == 0:
        return 0.0
    scores = np.concatenate([e.scores for e in evals]) if evals else np.zeros(0)
    tp = np.concatenate([e.tp for e in evals]) if evals else np.zeros(0, dtype=bool)
    ignored = (
        np.concatenate([e.ignored for e in evals])
        if evals
        else np.zeros(0, dtype=bool)
    )
    image_idx = np.concatenate(
        [np.full(len(e.scores), k) for k, e in enumerate(evals)]
    ) if evals else np.zeros(0)
    keep = ~ignored
    scores, tp, image_idx = scores[keep], tp[keep], image_idx[keep]
    if scores.size == 0:
        return 0.0
    # global order: score desc, then image, then within-image rank (stable)
    order = np.lexsort((image_idx, -scores))
    tp = tp[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recall = cum_tp / total_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # precision envelope from the right, then sample the recall grid
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def average_precision(
    preds_by_image: list[list[tuple[BoundingBox, float]]],
    gts_by_image: list[list[BoundingBox]],
) -> APReport:
    """COCO-style AP over a dataset of scored boxes.

    Returns the threshold-averaged AP plus AP at 0.50 and 0.75 and the
    three size strata. A dataset with no ground truth at all reports
    zeros with the empty_gt flag raised.
    """
    if len(preds_by_image) != len(gts_by_image):
        raise DataError(
            f"image count mismatch: {len(preds_by_image)} vs {len(gts_by_image)}"
        )
    for img_preds in preds_by_image:
        for _, score in img_preds:
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"score outside [0,1]: {score}")
    total_gt_all = sum(len(g) for g in gts_by_image)
    if total_gt_all == 0:
        return APReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, empty_gt=True)

    def band_ap(band: tuple[float, float], thresholds) -> float:
        values = []
        for thr in thresholds:
            evals = []
            total_gt = 0
            for preds, gts in zip(preds_by_image, gts_by_image):
                ev, n_active = _match_image(preds, gts, thr, band)
                evals.append(ev)
                total_gt += n_active
            values.append(_interpolated_ap(evals, total_gt))
        return float(np.mean(values))

    return APReport(
        ap=band_ap(AREA_BANDS["all"], IOU_THRESHOLDS),
        ap50=band_ap(AREA_BANDS["all"], [0.50]),
        ap75=band_ap(AREA_BANDS["all"], [0.75]),
        ap_small=band_ap(AREA_BANDS["small"], IOU_THRESHOLDS),
        ap_med=band_ap(AREA_BANDS["med"], IOU_THRESHOLDS),
        ap_large=band_ap(AREA_BANDS["large"], IOU_THRESHOLDS),
    )
