"""Hot numeric kernels: pairwise IoU, greedy NMS, pixel confusion counts.

Each kernel has a numba @njit implementation and a pure-numpy fallback.
The active implementation is chosen once at import time: set
``DAMAGESCAN_NUMBA=0`` to force the numpy path (the benchmark suite under
``benchmarks/`` times both). When numba is not importable the numpy path
is used silently.

Box arrays are float64 with columns (x, y, h, w): left, top, height,
width in pixels of the original image frame.
"""

from __future__ import annotations

import os

import numpy as np


def _flag_enabled() -> bool:
    value = os.environ.get("DAMAGESCAN_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "off", "no")


# --------------------------------------------------------------------------
# Pure-numpy implementations
# --------------------------------------------------------------------------

def iou_matrix_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (N,4) / (M,4) box arrays -> (N,M)."""
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    ax0, ay0 = a[:, 0:1], a[:, 1:2]
    ax1, ay1 = ax0 + a[:, 3:4], ay0 + a[:, 2:3]
    bx0, by0 = b[:, 0], b[:, 1]
    bx1, by1 = bx0 + b[:, 3], by0 + b[:, 2]

    iw = np.minimum(ax1, bx1[None, :]) - np.maximum(ax0, bx0[None, :])
    ih = np.minimum(ay1, by1[None, :]) - np.maximum(ay0, by0[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)

    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms_keep_np(boxes: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy suppression over priority-ordered boxes -> bool keep mask.

    Row i is kept iff its IoU with every previously kept row is
    <= iou_threshold. Caller sorts by priority beforehand.
    """
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return keep
    kept_rows: list[int] = []
    for i in range(n):
        if kept_rows:
            ious = iou_matrix_np(boxes[i: i + 1], boxes[kept_rows])[0]
            if np.any(ious > iou_threshold):
                continue
        keep[i] = True
        kept_rows.append(i)
    return keep


def confusion_matrix_np(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> np.ndarray:
    """(n_classes, n_classes) count matrix; rows = gt class, cols = pred."""
    idx = gt.astype(np.int64).ravel() * n_classes + pred.astype(np.int64).ravel()
    counts = np.bincount(idx, minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


# --------------------------------------------------------------------------
# Numba implementations
# --------------------------------------------------------------------------

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _pair_iou(ax, ay, ah, aw, bx, by, bh, bw):
        iw = min(ax + aw, bx + bw) - max(ax, bx)
        if iw <= 0.0:
            return 0.0
        ih = min(ay + ah, by + bh) - max(ay, by)
        if ih <= 0.0:
            return 0.0
        inter = iw * ih
        union = ah * aw + bh * bw - inter
        if union <= 0.0:
            return 0.0
        return inter / union

    @numba.njit(cache=True)
    def iou_matrix_nb(a, b):
        n = a.shape[0]
        m = b.shape[0]
        out = np.zeros((n, m))
        for i in range(n):
            for j in range(m):
                out[i, j] = _pair_iou(
                    a[i, 0], a[i, 1], a[i, 2], a[i, 3],
                    b[j, 0], b[j, 1], b[j, 2], b[j, 3],
                )
        return out

    @numba.njit(cache=True)
    def nms_keep_nb(boxes, iou_threshold):
        n = boxes.shape[0]
        keep = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            ok = True
            for j in range(i):
                if not keep[j]:
                    continue
                iou = _pair_iou(
                    boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                    boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3],
                )
                if iou > iou_threshold:
                    ok = False
                    break
            keep[i] = ok
        return keep

    @numba.njit(cache=True)
    def confusion_matrix_nb(pred, gt, n_classes):
        out = np.zeros((n_classes, n_classes), dtype=np.int64)
        flat_pred = pred.ravel()
        flat_gt = gt.ravel()
        for i in range(flat_gt.shape[0]):
            out[flat_gt[i], flat_pred[i]] += 1
        return out


USING_NUMBA = HAS_NUMBA and _flag_enabled()

if USING_NUMBA:
    iou_matrix = iou_matrix_nb
    nms_keep = nms_keep_nb

    def confusion_matrix(pred, gt, n_classes):
        return confusion_matrix_nb(
            np.ascontiguousarray(pred, dtype=np.uint8),
            np.ascontiguousarray(gt, dtype=np.uint8),
            n_classes,
        )
else:
    iou_matrix = iou_matrix_np
    nms_keep = nms_keep_np
    confusion_matrix = confusion_matrix_np
