#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the three hot paths (pairwise IoU, greedy NMS, pixel confusion
counts) on workloads shaped like real runs: proposal sets from
low-threshold multiscale harvesting and full-resolution mask pairs.

Usage:
    python3 benchmarks/bench_kernels.py [--boxes N] [--mask-side S] [--iters I]

The runtime flag DAMAGESCAN_NUMBA=0 switches the package itself to the
numpy path; this script times both implementations directly.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from damagescan import kernels


def _random_boxes(rng: np.random.Generator, n: int) -> np.ndarray:
    xy = rng.uniform(0, 1000, size=(n, 2))
    hw = rng.uniform(2, 80, size=(n, 2))
    return np.concatenate([xy, hw], axis=1)


def _time(fn, *args, iters: int) -> float:
    best = float("inf")
    for _ in range(iters):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--boxes", type=int, default=2000)
    parser.add_argument("--mask-side", type=int, default=1024)
    parser.add_argument("--iters", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    boxes_a = _random_boxes(rng, args.boxes)
    boxes_b = _random_boxes(rng, args.boxes)
    pred = rng.integers(0, 3, size=(args.mask_side, args.mask_side)).astype(np.uint8)
    gt = rng.integers(0, 3, size=(args.mask_side, args.mask_side)).astype(np.uint8)

    rows = []
    if kernels.HAS_NUMBA:
        # warm the JIT outside the timed region
        kernels.iou_matrix_nb(boxes_a[:4], boxes_b[:4])
        kernels.nms_keep_nb(boxes_a[:4], 0.1)
        kernels.confusion_matrix_nb(pred[:4, :4], gt[:4, :4], 3)

        pairs = [
            (
                f"iou_matrix ({args.boxes}x{args.boxes})",
                lambda: kernels.iou_matrix_np(boxes_a, boxes_b),
                lambda: kernels.iou_matrix_nb(boxes_a, boxes_b),
            ),
            (
                f"nms_keep ({args.boxes} boxes, thr 0.1)",
                lambda: kernels.nms_keep_np(boxes_a, 0.1),
                lambda: kernels.nms_keep_nb(boxes_a, 0.1),
            ),
            (
                f"confusion ({args.mask_side}^2 pixels)",
                lambda: kernels.confusion_matrix_np(pred, gt, 3),
                lambda: kernels.confusion_matrix_nb(pred, gt, 3),
            ),
        ]
        print(f"{'kernel':<36} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
        print("-" * 72)
        for label, np_fn, nb_fn in pairs:
            t_np = _time(np_fn, iters=args.iters) * 1000
            t_nb = _time(nb_fn, iters=args.iters) * 1000
            print(f"{label:<36} {t_np:>12.3f} {t_nb:>12.3f} {t_np / t_nb:>8.2f}x")

        # agreement spot-check
        ok = (
            np.allclose(
                kernels.iou_matrix_np(boxes_a, boxes_b),
                kernels.iou_matrix_nb(boxes_a, boxes_b),
                atol=1e-12,
            )
            and np.array_equal(
                kernels.nms_keep_np(boxes_a, 0.1), kernels.nms_keep_nb(boxes_a, 0.1)
            )
            and np.array_equal(
                kernels.confusion_matrix_np(pred, gt, 3),
                kernels.confusion_matrix_nb(pred, gt, 3),
            )
        )
        print(f"\nagreement: {'OK' if ok else 'MISMATCH'}")
    else:
        print("numba unavailable; timing numpy path only")
        print("iou_matrix:", _time(lambda: kernels.iou_matrix_np(boxes_a, boxes_b), iters=args.iters))

    print(f"active path in package: {'numba' if kernels.USING_NUMBA else 'numpy'}")


if __name__ == "__main__":
    main()
