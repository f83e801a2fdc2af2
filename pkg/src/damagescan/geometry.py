"""Axis-aligned box arithmetic, greedy NMS, and the multiscale tile grid.

All boxes are (x, y, h, w): left, top, height, width, in pixels of the
original image frame. Coordinates are floats; rasterization rounds at
mask time only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .kernels import iou_matrix, nms_keep


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    h: float
    w: float

    def __post_init__(self):
        if not (self.h > 0 and self.w > 0):
            raise ValueError(f"degenerate box: h={self.h}, w={self.w}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative origin: x={self.x}, y={self.y}")

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.h * self.w

    def clip(self, height: int, width: int) -> "BoundingBox":
        """Intersect with the image frame; raises if nothing remains."""
        x0 = min(max(self.x, 0.0), float(width))
        y0 = min(max(self.y, 0.0), float(height))
        x1 = min(self.right, float(width))
        y1 = min(self.bottom, float(height))
        return BoundingBox(x=x0, y=y0, h=y1 - y0, w=x1 - x0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.h, self.w], dtype=np.float64)


@dataclass(frozen=True)
class ScoredProposal:
    """A building candidate with detector confidence and provenance."""

    box: BoundingBox
    logit: float
    scale: float = 1.0
    patch_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.logit <= 1.0:
            raise ValueError(f"logit outside [0,1]: {self.logit}")
        if not 0.0 < self.scale <= 1.0:
            raise ValueError(f"scale outside (0,1]: {self.scale}")


@dataclass(frozen=True)
class PatchRect:
    """A sliding-window patch in original-image pixels."""

    x: int
    y: int
    side_h: int
    side_w: int
    scale: float


def boxes_to_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    rows = [b.as_array() for b in boxes]
    if not rows:
        return np.zeros((0, 4))
    return np.stack(rows)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when disjoint."""
    return float(iou_matrix(a.as_array()[None, :], b.as_array()[None, :])[0, 0])


def nms_keep_indices(
    proposals: Sequence[ScoredProposal], iou_threshold: float
) -> list[int]:
    """Indices of the proposals NMS keeps, in descending-logit order.

    A proposal survives iff its IoU with every already-kept proposal is
    <= iou_threshold. Ties in logit break by smaller patch_index, then
    by (x, y), so reruns are reproducible.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold outside [0,1]: {iou_threshold}")
    if not proposals:
        return []
    order = sorted(
        range(len(proposals)),
        key=lambda i: (
            -proposals[i].logit,
            proposals[i].patch_index,
            proposals[i].box.x,
            proposals[i].box.y,
        ),
    )
    arr = boxes_to_array([proposals[i].box for i in order])
    keep = nms_keep(arr, float(iou_threshold))
    return [order[i] for i in range(len(order)) if keep[i]]


def nms_filter(
    proposals: Sequence[ScoredProposal], iou_threshold: float
) -> list[ScoredProposal]:
    """Greedy suppression in descending-logit order; see nms_keep_indices."""
    return [proposals[i] for i in nms_keep_indices(proposals, iou_threshold)]


def _axis_positions(dim: int, side: int, count: int) -> list[int]:
    # Stride is half a patch side; the final window always lands on the
    # image edge so coverage holds for non-divisible dimensions.
    limit = max(dim - side, 0)
    positions = [min(round(i * side / 2.0), limit) for i in range(count)]
    if count > 1:
        positions[-1] = limit
    return positions


def build_tile_grid(
    height: int, width: int, scales: Sequence[float]
) -> list[PatchRect]:
    """Overlapping patches at each scale, ceil(2/s - 1)^2 per scale.

    Within a scale the windows advance by half a patch side per axis;
    the full frame is the single patch at scale 1.
    """
    patches: list[PatchRect] = []
    for scale in scales:
        if not 0.0 < scale <= 1.0:
            raise ConfigError(f"scale outside (0,1]: {scale}")
        side_h = max(round(scale * height), 1)
        side_w = max(round(scale * width), 1)
        # epsilon guards the ceil against float fuzz in 2/scale
        per_axis = math.ceil(2.0 / scale - 1.0 - 1e-9)
        ys = _axis_positions(height, side_h, per_axis)
        xs = _axis_positions(width, side_w, per_axis)
        for y in ys:
            for x in xs:
                patches.append(
                    PatchRect(x=x, y=y, side_h=side_h, side_w=side_w, scale=scale)
                )
    return patches


def remap_to_image(
    box_in_patch: BoundingBox,
    patch: PatchRect,
    upsample_factor: float | tuple[float, float],
) -> BoundingBox:
    """Map a box predicted on an upsampled patch back to image coordinates.

    ``upsample_factor`` is the patch-to-prediction-frame blowup, either a
    single ratio or a (vertical, horizontal) pair. Coordinates divide by
    the factor, translate by the patch origin, and clamp to the patch's
    extent in the image (which never exceeds the image bounds).
    """
    if isinstance(upsample_factor, tuple):
        fy, fx = upsample_factor
    else:
        fy = fx = float(upsample_factor)
    if fy <= 0 or fx <= 0:
        raise ValueError(f"non-positive upsample factor: ({fy}, {fx})")
    frame_h = patch.side_h * fy
    frame_w = patch.side_w * fx
    eps = 1e-6
    if (
        box_in_patch.x < -eps
        or box_in_patch.y < -eps
        or box_in_patch.right > frame_w + eps
        or box_in_patch.bottom > frame_h + eps
    ):
        raise ValueError(
            f"box {box_in_patch} outside upsampled patch frame "
            f"({frame_h:.1f} x {frame_w:.1f})"
        )
    x0 = max(patch.x + box_in_patch.x / fx, float(patch.x))
    y0 = max(patch.y + box_in_patch.y / fy, float(patch.y))
    x1 = min(patch.x + box_in_patch.right / fx, patch.x + patch.side_w)
    y1 = min(patch.y + box_in_patch.bottom / fy, patch.y + patch.side_h)
    return BoundingBox(x=x0, y=y0, h=y1 - y0, w=x1 - x0)
