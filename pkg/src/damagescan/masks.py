"""Dense raster masks and their algebra.

Masks are uint8 numpy arrays, one byte per pixel, row major. A binary
mask holds {0,1} (background / building); an evaluation mask holds
{0,1,2} (background / undamaged building / damaged building). Raw
ground-truth rasters may additionally carry levels up to 4 before
remapping.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .geometry import BoundingBox

BACKGROUND = 0
UNDAMAGED = 1
DAMAGED = 2


def new_mask(height: int, width: int) -> np.ndarray:
    return np.zeros((height, width), dtype=np.uint8)


def validate_mask(mask: np.ndarray, max_value: int) -> np.ndarray:
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.dtype != np.uint8:
        mask = mask.astype(np.uint8)
    if mask.size and int(mask.max()) > max_value:
        raise ValueError(f"mask value {int(mask.max())} exceeds {max_value}")
    return mask


def merge_max(masks: list[np.ndarray], height: int, width: int) -> np.ndarray:
    """Pixel-wise maximum across masks; the empty list gives all zeros."""
    for m in masks:
        if m.shape != (height, width):
            raise ValueError(f"mask shape {m.shape} != ({height}, {width})")
    if not masks:
        return new_mask(height, width)
    return np.maximum.reduce([m.astype(np.uint8) for m in masks])


def compose_eval_mask(seg: np.ndarray, damage_class: int) -> np.ndarray:
    """Stamp a damage class onto a binary segmentation mask.

    The product keeps background at 0 and lifts building pixels to the
    class value. Class 0 is rejected: background is not a building label.
    """
    if damage_class not in (UNDAMAGED, DAMAGED):
        raise ValueError(f"damage class must be 1 or 2, got {damage_class}")
    seg = validate_mask(seg, max_value=1)
    return (seg * np.uint8(damage_class)).astype(np.uint8)


def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def rasterize_box(box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Filled rectangle over the half-open pixel span [x, x+w) x [y, y+h).

    Bounds round half away from zero, then clamp to the frame; a box
    that clamps to nothing yields the all-zero mask.
    """
    x0 = max(_round_half_away(box.x), 0)
    y0 = max(_round_half_away(box.y), 0)
    x1 = min(_round_half_away(box.right), width)
    y1 = min(_round_half_away(box.bottom), height)
    out = new_mask(height, width)
    if x1 > x0 and y1 > y0:
        out[y0:y1, x0:x1] = 1
    return out


def save_mask_png(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray(validate_mask(mask, max_value=255), mode="L").save(path)


def load_mask_png(path: str | Path, max_value: int = 4) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    if arr.size and int(arr.max()) > max_value:
        raise DataError(
            f"mask {path} carries value {int(arr.max())} above {max_value}"
        )
    return arr
