"""Prompt-ensemble damage scoring.

A building patch pair is scored against a positive prompt set (intact
phrasings) and a negative set (damage phrasings). Three probability
vectors enter: positive prompts on the pre image, positive prompts on
the post image, negative prompts on the post image. The weighted score
combines the confidence change across time with the positive/negative
margin on the post image; lower scores mean more likely damaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox

DEFAULT_POSITIVE_PROMPTS = [
    "A satellite photo of a building",
    "normal building",
    "undamaged building",
    "building",
]

DEFAULT_NEGATIVE_PROMPTS = [
    "A satellite photo of a ruin",
    "damaged building",
    "destroyed building",
    "ruin",
]


@dataclass
class PromptEnsemble:
    positive: list[str] = field(default_factory=lambda: list(DEFAULT_POSITIVE_PROMPTS))
    negative: list[str] = field(default_factory=lambda: list(DEFAULT_NEGATIVE_PROMPTS))

    def __post_init__(self):
        if not self.positive or not self.negative:
            raise ValueError("both prompt sets must be non-empty")


@dataclass(frozen=True)
class ScoreBreakdown:
    """Every intermediate of the ensemble score, for reports and audits."""

    z_pre_pos_max: float
    z_post_pos_max: float
    z_post_neg_max: float
    delta_pos: float
    delta_post: float
    s: float


def softmax_normalize(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax; rejects empty or non-finite input."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty logit vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite logits")
    shifted = arr - arr.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def ensemble_score(
    z_pre_pos: np.ndarray,
    z_post_pos: np.ndarray,
    z_post_neg: np.ndarray,
    epsilon: float,
    change_weight: float = 0.5,
    post_weight: float = 0.5,
) -> ScoreBreakdown:
    """Fuse the three probability vectors into the weighted score.

    delta_pos  = max(post positive) - max(pre positive) + epsilon
    delta_post = max(post positive) - max(post negative)
    s          = change_weight * delta_pos + post_weight * delta_post
    """
    maxima = []
    for vec in (z_pre_pos, z_post_pos, z_post_neg):
        arr = np.asarray(vec, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("empty probability vector")
        maxima.append(float(arr.max()))
    pre_pos, post_pos, post_neg = maxima
    delta_pos = post_pos - pre_pos + epsilon
    delta_post = post_pos - post_neg
    s = change_weight * delta_pos + post_weight * delta_post
    return ScoreBreakdown(
        z_pre_pos_max=pre_pos,
        z_post_pos_max=post_pos,
        z_post_neg_max=post_neg,
        delta_pos=delta_pos,
        delta_post=delta_post,
        s=s,
    )


def classify_damage(s: float, damage_threshold: float) -> int:
    """1 (undamaged) iff s >= threshold, else 2 (damaged).

    The boundary itself counts as undamaged.
    """
    return 1 if s >= damage_threshold else 2


def pad_patch_window(
    box: BoundingBox, height: int, width: int, pad: float, min_side: float
) -> BoundingBox:
    """Expand a box into the context window used for scoring.

    Dilate by ``pad`` on every side; any side still under ``min_side``
    grows symmetrically to it. The window then clamps to the frame with
    the growth pushed inward, so the requested size survives whenever
    the image is large enough.
    """
    if pad < 0:
        raise ValueError(f"negative pad: {pad}")
    if min_side < 1:
        raise ValueError(f"min_side below 1: {min_side}")
    x0 = box.x - pad
    y0 = box.y - pad
    w = box.w + 2 * pad
    h = box.h + 2 * pad
    if w < min_side:
        x0 -= (min_side - w) / 2.0
        w = float(min_side)
    if h < min_side:
        y0 -= (min_side - h) / 2.0
        h = float(min_side)
    w = min(w, float(width))
    h = min(h, float(height))
    x0 = min(max(x0, 0.0), width - w)
    y0 = min(max(y0, 0.0), height - h)
    return BoundingBox(x=x0, y=y0, h=h, w=w)
