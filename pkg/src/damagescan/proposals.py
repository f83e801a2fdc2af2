"""Building-proposal harvesting and the selection cascade.

Proposal generation tiles the pre-disaster frame at multiple scales,
upsamples every patch to full resolution, and queries the detector at a
deliberately low confidence threshold. The cascade then prunes: per-scale
size limits, per-scale NMS, a cross-scale union, and finally a
vision-language keep/reject check per surviving box. Every input box gets
a provenance record naming the stage that removed it, if any.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .backends import Backend, DetectionRequest, ScoreRequest
from .errors import BackendError
from .geometry import (
    BoundingBox,
    PatchRect,
    ScoredProposal,
    build_tile_grid,
    nms_keep_indices,
    remap_to_image,
)
from .masks import _round_half_away
from .scoring import pad_patch_window

DEFAULT_FILTER_OBJECTS = [
    "building",
    "swimming pool",
    "tennis court",
    "parking lot",
    "street",
    "trees",
    "grass",
    "soil",
    "car",
    "truck",
]


def default_filter_prompts() -> list[str]:
    return [f"A satellite photo of {obj}" for obj in DEFAULT_FILTER_OBJECTS]


@dataclass
class FilterPromptList:
    """Prompt texts for the keep/reject check; index 0 names buildings."""

    prompts: list[str] = field(default_factory=default_filter_prompts)

    def __post_init__(self):
        if len(self.prompts) < 2:
            raise ValueError("need the building prompt plus at least one distractor")


@dataclass
class FilterConfig:
    max_height_frac: float = 0.75
    max_width_frac: float = 0.75
    max_area_frac: float = 0.03
    nms_iou: float = 0.1
    clip_logit_threshold: float = 0.0
    box_threshold: float = 0.14
    post_merge_nms: bool = False

    def __post_init__(self):
        for name in ("max_height_frac", "max_width_frac", "max_area_frac"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} outside (0,1]: {value}")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou outside [0,1]: {self.nms_iou}")
        if not 0.0 <= self.box_threshold <= 1.0:
            raise ValueError(f"box_threshold outside [0,1]: {self.box_threshold}")

    def to_json(self) -> dict:
        return {
            "max_height_frac": self.max_height_frac,
            "max_width_frac": self.max_width_frac,
            "max_area_frac": self.max_area_frac,
            "nms_iou": self.nms_iou,
            "clip_logit_threshold": self.clip_logit_threshold,
            "box_threshold": self.box_threshold,
            "post_merge_nms": self.post_merge_nms,
        }


def crop_window(image: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Integer crop of a float window, rounding half away from zero."""
    height, width = image.shape[:2]
    x0 = max(_round_half_away(box.x), 0)
    y0 = max(_round_half_away(box.y), 0)
    x1 = min(_round_half_away(box.right), width)
    y1 = min(_round_half_away(box.bottom), height)
    return image[y0:y1, x0:x1]


def upsample_patch(
    image: np.ndarray, patch: PatchRect, height: int, width: int
) -> tuple[np.ndarray, tuple[float, float]]:
    """Crop a patch and bilinearly upsample it to the full frame size."""
    crop = image[patch.y : patch.y + patch.side_h, patch.x : patch.x + patch.side_w]
    if crop.shape[:2] == (height, width):
        return crop, (1.0, 1.0)
    resized = np.asarray(
        Image.fromarray(crop).resize((width, height), Image.BILINEAR), dtype=np.uint8
    )
    return resized, (height / patch.side_h, width / patch.side_w)


def generate_building_proposals(
    image: np.ndarray,
    scales: list[float],
    detector: Backend,
    config: FilterConfig,
) -> dict[float, list[ScoredProposal]]:
    """Low-threshold multiscale detection over the sliding-window grid.

    Each patch is upsampled to the frame size and queried with the
    "building" text prompt; detections are remapped to original-image
    coordinates with their logits attached. A backend failure aborts the
    whole image (a partial proposal set would bias the pseudo-labels) and
    the raised error names the failing patch.
    """
    height, width = image.shape[:2]
    grid = build_tile_grid(height, width, scales)
    by_scale: dict[float, list[ScoredProposal]] = {scale: [] for scale in scales}
    for patch_index, patch in enumerate(grid):
        upsampled, factors = upsample_patch(image, patch, height, width)
        try:
            resp = detector.detect(
                DetectionRequest(
                    image=upsampled,
                    text_prompt="building",
                    box_threshold=config.box_threshold,
                )
            )
        except BackendError as exc:
            raise type(exc)(
                f"detector failed on patch {patch_index} "
                f"(scale {patch.scale}, origin ({patch.x},{patch.y})): {exc}"
            ) from exc
        for det in resp.detections:
            box = remap_to_image(det.box, patch, factors)
            by_scale[patch.scale].append(
                ScoredProposal(
                    box=box, logit=det.logit, scale=patch.scale, patch_index=patch_index
                )
            )
    return by_scale


def preliminary_filter(
    proposals: list[ScoredProposal],
    scale: float,
    height: int,
    width: int,
    config: FilterConfig,
) -> list[ScoredProposal]:
    """Reject boxes too large for their source patch.

    All three limits are relative to the patch dimensions at this scale,
    and all must hold: width, height, and area. A large building culled
    at a small scale can still survive from a larger patch.
    """
    max_w = config.max_width_frac * scale * width
    max_h = config.max_height_frac * scale * height
    max_area = config.max_area_frac * (scale * height) * (scale * width)
    return [
        p
        for p in proposals
        if p.box.w <= max_w and p.box.h <= max_h and p.box.area <= max_area
    ]


def multiscale_merge(
    per_scale_kept: dict[float, list[ScoredProposal]],
) -> list[ScoredProposal]:
    """Plain union across scales, coarsest first.

    Cross-scale duplicates survive on purpose; suppression already ran
    within each scale, and downstream consumers tolerate the overlap.
    """
    merged: list[ScoredProposal] = []
    for scale in sorted(per_scale_kept, reverse=True):
        merged.extend(per_scale_kept[scale])
    return merged


def clip_filter_decision(
    logits: np.ndarray, prompts: FilterPromptList, logit_threshold: float
) -> bool:
    """Keep iff the building logit clears the threshold and tops the vector.

    A tie between the building prompt and a distractor counts as the
    building winning.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.shape[0] != len(prompts.prompts):
        raise ValueError(
            f"logit count {arr.shape[0]} != prompt count {len(prompts.prompts)}"
        )
    return bool(arr[0] >= logit_threshold and arr[0] >= arr.max())


STAGE_PRELIMINARY = "preliminary"
STAGE_NMS = "nms"
STAGE_POST_MERGE_NMS = "post_merge_nms"
STAGE_CLIP = "clip"
STAGE_KEPT = "kept"


@dataclass
class BoxRecord:
    """Fate of one proposal: which stage removed it (or 'kept')."""

    scale: float
    patch_index: int
    box: BoundingBox
    logit: float
    stage: str

    def to_json(self) -> dict:
        return {
            "scale": self.scale,
            "patch_index": self.patch_index,
            "box": {"x": self.box.x, "y": self.box.y, "h": self.box.h, "w": self.box.w},
            "logit": self.logit,
            "stage": self.stage,
        }


@dataclass
class ScaleCounts:
    scale: float
    proposed: int
    after_preliminary: int
    after_nms: int

    def to_json(self) -> dict:
        return {
            "scale": self.scale,
            "proposed": self.proposed,
            "after_preliminary": self.after_preliminary,
            "after_nms": self.after_nms,
        }


@dataclass
class CascadeResult:
    kept: list[ScoredProposal]
    records: list[BoxRecord]
    scale_counts: list[ScaleCounts]
    merged_count: int
    after_post_merge_nms: int
    kept_count: int

    def counts_json(self) -> dict:
        return {
            "scales": [c.to_json() for c in self.scale_counts],
            "merged": self.merged_count,
            "after_post_merge_nms": self.after_post_merge_nms,
            "kept": self.kept_count,
        }


def clip_bps_pipeline(
    image: np.ndarray,
    proposals_by_scale: dict[float, list[ScoredProposal]],
    vlm: Backend,
    prompts: FilterPromptList,
    config: FilterConfig,
    pad: float = 10,
    min_side: float = 50,
) -> CascadeResult:
    """Run the full selection cascade over raw multiscale proposals.

    Per scale: size limits then NMS. The survivors union across scales
    (optionally NMS'd once more, off by default), and each remaining box
    is scored by the vision-language backend on its padded patch before
    the final keep/reject decision.
    """
    height, width = image.shape[:2]
    records: dict[int, BoxRecord] = {}
    per_scale_kept: dict[float, list[ScoredProposal]] = {}
    scale_counts: list[ScaleCounts] = []

    for scale in sorted(proposals_by_scale, reverse=True):
        props = proposals_by_scale[scale]
        for p in props:
            records[id(p)] = BoxRecord(
                scale=p.scale,
                patch_index=p.patch_index,
                box=p.box,
                logit=p.logit,
                stage=STAGE_PRELIMINARY,
            )
        survivors = preliminary_filter(props, scale, height, width, config)
        for p in survivors:
            records[id(p)].stage = STAGE_NMS
        kept_idx = nms_keep_indices(survivors, config.nms_iou)
        kept = [survivors[i] for i in kept_idx]
        for p in kept:
            records[id(p)].stage = STAGE_KEPT
        per_scale_kept[scale] = kept
        scale_counts.append(
            ScaleCounts(
                scale=scale,
                proposed=len(props),
                after_preliminary=len(survivors),
                after_nms=len(kept),
            )
        )

    merged = multiscale_merge(per_scale_kept)
    merged_count = len(merged)

    if config.post_merge_nms:
        kept_idx = nms_keep_indices(merged, config.nms_iou)
        kept_set = set(kept_idx)
        for i, p in enumerate(merged):
            if i not in kept_set:
                records[id(p)].stage = STAGE_POST_MERGE_NMS
        merged = [merged[i] for i in kept_idx]

    final: list[ScoredProposal] = []
    for prop in merged:
        window = pad_patch_window(prop.box, height, width, pad, min_side)
        patch = crop_window(image, window)
        try:
            resp = vlm.score_prompts(ScoreRequest(image=patch, prompts=list(prompts.prompts)))
        except BackendError as exc:
            raise type(exc)(
                f"scorer failed on box {prop.box} (scale {prop.scale}): {exc}"
            ) from exc
        if clip_filter_decision(resp.logits, prompts, config.clip_logit_threshold):
            final.append(prop)
        else:
            records[id(prop)].stage = STAGE_CLIP

    ordered_records = [records[id(p)] for ps in (
        proposals_by_scale[s] for s in sorted(proposals_by_scale, reverse=True)
    ) for p in ps]
    return CascadeResult(
        kept=final,
        records=ordered_records,
        scale_counts=scale_counts,
        merged_count=merged_count,
        after_post_merge_nms=len(merged),
        kept_count=len(final),
    )
