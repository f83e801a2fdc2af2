"""Scene orchestration: localise, classify, compose, and pseudo-label.

The baseline path runs one full-frame detection on the pre-disaster
image, segments each box, scores each padded patch pair, and merges the
per-building class masks pixel-wise by maximum. Pseudo-label generation
instead harvests multiscale proposals and runs the selection cascade.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .backends import Backends, DetectionRequest, ScoreRequest, SegmentationRequest
from .config import PipelineConfig
from .errors import DamagescanError, DataError
from .geometry import BoundingBox, ScoredProposal
from .masks import compose_eval_mask, merge_max
from .proposals import (
    CascadeResult,
    clip_bps_pipeline,
    crop_window,
    generate_building_proposals,
)
from .scoring import (
    ScoreBreakdown,
    classify_damage,
    ensemble_score,
    pad_patch_window,
    softmax_normalize,
)


@dataclass
class ImagePair:
    """Geo-aligned pre/post rasters of identical dimensions."""

    pre: np.ndarray
    post: np.ndarray
    scene_id: str

    def __post_init__(self):
        if self.pre.shape != self.post.shape:
            raise DataError(
                f"scene {self.scene_id}: pre {self.pre.shape} != post {self.post.shape}"
            )
        if self.pre.ndim != 3 or self.pre.shape[2] != 3:
            raise DataError(
                f"scene {self.scene_id}: expected (H, W, 3) rasters, got {self.pre.shape}"
            )

    @property
    def height(self) -> int:
        return self.pre.shape[0]

    @property
    def width(self) -> int:
        return self.pre.shape[1]


@dataclass
class ClassifiedBuilding:
    box: BoundingBox
    logit: float
    label: int  # 1 undamaged, 2 damaged
    breakdown: ScoreBreakdown

    def to_json(self) -> dict:
        return {
            "box": {"x": self.box.x, "y": self.box.y, "h": self.box.h, "w": self.box.w},
            "logit": self.logit,
            "label": self.label,
            "s": self.breakdown.s,
            "delta_pos": self.breakdown.delta_pos,
            "delta_post": self.breakdown.delta_post,
        }


@dataclass
class SceneAssessment:
    scene_id: str
    buildings: list[ClassifiedBuilding]
    eval_mask: np.ndarray


def _detect_full_frame(
    pre_image: np.ndarray, backends: Backends, config: PipelineConfig
) -> list[ScoredProposal]:
    resp = backends.detector.detect(
        DetectionRequest(
            image=pre_image, text_prompt="building", box_threshold=config.box_threshold
        )
    )
    return [
        ScoredProposal(box=d.box, logit=d.logit, scale=1.0, patch_index=0)
        for d in resp.detections
    ]


def _segment_each(
    pre_image: np.ndarray, proposals: list[ScoredProposal], backends: Backends
) -> list[np.ndarray]:
    return [
        backends.segmenter.segment(
            SegmentationRequest(image=pre_image, box=p.box)
        ).mask
        for p in proposals
    ]


def localize_buildings(
    pre_image: np.ndarray, backends: Backends, config: PipelineConfig
) -> tuple[list[ScoredProposal], np.ndarray]:
    """Full-frame detection plus per-box segmentation, merged by max.

    Only the pre-disaster image participates: a destroyed building may
    leave nothing recognisable in the post image.
    """
    height, width = pre_image.shape[:2]
    proposals = _detect_full_frame(pre_image, backends, config)
    masks = _segment_each(pre_image, proposals, backends)
    return proposals, merge_max(masks, height, width)


def classify_buildings(
    pair: ImagePair,
    boxes: list[ScoredProposal],
    backends: Backends,
    config: PipelineConfig,
) -> list[ClassifiedBuilding]:
    """Score every building patch pair; output aligns with the input."""
    ensemble = config.prompt_ensemble
    out: list[ClassifiedBuilding] = []
    for prop in boxes:
        window = pad_patch_window(
            prop.box, pair.height, pair.width, config.pad, config.min_side
        )
        pre_patch = crop_window(pair.pre, window)
        post_patch = crop_window(pair.post, window)
        z_pre_pos = softmax_normalize(
            backends.vlm.score_prompts(
                ScoreRequest(image=pre_patch, prompts=list(ensemble.positive))
            ).logits
        )
        z_post_pos = softmax_normalize(
            backends.vlm.score_prompts(
                ScoreRequest(image=post_patch, prompts=list(ensemble.positive))
            ).logits
        )
        z_post_neg = softmax_normalize(
            backends.vlm.score_prompts(
                ScoreRequest(image=post_patch, prompts=list(ensemble.negative))
            ).logits
        )
        breakdown = ensemble_score(
            z_pre_pos,
            z_post_pos,
            z_post_neg,
            epsilon=config.epsilon,
            change_weight=config.change_weight,
            post_weight=config.post_weight,
        )
        label = classify_damage(breakdown.s, config.damage_threshold)
        out.append(
            ClassifiedBuilding(
                box=prop.box, logit=prop.logit, label=label, breakdown=breakdown
            )
        )
    return out


def assess_scene(
    pair: ImagePair, backends: Backends, config: PipelineConfig
) -> SceneAssessment:
    """Localise, classify, and compose the scene's evaluation mask."""
    proposals = _detect_full_frame(pair.pre, backends, config)
    seg_masks = _segment_each(pair.pre, proposals, backends)
    classified = classify_buildings(pair, proposals, backends, config)
    per_building = [
        compose_eval_mask(mask, built.label)
        for mask, built in zip(seg_masks, classified)
    ]
    eval_mask = merge_max(per_building, pair.height, pair.width)
    return SceneAssessment(
        scene_id=pair.scene_id, buildings=classified, eval_mask=eval_mask
    )


def run_end_to_end(
    pair: ImagePair, backends: Backends, config: PipelineConfig
) -> np.ndarray:
    """The scene's {0,1,2} evaluation mask; see assess_scene for details."""
    return assess_scene(pair, backends, config).eval_mask


@dataclass
class PseudoLabelScene:
    scene_id: str
    kept: list[ScoredProposal]
    cascade: CascadeResult


class ScenesFailedError(DamagescanError):
    """One or more scenes failed; partial outputs were discarded."""

    def __init__(self, failures: dict[str, Exception]):
        self.failures = failures
        detail = "; ".join(f"{sid}: {exc}" for sid, exc in sorted(failures.items()))
        super().__init__(f"{len(failures)} scene(s) failed: {detail}")


def pseudo_label_scene(
    scene_id: str,
    pre_image: np.ndarray,
    backends: Backends,
    config: PipelineConfig,
) -> PseudoLabelScene:
    """Harvest multiscale proposals and run the cascade for one scene."""
    by_scale = generate_building_proposals(
        pre_image, list(config.scales), backends.detector, config.filters
    )
    cascade = clip_bps_pipeline(
        pre_image,
        by_scale,
        backends.vlm,
        config.filter_prompt_list,
        config.filters,
        pad=config.pad,
        min_side=config.min_side,
    )
    return PseudoLabelScene(scene_id=scene_id, kept=cascade.kept, cascade=cascade)


def generate_pseudo_labels(
    scenes: Iterable[tuple[str, Callable[[], np.ndarray]]],
    backends_for_scene: Callable[[str], Backends],
    config: PipelineConfig,
    jobs: int = 1,
) -> list[PseudoLabelScene]:
    """Pseudo-label a dataset of pre-disaster images.

    ``scenes`` yields (scene_id, image loader). Scene order in the output
    is sorted by scene_id regardless of completion order. If any scene
    fails the whole run fails: a partially labelled training set would
    silently bias downstream training.
    """
    scene_list = list(scenes)
    results: dict[str, PseudoLabelScene] = {}
    failures: dict[str, Exception] = {}

    def run_one(item: tuple[str, Callable[[], np.ndarray]]):
        scene_id, loader = item
        try:
            results[scene_id] = pseudo_label_scene(
                scene_id, loader(), backends_for_scene(scene_id), config
            )
        except Exception as exc:
            failures[scene_id] = exc

    if jobs <= 1:
        for item in scene_list:
            run_one(item)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run_one, scene_list))
    if failures:
        raise ScenesFailedError(failures)
    return [results[sid] for sid in sorted(results)]


@dataclass
class LabeledBox:
    """One classified building within a dataset, for confidence selection."""

    scene_id: str
    index: int
    box: BoundingBox
    logit: float
    label: int
    s: float
    breakdown: ScoreBreakdown | None = field(default=None, repr=False)


def select_top_confident(
    items: list[LabeledBox], fraction: float, damage_threshold: float
) -> list[LabeledBox]:
    """Keep the most confident ceil(fraction * n) per class, independently.

    Confidence is the distance |s - damage_threshold| from the decision
    boundary. Ties break by scene_id then input order, keeping the
    selection reproducible. Output order: by class, then confidence.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction outside (0,1]: {fraction}")
    selected: list[LabeledBox] = []
    for label in (1, 2):
        group = [item for item in items if item.label == label]
        if not group:
            continue
        group.sort(
            key=lambda it: (-abs(it.s - damage_threshold), it.scene_id, it.index)
        )
        quota = math.ceil(fraction * len(group))
        selected.extend(group[:quota])
    return selected
