"""Model adapters behind the three protocol roles.

Each adapter exposes one numpy-in / plain-Python-out method so the HTTP
layer stays model-agnostic, and the test suite can substitute
deterministic stubs. The real adapters lazily import torch and
transformers; nothing heavy loads until a checkpoint is requested.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .config import SidecarConfig


class DetectorModel(Protocol):
    def detect(
        self, image: np.ndarray, prompt: str, threshold: float
    ) -> list[dict]: ...


class SegmenterModel(Protocol):
    def segment(self, image: np.ndarray, box: dict) -> np.ndarray: ...


class ScorerModel(Protocol):
    def score(self, image: np.ndarray, prompts: list[str]) -> list[float]: ...


class GroundingDinoDetector:
    """Open-vocabulary detector; scores are post-sigmoid, in [0, 1]."""

    def __init__(self, checkpoint: str, device: str = "cpu"):
        import torch
        from transformers import AutoProcessor, AutoModelForZeroShotObjectDetection

        self.device = device
        self.processor = AutoProcessor.from_pretrained(checkpoint)
        self.model = (
            AutoModelForZeroShotObjectDetection.from_pretrained(checkpoint)
            .to(device)
            .eval()
        )
        self._torch = torch

    def detect(self, image, prompt, threshold):
        torch = self._torch
        # the grounded-detection text head expects lowercase, period-terminated phrases
        text = prompt.strip().lower()
        if not text.endswith("."):
            text += "."
        inputs = self.processor(images=image, text=text, return_tensors="pt").to(
            self.device
        )
        with torch.no_grad():
            outputs = self.model(**inputs)
        height, width = image.shape[:2]
        result = self.processor.post_process_grounded_object_detection(
            outputs,
            inputs.input_ids,
            box_threshold=float(threshold),
            text_threshold=float(threshold),
            target_sizes=[(height, width)],
        )[0]
        detections = []
        for score, xyxy in zip(result["scores"], result["boxes"]):
            x0, y0, x1, y1 = (float(v) for v in xyxy)
            x0, y0 = max(x0, 0.0), max(y0, 0.0)
            x1, y1 = min(x1, float(width)), min(y1, float(height))
            if x1 <= x0 or y1 <= y0:
                continue
            detections.append(
                {
                    "x": x0,
                    "y": y0,
                    "h": y1 - y0,
                    "w": x1 - x0,
                    "logit": min(max(float(score), 0.0), 1.0),
                }
            )
        detections.sort(key=lambda d: -d["logit"])
        return detections


class SamSegmenter:
    """Box-prompted segmenter; returns the highest-scoring mask."""

    def __init__(self, checkpoint: str, device: str = "cpu"):
        import torch
        from transformers import SamModel, SamProcessor

        self.device = device
        self.processor = SamProcessor.from_pretrained(checkpoint)
        self.model = SamModel.from_pretrained(checkpoint).to(device).eval()
        self._torch = torch

    def segment(self, image, box):
        torch = self._torch
        xyxy = [
            box["x"],
            box["y"],
            box["x"] + box["w"],
            box["y"] + box["h"],
        ]
        inputs = self.processor(
            images=image, input_boxes=[[xyxy]], return_tensors="pt"
        ).to(self.device)
        with torch.no_grad():
            outputs = self.model(**inputs)
        masks = self.processor.image_processor.post_process_masks(
            outputs.pred_masks.cpu(),
            inputs["original_sizes"].cpu(),
            inputs["reshaped_input_sizes"].cpu(),
        )[0][0]
        best = int(outputs.iou_scores.cpu()[0, 0].argmax())
        return masks[best].numpy().astype(np.uint8)


class ClipScorer:
    """Image-text similarity; raw model-scaled logits, no softmax."""

    def __init__(self, checkpoint: str, device: str = "cpu", batch_size: int = 8):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self.device = device
        self.batch_size = batch_size
        self.processor = CLIPProcessor.from_pretrained(checkpoint)
        self.model = CLIPModel.from_pretrained(checkpoint).to(device).eval()
        self._torch = torch

    def score(self, image, prompts):
        torch = self._torch
        logits: list[float] = []
        for start in range(0, len(prompts), self.batch_size):
            chunk = prompts[start : start + self.batch_size]
            inputs = self.processor(
                text=chunk, images=image, return_tensors="pt", padding=True
            ).to(self.device)
            with torch.no_grad():
                outputs = self.model(**inputs)
            logits.extend(float(v) for v in outputs.logits_per_image[0])
        return logits


def load_models(
    config: SidecarConfig,
) -> tuple[DetectorModel | None, SegmenterModel | None, ScorerModel | None]:
    detector = (
        GroundingDinoDetector(config.detector.checkpoint, config.device)
        if config.detector
        else None
    )
    segmenter = (
        SamSegmenter(config.segmenter.checkpoint, config.device)
        if config.segmenter
        else None
    )
    scorer = (
        ClipScorer(config.scorer.checkpoint, config.device, config.batch_size)
        if config.scorer
        else None
    )
    return detector, segmenter, scorer
