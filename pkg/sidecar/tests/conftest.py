from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pytest

from sidecar.app import create_app
from sidecar.config import RoleConfig, SidecarConfig

FIXTURES_DIR = Path(__file__).parents[2] / "fixtures"


class StubDetector:
    """Deterministic detector: fixed candidates filtered by threshold."""

    CANDIDATES = [
        {"x": 10.0, "y": 12.0, "h": 20.0, "w": 18.0, "logit": 0.91},
        {"x": 40.0, "y": 8.0, "h": 14.0, "w": 14.0, "logit": 0.52},
        {"x": 5.0, "y": 44.0, "h": 9.0, "w": 12.0, "logit": 0.23},
    ]

    def detect(self, image, prompt, threshold):
        height, width = image.shape[:2]
        out = []
        for cand in self.CANDIDATES:
            if cand["logit"] < threshold:
                continue
            if cand["x"] + cand["w"] > width or cand["y"] + cand["h"] > height:
                continue
            out.append(dict(cand))
        return out


class StubSegmenter:
    def segment(self, image, box):
        height, width = image.shape[:2]
        mask = np.zeros((height, width), dtype=np.uint8)
        x0, y0 = int(box["x"]), int(box["y"])
        x1 = min(int(box["x"] + box["w"]), width)
        y1 = min(int(box["y"] + box["h"]), height)
        mask[y0:y1, x0:x1] = 1
        return mask


class StubScorer:
    def score(self, image, prompts):
        return [
            int.from_bytes(hashlib.sha256(p.encode()).digest()[:2], "big") / 6553.6
            for p in prompts
        ]


class FailingModel:
    def detect(self, image, prompt, threshold):
        raise RuntimeError("checkpoint exploded")

    def segment(self, image, box):
        raise RuntimeError("checkpoint exploded")

    def score(self, image, prompts):
        raise RuntimeError("checkpoint exploded")


@pytest.fixture
def config():
    return SidecarConfig(
        detector=RoleConfig(checkpoint="stub"),
        segmenter=RoleConfig(checkpoint="stub"),
        scorer=RoleConfig(checkpoint="stub"),
        max_image_side=4096,
    )


@pytest.fixture
def client(config):
    from fastapi.testclient import TestClient

    app = create_app(
        config,
        detector=StubDetector(),
        segmenter=StubSegmenter(),
        scorer=StubScorer(),
    )
    return TestClient(app)
