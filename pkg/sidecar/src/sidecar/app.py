"""HTTP layer: the /v1 protocol endpoints over whatever models are loaded.

Request handling is stateless. Error taxonomy: 4xx for anything wrong
with the request (undecodable raster, oversized image, bad fields),
501 for a role this instance has no checkpoint for, 5xx when a model
fails on a well-formed request.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel, Field

from .config import SidecarConfig
from .models import DetectorModel, ScorerModel, SegmenterModel


class BoxModel(BaseModel):
    x: float = Field(ge=0)
    y: float = Field(ge=0)
    h: float = Field(gt=0)
    w: float = Field(gt=0)


class DetectBody(BaseModel):
    image: str
    text_prompt: str
    box_threshold: float = Field(ge=0.0, le=1.0)


class SegmentBody(BaseModel):
    image: str
    box: BoxModel


class ScoreBody(BaseModel):
    image: str
    prompts: list[str] = Field(min_length=1)


def _decode_image(data: str, max_side: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"undecodable image: {exc}")
    if max(arr.shape[:2]) > max_side:
        raise HTTPException(
            status_code=413,
            detail=f"image {arr.shape[0]}x{arr.shape[1]} exceeds side cap {max_side}",
        )
    return arr


def _encode_mask(mask: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(mask.astype(np.uint8), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(
    config: SidecarConfig,
    detector: DetectorModel | None = None,
    segmenter: SegmenterModel | None = None,
    scorer: ScorerModel | None = None,
) -> FastAPI:
    app = FastAPI(title="damagescan sidecar")
    roles = {
        "detector": detector is not None,
        "segmenter": segmenter is not None,
        "scorer": scorer is not None,
    }

    def _require(role: str, model):
        if model is None:
            raise HTTPException(
                status_code=501, detail=f"no {role} checkpoint configured"
            )
        return model

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "roles": [r for r, on in roles.items() if on]}

    @app.post("/v1/detect")
    def detect(body: DetectBody):
        model = _require("detector", detector)
        image = _decode_image(body.image, config.max_image_side)
        try:
            boxes = model.detect(image, body.text_prompt, body.box_threshold)
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"detector failed: {exc}")
        # the protocol guarantees the threshold server-side
        boxes = [b for b in boxes if b["logit"] >= body.box_threshold]
        return {"boxes": boxes}

    @app.post("/v1/segment")
    def segment(body: SegmentBody):
        model = _require("segmenter", segmenter)
        image = _decode_image(body.image, config.max_image_side)
        try:
            mask = model.segment(image, body.box.model_dump())
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"segmenter failed: {exc}")
        if mask.shape != image.shape[:2]:
            raise HTTPException(
                status_code=500,
                detail=f"model produced mask {mask.shape} for image {image.shape[:2]}",
            )
        return {"mask": _encode_mask((mask > 0).astype(np.uint8))}

    @app.post("/v1/score")
    def score(body: ScoreBody):
        model = _require("scorer", scorer)
        image = _decode_image(body.image, config.max_image_side)
        try:
            logits = model.score(image, list(body.prompts))
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"scorer failed: {exc}")
        if len(logits) != len(body.prompts):
            raise HTTPException(
                status_code=500,
                detail=f"model produced {len(logits)} logits for "
                f"{len(body.prompts)} prompts",
            )
        return {"logits": [float(v) for v in logits]}

    return app
