"""The deterministic mock backend served over the /v1/* protocol.

Lets the remote client, and anything else speaking the protocol, be
exercised without model weights. Request and response bodies match the
wire contract exactly: rasters travel as base64 PNG.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .backends import (
    DetectionRequest,
    MockBackend,
    MockWorld,
    NoiseParams,
    ScoreRequest,
    SegmentationRequest,
    box_from_json,
    decode_image_b64,
    detect_response_to_json,
    score_response_to_json,
    segment_response_to_json,
)
from .errors import BackendProtocolError, DataError


class BoxModel(BaseModel):
    x: float
    y: float
    h: float
    w: float


class DetectBody(BaseModel):
    image: str
    text_prompt: str
    box_threshold: float


class SegmentBody(BaseModel):
    image: str
    box: BoxModel


class ScoreBody(BaseModel):
    image: str
    prompts: list[str]


def create_app(backend: MockBackend) -> FastAPI:
    app = FastAPI(title="damagescan mock backend")

    def _decode(data: str):
        try:
            return decode_image_b64(data)
        except BackendProtocolError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "seed": backend.world.seed}

    @app.post("/v1/detect")
    def detect(body: DetectBody):
        image = _decode(body.image)
        try:
            resp = backend.detect(
                DetectionRequest(
                    image=image,
                    text_prompt=body.text_prompt,
                    box_threshold=body.box_threshold,
                )
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return detect_response_to_json(resp)

    @app.post("/v1/segment")
    def segment(body: SegmentBody):
        image = _decode(body.image)
        try:
            box = box_from_json(body.box.model_dump())
        except BackendProtocolError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        resp = backend.segment(SegmentationRequest(image=image, box=box))
        return segment_response_to_json(resp)

    @app.post("/v1/score")
    def score(body: ScoreBody):
        image = _decode(body.image)
        try:
            resp = backend.score_prompts(
                ScoreRequest(image=image, prompts=list(body.prompts))
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return score_response_to_json(resp)

    return app


def load_serving_world(world_path: str | Path) -> MockWorld:
    """A world for serving, from a world file, index file, or dataset dir.

    Served responses need only the seed and noise parameters; planted
    geometry stays with the per-scene world files.
    """
    path = Path(world_path)
    if path.is_dir():
        index = path / "world_index.json"
        if index.exists():
            path = index
        else:
            candidates = sorted(path.glob("*_world.json"))
            if not candidates:
                raise DataError(f"no world files under {path}")
            path = candidates[0]
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read world {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"world {path} is not valid JSON: {exc}") from exc
    if "buildings" in obj:
        return MockWorld.from_json(obj)
    return MockWorld(
        seed=int(obj["seed"]),
        height=int(obj.get("height", 0)),
        width=int(obj.get("width", 0)),
        noise=NoiseParams.from_json(obj.get("noise", {})),
    )


def serve(world_path: str | Path, host: str, port: int) -> None:
    import uvicorn

    backend = MockBackend(load_serving_world(world_path))
    uvicorn.run(create_app(backend), host=host, port=port, log_level="warning")
