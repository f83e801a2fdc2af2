"""Inference backend abstraction: detector, segmenter, prompt scorer.

Three roles sit behind one protocol: text-prompted box detection,
box-prompted segmentation, and image/text similarity scoring. The
deterministic mock implements all three from rendered synthetic scenes;
the remote client speaks the same roles over HTTP (POST /v1/detect,
/v1/segment, /v1/score with JSON bodies and base64 PNG rasters).
"""

from __future__ import annotations

import base64
import hashlib
import io
import math
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import BackendProtocolError, BackendTransportError
from .geometry import BoundingBox
from .masks import validate_mask

# ---------------------------------------------------------------------------
# Synthetic-scene palette shared by the renderer and the mock backend.
# Colors are spaced so that no pixel can sit within matching tolerance of
# two classes at once, and bilinear blends match nothing.
# ---------------------------------------------------------------------------

PALETTE: dict[str, tuple[int, int, int]] = {
    "background": (40, 40, 40),
    "building": (230, 230, 230),
    "rubble": (150, 80, 20),
    "tennis court": (10, 150, 10),
    "swimming pool": (20, 90, 230),
    "parking lot": (140, 20, 160),
    "car": (220, 20, 20),
    "truck": (230, 140, 10),
}

COLOR_TOLERANCE = 30

DISTRACTOR_KINDS = ["tennis court", "swimming pool", "parking lot", "car", "truck"]

# Detector confidence per rendered class when prompted for buildings.
# Distractors sit between the proposal-stage threshold and the stricter
# baseline threshold, so low-threshold harvesting picks them up and the
# downstream filters must reject them.
DETECT_BASE_LOGIT: dict[str, float] = {
    "building": 0.80,
    "rubble": 0.50,
    "tennis court": 0.25,
    "swimming pool": 0.25,
    "parking lot": 0.25,
    "car": 0.25,
    "truck": 0.25,
}

# Raw similarity scale for the mock scorer. Prompt-specific weights keep
# same-concept prompts from collapsing to a flat softmax.
SCORE_SCALE = 4.0
SCORE_FLOOR = 0.1

_NEGATIVE_WORDS = ("damaged", "destroyed", "ruin", "rubble")
_UNRENDERED_KINDS = ("street", "trees", "tree", "grass", "soil")


# ---------------------------------------------------------------------------
# Request / response types
# ---------------------------------------------------------------------------


@dataclass
class Detection:
    box: BoundingBox
    logit: float


@dataclass
class DetectionRequest:
    image: np.ndarray  # (H, W, 3) uint8
    text_prompt: str
    box_threshold: float


@dataclass
class DetectionResponse:
    detections: list[Detection]


@dataclass
class SegmentationRequest:
    image: np.ndarray
    box: BoundingBox


@dataclass
class SegmentationResponse:
    mask: np.ndarray  # (H, W) uint8 {0,1}


@dataclass
class ScoreRequest:
    image: np.ndarray
    prompts: list[str]


@dataclass
class ScoreResponse:
    logits: np.ndarray  # float64, aligned to prompts


class Backend(Protocol):
    def detect(self, req: DetectionRequest) -> DetectionResponse: ...

    def segment(self, req: SegmentationRequest) -> SegmentationResponse: ...

    def score_prompts(self, req: ScoreRequest) -> ScoreResponse: ...


@dataclass
class Backends:
    """The three roles a pipeline run needs, bundled."""

    detector: "Backend"
    segmenter: "Backend"
    vlm: "Backend"

    @classmethod
    def single(cls, backend: "Backend") -> "Backends":
        return cls(detector=backend, segmenter=backend, vlm=backend)


# ---------------------------------------------------------------------------
# Wire encoding
# ---------------------------------------------------------------------------


def encode_image_b64(image: np.ndarray) -> str:
    if image.ndim == 2:
        pil = Image.fromarray(image.astype(np.uint8), mode="L")
    else:
        pil = Image.fromarray(image.astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_b64(data: str, mode: str = "RGB") -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert(mode), dtype=np.uint8)
    except Exception as exc:
        raise BackendProtocolError(f"undecodable raster payload: {exc}") from exc


def box_to_json(box: BoundingBox) -> dict:
    return {"x": box.x, "y": box.y, "h": box.h, "w": box.w}


def box_from_json(obj: dict) -> BoundingBox:
    try:
        return BoundingBox(
            x=float(obj["x"]), y=float(obj["y"]), h=float(obj["h"]), w=float(obj["w"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BackendProtocolError(f"malformed box {obj!r}: {exc}") from exc


def detect_request_to_json(req: DetectionRequest) -> dict:
    return {
        "image": encode_image_b64(req.image),
        "text_prompt": req.text_prompt,
        "box_threshold": req.box_threshold,
    }


def detect_response_to_json(resp: DetectionResponse) -> dict:
    return {
        "boxes": [dict(box_to_json(d.box), logit=d.logit) for d in resp.detections]
    }


def segment_request_to_json(req: SegmentationRequest) -> dict:
    return {"image": encode_image_b64(req.image), "box": box_to_json(req.box)}


def segment_response_to_json(resp: SegmentationResponse) -> dict:
    return {"mask": encode_image_b64(resp.mask)}


def score_request_to_json(req: ScoreRequest) -> dict:
    return {"image": encode_image_b64(req.image), "prompts": list(req.prompts)}


def score_response_to_json(resp: ScoreResponse) -> dict:
    return {"logits": [float(v) for v in resp.logits]}


# ---------------------------------------------------------------------------
# Mock world
# ---------------------------------------------------------------------------


@dataclass
class NoiseParams:
    jitter_sigma: float = 0.0
    false_positive_rate: float = 0.0
    logit_sigma: float = 0.0

    def to_json(self) -> dict:
        return {
            "jitter_sigma": self.jitter_sigma,
            "false_positive_rate": self.false_positive_rate,
            "logit_sigma": self.logit_sigma,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseParams":
        return cls(
            jitter_sigma=float(obj.get("jitter_sigma", 0.0)),
            false_positive_rate=float(obj.get("false_positive_rate", 0.0)),
            logit_sigma=float(obj.get("logit_sigma", 0.0)),
        )


@dataclass
class PlantedBuilding:
    box: BoundingBox
    damaged: bool


@dataclass
class PlantedDistractor:
    box: BoundingBox
    kind: str


@dataclass
class MockWorld:
    """Ground truth behind a synthetic scene.

    The renderer paints it, the mock backend answers from it, and tests
    treat it as the oracle. Outputs are deterministic in (seed, request).
    """

    seed: int
    height: int
    width: int
    buildings: list[PlantedBuilding] = field(default_factory=list)
    distractors: list[PlantedDistractor] = field(default_factory=list)
    noise: NoiseParams = field(default_factory=NoiseParams)

    def __post_init__(self):
        for planted in list(self.buildings) + list(self.distractors):
            b = planted.box
            if b.right > self.width or b.bottom > self.height:
                raise ValueError(f"planted box {b} exceeds {self.height}x{self.width}")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "height": self.height,
            "width": self.width,
            "buildings": [
                {"box": box_to_json(p.box), "damaged": p.damaged}
                for p in self.buildings
            ],
            "distractors": [
                {"box": box_to_json(p.box), "kind": p.kind} for p in self.distractors
            ],
            "noise": self.noise.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MockWorld":
        return cls(
            seed=int(obj["seed"]),
            height=int(obj["height"]),
            width=int(obj["width"]),
            buildings=[
                PlantedBuilding(box=box_from_json(p["box"]), damaged=bool(p["damaged"]))
                for p in obj.get("buildings", [])
            ],
            distractors=[
                PlantedDistractor(box=box_from_json(p["box"]), kind=str(p["kind"]))
                for p in obj.get("distractors", [])
            ],
            noise=NoiseParams.from_json(obj.get("noise", {})),
        )


# ---------------------------------------------------------------------------
# Mock backend
# ---------------------------------------------------------------------------


def class_mask(image: np.ndarray, class_name: str) -> np.ndarray:
    """Pixels within matching tolerance of the class color, as {0,1}."""
    color = np.array(PALETTE[class_name], dtype=np.int16)
    diff = np.abs(image.astype(np.int16) - color[None, None, :])
    return (diff.max(axis=2) <= COLOR_TOLERANCE).astype(np.uint8)


def _components(mask: np.ndarray, min_area: int = 4) -> list[BoundingBox]:
    labeled, count = ndimage.label(mask)
    boxes = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        ys, xs = sl
        h = ys.stop - ys.start
        w = xs.stop - xs.start
        if h * w < min_area:
            continue
        boxes.append(BoundingBox(x=float(xs.start), y=float(ys.start), h=float(h), w=float(w)))
    boxes.sort(key=lambda b: (b.y, b.x))
    return boxes


def _prompt_concept(text: str) -> str:
    t = text.lower()
    if "undamaged" in t:
        return "building"
    if any(word in t for word in _NEGATIVE_WORDS):
        return "rubble"
    if "building" in t:
        return "building"
    for kind in DISTRACTOR_KINDS:
        if kind in t:
            return kind
    for kind in _UNRENDERED_KINDS:
        if kind in t:
            return kind
    return "unknown"


def prompt_weight(text: str) -> float:
    """Deterministic per-prompt weight in [0.6, 1.0]; spreads logits so the
    softmax maximum tracks concept strength."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    frac = int.from_bytes(digest[:4], "big") / 0xFFFFFFFF
    return 0.6 + 0.4 * frac


class MockBackend:
    """Deterministic stand-in for all three foundation-model roles.

    Detection and scoring read the rendered pixels (requests carry no
    patch coordinates, so crops must be understood from content alone);
    segmentation likewise recovers planted footprints from the building
    color. Responses depend only on (world seed, request bytes).
    """

    def __init__(self, world: MockWorld):
        self.world = world

    # -- rng ---------------------------------------------------------------

    def _rng(self, *parts: bytes) -> np.random.Generator:
        h = hashlib.sha256()
        h.update(self.world.seed.to_bytes(8, "big", signed=True))
        for part in parts:
            h.update(part)
        return np.random.default_rng(int.from_bytes(h.digest()[:8], "big"))

    # -- roles ---------------------------------------------------------------

    def detect(self, req: DetectionRequest) -> DetectionResponse:
        if not 0.0 <= req.box_threshold <= 1.0:
            raise ValueError(f"box_threshold outside [0,1]: {req.box_threshold}")
        height, width = req.image.shape[:2]
        noise = self.world.noise
        rng = self._rng(
            b"detect",
            req.image.tobytes(),
            req.text_prompt.encode("utf-8"),
            np.float64(req.box_threshold).tobytes(),
        )
        detections: list[Detection] = []
        for class_name, base in DETECT_BASE_LOGIT.items():
            for box in _components(class_mask(req.image, class_name)):
                jit = rng.normal(0.0, 1.0, size=4) * noise.jitter_sigma
                logit_noise = rng.normal(0.0, 1.0) * noise.logit_sigma
                x = min(max(box.x + jit[0], 0.0), width - 1.0)
                y = min(max(box.y + jit[1], 0.0), height - 1.0)
                w = min(max(box.w + jit[2], 1.0), width - x)
                h = min(max(box.h + jit[3], 1.0), height - y)
                logit = float(min(max(base + logit_noise, 0.0), 1.0))
                if logit >= req.box_threshold:
                    detections.append(
                        Detection(box=BoundingBox(x=x, y=y, h=h, w=w), logit=logit)
                    )
        if noise.false_positive_rate > 0:
            for _ in range(rng.poisson(noise.false_positive_rate)):
                w = float(rng.integers(5, 31))
                h = float(rng.integers(5, 31))
                x = float(rng.uniform(0, max(width - w, 1)))
                y = float(rng.uniform(0, max(height - h, 1)))
                logit = float(min(max(rng.normal(0.2, noise.logit_sigma or 0.02), 0.0), 1.0))
                if logit >= req.box_threshold:
                    detections.append(
                        Detection(box=BoundingBox(x=x, y=y, h=h, w=w), logit=logit)
                    )
        detections.sort(key=lambda d: (-d.logit, d.box.y, d.box.x))
        return DetectionResponse(detections=detections)

    def segment(self, req: SegmentationRequest) -> SegmentationResponse:
        """Building pixels inside the prompt box dilated by the jitter scale.

        Only intact-building color segments; the engine prompts on
        pre-disaster frames where that is the only building rendering.
        """
        height, width = req.image.shape[:2]
        dilation = math.ceil(3.0 * self.world.noise.jitter_sigma)
        x0 = max(int(math.floor(req.box.x)) - dilation, 0)
        y0 = max(int(math.floor(req.box.y)) - dilation, 0)
        x1 = min(int(math.ceil(req.box.right)) + dilation, width)
        y1 = min(int(math.ceil(req.box.bottom)) + dilation, height)
        window = np.zeros((height, width), dtype=np.uint8)
        if x1 > x0 and y1 > y0:
            window[y0:y1, x0:x1] = 1
        mask = class_mask(req.image, "building") & window
        return SegmentationResponse(mask=mask.astype(np.uint8))

    def score_prompts(self, req: ScoreRequest) -> ScoreResponse:
        if not req.prompts:
            raise ValueError("empty prompt list")
        object_classes = [c for c in PALETTE if c != "background"]
        object_px = {c: int(class_mask(req.image, c).sum()) for c in object_classes}
        total = sum(object_px.values())
        fractions = {
            c: (object_px[c] / total if total else 0.0) for c in object_classes
        }
        rng = self._rng(
            b"score",
            req.image.tobytes(),
            "\x1f".join(req.prompts).encode("utf-8"),
        )
        logits = np.empty(len(req.prompts), dtype=np.float64)
        for i, prompt in enumerate(req.prompts):
            strength = fractions.get(_prompt_concept(prompt), 0.0)
            clean = SCORE_SCALE * (SCORE_FLOOR + (1 - SCORE_FLOOR) * strength)
            logits[i] = clean * prompt_weight(prompt) + rng.normal(
                0.0, 1.0
            ) * self.world.noise.logit_sigma
        return ScoreResponse(logits=logits)


class NullSegmenter:
    """Fallback segmenter: rasterize the prompt box itself.

    Lets localisation run without any segmentation backend; detection
    quality can then be measured independently of mask quality.
    """

    def detect(self, req: DetectionRequest) -> DetectionResponse:
        raise NotImplementedError("null segmenter only segments")

    def score_prompts(self, req: ScoreRequest) -> ScoreResponse:
        raise NotImplementedError("null segmenter only segments")

    def segment(self, req: SegmentationRequest) -> SegmentationResponse:
        from .masks import rasterize_box

        height, width = req.image.shape[:2]
        return SegmentationResponse(mask=rasterize_box(req.box, height, width))


# ---------------------------------------------------------------------------
# Remote client
# ---------------------------------------------------------------------------


class RemoteBackend:
    """HTTP client for the /v1/* protocol.

    Transport failures (including timeouts) retry with exponential
    backoff up to ``max_attempts``; malformed responses never retry.
    Responses pass through unreordered and unrescaled, but are validated
    against the type invariants before they reach the engine.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff: float = 0.1,
        client=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._client.post(path, json=payload)
            except httpx.TimeoutException as exc:
                last_exc = BackendTransportError(f"timeout on {path}: {exc}")
            except httpx.TransportError as exc:
                last_exc = BackendTransportError(f"transport failure on {path}: {exc}")
            else:
                if resp.status_code != 200:
                    raise BackendProtocolError(
                        f"{path} returned HTTP {resp.status_code}: {resp.text[:200]}"
                    )
                try:
                    return resp.json()
                except ValueError as exc:
                    raise BackendProtocolError(f"{path} returned non-JSON body") from exc
            if attempt + 1 < self.max_attempts:
                time.sleep(self.backoff * (2**attempt))
        assert last_exc is not None
        raise last_exc

    def detect(self, req: DetectionRequest) -> DetectionResponse:
        body = self._post("/v1/detect", detect_request_to_json(req))
        if not isinstance(body.get("boxes"), list):
            raise BackendProtocolError("detect response missing 'boxes' list")
        detections = []
        for item in body["boxes"]:
            box = box_from_json(item)
            try:
                logit = float(item["logit"])
            except (KeyError, TypeError, ValueError) as exc:
                raise BackendProtocolError(f"malformed logit in {item!r}") from exc
            if not req.box_threshold <= logit <= 1.0:
                raise BackendProtocolError(
                    f"logit {logit} outside [{req.box_threshold}, 1]"
                )
            detections.append(Detection(box=box, logit=logit))
        return DetectionResponse(detections=detections)

    def segment(self, req: SegmentationRequest) -> SegmentationResponse:
        body = self._post("/v1/segment", segment_request_to_json(req))
        if "mask" not in body:
            raise BackendProtocolError("segment response missing 'mask'")
        mask = decode_image_b64(body["mask"], mode="L")
        if mask.shape != req.image.shape[:2]:
            raise BackendProtocolError(
                f"mask shape {mask.shape} != image {req.image.shape[:2]}"
            )
        try:
            mask = validate_mask(mask, max_value=1)
        except ValueError as exc:
            raise BackendProtocolError(str(exc)) from exc
        return SegmentationResponse(mask=mask)

    def score_prompts(self, req: ScoreRequest) -> ScoreResponse:
        if not req.prompts:
            raise ValueError("empty prompt list")
        body = self._post("/v1/score", score_request_to_json(req))
        logits = body.get("logits")
        if not isinstance(logits, list) or len(logits) != len(req.prompts):
            raise BackendProtocolError(
                f"score response logits length {len(logits) if isinstance(logits, list) else 'missing'}"
                f" != prompt count {len(req.prompts)}"
            )
        arr = np.array([float(v) for v in logits], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise BackendProtocolError("non-finite logits in score response")
        return ScoreResponse(logits=arr)
