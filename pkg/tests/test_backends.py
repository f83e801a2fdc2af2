from __future__ import annotations

import json

import httpx
import numpy as np
import pytest

from conftest import FIXTURES_DIR
from damagescan.backends import (
    DetectionRequest,
    MockBackend,
    MockWorld,
    NoiseParams,
    NullSegmenter,
    PlantedBuilding,
    RemoteBackend,
    ScoreRequest,
    SegmentationRequest,
    decode_image_b64,
    detect_request_to_json,
    detect_response_to_json,
    encode_image_b64,
    score_request_to_json,
    score_response_to_json,
    segment_request_to_json,
    segment_response_to_json,
)
from damagescan.data import render_world
from damagescan.errors import BackendProtocolError, BackendTransportError
from damagescan.geometry import BoundingBox
from damagescan.masks import rasterize_box
from damagescan.proposals import default_filter_prompts


def _world_one_building(damaged=False, noise=None):
    world = MockWorld(
        seed=3,
        height=96,
        width=96,
        buildings=[PlantedBuilding(box=BoundingBox(20, 24, 30, 26), damaged=damaged)],
        noise=noise or NoiseParams(),
    )
    return world


class TestMockDetect:
    def test_blank_world_empty(self):
        world = MockWorld(seed=1, height=64, width=64)
        pre, _ = render_world(world)
        backend = MockBackend(world)
        resp = backend.detect(DetectionRequest(pre, "building", 0.1))
        assert resp.detections == []

    def test_single_building_exact(self):
        world = _world_one_building()
        pre, _ = render_world(world)
        resp = MockBackend(world).detect(DetectionRequest(pre, "building", 0.35))
        assert len(resp.detections) == 1
        det = resp.detections[0]
        assert det.box == world.buildings[0].box
        assert det.logit == pytest.approx(0.8)

    def test_threshold_one_empty(self):
        world = _world_one_building()
        pre, _ = render_world(world)
        resp = MockBackend(world).detect(DetectionRequest(pre, "building", 1.0))
        assert resp.detections == []

    def test_distractors_only_below_baseline_threshold(self, small_scene):
        pair, _, world = small_scene
        backend = MockBackend(world)
        hi = backend.detect(DetectionRequest(pair.pre, "building", 0.35))
        lo = backend.detect(DetectionRequest(pair.pre, "building", 0.14))
        assert len(hi.detections) == len(world.buildings)
        assert len(lo.detections) == len(world.buildings) + len(world.distractors)

    def test_determinism(self, small_scene):
        pair, _, world = small_scene
        noisy = MockWorld.from_json(world.to_json())
        noisy.noise = NoiseParams(jitter_sigma=2.0, logit_sigma=0.05)
        backend = MockBackend(noisy)
        req = DetectionRequest(pair.pre, "building", 0.14)
        a = backend.detect(req)
        b = backend.detect(req)
        assert detect_response_to_json(a) == detect_response_to_json(b)

    def test_every_logit_above_threshold(self, small_scene):
        pair, _, world = small_scene
        noisy = MockWorld.from_json(world.to_json())
        noisy.noise = NoiseParams(jitter_sigma=1.0, logit_sigma=0.2, false_positive_rate=2.0)
        resp = MockBackend(noisy).detect(DetectionRequest(pair.pre, "building", 0.3))
        assert all(d.logit >= 0.3 for d in resp.detections)


class TestMockSegment:
    def test_prompt_equals_footprint(self):
        world = _world_one_building()
        pre, _ = render_world(world)
        mask = MockBackend(world).segment(
            SegmentationRequest(pre, world.buildings[0].box)
        ).mask
        want = rasterize_box(world.buildings[0].box, 96, 96)
        assert np.array_equal(mask, want)

    def test_disjoint_prompt_empty(self):
        world = _world_one_building()
        pre, _ = render_world(world)
        mask = MockBackend(world).segment(
            SegmentationRequest(pre, BoundingBox(70, 70, 10, 10))
        ).mask
        assert not mask.any()

    def test_whole_image_prompt_returns_footprint(self):
        world = _world_one_building()
        pre, _ = render_world(world)
        mask = MockBackend(world).segment(
            SegmentationRequest(pre, BoundingBox(0, 0, 96, 96))
        ).mask
        want = rasterize_box(world.buildings[0].box, 96, 96)
        assert np.array_equal(mask, want)


class TestMockScore:
    def test_building_patch_argmax_index_zero(self):
        world = _world_one_building()
        pre, _ = render_world(world)
        patch = pre[14:64, 10:60]
        logits = MockBackend(world).score_prompts(
            ScoreRequest(patch, default_filter_prompts())
        ).logits
        assert int(np.argmax(logits)) == 0

    def test_distractor_patch_argmax_its_kind(self, small_scene):
        pair, _, world = small_scene
        backend = MockBackend(world)
        prompts = default_filter_prompts()
        for distractor in world.distractors:
            b = distractor.box
            patch = pair.pre[
                int(b.y) - 4 : int(b.bottom) + 4, int(b.x) - 4 : int(b.right) + 4
            ]
            logits = backend.score_prompts(ScoreRequest(patch, prompts)).logits
            winner = prompts[int(np.argmax(logits))]
            assert distractor.kind in winner

    def test_damaged_post_patch_prefers_negative_prompts(self):
        world = _world_one_building(damaged=True)
        pre, post = render_world(world)
        backend = MockBackend(world)
        prompts = ["undamaged building", "damaged building"]
        b = world.buildings[0].box
        crop = (slice(int(b.y), int(b.bottom)), slice(int(b.x), int(b.right)))
        pre_logits = backend.score_prompts(ScoreRequest(pre[crop], prompts)).logits
        post_logits = backend.score_prompts(ScoreRequest(post[crop], prompts)).logits
        assert pre_logits[0] > pre_logits[1]
        assert post_logits[1] > post_logits[0]

    def test_empty_prompts_rejected(self):
        world = _world_one_building()
        pre, _ = render_world(world)
        with pytest.raises(ValueError):
            MockBackend(world).score_prompts(ScoreRequest(pre, []))


def test_null_segmenter_rasterizes_box():
    image = np.zeros((20, 20, 3), dtype=np.uint8)
    box = BoundingBox(2, 3, 4, 5)
    mask = NullSegmenter().segment(SegmentationRequest(image, box)).mask
    assert np.array_equal(mask, rasterize_box(box, 20, 20))


def test_image_b64_roundtrip():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(13, 17, 3)).astype(np.uint8)
    assert np.array_equal(decode_image_b64(encode_image_b64(image)), image)
    mask = rng.integers(0, 3, size=(9, 5)).astype(np.uint8)
    assert np.array_equal(decode_image_b64(encode_image_b64(mask), mode="L"), mask)


class TestGoldenFixtures:
    """The committed wire-format fixtures stay reproducible."""

    @pytest.fixture
    def fixture_backend(self):
        world = MockWorld.from_json(
            json.loads((FIXTURES_DIR / "world.json").read_text())
        )
        return MockBackend(world)

    @pytest.mark.parametrize("name", ["detect", "segment", "score"])
    def test_response_reproduced(self, fixture_backend, name):
        request = json.loads((FIXTURES_DIR / f"{name}_request.json").read_text())
        want = json.loads((FIXTURES_DIR / f"{name}_response.json").read_text())
        image = decode_image_b64(request["image"])
        if name == "detect":
            got = detect_response_to_json(
                fixture_backend.detect(
                    DetectionRequest(
                        image, request["text_prompt"], request["box_threshold"]
                    )
                )
            )
        elif name == "segment":
            box = request["box"]
            got = segment_response_to_json(
                fixture_backend.segment(
                    SegmentationRequest(
                        image,
                        BoundingBox(box["x"], box["y"], box["h"], box["w"]),
                    )
                )
            )
        else:
            got = score_response_to_json(
                fixture_backend.score_prompts(ScoreRequest(image, request["prompts"]))
            )
        assert got == want

    def test_request_encoders_reproduce_fixtures(self, fixture_backend):
        detect_fixture = json.loads((FIXTURES_DIR / "detect_request.json").read_text())
        image = decode_image_b64(detect_fixture["image"])
        assert (
            detect_request_to_json(DetectionRequest(image, "building", 0.14))
            == detect_fixture
        )
        segment_fixture = json.loads(
            (FIXTURES_DIR / "segment_request.json").read_text()
        )
        box = segment_fixture["box"]
        assert (
            segment_request_to_json(
                SegmentationRequest(
                    image, BoundingBox(box["x"], box["y"], box["h"], box["w"])
                )
            )
            == segment_fixture
        )
        score_fixture = json.loads((FIXTURES_DIR / "score_request.json").read_text())
        score_image = decode_image_b64(score_fixture["image"])
        assert (
            score_request_to_json(ScoreRequest(score_image, score_fixture["prompts"]))
            == score_fixture
        )


class _ScriptedTransport(httpx.BaseTransport):
    """Serves canned JSON responses, optionally failing first."""

    def __init__(self, payload, fail_times=0, status=200):
        self.payload = payload
        self.fail_times = fail_times
        self.status = status
        self.calls = 0

    def handle_request(self, request):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise httpx.ConnectError("boom", request=request)
        return httpx.Response(self.status, json=self.payload)


def _remote(payload, **kwargs):
    transport = _ScriptedTransport(payload, **kwargs)
    client = httpx.Client(transport=transport, base_url="http://backend")
    return RemoteBackend("http://backend", client=client, backoff=0.0), transport


class TestRemoteClient:
    def _detect_req(self):
        return DetectionRequest(np.zeros((8, 8, 3), np.uint8), "building", 0.2)

    def test_retries_transport_then_succeeds(self):
        remote, transport = _remote({"boxes": []}, fail_times=2)
        resp = remote.detect(self._detect_req())
        assert resp.detections == [] and transport.calls == 3

    def test_transport_exhaustion_raises(self):
        remote, _ = _remote({"boxes": []}, fail_times=5)
        with pytest.raises(BackendTransportError):
            remote.detect(self._detect_req())

    def test_http_error_not_retried(self):
        remote, transport = _remote({"detail": "nope"}, status=500)
        with pytest.raises(BackendProtocolError):
            remote.detect(self._detect_req())
        assert transport.calls == 1

    def test_malformed_boxes_rejected(self):
        remote, _ = _remote({"boxes": [{"x": 1, "y": 2, "h": 3}]})
        with pytest.raises(BackendProtocolError):
            remote.detect(self._detect_req())

    def test_logit_below_threshold_rejected(self):
        remote, _ = _remote(
            {"boxes": [{"x": 1, "y": 2, "h": 3, "w": 4, "logit": 0.1}]}
        )
        with pytest.raises(BackendProtocolError):
            remote.detect(self._detect_req())

    def test_score_length_mismatch_rejected(self):
        remote, _ = _remote({"logits": [0.1]})
        with pytest.raises(BackendProtocolError):
            remote.score_prompts(
                ScoreRequest(np.zeros((4, 4, 3), np.uint8), ["a", "b"])
            )

    def test_segment_shape_mismatch_rejected(self):
        bad_mask = encode_image_b64(np.zeros((4, 4), np.uint8))
        remote, _ = _remote({"mask": bad_mask})
        with pytest.raises(BackendProtocolError):
            remote.segment(
                SegmentationRequest(
                    np.zeros((8, 8, 3), np.uint8), BoundingBox(0, 0, 2, 2)
                )
            )

    def test_passthrough_preserves_order(self):
        boxes = [
            {"x": 5.0, "y": 6.0, "h": 7.0, "w": 8.0, "logit": 0.9},
            {"x": 1.0, "y": 2.0, "h": 3.0, "w": 4.0, "logit": 0.4},
        ]
        remote, _ = _remote({"boxes": boxes})
        resp = remote.detect(self._detect_req())
        assert [(d.box.x, d.logit) for d in resp.detections] == [(5.0, 0.9), (1.0, 0.4)]
