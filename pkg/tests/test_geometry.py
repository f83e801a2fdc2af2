from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damagescan.errors import ConfigError
from damagescan.geometry import (
    BoundingBox,
    PatchRect,
    ScoredProposal,
    build_tile_grid,
    iou,
    nms_filter,
    remap_to_image,
)
from oracles import oracle_iou, oracle_nms

boxes = st.builds(
    BoundingBox,
    x=st.floats(0, 200),
    y=st.floats(0, 200),
    h=st.floats(0.5, 120),
    w=st.floats(0.5, 120),
)


class TestBoundingBox:
    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 0, 10)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 10, -1)
        with pytest.raises(ValueError):
            BoundingBox(-0.5, 0, 10, 10)

    def test_clip(self):
        clipped = BoundingBox(90, 90, 30, 30).clip(100, 100)
        assert (clipped.x, clipped.y, clipped.h, clipped.w) == (90, 90, 10, 10)


class TestIou:
    def test_identity(self):
        box = BoundingBox(0, 0, 10, 10)
        assert iou(box, box) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 5, 5)) == 0.0

    def test_partial_overlap(self):
        # inter = 25, union = 200 - 25
        value = iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 10, 10))
        assert value == pytest.approx(25 / 175, abs=1e-12)

    @given(a=boxes, b=boxes)
    def test_symmetric_and_bounded(self, a, b):
        ab = iou(a, b)
        assert ab == pytest.approx(iou(b, a), abs=1e-12)
        assert 0.0 <= ab <= 1.0 + 1e-12
        assert iou(a, a) == pytest.approx(1.0)

    @given(a=boxes, b=boxes)
    def test_matches_oracle(self, a, b):
        want = oracle_iou((a.x, a.y, a.h, a.w), (b.x, b.y, b.h, b.w))
        assert iou(a, b) == pytest.approx(want, abs=1e-12)


def _random_proposals(rng, n, span=100):
    out = []
    for i in range(n):
        out.append(
            ScoredProposal(
                box=BoundingBox(
                    x=float(rng.integers(0, span)),
                    y=float(rng.integers(0, span)),
                    h=float(rng.integers(1, 40)),
                    w=float(rng.integers(1, 40)),
                ),
                logit=float(rng.integers(0, 100)) / 100.0,
                patch_index=int(rng.integers(0, 5)),
            )
        )
    return out


class TestNms:
    def test_empty(self):
        assert nms_filter([], 0.1) == []

    def test_identical_boxes_keep_best(self):
        box = BoundingBox(0, 0, 10, 10)
        a = ScoredProposal(box=box, logit=0.9)
        b = ScoredProposal(box=box, logit=0.8)
        kept = nms_filter([b, a], 0.1)
        assert kept == [a]

    def test_output_descending_logit(self):
        rng = np.random.default_rng(3)
        kept = nms_filter(_random_proposals(rng, 30), 0.2)
        logits = [p.logit for p in kept]
        assert logits == sorted(logits, reverse=True)

    def test_antichain_property(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            kept = nms_filter(_random_proposals(rng, 25), 0.15)
            for i, a in enumerate(kept):
                for b in kept[i + 1 :]:
                    assert iou(a.box, b.box) <= 0.15 + 1e-12

    def test_equals_bruteforce_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(0, 51))
            props = _random_proposals(rng, n)
            thr = float(rng.choice([0.0, 0.1, 0.3, 0.5, 0.9]))
            got = [
                ((p.box.x, p.box.y, p.box.h, p.box.w), p.logit, p.patch_index)
                for p in nms_filter(props, thr)
            ]
            want = oracle_nms(
                [((p.box.x, p.box.y, p.box.h, p.box.w), p.logit, p.patch_index) for p in props],
                thr,
            )
            assert got == want


class TestTileGrid:
    @pytest.mark.parametrize(
        "scales,want", [([1.0], 1), ([1.0, 0.5], 10), ([1.0, 0.5, 0.25], 59)]
    )
    def test_patch_counts(self, scales, want):
        assert len(build_tile_grid(1024, 1024, scales)) == want

    def test_full_frame_at_scale_one(self):
        (patch,) = build_tile_grid(768, 1024, [1.0])
        assert (patch.x, patch.y, patch.side_h, patch.side_w) == (0, 0, 768, 1024)

    def test_half_scale_origins(self):
        grid = build_tile_grid(1024, 1024, [0.5])
        assert len(grid) == 9
        origins = {(p.x, p.y) for p in grid}
        assert origins == {(x, y) for x in (0, 256, 512) for y in (0, 256, 512)}
        assert all(p.side_h == p.side_w == 512 for p in grid)

    @pytest.mark.parametrize("scale", [1.0, 0.5, 0.25, 0.125])
    @pytest.mark.parametrize("dims", [(4, 4), (17, 33), (100, 257), (1024, 1024)])
    def test_count_law_and_coverage(self, scale, dims):
        height, width = dims
        grid = build_tile_grid(height, width, [scale])
        per_axis = math.ceil(2.0 / scale - 1.0)
        assert len(grid) == per_axis**2
        covered = np.zeros((height, width), dtype=bool)
        for p in grid:
            assert p.x + p.side_w <= width and p.y + p.side_h <= height
            covered[p.y : p.y + p.side_h, p.x : p.x + p.side_w] = True
        assert covered.all()

    def test_invalid_scale(self):
        with pytest.raises(ConfigError):
            build_tile_grid(64, 64, [0.0])
        with pytest.raises(ConfigError):
            build_tile_grid(64, 64, [1.5])


class TestRemap:
    def test_identity_patch(self):
        patch = PatchRect(x=0, y=0, side_h=100, side_w=100, scale=1.0)
        box = BoundingBox(10, 20, 30, 40)
        assert remap_to_image(box, patch, 1.0) == box

    def test_divide_then_translate(self):
        patch = PatchRect(x=256, y=256, side_h=512, side_w=512, scale=0.5)
        got = remap_to_image(BoundingBox(100, 100, 50, 60), patch, 2.0)
        assert (got.x, got.y, got.h, got.w) == (306, 306, 25, 30)

    def test_clamped_to_patch_extent(self):
        patch = PatchRect(x=0, y=0, side_h=100, side_w=100, scale=1.0)
        # overhangs under float fuzz: right edge exactly at the frame edge
        got = remap_to_image(BoundingBox(90, 90, 10, 10), patch, 1.0)
        assert got.right == 100 and got.bottom == 100

    def test_rejects_outside_frame(self):
        patch = PatchRect(x=0, y=0, side_h=100, side_w=100, scale=1.0)
        with pytest.raises(ValueError):
            remap_to_image(BoundingBox(90, 90, 10, 20), patch, 1.0)

    @given(
        bx=st.floats(0, 50),
        by=st.floats(0, 50),
        bh=st.floats(1, 40),
        bw=st.floats(1, 40),
    )
    @settings(max_examples=50)
    def test_roundtrip_projection(self, bx, by, bh, bw):
        # image box fully inside the patch, projected to patch-local
        # coordinates and remapped back, is the identity
        patch = PatchRect(x=30, y=40, side_h=100, side_w=100, scale=0.5)
        factor = 2.0
        local = BoundingBox(x=bx * factor, y=by * factor, h=bh * factor, w=bw * factor)
        got = remap_to_image(local, patch, factor)
        assert got.x == pytest.approx(bx + 30, abs=1e-9)
        assert got.y == pytest.approx(by + 40, abs=1e-9)
        assert got.h == pytest.approx(bh, abs=1e-9)
        assert got.w == pytest.approx(bw, abs=1e-9)
