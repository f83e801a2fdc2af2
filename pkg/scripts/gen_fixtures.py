#!/usr/bin/env python3
"""Regenerate the golden /v1/* protocol fixtures under fixtures/.

The fixtures pin the wire format: anything serving or consuming the
protocol must reproduce these bytes for the same requests.
"""

from __future__ import annotations

import json
from pathlib import Path

from damagescan.backends import (
    DetectionRequest,
    MockBackend,
    ScoreRequest,
    SegmentationRequest,
    detect_request_to_json,
    detect_response_to_json,
    score_request_to_json,
    score_response_to_json,
    segment_request_to_json,
    segment_response_to_json,
)
from damagescan.data import SyntheticSceneSpec, synth_scene

OUT = Path(__file__).parent.parent / "fixtures"


def main() -> None:
    spec = SyntheticSceneSpec(
        seed=1234,
        height=64,
        width=64,
        building_count=(2, 2),
        distractor_count=(1, 1),
        distractor_kinds=["tennis court"],
        damage_probability=1.0,
        building_size=(12, 16),
        min_gap=8,
        border_margin=4,
    )
    pair, _, world = synth_scene(spec, scene_id="fixture")
    backend = MockBackend(world)

    detect_req = DetectionRequest(
        image=pair.pre, text_prompt="building", box_threshold=0.14
    )
    segment_req = SegmentationRequest(image=pair.pre, box=world.buildings[0].box)
    b = world.buildings[0].box
    y0, x0 = max(int(b.y) - 5, 0), max(int(b.x) - 5, 0)
    score_req = ScoreRequest(
        image=pair.pre[y0 : int(b.bottom) + 5, x0 : int(b.right) + 5],
        prompts=["A satellite photo of building", "A satellite photo of grass"],
    )

    OUT.mkdir(exist_ok=True)
    pairs = {
        "detect": (
            detect_request_to_json(detect_req),
            detect_response_to_json(backend.detect(detect_req)),
        ),
        "segment": (
            segment_request_to_json(segment_req),
            segment_response_to_json(backend.segment(segment_req)),
        ),
        "score": (
            score_request_to_json(score_req),
            score_response_to_json(backend.score_prompts(score_req)),
        ),
    }
    (OUT / "world.json").write_text(
        json.dumps(world.to_json(), indent=2, sort_keys=True) + "\n"
    )
    for name, (request, response) in pairs.items():
        (OUT / f"{name}_request.json").write_text(
            json.dumps(request, indent=2, sort_keys=True) + "\n"
        )
        (OUT / f"{name}_response.json").write_text(
            json.dumps(response, indent=2, sort_keys=True) + "\n"
        )
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
