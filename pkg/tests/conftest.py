from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from damagescan.backends import Backends, MockBackend
from damagescan.data import SyntheticSceneSpec, synth_scene

FIXTURES_DIR = Path(__file__).parent.parent / "fixtures"
GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def small_scene():
    """4 buildings (2 damaged by seed), 2 distractors, noiseless."""
    spec = SyntheticSceneSpec(
        seed=7,
        building_count=(4, 4),
        distractor_count=(2, 2),
        damage_probability=0.5,
    )
    pair, gt, world = synth_scene(spec, scene_id="small")
    return pair, gt, world


@pytest.fixture
def small_backends(small_scene):
    _, _, world = small_scene
    return Backends.single(MockBackend(world))
