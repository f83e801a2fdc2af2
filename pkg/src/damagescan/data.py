"""Dataset ingestion, synthetic scene generation, and serialization.

Real datasets are directories of PNG pairs named ``<id>_pre_disaster.png``
and ``<id>_post_disaster.png``, with an optional ``<id>_gt.png`` label
raster (values 0..4 accepted, remapped downstream). The synthetic
generator plants rectangular buildings and distractors, renders both
frames from the shared palette, and emits the mock world that backs the
deterministic test backends.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import (
    DISTRACTOR_KINDS,
    MockWorld,
    NoiseParams,
    PALETTE,
    PlantedBuilding,
    PlantedDistractor,
)
from .errors import ConfigError, DataError
from .geometry import BoundingBox, ScoredProposal
from .masks import new_mask
from .pipeline import ImagePair

# per-kind (min, max) side ranges in pixels; parking lots run large enough
# to trip the area limit of the proposal cascade
KIND_SIZES: dict[str, tuple[tuple[int, int], tuple[int, int]]] = {
    "tennis court": ((12, 20), (24, 36)),
    "swimming pool": ((10, 18), (10, 18)),
    "parking lot": ((45, 64), (45, 64)),
    "car": ((4, 8), (4, 8)),
    "truck": ((6, 12), (6, 12)),
}


@dataclass
class SceneRecord:
    scene_id: str
    pre_path: Path
    post_path: Path
    gt_path: Path | None = None
    world_path: Path | None = None


@dataclass
class DatasetManifest:
    root: Path
    split: str
    scenes: list[SceneRecord]
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        """Manifest as JSON with paths relative to the dataset root."""

        def rel(path: Path | None):
            return str(path.relative_to(self.root)) if path else None

        return {
            "split": self.split,
            "scenes": [
                {
                    "scene_id": r.scene_id,
                    "pre": rel(r.pre_path),
                    "post": rel(r.post_path),
                    "gt": rel(r.gt_path),
                    "world": rel(r.world_path),
                }
                for r in self.scenes
            ],
            "warnings": list(self.warnings),
        }


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as img:
            return img.size[1], img.size[0]  # (H, W)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_manifest(root: str | Path, split: str = "test") -> DatasetManifest:
    """Discover paired scenes under a directory.

    Unpaired files and dimension-mismatched pairs are excluded with a
    warning record; a directory yielding zero usable pairs is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    pre_files = sorted(root.glob("*_pre_disaster.png"))
    warnings: list[str] = []
    scenes: list[SceneRecord] = []
    for pre in pre_files:
        scene_id = pre.name[: -len("_pre_disaster.png")]
        post = root / f"{scene_id}_post_disaster.png"
        if not post.exists():
            warnings.append(f"{scene_id}: pre image without post, excluded")
            continue
        try:
            if _image_size(pre) != _image_size(post):
                warnings.append(f"{scene_id}: pre/post dimensions differ, excluded")
                continue
        except DataError as exc:
            warnings.append(f"{scene_id}: {exc}, excluded")
            continue
        gt = root / f"{scene_id}_gt.png"
        world = root / f"{scene_id}_world.json"
        scenes.append(
            SceneRecord(
                scene_id=scene_id,
                pre_path=pre,
                post_path=post,
                gt_path=gt if gt.exists() else None,
                world_path=world if world.exists() else None,
            )
        )
    for post in sorted(root.glob("*_post_disaster.png")):
        scene_id = post.name[: -len("_post_disaster.png")]
        if not (root / f"{scene_id}_pre_disaster.png").exists():
            warnings.append(f"{scene_id}: post image without pre, excluded")
    if not scenes:
        raise DataError(f"no usable scene pairs under {root}")
    scenes.sort(key=lambda r: r.scene_id)
    return DatasetManifest(root=root, split=split, scenes=scenes, warnings=warnings)


def load_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(image.astype(np.uint8), mode="RGB").save(path)


def load_pair(record: SceneRecord) -> ImagePair:
    return ImagePair(
        pre=load_image(record.pre_path),
        post=load_image(record.post_path),
        scene_id=record.scene_id,
    )


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSceneSpec:
    """Recipe for one deterministic synthetic scene family.

    The seed is mandatory: reproducibility is the product, so stochastic
    generation without a pinned seed is a configuration error.
    """

    seed: int
    height: int = 256
    width: int = 256
    building_count: tuple[int, int] = (3, 6)
    distractor_count: tuple[int, int] = (1, 3)
    damage_probability: float = 0.4
    building_size: tuple[int, int] = (16, 40)
    distractor_kinds: list[str] = field(default_factory=lambda: list(DISTRACTOR_KINDS))
    min_gap: int = 24
    border_margin: int = 20
    noise: NoiseParams = field(default_factory=NoiseParams)

    def __post_init__(self):
        if self.building_count[0] < 0 or self.building_count[1] < self.building_count[0]:
            raise ConfigError(f"bad building_count range {self.building_count}")
        if self.distractor_count[0] < 0 or self.distractor_count[1] < self.distractor_count[0]:
            raise ConfigError(f"bad distractor_count range {self.distractor_count}")
        if not 0.0 <= self.damage_probability <= 1.0:
            raise ConfigError(f"damage_probability outside [0,1]: {self.damage_probability}")
        unknown = set(self.distractor_kinds) - set(KIND_SIZES)
        if unknown:
            raise ConfigError(f"unknown distractor kinds: {sorted(unknown)}")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "height": self.height,
            "width": self.width,
            "building_count": list(self.building_count),
            "distractor_count": list(self.distractor_count),
            "damage_probability": self.damage_probability,
            "building_size": list(self.building_size),
            "distractor_kinds": list(self.distractor_kinds),
            "min_gap": self.min_gap,
            "border_margin": self.border_margin,
            "noise": self.noise.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSceneSpec":
        if "seed" not in obj:
            raise ConfigError("synthetic spec must pin a seed")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        kwargs = dict(obj)
        for key in ("building_count", "distractor_count", "building_size"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "noise" in kwargs:
            kwargs["noise"] = NoiseParams.from_json(kwargs["noise"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SyntheticSceneSpec":
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec {path} is not valid JSON: {exc}") from exc
        return cls.from_json(obj)


def _place_boxes(
    rng: np.random.Generator,
    spec: SyntheticSceneSpec,
    sizes: list[tuple[int, int]],
    max_attempts: int = 1000,
    max_restarts: int = 20,
) -> list[BoundingBox]:
    """Non-overlapping placement with a minimum gap, by rejection sampling.

    Objects place largest-first (restored to input order afterwards); a
    stuck layout restarts from scratch a bounded number of times before
    the packing is declared infeasible.
    """
    margin = spec.border_margin
    for h, w in sizes:
        if spec.height - 2 * margin - h <= 0 or spec.width - 2 * margin - w <= 0:
            raise DataError(
                f"object {h}x{w} cannot fit inside {spec.height}x{spec.width} "
                f"with margin {margin}"
            )
    order = sorted(range(len(sizes)), key=lambda i: -(sizes[i][0] * sizes[i][1]))
    gap = spec.min_gap
    for _ in range(max_restarts):
        placed: dict[int, BoundingBox] = {}
        for i in order:
            h, w = sizes[i]
            for _ in range(max_attempts):
                x = int(rng.integers(margin, spec.width - margin - w + 1))
                y = int(rng.integers(margin, spec.height - margin - h + 1))
                candidate = BoundingBox(x=float(x), y=float(y), h=float(h), w=float(w))
                clear = all(
                    candidate.x - gap >= other.right
                    or other.x - gap >= candidate.right
                    or candidate.y - gap >= other.bottom
                    or other.y - gap >= candidate.bottom
                    for other in placed.values()
                )
                if clear:
                    placed[i] = candidate
                    break
            else:
                break
        if len(placed) == len(sizes):
            return [placed[i] for i in range(len(sizes))]
    raise DataError(
        f"infeasible packing: {len(sizes)} objects do not fit in "
        f"{spec.height}x{spec.width} with gap {gap} and margin {margin}"
    )


def build_world(spec: SyntheticSceneSpec) -> MockWorld:
    """Plant a world deterministically from the spec seed."""
    rng = np.random.default_rng(spec.seed)
    n_buildings = int(rng.integers(spec.building_count[0], spec.building_count[1] + 1))
    n_distractors = int(
        rng.integers(spec.distractor_count[0], spec.distractor_count[1] + 1)
    )
    lo, hi = spec.building_size
    sizes = [
        (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
        for _ in range(n_buildings)
    ]
    kinds = [
        str(rng.choice(spec.distractor_kinds)) for _ in range(n_distractors)
    ] if spec.distractor_kinds and n_distractors else []
    for kind in kinds:
        (h_lo, h_hi), (w_lo, w_hi) = KIND_SIZES[kind]
        sizes.append((int(rng.integers(h_lo, h_hi + 1)), int(rng.integers(w_lo, w_hi + 1))))
    boxes = _place_boxes(rng, spec, sizes)
    buildings = [
        PlantedBuilding(box=box, damaged=bool(rng.random() < spec.damage_probability))
        for box in boxes[:n_buildings]
    ]
    distractors = [
        PlantedDistractor(box=box, kind=kind)
        for box, kind in zip(boxes[n_buildings:], kinds)
    ]
    return MockWorld(
        seed=spec.seed,
        height=spec.height,
        width=spec.width,
        buildings=buildings,
        distractors=distractors,
        noise=replace(spec.noise),
    )


def _paint(image: np.ndarray, box: BoundingBox, color: tuple[int, int, int]) -> None:
    x0, y0 = int(box.x), int(box.y)
    x1, y1 = int(box.right), int(box.bottom)
    image[y0:y1, x0:x1] = color


def render_world(world: MockWorld) -> tuple[np.ndarray, np.ndarray]:
    """Pre and post frames: damaged buildings recolor to rubble in post."""
    shape = (world.height, world.width, 3)
    pre = np.full(shape, PALETTE["background"], dtype=np.uint8)
    for distractor in world.distractors:
        _paint(pre, distractor.box, PALETTE[distractor.kind])
    for building in world.buildings:
        _paint(pre, building.box, PALETTE["building"])
    post = pre.copy()
    for building in world.buildings:
        if building.damaged:
            _paint(post, building.box, PALETTE["rubble"])
    return pre, post


def world_gt_mask(world: MockWorld) -> np.ndarray:
    gt = new_mask(world.height, world.width)
    for building in world.buildings:
        x0, y0 = int(building.box.x), int(building.box.y)
        x1, y1 = int(building.box.right), int(building.box.bottom)
        gt[y0:y1, x0:x1] = 2 if building.damaged else 1
    return gt


def synth_scene(
    spec: SyntheticSceneSpec, scene_id: str = "synth_000"
) -> tuple[ImagePair, np.ndarray, MockWorld]:
    """One deterministic scene: image pair, {0,1,2} ground truth, world."""
    world = build_world(spec)
    pre, post = render_world(world)
    return ImagePair(pre=pre, post=post, scene_id=scene_id), world_gt_mask(world), world


def write_synth_dataset(
    spec: SyntheticSceneSpec, count: int, out_dir: str | Path
) -> DatasetManifest:
    """Write ``count`` scenes (seeds spec.seed + i) plus world files.

    Also emits ``world_index.json`` (base seed and noise for the mock
    server) and ``gt_boxes.json`` with the planted building boxes.
    """
    from .masks import save_mask_png

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt_annotations: list[tuple[str, ScoredProposal]] = []
    gt_damage: dict[str, list[bool]] = {}
    image_index: dict[str, tuple[int, int]] = {}
    for i in range(count):
        scene_id = f"synth_{i:03d}"
        scene_spec = replace(spec, seed=spec.seed + i)
        pair, gt, world = synth_scene(scene_spec, scene_id=scene_id)
        save_image(out / f"{scene_id}_pre_disaster.png", pair.pre)
        save_image(out / f"{scene_id}_post_disaster.png", pair.post)
        save_mask_png(out / f"{scene_id}_gt.png", gt)
        (out / f"{scene_id}_world.json").write_text(
            json.dumps(world.to_json(), indent=2, sort_keys=True) + "\n"
        )
        image_index[scene_id] = (world.height, world.width)
        gt_damage[scene_id] = [b.damaged for b in world.buildings]
        for building in world.buildings:
            gt_annotations.append(
                (scene_id, ScoredProposal(box=building.box, logit=1.0))
            )
    (out / "world_index.json").write_text(
        json.dumps(
            {"seed": spec.seed, "noise": spec.noise.to_json(), "count": count},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    coco = export_coco(gt_annotations, image_index)
    # attach damage flags in planting order per scene
    seen: dict[str, int] = {}
    for ann in coco["annotations"]:
        scene_id = coco["images"][ann["image_id"] - 1]["file_name"][
            : -len("_pre_disaster.png")
        ]
        k = seen.get(scene_id, 0)
        ann["damaged"] = bool(gt_damage[scene_id][k])
        seen[scene_id] = k + 1
    (out / "gt_boxes.json").write_text(
        json.dumps(coco, indent=2, sort_keys=True) + "\n"
    )
    manifest = load_manifest(out, split="synthetic")
    (out / "manifest.json").write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n"
    )
    return manifest


# ---------------------------------------------------------------------------
# COCO-style annotation export
# ---------------------------------------------------------------------------


def export_coco(
    annotations: list[tuple[str, ScoredProposal]],
    image_index: dict[str, tuple[int, int]],
) -> dict:
    """Standard detection-JSON dict with one 'building' category.

    The bbox field is [x, y, width, height] per the COCO convention; note
    the order swap from the engine's (x, y, h, w). Detector confidence is
    stored as "score".
    """
    for scene_id, _ in annotations:
        if scene_id not in image_index:
            raise DataError(f"annotation references unknown scene {scene_id!r}")
    scene_ids = sorted(image_index)
    image_id = {sid: i + 1 for i, sid in enumerate(scene_ids)}
    images = [
        {
            "id": image_id[sid],
            "file_name": f"{sid}_pre_disaster.png",
            "height": image_index[sid][0],
            "width": image_index[sid][1],
        }
        for sid in scene_ids
    ]
    anns = []
    ordered = sorted(
        range(len(annotations)), key=lambda i: (annotations[i][0], i)
    )
    for new_id, idx in enumerate(ordered, start=1):
        scene_id, prop = annotations[idx]
        anns.append(
            {
                "id": new_id,
                "image_id": image_id[scene_id],
                "category_id": 1,
                "bbox": [prop.box.x, prop.box.y, prop.box.w, prop.box.h],
                "area": prop.box.area,
                "score": prop.logit,
                "iscrowd": 0,
            }
        )
    return {
        "images": images,
        "annotations": anns,
        "categories": [{"id": 1, "name": "building"}],
    }


def write_coco(path: str | Path, coco: dict) -> None:
    Path(path).write_text(json.dumps(coco, indent=2, sort_keys=True) + "\n")


def import_coco(source: str | Path | dict) -> list[tuple[str, ScoredProposal]]:
    """Inverse of export_coco on (scene_id, box, score) triples."""
    if isinstance(source, dict):
        obj = source
    else:
        try:
            obj = json.loads(Path(source).read_text())
        except OSError as exc:
            raise DataError(f"cannot read annotations {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"annotations {source} are not valid JSON: {exc}") from exc
    by_id = {}
    for img in obj.get("images", []):
        name = img["file_name"]
        scene_id = name[: -len("_pre_disaster.png")] if name.endswith(
            "_pre_disaster.png"
        ) else Path(name).stem
        by_id[img["id"]] = scene_id
    out = []
    for ann in obj.get("annotations", []):
        x, y, w, h = ann["bbox"]
        out.append(
            (
                by_id[ann["image_id"]],
                ScoredProposal(
                    box=BoundingBox(x=float(x), y=float(y), h=float(h), w=float(w)),
                    logit=float(ann.get("score", 1.0)),
                ),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Overlay rendering
# ---------------------------------------------------------------------------

OVERLAY_COLORS = {1: (0, 200, 0), 2: (255, 140, 0)}  # green / orange


def render_overlay(
    base: np.ndarray, eval_mask: np.ndarray, alpha: float = 0.55
) -> np.ndarray:
    """Blend class colors over the base image: green intact, orange damaged."""
    if base.shape[:2] != eval_mask.shape:
        raise DataError(
            f"mask {eval_mask.shape} does not fit image {base.shape[:2]}"
        )
    out = base.astype(np.float64).copy()
    for label, color in OVERLAY_COLORS.items():
        sel = eval_mask == label
        out[sel] = (1 - alpha) * out[sel] + alpha * np.array(color, dtype=np.float64)
    return out.round().astype(np.uint8)
