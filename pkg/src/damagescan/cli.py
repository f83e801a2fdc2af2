"""Operator surface: batch runs over datasets, evaluation, synthesis.

Every subcommand is deterministic given identical inputs and seeds. Exit
codes: 0 success, 2 configuration error, 3 data error, 4 backend error.
The backend URL may come from the ``DAMAGESCAN_BACKEND_URL`` environment
variable when ``--backend remote`` is given without a URL.
"""

from __future__ import annotations

import csv
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import data as dataio
from . import metrics
from .backends import Backends, MockBackend, MockWorld, NullSegmenter, RemoteBackend
from .config import load_config, write_effective_config
from .errors import BackendError, ConfigError, DataError
from .geometry import BoundingBox, ScoredProposal
from .masks import load_mask_png, save_mask_png
from .pipeline import (
    LabeledBox,
    ScenesFailedError,
    assess_scene,
    generate_pseudo_labels,
    localize_buildings,
    select_top_confident,
)

DEFAULT_JOBS = os.cpu_count() or 1


def _backend_provider(
    backend_opt: str,
    manifest: dataio.DatasetManifest,
    null_segmenter: bool = False,
):
    """Per-scene backend bundles for 'mock' or 'remote[:URL]'.

    With null_segmenter the segmentation role just rasterizes the prompt
    box, so localisation runs without any segmentation backend.
    """

    def bundle(backend) -> Backends:
        out = Backends.single(backend)
        if null_segmenter:
            out.segmenter = NullSegmenter()
        return out

    if backend_opt == "mock":
        worlds: dict[str, Path] = {}
        for record in manifest.scenes:
            if record.world_path is None:
                raise DataError(
                    f"scene {record.scene_id}: mock backend needs "
                    f"{record.scene_id}_world.json next to the images"
                )
            worlds[record.scene_id] = record.world_path

        def provide(scene_id: str) -> Backends:
            world = MockWorld.from_json(json.loads(worlds[scene_id].read_text()))
            return bundle(MockBackend(world))

        return provide
    if backend_opt.startswith("remote"):
        url = backend_opt[len("remote:"):] if backend_opt.startswith("remote:") else ""
        url = url or os.environ.get("DAMAGESCAN_BACKEND_URL", "")
        if not url:
            raise ConfigError(
                "remote backend needs a URL: --backend remote:http://... "
                "or DAMAGESCAN_BACKEND_URL"
            )
        shared = bundle(RemoteBackend(url))
        return lambda scene_id: shared
    raise ConfigError(f"unknown backend {backend_opt!r}; use mock or remote:URL")


def _run_scenes(records, fn, jobs: int):
    """Run fn(record) per scene; fail the run if any scene fails."""
    results: dict[str, object] = {}
    failures: dict[str, Exception] = {}

    def one(record):
        try:
            results[record.scene_id] = fn(record)
        except Exception as exc:
            failures[record.scene_id] = exc

    if jobs <= 1:
        for record in records:
            one(record)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(one, records))
    if failures:
        raise ScenesFailedError(failures)
    return [results[r.scene_id] for r in sorted(records, key=lambda r: r.scene_id)]


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@click.group()
def cli():
    """Building damage detection from bi-temporal satellite image pairs."""


_config_opt = click.option("--config", "config_path", type=click.Path(), default=None)
_backend_opt = click.option("--backend", default="mock", show_default=True)
_jobs_opt = click.option("--jobs", type=int, default=DEFAULT_JOBS, show_default=False)


@cli.command()
@_config_opt
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_backend_opt
@_jobs_opt
@click.option("--null-segmenter", is_flag=True, help="rasterize boxes instead of segmenting")
def localize(config_path, data_dir, out_dir, backend, jobs, null_segmenter):
    """Detect and segment buildings on pre-disaster frames."""
    config = load_config(config_path)
    manifest = dataio.load_manifest(data_dir)
    provide = _backend_provider(backend, manifest, null_segmenter=null_segmenter)
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def one(record):
        pre = dataio.load_image(record.pre_path)
        boxes, mask = localize_buildings(pre, provide(record.scene_id), config)
        return boxes, mask, pre.shape[:2]

    results = _run_scenes(manifest.scenes, one, jobs)
    annotations: list[tuple[str, ScoredProposal]] = []
    image_index: dict[str, tuple[int, int]] = {}
    for record, (boxes, mask, shape) in zip(manifest.scenes, results):
        save_mask_png(out / "masks" / f"{record.scene_id}.png", mask)
        image_index[record.scene_id] = shape
        annotations.extend((record.scene_id, p) for p in boxes)
    dataio.write_coco(out / "boxes.json", dataio.export_coco(annotations, image_index))
    write_effective_config(config, out)
    click.echo(f"localized {len(manifest.scenes)} scene(s) -> {out}")


@cli.command()
@_config_opt
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_backend_opt
@_jobs_opt
@click.option("--null-segmenter", is_flag=True, help="rasterize boxes instead of segmenting")
def assess(config_path, data_dir, out_dir, backend, jobs, null_segmenter):
    """End-to-end damage assessment: per-scene {0,1,2} masks."""
    config = load_config(config_path)
    manifest = dataio.load_manifest(data_dir)
    provide = _backend_provider(backend, manifest, null_segmenter=null_segmenter)
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def one(record):
        pair = dataio.load_pair(record)
        return assess_scene(pair, provide(record.scene_id), config)

    results = _run_scenes(manifest.scenes, one, jobs)
    scenes_json = []
    annotations: list[tuple[str, ScoredProposal]] = []
    image_index: dict[str, tuple[int, int]] = {}
    for assessment in results:
        save_mask_png(out / "masks" / f"{assessment.scene_id}.png", assessment.eval_mask)
        height, width = assessment.eval_mask.shape
        image_index[assessment.scene_id] = (height, width)
        scenes_json.append(
            {
                "scene_id": assessment.scene_id,
                "height": height,
                "width": width,
                "buildings": [b.to_json() for b in assessment.buildings],
            }
        )
        annotations.extend(
            (assessment.scene_id, ScoredProposal(box=b.box, logit=b.logit))
            for b in assessment.buildings
        )
    _dump_json(
        out / "classifications.json",
        {"damage_threshold": config.damage_threshold, "scenes": scenes_json},
    )
    dataio.write_coco(out / "boxes.json", dataio.export_coco(annotations, image_index))
    write_effective_config(config, out)
    click.echo(f"assessed {len(manifest.scenes)} scene(s) -> {out}")


@cli.command("pseudo-label")
@_config_opt
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--out", "out_file", type=click.Path(), required=True)
@_backend_opt
@_jobs_opt
def pseudo_label(config_path, data_dir, out_file, backend, jobs):
    """Multiscale proposal harvesting plus the selection cascade."""
    config = load_config(config_path)
    manifest = dataio.load_manifest(data_dir, split="train")
    provide = _backend_provider(backend, manifest)
    scenes = [
        (r.scene_id, (lambda path: lambda: dataio.load_image(path))(r.pre_path))
        for r in manifest.scenes
    ]
    results = generate_pseudo_labels(scenes, provide, config, jobs=jobs)
    annotations: list[tuple[str, ScoredProposal]] = []
    image_index: dict[str, tuple[int, int]] = {}
    for record in manifest.scenes:
        image_index[record.scene_id] = dataio._image_size(record.pre_path)
    provenance_lines = []
    for scene in results:
        annotations.extend((scene.scene_id, p) for p in scene.kept)
        entry = {"scene_id": scene.scene_id}
        entry.update(scene.cascade.counts_json())
        entry["boxes"] = [r.to_json() for r in scene.cascade.records]
        provenance_lines.append(json.dumps(entry, sort_keys=True))
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.write_coco(out, dataio.export_coco(annotations, image_index))
    out.with_name(out.name + ".provenance.jsonl").write_text(
        "\n".join(provenance_lines) + ("\n" if provenance_lines else "")
    )
    _dump_json(out.with_name(out.name + ".effective_config.json"), config.to_json())
    click.echo(f"pseudo-labeled {len(results)} scene(s) -> {out}")


@cli.command("select-confident")
@click.option("--in", "in_file", type=click.Path(), required=True)
@click.option("--fraction", type=float, default=0.10, show_default=True)
@click.option("--out", "out_file", type=click.Path(), required=True)
def select_confident(in_file, fraction, out_file):
    """Per-class top-fraction subset of classified buildings."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction outside (0,1]: {fraction}")
    try:
        payload = json.loads(Path(in_file).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {in_file}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{in_file} is not valid JSON: {exc}") from exc
    threshold = float(payload.get("damage_threshold", 0.0))
    items: list[LabeledBox] = []
    meta: dict[str, dict] = {}
    for scene in payload.get("scenes", []):
        meta[scene["scene_id"]] = scene
        for i, building in enumerate(scene.get("buildings", [])):
            box = building["box"]
            items.append(
                LabeledBox(
                    scene_id=scene["scene_id"],
                    index=i,
                    box=BoundingBox(
                        x=box["x"], y=box["y"], h=box["h"], w=box["w"]
                    ),
                    logit=float(building["logit"]),
                    label=int(building["label"]),
                    s=float(building["s"]),
                )
            )
    chosen = select_top_confident(items, fraction, threshold)
    picked: dict[str, list[int]] = {}
    for item in chosen:
        picked.setdefault(item.scene_id, []).append(item.index)
    scenes_out = []
    for scene_id in sorted(meta):
        indices = sorted(picked.get(scene_id, []))
        scene = meta[scene_id]
        scenes_out.append(
            {
                "scene_id": scene_id,
                "height": scene.get("height"),
                "width": scene.get("width"),
                "buildings": [scene["buildings"][i] for i in indices],
            }
        )
    _dump_json(
        Path(out_file),
        {
            "damage_threshold": threshold,
            "selected_fraction": fraction,
            "scenes": scenes_out,
        },
    )
    click.echo(f"selected {len(chosen)} of {len(items)} building(s) -> {out_file}")


def _pred_mask_dir(pred_dir: Path) -> Path:
    masks = pred_dir / "masks"
    return masks if masks.is_dir() else pred_dir


def _gt_mask_path(gt_dir: Path, scene_id: str) -> Path:
    for candidate in (gt_dir / f"{scene_id}_gt.png", gt_dir / f"{scene_id}.png"):
        if candidate.exists():
            return candidate
    raise DataError(f"no ground-truth mask for scene {scene_id} under {gt_dir}")


@cli.command("eval")
@click.option("--pred", "pred_dir", type=click.Path(), required=True)
@click.option("--gt", "gt_dir", type=click.Path(), required=True)
@click.option("--report", "report_file", type=click.Path(), required=True)
@click.option("--object-level", "object_file", type=click.Path(), default=None)
@click.option("--per-scene", "per_scene_file", type=click.Path(), default=None)
def eval_cmd(pred_dir, gt_dir, report_file, object_file, per_scene_file):
    """Pixel-wise (and optionally object-wise) scoring against ground truth."""
    pred_dir = Path(pred_dir)
    gt_dir = Path(gt_dir)
    mask_dir = _pred_mask_dir(pred_dir)
    scene_ids = sorted(p.stem for p in mask_dir.glob("*.png"))
    if not scene_ids:
        raise DataError(f"no prediction masks under {mask_dir}")
    micro = metrics.ConfusionCounts.zero()
    binary_micro = metrics.ConfusionCounts.zero(2)
    per_scene_reports = []
    for scene_id in scene_ids:
        pred_mask = load_mask_png(mask_dir / f"{scene_id}.png", max_value=2)
        gt_mask = metrics.remap_gt_classes(
            load_mask_png(_gt_mask_path(gt_dir, scene_id), max_value=4)
        )
        if pred_mask.shape != gt_mask.shape:
            raise DataError(
                f"scene {scene_id}: mask shapes differ "
                f"{pred_mask.shape} vs {gt_mask.shape}"
            )
        counts = metrics.ConfusionCounts.from_masks(pred_mask, gt_mask)
        micro = micro + counts
        binary_counts = metrics.ConfusionCounts.from_masks(
            metrics.binarize_presence(pred_mask),
            metrics.binarize_presence(gt_mask),
            n_classes=2,
        )
        binary_micro = binary_micro + binary_counts
        scene_report = metrics.scores_from_counts(counts).to_json()
        scene_binary = metrics.scores_from_counts(binary_counts)
        scene_report["scene_id"] = scene_id
        scene_report["F1"] = float(scene_binary.f1[1])
        scene_report["IoU"] = float(scene_binary.iou[1])
        per_scene_reports.append(scene_report)

    macro_keys = [k for k in per_scene_reports[0] if k.startswith(("F1", "IoU", "m"))]
    macro = {
        k: float(np.mean([r[k] for r in per_scene_reports])) for k in macro_keys
    }
    binary_report = metrics.scores_from_counts(binary_micro)
    report = {
        "scene_count": len(scene_ids),
        "pixel": {
            "micro": metrics.scores_from_counts(micro).to_json(),
            "macro": macro,
        },
        "binary": {
            "F1": float(binary_report.f1[1]),
            "IoU": float(binary_report.iou[1]),
        },
    }
    _dump_json(Path(report_file), report)
    if per_scene_file:
        fields = ["scene_id"] + [k for k in per_scene_reports[0] if k != "scene_id"]
        with open(per_scene_file, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in per_scene_reports:
                writer.writerow(
                    {k: row[k] for k in fields}
                    | {"vacuous_classes": ";".join(row["vacuous_classes"])}
                )
    if object_file:
        _object_level_eval(pred_dir, gt_dir, Path(object_file))
    click.echo(f"evaluated {len(scene_ids)} scene(s) -> {report_file}")


def _object_level_eval(pred_dir: Path, gt_dir: Path, out_file: Path) -> None:
    gt_coco_path = gt_dir / "gt_boxes.json"
    if not gt_coco_path.exists():
        raise DataError(f"object-level eval needs {gt_coco_path}")
    gt_raw = json.loads(gt_coco_path.read_text())
    gt_per_scene: dict[str, list[tuple[BoundingBox, bool]]] = {}
    id_to_scene = {
        img["id"]: img["file_name"][: -len("_pre_disaster.png")]
        for img in gt_raw["images"]
    }
    for ann in gt_raw["annotations"]:
        x, y, w, h = ann["bbox"]
        gt_per_scene.setdefault(id_to_scene[ann["image_id"]], []).append(
            (BoundingBox(x=x, y=y, h=h, w=w), bool(ann.get("damaged", False)))
        )
    pred_per_scene: dict[str, list[tuple[BoundingBox, float, int | None]]] = {}
    cls_path = pred_dir / "classifications.json"
    boxes_path = pred_dir / "boxes.json"
    if cls_path.exists():
        payload = json.loads(cls_path.read_text())
        for scene in payload["scenes"]:
            pred_per_scene[scene["scene_id"]] = [
                (
                    BoundingBox(
                        x=b["box"]["x"], y=b["box"]["y"], h=b["box"]["h"], w=b["box"]["w"]
                    ),
                    float(b["logit"]),
                    int(b["label"]),
                )
                for b in scene["buildings"]
            ]
    elif boxes_path.exists():
        for scene_id, prop in dataio.import_coco(boxes_path):
            pred_per_scene.setdefault(scene_id, []).append(
                (prop.box, prop.logit, None)
            )
    else:
        raise DataError(
            f"object-level eval needs classifications.json or boxes.json under {pred_dir}"
        )
    scene_ids = sorted(set(gt_per_scene) | set(pred_per_scene))
    preds_by_image = [
        [(box, logit) for box, logit, _ in pred_per_scene.get(sid, [])]
        for sid in scene_ids
    ]
    gts_by_image = [
        [box for box, _ in gt_per_scene.get(sid, [])] for sid in scene_ids
    ]
    ap = metrics.average_precision(preds_by_image, gts_by_image)
    tp = 0
    n_pred = sum(len(p) for p in preds_by_image)
    n_gt = sum(len(g) for g in gts_by_image)
    correct = 0
    matched = 0
    for sid, preds, gts in zip(scene_ids, preds_by_image, gts_by_image):
        hits = metrics.greedy_match(
            [b for b, _ in preds], [s for _, s in preds], gts, iou_thr=0.5
        )
        tp += sum(m is not None for m in hits)
        labeled = [
            (box, logit, label)
            for box, logit, label in pred_per_scene.get(sid, [])
            if label is not None
        ]
        if labeled:
            acc, m = metrics.damage_label_accuracy(
                labeled, gt_per_scene.get(sid, []), iou_thr=0.5
            )
            if m and acc is not None:
                correct += round(acc * m)
                matched += m
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    out = ap.to_json()
    out.update(
        {
            "iou_threshold": 0.5,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "pred_count": n_pred,
            "gt_count": n_gt,
            "damage_label_accuracy": (correct / matched) if matched else None,
            "damage_labels_matched": matched,
        }
    )
    _dump_json(out_file, out)


@cli.command()
@click.option("--spec", "spec_file", type=click.Path(), required=True)
@click.option("--count", type=int, required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth(spec_file, count, out_dir):
    """Generate a deterministic synthetic dataset with mock-world files."""
    spec = dataio.SyntheticSceneSpec.from_file(spec_file)
    manifest = dataio.write_synth_dataset(spec, count, out_dir)
    click.echo(f"wrote {len(manifest.scenes)} scene(s) -> {out_dir}")


@cli.command("serve-mock")
@click.option("--world", "world_path", type=click.Path(), required=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_mock(world_path, port, host):
    """Serve the mock backend over the /v1/* protocol."""
    from .mockserver import serve

    click.echo(f"serving mock backend on {host}:{port}")
    serve(world_path, host=host, port=port)


@cli.command()
@click.option("--pair", "pair_dir", type=click.Path(), required=True)
@click.option("--mask", "mask_file", type=click.Path(), required=True)
@click.option("--out", "out_file", type=click.Path(), required=True)
@click.option("--scene", "scene_id", default=None)
def render(pair_dir, mask_file, out_file, scene_id):
    """Overlay an evaluation mask on the post-disaster frame."""
    manifest = dataio.load_manifest(pair_dir)
    if scene_id is None:
        if len(manifest.scenes) != 1:
            raise DataError(
                f"{pair_dir} holds {len(manifest.scenes)} scenes; pass --scene"
            )
        record = manifest.scenes[0]
    else:
        matches = [r for r in manifest.scenes if r.scene_id == scene_id]
        if not matches:
            raise DataError(f"scene {scene_id} not found under {pair_dir}")
        record = matches[0]
    post = dataio.load_image(record.post_path)
    mask = load_mask_png(mask_file, max_value=2)
    overlay = dataio.render_overlay(post, mask)
    dataio.save_image(out_file, overlay)
    click.echo(f"rendered {record.scene_id} -> {out_file}")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(2)
    except ScenesFailedError as exc:
        click.echo(f"run failed: {exc}", err=True)
        if any(isinstance(e, BackendError) for e in exc.failures.values()):
            sys.exit(4)
        if any(isinstance(e, DataError) for e in exc.failures.values()):
            sys.exit(3)
        sys.exit(1)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(4)
    except Exception:
        traceback.print_exc()
        sys.exit(1)


if __name__ == "__main__":
    main()
