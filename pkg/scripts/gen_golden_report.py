#!/usr/bin/env python3
"""Calibration run behind tests/golden/end_to_end_report.json.

Reproduces the acceptance fidelity dataset (seed 5000, jitter 2px,
logit sigma 0.05, 20 scenes), runs assess + eval through the CLI, and
freezes the observed metrics. The acceptance suite asserts both the
frozen thresholds (F1 >= 0.90, label accuracy >= 0.95) and exact
equality with this report.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from click.testing import CliRunner

from damagescan.cli import cli

GOLDEN = Path(__file__).parent.parent / "tests" / "golden"


def main() -> None:
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        spec_file = tmp_path / "spec.json"
        spec_file.write_text(
            json.dumps(
                {
                    "seed": 5000,
                    "building_count": [5, 5],
                    "distractor_count": [2, 2],
                    "distractor_kinds": ["tennis court", "parking lot"],
                    "damage_probability": 0.5,
                    "noise": {"jitter_sigma": 2.0, "logit_sigma": 0.05},
                }
            )
        )
        data_dir = tmp_path / "data"
        out_dir = tmp_path / "run"
        for args in (
            ["synth", "--spec", str(spec_file), "--count", "20", "--out", str(data_dir)],
            ["assess", "--data", str(data_dir), "--out", str(out_dir), "--jobs", "4"],
            [
                "eval",
                "--pred", str(out_dir),
                "--gt", str(data_dir),
                "--report", str(tmp_path / "report.json"),
                "--object-level", str(tmp_path / "objects.json"),
            ],
        ):
            result = runner.invoke(cli, args, catch_exceptions=False)
            assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "report.json").read_text())
        objects = json.loads((tmp_path / "objects.json").read_text())
    golden = {
        "dataset": {
            "seed": 5000,
            "scenes": 20,
            "jitter_sigma": 2.0,
            "logit_sigma": 0.05,
        },
        "binary_f1": report["binary"]["F1"],
        "binary_iou": report["binary"]["IoU"],
        "pixel_micro_mF1": report["pixel"]["micro"]["mF1"],
        "pixel_micro_mIoU": report["pixel"]["micro"]["mIoU"],
        "damage_label_accuracy": objects["damage_label_accuracy"],
        "damage_labels_matched": objects["damage_labels_matched"],
        "object_precision": objects["precision"],
        "object_recall": objects["recall"],
    }
    GOLDEN.mkdir(parents=True, exist_ok=True)
    (GOLDEN / "end_to_end_report.json").write_text(
        json.dumps(golden, indent=2, sort_keys=True) + "\n"
    )
    print(json.dumps(golden, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
