"""Service configuration: which checkpoints back which protocol roles."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

ROLES = ("detector", "segmenter", "scorer")


class SidecarConfigError(ValueError):
    pass


@dataclass
class RoleConfig:
    checkpoint: str


@dataclass
class SidecarConfig:
    detector: RoleConfig | None = None
    segmenter: RoleConfig | None = None
    scorer: RoleConfig | None = None
    device: str = "cpu"
    batch_size: int = 8
    max_image_side: int = 4096

    def __post_init__(self):
        if not any((self.detector, self.segmenter, self.scorer)):
            raise SidecarConfigError("configure at least one role")
        if self.batch_size < 1:
            raise SidecarConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_image_side < 1:
            raise SidecarConfigError(
                f"max_image_side must be >= 1, got {self.max_image_side}"
            )

    @property
    def configured_roles(self) -> list[str]:
        return [role for role in ROLES if getattr(self, role) is not None]

    @classmethod
    def from_json(cls, obj: dict) -> "SidecarConfig":
        known = {"device", "batch_size", "max_image_side", *ROLES}
        unknown = set(obj) - known
        if unknown:
            raise SidecarConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs: dict = {
            key: obj[key]
            for key in ("device", "batch_size", "max_image_side")
            if key in obj
        }
        for role in ROLES:
            if role in obj and obj[role] is not None:
                entry = obj[role]
                if not isinstance(entry, dict) or "checkpoint" not in entry:
                    raise SidecarConfigError(
                        f"{role} must be an object with a 'checkpoint' field"
                    )
                kwargs[role] = RoleConfig(checkpoint=str(entry["checkpoint"]))
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SidecarConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise SidecarConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SidecarConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_json(obj)
