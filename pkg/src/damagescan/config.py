"""Run configuration: every pipeline threshold in one JSON-loadable record.

Every field is optional in the file; omitted fields take the defaults
below. Completed runs echo the resolved configuration into their output
directory so results stay attributable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .proposals import FilterConfig, FilterPromptList, default_filter_prompts
from .scoring import (
    DEFAULT_NEGATIVE_PROMPTS,
    DEFAULT_POSITIVE_PROMPTS,
    PromptEnsemble,
)


@dataclass
class PipelineConfig:
    box_threshold: float = 0.35
    damage_threshold: float = 0.0
    epsilon: float = 0.01
    change_weight: float = 0.5
    post_weight: float = 0.5
    positive_prompts: list[str] = field(
        default_factory=lambda: list(DEFAULT_POSITIVE_PROMPTS)
    )
    negative_prompts: list[str] = field(
        default_factory=lambda: list(DEFAULT_NEGATIVE_PROMPTS)
    )
    filter_prompts: list[str] = field(default_factory=default_filter_prompts)
    filters: FilterConfig = field(default_factory=FilterConfig)
    scales: list[float] = field(default_factory=lambda: [1.0, 0.5])
    pad: float = 10
    min_side: float = 50
    confidence_fraction: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.box_threshold <= 1.0:
            raise ConfigError(f"box_threshold outside [0,1]: {self.box_threshold}")
        if self.epsilon < 0:
            raise ConfigError(f"negative epsilon: {self.epsilon}")
        if abs(self.change_weight + self.post_weight - 1.0) > 1e-9:
            raise ConfigError(
                f"ensemble weights must sum to 1, got "
                f"{self.change_weight} + {self.post_weight}"
            )
        if not self.positive_prompts or not self.negative_prompts:
            raise ConfigError("prompt sets must be non-empty")
        if len(self.filter_prompts) < 2:
            raise ConfigError("filter_prompts needs at least two entries")
        if self.filters.box_threshold > self.box_threshold:
            raise ConfigError(
                f"proposal threshold {self.filters.box_threshold} must not exceed "
                f"the baseline threshold {self.box_threshold}"
            )
        if not self.scales:
            raise ConfigError("scales must be non-empty")
        for s in self.scales:
            if not 0.0 < s <= 1.0:
                raise ConfigError(f"scale outside (0,1]: {s}")
        if sorted(self.scales, reverse=True) != list(self.scales) or len(
            set(self.scales)
        ) != len(self.scales):
            raise ConfigError("scales must be strictly decreasing")
        if not 0.0 < self.confidence_fraction <= 1.0:
            raise ConfigError(
                f"confidence_fraction outside (0,1]: {self.confidence_fraction}"
            )
        if self.pad < 0 or self.min_side < 1:
            raise ConfigError("pad must be >= 0 and min_side >= 1")

    @property
    def prompt_ensemble(self) -> PromptEnsemble:
        return PromptEnsemble(
            positive=list(self.positive_prompts), negative=list(self.negative_prompts)
        )

    @property
    def filter_prompt_list(self) -> FilterPromptList:
        return FilterPromptList(prompts=list(self.filter_prompts))

    def to_json(self) -> dict:
        return {
            "box_threshold": self.box_threshold,
            "damage_threshold": self.damage_threshold,
            "epsilon": self.epsilon,
            "change_weight": self.change_weight,
            "post_weight": self.post_weight,
            "positive_prompts": list(self.positive_prompts),
            "negative_prompts": list(self.negative_prompts),
            "filter_prompts": list(self.filter_prompts),
            "filters": self.filters.to_json(),
            "scales": list(self.scales),
            "pad": self.pad,
            "min_side": self.min_side,
            "confidence_fraction": self.confidence_fraction,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        if not isinstance(obj, dict):
            raise ConfigError(f"config must be a JSON object, got {type(obj).__name__}")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(obj)
        if "filters" in kwargs:
            filters = kwargs["filters"]
            if not isinstance(filters, dict):
                raise ConfigError("filters must be a JSON object")
            filter_known = set(FilterConfig.__dataclass_fields__)
            filter_unknown = set(filters) - filter_known
            if filter_unknown:
                raise ConfigError(f"unknown filter fields: {sorted(filter_unknown)}")
            try:
                kwargs["filters"] = FilterConfig(**filters)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_json(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    """Config from a file, or all defaults when no file is given."""
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_file(path)


def write_effective_config(config: PipelineConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir) / "effective_config.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n")
    return out
