"""Pipeline configuration loaded from a JSON file."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .synth import SynthScenario
from .sweep import SweepSpec
from .trainer import ModelConfig


@dataclass
class Paths:
    """Input locations; relative paths resolve against the output directory."""

    parcels: str = "parcels.geojson"
    images: str = "images.csv"
    observations: str = "observations.csv"
    embeddings: str = "embeddings.csv"
    other: str = "other.csv"
    generalizations: str | None = None
    image_root: str = "."


@dataclass
class PipelineConfig:
    crs: str = "EPSG:28992"
    offset: float = 30.0
    stationary_eps: float = 1.0
    # None: same UTC calendar day; otherwise max |dt| in seconds
    join_window: float | None = None
    ratio_normalization: str = "fraction_of_max"
    edge_threshold: float = 0.95
    quota: int = 400
    min_images: int = 400
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    exclude_classes: tuple[str, ...] = ()
    crop_method: str = "sum"
    seed: int = 0
    jobs: int = 1
    sweep: SweepSpec = field(default_factory=SweepSpec)
    train: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthScenario = field(default_factory=SynthScenario)
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self):
        for name in ("offset", "stationary_eps", "edge_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.quota < 1 or self.min_images < 1:
            raise ValueError("quota and min_images must be positive")
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1) > 1e-9:
            raise ValueError("fractions must be three values summing to 1")
        if self.ratio_normalization not in ("fraction_of_max", "max_over_distance"):
            raise ValueError("ratio_normalization must be fraction_of_max or max_over_distance")
        if self.crop_method not in ("sum", "argmax"):
            raise ValueError("crop_method must be sum or argmax")
        self.exclude_classes = tuple(self.exclude_classes)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "sweep" in d:
            d["sweep"] = SweepSpec.from_dict(d["sweep"])
        if "train" in d:
            d["train"] = ModelConfig.from_dict(d["train"])
        if "synth" in d:
            d["synth"] = SynthScenario.from_dict(d["synth"])
        if "paths" in d:
            d["paths"] = Paths(**d["paths"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep"] = self.sweep.to_dict()
        d["train"] = self.train.to_dict()
        d["fractions"] = list(self.fractions)
        d["exclude_classes"] = list(self.exclude_classes)
        return d

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
