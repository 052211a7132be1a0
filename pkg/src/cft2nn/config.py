"""Experiment configuration: one structured file, defaults from the original setup."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .filtration import KINDS
from .model import ModelConfig

log = logging.getLogger(__name__)

# Sections not part of the hash: where results land and how many workers run.
_UNHASHED = ("output_dir", "workers")


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "MUTAG"  # a TUDataset directory under root, or "synthetic"
    root: str = "data"
    ratios: tuple = (0.5, 0.09, 0.21, 0.2)  # train, valid, calib, test
    seed: int = 0
    synthetic_graphs: int = 40


@dataclass(frozen=True)
class TopologyConfig:
    filtrations: tuple = KINDS
    resolution: int = 50
    bandwidth_frac: float = 0.05
    pad_frac: float = 0.05
    essential_death: str = "max"


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.1
    k_nn: int = 80
    measure: str = "both"  # topological, embedding or both

    def measures(self) -> tuple:
        return ("topological", "embedding") if self.measure == "both" else (self.measure,)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    conformal: ConformalConfig = field(default_factory=ConformalConfig)
    output_dir: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        c, d, t = self.conformal, self.dataset, self.topology
        if not 0 < c.alpha < 1:
            raise ConfigError(f"conformal.alpha must be in (0, 1), got {c.alpha}")
        if c.k_nn < 1:
            raise ConfigError("conformal.k_nn must be positive")
        if c.measure not in ("topological", "embedding", "both"):
            raise ConfigError(f"conformal.measure {c.measure!r} not in topological/embedding/both")
        if len(d.ratios) != 4 or abs(sum(d.ratios) - 1) > 1e-9 or min(d.ratios) <= 0:
            raise ConfigError("dataset.ratios must be four positive numbers summing to 1")
        if t.resolution < 1:
            raise ConfigError("topology.resolution must be positive")
        if t.essential_death != "max":
            raise ConfigError("topology.essential_death supports only 'max'")
        unknown = set(t.filtrations) - set(KINDS)
        if unknown or not t.filtrations:
            raise ConfigError(f"unknown filtrations {sorted(unknown)}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        sections = {"dataset": DatasetConfig, "topology": TopologyConfig, "model": ModelConfig,
                    "conformal": ConformalConfig}
        kwargs = {}
        for key, val in d.items():
            if key in sections:
                kwargs[key] = _section(sections[key], key, val)
            elif key in _UNHASHED:
                kwargs[key] = val
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    def hash(self) -> str:
        d = self.to_dict()
        for k in _UNHASHED:
            d.pop(k)
        return canonical_hash(d)

    def feature_hash(self) -> str:
        """Hash of the parts that determine the feature cache."""
        d = self.to_dict()
        return canonical_hash({"dataset": d["dataset"], "topology": d["topology"]})

    def override(self, dotted: str, value) -> "ExperimentConfig":
        d = self.to_dict()
        node, *path = dotted.split(".")
        target = d
        keys = [node, *path]
        for k in keys[:-1]:
            if not isinstance(target.get(k), dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            target = target[k]
        if keys[-1] not in target:
            raise ConfigError(f"unknown config key {dotted!r}")
        old = target[keys[-1]]
        target[keys[-1]] = value
        log.info("override %s=%r (was %r)", dotted, value, old)
        return ExperimentConfig.from_dict(d)


def _section(cls, name, val):
    if not isinstance(val, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(val) - names
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    try:
        if cls is ModelConfig:
            return ModelConfig.from_dict(val)
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in val.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from None


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path=None) -> ExperimentConfig:
    """JSON or YAML by extension; no path means all defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from None
    return ExperimentConfig.from_dict(data or {})


def parse_value(text: str):
    """Parse a --set value as YAML scalar/list, e.g. ``0.05`` or ``[8, 8]``."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text
