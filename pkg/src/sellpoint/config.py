"""Run configuration: one JSON document with per-command sections, strict
unknown-key rejection, and dotted-path command-line overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .network import NetworkDims
from .serving import ExhibitionConfig
from .training import TrainingConfig
from .world import WorldConfig


@dataclass(frozen=True)
class DataVolumes:
    sf_impressions: int = 20000
    ad_sessions: int = 12000

    def __post_init__(self):
        if self.sf_impressions < 1 or self.ad_sessions < 1:
            raise ValueError("dataset volumes must be positive")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "basic"
    dims: NetworkDims = NetworkDims()


@dataclass(frozen=True)
class PathsConfig:
    out: str = "runs/out"
    data: str | None = None
    checkpoint: str | None = None
    checkpoints: Mapping[str, str] = field(default_factory=dict)
    pages: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    world: WorldConfig = WorldConfig()
    data: DataVolumes = DataVolumes()
    training: TrainingConfig = TrainingConfig()
    model: ModelConfig = ModelConfig()
    exhibition: ExhibitionConfig = ExhibitionConfig()
    paths: PathsConfig = PathsConfig()


_NESTED = {
    "world": WorldConfig,
    "data": DataVolumes,
    "training": TrainingConfig,
    "model": ModelConfig,
    "exhibition": ExhibitionConfig,
    "paths": PathsConfig,
}


def _build_dataclass(cls, payload: Mapping[str, Any], path: str):
    if not isinstance(payload, Mapping):
        raise ValueError(f"config section {path!r} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        if key not in names:
            raise ValueError(f"unknown config key {path + '.' + key!r}")
        if key == "dims" and cls is ModelConfig:
            value = _build_dataclass(NetworkDims, value, path + ".dims")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid config section {path!r}: {exc}") from exc


def config_from_dict(doc: Mapping[str, Any]) -> RunConfig:
    """Parse a config document; unknown keys are rejected with their path.

    The top-level seed flows into the world and training sections unless those
    sections set their own seed explicitly.
    """
    known = {"seed"} | set(_NESTED)
    for key in doc:
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ValueError("config key 'seed' must be an integer")
    sections: dict[str, Any] = {"seed": seed}
    for name, cls in _NESTED.items():
        payload = dict(doc.get(name, {}))
        if name in ("world", "training") and "seed" not in payload:
            payload["seed"] = seed
        sections[name] = _build_dataclass(cls, payload, name)
    return RunConfig(**sections)


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    doc: dict[str, Any] = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    for item in overrides or []:
        apply_override(doc, item)
    return config_from_dict(doc)


def apply_override(doc: dict, item: str) -> None:
    """Apply one `key.path=value` override; values parse as JSON, else string."""
    if "=" not in item:
        raise ValueError(f"override {item!r} must look like key.path=value")
    key_path, raw = item.split("=", 1)
    keys = key_path.strip().split(".")
    if not all(keys):
        raise ValueError(f"override {item!r} has an empty key segment")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"override {item!r} collides with a non-object value")
    node[keys[-1]] = value


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_sha256(cfg: RunConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()
