"""Experiment configuration as a strict JSON document.

Layout::

    {
      "scene":  {SceneConfig fields},
      "split":  {"n": 200, "m": 2000, "t": 500, "seed": 0},
      "train":  {TrainConfig fields except z_dim/hidden; "estimator": {"s_z": 3, "s_h": 3}},
      "dims":   {"z_dim": 8, "hidden": 256, "d_dim": optional, "h_dim": optional},
      "output_dir": "runs/example"
    }

Every section is optional and falls back to defaults; unknown keys anywhere
are rejected.  ``d_dim`` and ``h_dim`` are derived from the scene and only
checked when present.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .data import SceneConfig
from .objectives import EstimatorConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    n: int = 200
    m: int = 2000
    t: int = 500
    seed: int = 0


@dataclass(frozen=True)
class DimsConfig:
    z_dim: int = 8
    hidden: int = 256
    d_dim: int | None = None
    h_dim: int | None = None


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"z_dim", "hidden"}


def _strict(cls, data, where: str, allowed=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)} if allowed is None else allowed
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return dict(data)


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"

    @property
    def dims(self) -> DimsConfig:
        return DimsConfig(self.train.z_dim, self.train.hidden, self.scene.d_dim, self.scene.h_dim)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = _strict(cls, doc, "config", {"scene", "split", "train", "dims", "output_dir"})
        scene = _build(SceneConfig, _strict(SceneConfig, doc.get("scene", {}), "scene"), "scene")
        split = _build(SplitConfig, _strict(SplitConfig, doc.get("split", {}), "split"), "split")
        dims = _build(DimsConfig, _strict(DimsConfig, doc.get("dims", {}), "dims"), "dims")
        if dims.d_dim is not None and dims.d_dim != scene.d_dim:
            raise ConfigError(f"dims.d_dim={dims.d_dim} but the scene has {scene.d_dim} pixels")
        if dims.h_dim is not None and dims.h_dim != scene.h_dim:
            raise ConfigError(f"dims.h_dim={dims.h_dim} but the scene has {scene.h_dim} label values")
        train = _strict(TrainConfig, doc.get("train", {}), "train", _TRAIN_KEYS)
        if "estimator" in train:
            est = _strict(EstimatorConfig, train["estimator"], "train.estimator")
            train["estimator"] = _build(EstimatorConfig, est, "train.estimator")
        train = _build(TrainConfig, {**train, "z_dim": dims.z_dim, "hidden": dims.hidden}, "train")
        output_dir = doc.get("output_dir", cls.output_dir)
        if not isinstance(output_dir, str):
            raise ConfigError("output_dir must be a string")
        return cls(scene, split, train, output_dir)

    def to_dict(self) -> dict:
        train = asdict(self.train)
        dims = {"z_dim": train.pop("z_dim"), "hidden": train.pop("hidden"),
                "d_dim": self.scene.d_dim, "h_dim": self.scene.h_dim}
        return {
            "scene": asdict(self.scene),
            "split": asdict(self.split),
            "train": train,
            "dims": dims,
            "output_dir": self.output_dir,
        }

    def with_overrides(self, seed: int | None = None, mode: str | None = None, out: str | None = None):
        train = self.train
        if seed is not None:
            train = replace(train, seed=seed)
        if mode is not None:
            train = replace(train, mode=mode)
        return replace(self, train=train, output_dir=self.output_dir if out is None else out)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
