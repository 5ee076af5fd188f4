"""Run configuration for the command-line pipeline.

A run config is one JSON document. Every field is written out explicitly
after loading (see :meth:`RunConfig.resolved`), so a saved config fully
determines a run. One master ``seed`` fans out to per-component seeds via
:func:`derive_seed`; any component seed can be pinned under ``seeds``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cost import Budget
from .datasets import Dataset, load_idx, split_per_class, standardize, synth_blobs
from .search import EAConfig
from .slimnet import SupernetSpec, desk_spec, ratio_grid
from .training import TrainConfig

COMPONENTS = ("data", "train", "retrain", "search", "manager", "analysis")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


def derive_seed(master: int, component: str) -> int:
    """First 4 bytes (big-endian) of sha256 of ``"<master>:<component>"``."""
    digest = hashlib.sha256(f"{master}:{component}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing field '{key}'")
    return d[key]


def build_spec(desc: dict) -> SupernetSpec:
    """``{"preset": "desk", ...}`` or an explicit layer list."""
    desc = dict(desc)
    try:
        if "preset" in desc:
            preset = desc.pop("preset")
            if preset != "desk":
                raise ConfigError(f"spec: unknown preset {preset!r}")
            if isinstance(desc.get("ratios"), dict):
                desc["ratios"] = ratio_grid(**desc["ratios"])
            return desk_spec(**desc)
        return SupernetSpec.from_dict(desc)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"spec: {exc}") from exc


@dataclass
class DataSplit:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    n_classes: int


def load_dataset(desc: dict, seed: int) -> DataSplit:
    kind = _require(desc, "kind", "dataset")
    per_class = _require(desc, "per_class_val", "dataset")
    if kind == "synth":
        ds = synth_blobs(_require(desc, "n", "dataset"), _require(desc, "size", "dataset"),
                         _require(desc, "k", "dataset"), seed, noise=desc.get("noise", 0.5),
                         jitter=desc.get("jitter", 0), blobs=desc.get("blobs", 2))
    elif kind == "idx":
        images = _require(desc, "images", "dataset")
        labels = _require(desc, "labels", "dataset")
        for name, path in (("images", images), ("labels", labels)):
            if not Path(path).exists():
                raise ConfigError(f"dataset.{name}: file not found: {path}")
        ds = load_idx(images, labels, desc.get("k"))
    else:
        raise ConfigError(f"dataset: unknown kind {kind!r}")
    ds: Dataset = split_per_class(ds, per_class, seed)
    (xt, yt), (xv, yv) = ds.train, ds.val
    if desc.get("standardize", True):
        (xt, xv), _ = standardize(xt, xv)
    return DataSplit(xt, yt, xv, yv, ds.n_classes)


@dataclass
class RunConfig:
    spec: dict
    dataset: dict
    train: dict
    retrain: dict
    stage_ea: dict
    manager_ea: dict
    seed: int
    output_dir: str
    budget: dict | None = None
    search_batch: int = 256
    threads: int = 1
    seeds: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("spec", "dataset", "train", "retrain", "stage_ea", "manager_ea", "seed", "output_dir"):
            _require(d, key, "config")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        bad = set(self.seeds) - set(COMPONENTS)
        if bad:
            raise ConfigError(f"seeds: unknown components {sorted(bad)}")
        if self.threads < 1 or self.search_batch < 1:
            raise ConfigError("threads and search_batch must be positive")
        if self.budget is not None:
            self.budget_obj()
        self.spec_obj()
        self.train_cfg()
        self.retrain_cfg()
        self.stage_cfg()
        self.manager_cfg()

    def component_seed(self, name: str) -> int:
        if name in self.seeds:
            return int(self.seeds[name])
        return derive_seed(self.seed, name)

    def spec_obj(self) -> SupernetSpec:
        return build_spec(self.spec)

    def _train(self, d: dict, name: str) -> TrainConfig:
        try:
            return TrainConfig.from_dict({**d, "seed": self.component_seed(name)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from exc

    def train_cfg(self) -> TrainConfig:
        return self._train(self.train, "train")

    def retrain_cfg(self) -> TrainConfig:
        return self._train(self.retrain, "retrain")

    def _ea(self, d: dict, name: str) -> EAConfig:
        try:
            return EAConfig.from_dict({**d, "seed": self.component_seed(name)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from exc

    def stage_cfg(self) -> EAConfig:
        return self._ea(self.stage_ea, "search")

    def manager_cfg(self) -> EAConfig:
        return self._ea(self.manager_ea, "manager")

    def budget_obj(self) -> Budget:
        if self.budget is None:
            raise ConfigError("no budget given (config 'budget' or --budget-macs/--budget-ms)")
        try:
            return Budget(_require(self.budget, "kind", "budget"), float(_require(self.budget, "value", "budget")))
        except ValueError as exc:
            raise ConfigError(f"budget: {exc}") from exc

    def data(self) -> DataSplit:
        try:
            return load_dataset(self.dataset, self.component_seed("data"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"dataset: {exc}") from exc

    def resolved(self) -> dict:
        """Every field explicit, including derived seeds and EA/train defaults."""
        return {
            "spec": self.spec_obj().to_dict(),
            "dataset": dict(self.dataset),
            "train": self.train_cfg().to_dict(),
            "retrain": self.retrain_cfg().to_dict(),
            "stage_ea": self.stage_cfg().to_dict(),
            "manager_ea": self.manager_cfg().to_dict(),
            "seed": self.seed,
            "seeds": {c: self.component_seed(c) for c in COMPONENTS},
            "output_dir": self.output_dir,
            "budget": self.budget,
            "search_batch": self.search_batch,
            "threads": self.threads,
        }
