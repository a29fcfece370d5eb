"""Experiment configuration: a flat TOML file of key = value pairs.

Unknown keys and nested tables are rejected outright; silent typos are the
main reproducibility hazard.  The full schema (with defaults) is the
``SCHEMA`` table below and is documented in the README.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .growth import GrowthConfig, TrainConfig
from .mixture import LossWeights

_DATASETS = ("blobs", "moons", "idx", "csv")


def _positive(v) -> bool:
    return v > 0


def _nonneg(v) -> bool:
    return v >= 0


def _fraction(v) -> bool:
    return 0 <= v <= 1


# key -> (python type, default, validator or None)
SCHEMA: dict[str, tuple] = {
    "dataset": (str, "blobs", lambda v: v in _DATASETS),
    "seed": (int, 0, _nonneg),
    "out_dir": (str, ".", None),
    # blobs
    "blobs_k": (int, 4, _positive),
    "blobs_n": (int, 2000, _positive),
    "blobs_std": (float, 0.5, _positive),
    "blobs_box": (list, [-5.0, 5.0], lambda v: len(v) == 2 and v[0] < v[1]),
    # moons
    "moons_n": (int, 1000, lambda v: v >= 2),
    "moons_noise": (float, 0.05, _nonneg),
    # idx
    "idx_images": (str, "", None),
    "idx_labels": (str, "", None),
    "idx_subsample": (int, 0, _nonneg),
    # csv
    "csv_path": (str, "", None),
    "normalize": (bool, False, None),
    # model
    "use_codec": (bool, True, None),
    "hidden": (list, [100], lambda v: all(isinstance(w, int) and w >= 1 for w in v)),
    "latent": (int, 2, _positive),
    "init_m": (int, 1, _positive),
    "init_strategy": (str, "data-mean",
                      lambda v: v in ("zeros", "data-mean", "random-normal")),
    "init_scale": (float, 1.0, _positive),
    "centroid_decay": (float, 0.9, _fraction),
    # loss weights
    "beta_kl": (float, 1.0, _nonneg),
    "lambda_r1": (float, 0.1, _nonneg),
    "lambda_r2": (float, 0.1, _nonneg),
    "lambda_ce": (float, 0.0, _nonneg),
    # training
    "lr": (float, 1e-3, _positive),
    "max_epochs": (int, 500, _nonneg),
    "patience": (int, 50, _positive),
    "batch_size": (int, 128, _positive),
    "sample": (bool, True, None),
    "warmup_epochs": (int, 0, _nonneg),
    "train_codec": (bool, True, None),
    # growth
    "grow": (bool, True, None),
    "epsilon": (float, 1e-4, _positive),
    "delta": (float, 0.2, _nonneg),
    "eta": (float, 0.05, _positive),
    "max_iterations": (int, 30, _positive),
    # continual
    "replay_ratio": (float, 1.0, _nonneg),
    "task_scheme": (str, "split-pairs", lambda v: v in ("split-pairs", "groups")),
    "task_groups": (list, [], None),
    # eval
    "checkpoint": (str, "", None),
}


@dataclass
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __getattr__(self, key: str):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key)

    def train_cfg(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, max_epochs=self.max_epochs,
                           patience=self.patience, batch_size=self.batch_size,
                           sample=self.sample, warmup_epochs=self.warmup_epochs,
                           train_codec=self.train_codec)

    def growth_cfg(self) -> GrowthConfig:
        return GrowthConfig(epsilon=self.epsilon, delta=self.delta,
                            eta=self.eta, max_iterations=self.max_iterations)

    def loss_weights(self) -> LossWeights:
        return LossWeights(beta_kl=self.beta_kl, lambda_r1=self.lambda_r1,
                           lambda_r2=self.lambda_r2, lambda_ce=self.lambda_ce)


def _coerce(key: str, value, want: type):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is not list and isinstance(value, bool) != (want is bool):
        raise ConfigError(f"config key {key!r}: expected {want.__name__}, "
                          f"got {type(value).__name__}")
    if not isinstance(value, want):
        raise ConfigError(f"config key {key!r}: expected {want.__name__}, "
                          f"got {type(value).__name__}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from e
    values = {k: d for k, (_, d, _) in SCHEMA.items()}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"nested table {key!r}: config must be flat")
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        want, _, check = SCHEMA[key]
        value = _coerce(key, value, want)
        if check is not None and not check(value):
            hint = ""
            if key == "dataset":
                hint = f" (valid names: {', '.join(_DATASETS)})"
            elif key == "init_strategy":
                hint = " (valid: zeros, data-mean, random-normal)"
            elif key == "task_scheme":
                hint = " (valid: split-pairs, groups)"
            raise ConfigError(f"config key {key!r}: invalid value {value!r}{hint}")
        values[key] = value
    return ExperimentConfig(values)


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config file; ``overrides`` wins over file values."""
    try:
        with open(path) as f:
            cfg = parse_config(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from e
    if overrides:
        for k, v in overrides.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            cfg.values[k] = v
    validate_paths(cfg)
    return cfg


def validate_paths(cfg: ExperimentConfig) -> None:
    if cfg.dataset == "idx":
        for key in ("idx_images", "idx_labels"):
            p = cfg.values[key]
            if not p:
                raise ConfigError(f"dataset 'idx' requires {key}")
            if not os.path.exists(p):
                raise ConfigError(f"{key}: no such file {p!r}")
    if cfg.dataset == "csv":
        if not cfg.csv_path:
            raise ConfigError("dataset 'csv' requires csv_path")
        if not os.path.exists(cfg.csv_path):
            raise ConfigError(f"csv_path: no such file {cfg.csv_path!r}")


def worker_cap() -> int:
    """Worker-thread cap from GMAT_THREADS (>= 1); computation is currently
    single-threaded, so this only validates and documents the setting."""
    raw = os.environ.get("GMAT_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"GMAT_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ConfigError("GMAT_THREADS must be >= 1")
    return cap
