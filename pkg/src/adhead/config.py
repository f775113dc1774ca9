"""Training/loss configuration and the key=value config file parser.

The config file is flat ``key = value`` text (``#`` comments, blank lines
allowed). Keys map 1:1 onto TrainConfig/LossConfig fields; unknown keys are
rejected with the offending key and line number.
"""

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError

__all__ = ["LossConfig", "TrainConfig", "parse_kv_file", "load_train_config"]


@dataclass(frozen=True)
class LossConfig:
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_eps: float = 1.0
    lambda_cm: float = 1.0
    lambda_aacm: float = 1.0
    # realization of the calibration activation: per-patch "sigmoid" or
    # "patch_softmax" (softmax over all patches of one image)
    aacm_activation: str = "sigmoid"

    def validate(self):
        if self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ConfigError(f"focal_alpha must be in (0,1), got {self.focal_alpha}")
        if self.dice_eps <= 0:
            raise ConfigError(f"dice_eps must be > 0, got {self.dice_eps}")
        if self.lambda_cm < 0 or self.lambda_aacm < 0:
            raise ConfigError("lambda_cm and lambda_aacm must be >= 0")
        if self.aacm_activation not in ("sigmoid", "patch_softmax"):
            raise ConfigError(
                f"aacm_activation must be 'sigmoid' or 'patch_softmax', "
                f"got {self.aacm_activation!r}"
            )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    temperature: float = 0.07
    layer_indices: tuple = (6, 12, 18, 24)
    d_e: int = 768
    bottleneck_ratio: int = 4
    leaky_slope: float = 0.01
    seed: int = 0
    smoothing: bool = False
    smoothing_sigma: float = 4.0
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name, b in (("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)):
            if not 0.0 < b < 1.0:
                raise ConfigError(f"{name} must be in (0,1), got {b}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not self.layer_indices:
            raise ConfigError("layer_indices must be nonempty")
        if list(self.layer_indices) != sorted(set(self.layer_indices)):
            raise ConfigError(f"layer_indices must be strictly increasing, got {self.layer_indices}")
        if self.d_e < 1:
            raise ConfigError(f"d_e must be >= 1, got {self.d_e}")
        if self.bottleneck_ratio < 1:
            raise ConfigError(f"bottleneck_ratio must be >= 1, got {self.bottleneck_ratio}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in (0,1), got {self.leaky_slope}")
        self.loss.validate()

    def hidden_dim(self, d_in):
        return max(1, math.ceil(d_in / self.bottleneck_ratio))


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

# key -> (target, caster); target "loss" routes into LossConfig
_TRAIN_KEYS = {
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "temperature": float,
    "layer_indices": "int_list",
    "d_e": int,
    "bottleneck_ratio": int,
    "leaky_slope": float,
    "seed": int,
    "smoothing": "bool",
    "smoothing_sigma": float,
}
_LOSS_KEYS = {
    "focal_gamma": float,
    "focal_alpha": float,
    "dice_eps": float,
    "lambda_cm": float,
    "lambda_aacm": float,
    "aacm_activation": str,
}


def _cast(key, raw, caster, lineno):
    try:
        if caster == "bool":
            v = _BOOL.get(raw.strip().lower())
            if v is None:
                raise ValueError(raw)
            return v
        if caster == "int_list":
            return tuple(int(p) for p in raw.replace(",", " ").split())
        return caster(raw.strip())
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for key '{key}': {raw.strip()!r}")


def parse_kv_file(path):
    """Parse a key=value file into {key: (raw_value, lineno)}."""
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key in entries:
                raise ConfigError(f"line {lineno}: duplicate key '{key}'")
            entries[key] = (raw, lineno)
    return entries


def train_config_from_entries(entries):
    train_kwargs = {}
    loss_kwargs = {}
    for key, (raw, lineno) in entries.items():
        if key in _TRAIN_KEYS:
            train_kwargs[key] = _cast(key, raw, _TRAIN_KEYS[key], lineno)
        elif key in _LOSS_KEYS:
            loss_kwargs[key] = _cast(key, raw, _LOSS_KEYS[key], lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
    cfg = TrainConfig(loss=LossConfig(**loss_kwargs), **train_kwargs)
    cfg.validate()
    return cfg


def load_train_config(path, **overrides):
    """Load a TrainConfig from a file, with keyword overrides winning."""
    cfg = train_config_from_entries(parse_kv_file(path))
    if overrides:
        cfg = replace(cfg, **overrides)
        cfg.validate()
    return cfg
