"""Run configuration: a YAML file with strict keys and full defaults.

Every canonical hyperparameter can be overridden; unknown keys are
rejected so typos fail loudly. The normalized content is hashed into the
run metadata, and the training subset of it travels inside checkpoints.
"""

import copy
from pathlib import Path

import yaml

from . import checkpoint
from .discriminator import DiscriminatorSpec
from .generator import GeneratorSpec
from .losses import LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "model": {
        "multiscale": False,
        "channel_scale": 1.0,
        "generator": {
            "depth_k": 7,
            "star": False,
            "encoder_channels": None,
            "dropout_sites": None,
            "dropout_rate": 0.5,
            "leak": 0.2,
        },
        "discriminator": {
            "conv_channels": [64, 128, 256, 512],
            "spp_levels": 4,
        },
    },
    "loss_weights": {
        "lambda1": 1.0,
        "lambda2": 100.0,
        "lambda3": 100.0,
        "lambda4": 100.0,
        "lambda_wd": 0.001,
        "thresh": 40.0,
    },
    "train": {
        "learning_rate": 0.0002,
        "beta1": 0.5,
        "beta2": 0.999,
        "batch_size": 1,
        "d_update_period": 4,
        "max_epochs": 1,
        "pretrain_size": [256, 256],
        "iff_max_side": 1024,
        "grad_clip": None,
    },
    "data": {
        "train_manifest": None,
        "val_manifest": None,
    },
    "synthesize": {
        "clear_dir": None,
        "out_dir": None,
        "beta_range": [0.4, 1.6],
        "alpha_range": [0.7, 1.0],
        "depth_constant": 1.0,
        "vertical_ramp": False,
    },
}


def _merge(defaults, overrides, path=""):
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a mapping")
            merged[key] = _merge(defaults[key], value, where)
        else:
            merged[key] = value
    return merged


class RunConfig:
    def __init__(self, raw=None):
        self.raw = _merge(DEFAULTS, raw or {})

    @classmethod
    def from_file(cls, path):
        text = Path(path).read_text()
        data = yaml.safe_load(text)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls(data)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def output_dir(self):
        return Path(self.raw["output_dir"])

    def config_hash(self):
        return checkpoint.config_hash(self.raw)

    def train_config(self):
        m = self.raw["model"]
        t = self.raw["train"]
        return TrainConfig(
            generator=GeneratorSpec(**m["generator"]),
            discriminator=DiscriminatorSpec(**m["discriminator"]),
            weights=LossWeights(**self.raw["loss_weights"]),
            multiscale=bool(m["multiscale"]),
            channel_scale=float(m["channel_scale"]),
            learning_rate=float(t["learning_rate"]),
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            batch_size=int(t["batch_size"]),
            d_update_period=int(t["d_update_period"]),
            max_epochs=int(t["max_epochs"]),
            pretrain_size=tuple(t["pretrain_size"]) if t["pretrain_size"] else None,
            iff_max_side=int(t["iff_max_side"]),
            grad_clip=t["grad_clip"],
            seed=self.seed,
        )
