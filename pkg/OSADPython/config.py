# -*- coding: utf-8 -*-
"""
Training configuration: defaults for the desk-scale toy setup, a full-size preset and the structured text format
(see OSADPython.config_parser).
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import pathlib
from typing import Any

from OSADPython.config_parser import (
    ConfigSyntaxError,
    format_config_value,
    parse_config_text,
)
from OSADPython.encoder import (
    PYRAMID_STRIDES,
    TOY_CHANNELS,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)


class TrainerError(Exception):
    """
    Exception used by the training / evaluation driver.
    """


class ConfigError(TrainerError):
    """
    Invalid configuration: unknown key, ill-typed or out of range value.
    """


@dataclasses.dataclass
class TrainConfig:
    """
    All knobs of training and evaluation. The defaults are the toy setup (64 x 64 input, K = 16, lr 1e-3); use
    TrainConfig.full_scale() for the full size values.

    steps counts optimizer steps; each step uses one episode.
    """
    learning_rate: float = 1e-3
    steps: int = 200
    n_queries: int = 5
    num_bases: int = 16
    em_iterations: int = 3
    seed: int = 0
    input_size: int = 64
    crop: bool = True
    crop_size: int = 56
    flip: bool = True
    fold_id: int = 1
    num_folds: int = 3
    encoder_channels: tuple[int, ...] = TOY_CHANNELS
    decoder_channels: int = 16
    basis_channels: int = 32
    episode_pool: int = 0
    eval_episodes: int = 100
    negative_query_rate: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 10

    def __post_init__(self) -> None:
        self.encoder_channels = tuple(self.encoder_channels)
        self.validate()

    @classmethod
    def full_scale(cls) -> TrainConfig:
        """
        Full size preset: 320 x 320 input cropped like 360 -> 320, K = 256 bases, lr 1e-4.
        """
        return cls(
            learning_rate=1e-4,
            steps=20000,
            num_bases=256,
            input_size=320,
            crop_size=round(320 * 320 / 360),
            encoder_channels=(64, 256, 512, 1024, 2048),
            decoder_channels=256,
            basis_channels=512,
        )

    def validate(self) -> None:
        positive = ["learning_rate", "steps", "n_queries", "num_bases", "em_iterations", "input_size", "crop_size",
                    "fold_id", "num_folds", "decoder_channels", "basis_channels", "eval_episodes", "adam_eps",
                    "log_every"]
        for name in positive:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.episode_pool < 0:
            raise ConfigError(f"episode_pool must be non-negative, got {self.episode_pool}")
        if self.input_size % PYRAMID_STRIDES[-1] != 0:
            raise ConfigError(f"input_size must be a multiple of {PYRAMID_STRIDES[-1]}, got {self.input_size}")
        if self.crop_size > self.input_size:
            raise ConfigError(f"crop_size {self.crop_size} exceeds input_size {self.input_size}")
        if self.fold_id > self.num_folds:
            raise ConfigError(f"fold_id {self.fold_id} is larger than num_folds {self.num_folds}")
        if len(self.encoder_channels) != len(PYRAMID_STRIDES) or any(c <= 0 for c in self.encoder_channels):
            raise ConfigError(f"encoder_channels must be {len(PYRAMID_STRIDES)} positive widths, "
                              f"got {self.encoder_channels}")
        for name in ("adam_beta1", "adam_beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {value}")
        if not 0.0 <= self.negative_query_rate <= 1.0:
            raise ConfigError(f"negative_query_rate must be in [0, 1], got {self.negative_query_rate}")

    def input_shape(self) -> tuple[int, int]:
        return self.input_size, self.input_size

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["encoder_channels"] = list(self.encoder_channels)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        """
        Build a config from {key: value}; missing keys keep their defaults.
        """
        defaults = {field.name: field.default for field in dataclasses.fields(cls)}
        unknown = [key for key in data if key not in defaults]
        if unknown:
            raise ConfigError(f"Unknown configuration key(s): {', '.join(repr(key) for key in unknown)}")

        values = {}
        for key, value in data.items():
            values[key] = _coerce(key, value, defaults[key])
        return cls(**values)

    def to_text(self) -> str:
        lines = ["# OSADPython training configuration"]
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {format_config_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> TrainConfig:
        try:
            data = parse_config_text(text)
        except ConfigSyntaxError as ex:
            raise ConfigError(str(ex)) from ex
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path: os.PathLike | str) -> TrainConfig:
        path = pathlib.Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as ex:
            raise ConfigError(f"Cannot read configuration file {path.as_posix()}: {ex}") from ex
        config = cls.from_text(text)
        logger.info("Read configuration from %s", path.as_posix())
        return config

    def to_file(self, path: os.PathLike | str) -> pathlib.Path:
        path = pathlib.Path(path)
        path.write_text(self.to_text(), encoding='utf-8')
        return path


def _coerce(key: str, value: Any, default: Any) -> Any:
    # bool is a subclass of int; check it first
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {repr(value)}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {repr(value)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {repr(value)}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError(f"{key} must be an array of integers, got {repr(value)}")
        return tuple(value)
    raise ConfigError(f"Unsupported configuration key {repr(key)}")
