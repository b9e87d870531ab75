# -*- coding: utf-8 -*-
"""
Shared weight convolutional encoder producing a five level feature pyramid for support and query images.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Sequence

import numpy as np

from OSADPython.osad_module_abc import (
    OSADModelError,
    OSADModuleABC,
    fan_in_uniform,
)
from OSADPython.tensor_core import (
    DTYPE_TRAIN,
    Tensor,
    conv2d,
    relu,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

TOY_CHANNELS: tuple[int, ...] = (8, 16, 32, 64, 64)
PYRAMID_STRIDES: tuple[int, ...] = (2, 4, 8, 16, 32)


@dataclasses.dataclass
class FeaturePyramid:
    """
    Encoder output: levels X^1..X^5 (each C_m x H_m x W_m) with strides 2, 4, 8, 16, 32 relative to the input image.
    """
    levels: list[Tensor]
    strides: tuple[int, ...] = PYRAMID_STRIDES

    def __post_init__(self) -> None:
        if len(self.levels) != len(PYRAMID_STRIDES):
            raise OSADModelError(f"A feature pyramid needs {len(PYRAMID_STRIDES)} levels, got {len(self.levels)}")

    def level(self, m: int) -> Tensor:
        """
        Return level m in [1, 5].
        """
        if not 1 <= m <= len(self.levels):
            raise OSADModelError(f"Invalid pyramid level: {m}")
        return self.levels[m - 1]

    def with_level(self, m: int, tensor: Tensor) -> FeaturePyramid:
        """
        Return a new pyramid where level m is replaced (used to substitute X-hat^5).
        """
        old = self.level(m)
        if old.shape != tensor.shape:
            raise OSADModelError(f"Level {m} shape mismatch: {tensor.shape} != {old.shape}")
        levels = list(self.levels)
        levels[m - 1] = tensor
        return FeaturePyramid(levels=levels, strides=self.strides)

    def channels(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.levels)


class Encoder(OSADModuleABC):
    """
    Five stage encoder; each stage is a stride 2 conv 3x3 + ReLU followed by a stride 1 conv 3x3 + ReLU. The output
    of stage m is pyramid level m. Support and query images are processed by the same instance.
    """

    def __init__(
            self,
            channels: Sequence[int] = TOY_CHANNELS,
            in_channels: int = 3,
            seed: int = 0,
            dtype: Any = DTYPE_TRAIN,
    ) -> None:
        super().__init__(dtype=dtype)

        if len(channels) != len(PYRAMID_STRIDES):
            raise OSADModelError(f"Encoder needs {len(PYRAMID_STRIDES)} channel widths, got {list(channels)}")
        if any(c <= 0 for c in channels):
            raise OSADModelError(f"Invalid encoder channel profile: {list(channels)}")

        self._channels = tuple(int(c) for c in channels)
        self._in_channels = in_channels

        rng = np.random.default_rng([seed, 1])
        c_prev = in_channels
        for m, c in enumerate(self._channels, start=1):
            self._add_parameter(f"stage{m}.down.weight", fan_in_uniform(rng, (c, c_prev, 3, 3), c_prev * 9, dtype))
            self._add_parameter(f"stage{m}.down.bias", np.zeros(c, dtype=dtype))
            self._add_parameter(f"stage{m}.conv.weight", fan_in_uniform(rng, (c, c, 3, 3), c * 9, dtype))
            self._add_parameter(f"stage{m}.conv.bias", np.zeros(c, dtype=dtype))
            c_prev = c

    def get_channels(self) -> tuple[int, ...]:
        return self._channels

    def encode(self, image: Tensor) -> FeaturePyramid:
        """
        Encode a 3 x H x W image (H, W multiples of 32, values in [0, 1]) into a feature pyramid.
        """
        if image.ndim != 3 or image.shape[0] != self._in_channels:
            raise OSADModelError(f"Encoder expects a {self._in_channels} x H x W image, got shape {image.shape}")
        _, h, w = image.shape
        if h % PYRAMID_STRIDES[-1] != 0 or w % PYRAMID_STRIDES[-1] != 0:
            raise OSADModelError(f"Image size {h}x{w} is not a multiple of {PYRAMID_STRIDES[-1]}")

        x = image
        levels = []
        for m in range(1, len(self._channels) + 1):
            x = relu(conv2d(x, self.param(f"stage{m}.down.weight"), self.param(f"stage{m}.down.bias"), stride=2))
            x = relu(conv2d(x, self.param(f"stage{m}.conv.weight"), self.param(f"stage{m}.conv.bias")))
            levels.append(x)

        return FeaturePyramid(levels=levels)

    def forward(self, image: Tensor) -> FeaturePyramid:
        return self.encode(image)
