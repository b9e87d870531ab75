# -*- coding: utf-8 -*-
"""
FPN style top-down decoder with five prediction heads and the deeply supervised binary cross-entropy objective.

Recurrence per query image:

    P^5 = ReLU(Conv(X-hat^5))
    P^m = ReLU(Conv(Upsample(P^(m+1)) + Conv(X^m))),  m = 4 .. 1
    D^m = Upsample_to_input(Sigmoid(Conv_1ch(P^m)))
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
from typing import Any, Sequence

import numpy as np

from OSADPython.encoder import (
    PYRAMID_STRIDES,
    FeaturePyramid,
)
from OSADPython.osad_module_abc import (
    OSADModelError,
    OSADModuleABC,
    fan_in_uniform,
)
from OSADPython.tensor_core import (
    DTYPE_TRAIN,
    Tensor,
    add,
    bilinear_resize,
    bilinear_upsample,
    clip,
    conv2d,
    log,
    mean,
    mul,
    relu,
    sigmoid,
    sub,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

PROBABILITY_EPS: float = 1e-7


@dataclasses.dataclass
class PredictionStack:
    """
    Decoder output for one query image.

    Attributes:
        maps: D^1..D^5, each 1 x H x W probability map at input resolution
        features: P^1..P^5 intermediate features
    """
    maps: list[Tensor]
    features: list[Tensor]

    @property
    def final(self) -> Tensor:
        """
        D^1, the prediction used for the metrics.
        """
        return self.maps[0]


class Decoder(OSADModuleABC):
    """
    Top-down decoder. All P^m have decoder_channels channels; lateral convolutions are 1x1, the P convolutions 3x3
    followed by ReLU, and the prediction heads 1x1 with a single output channel. The head weights start at zero, so an
    untrained decoder predicts 0.5 everywhere.
    """

    def __init__(
            self,
            encoder_channels: Sequence[int],
            decoder_channels: int = 16,
            seed: int = 0,
            dtype: Any = DTYPE_TRAIN,
    ) -> None:
        super().__init__(dtype=dtype)

        if len(encoder_channels) != len(PYRAMID_STRIDES):
            raise OSADModelError(f"Decoder needs {len(PYRAMID_STRIDES)} encoder widths, got {list(encoder_channels)}")

        self._encoder_channels = tuple(int(c) for c in encoder_channels)
        self._decoder_channels = decoder_channels
        d = decoder_channels

        rng = np.random.default_rng([seed, 4])
        c5 = self._encoder_channels[4]
        self._add_parameter("p5.weight", fan_in_uniform(rng, (d, c5, 3, 3), c5 * 9, dtype))
        self._add_parameter("p5.bias", np.zeros(d, dtype=dtype))
        for m in range(4, 0, -1):
            cm = self._encoder_channels[m - 1]
            self._add_parameter(f"lateral{m}.weight", fan_in_uniform(rng, (d, cm, 1, 1), cm, dtype))
            self._add_parameter(f"lateral{m}.bias", np.zeros(d, dtype=dtype))
            self._add_parameter(f"p{m}.weight", fan_in_uniform(rng, (d, d, 3, 3), d * 9, dtype))
            self._add_parameter(f"p{m}.bias", np.zeros(d, dtype=dtype))
        for m in range(1, 6):
            self._add_parameter(f"head{m}.weight", np.zeros((1, d, 1, 1), dtype=dtype))
            self._add_parameter(f"head{m}.bias", np.zeros(1, dtype=dtype))

    def decode(
            self,
            pyramid: FeaturePyramid,
            input_size: tuple[int, int],
    ) -> PredictionStack:
        """
        Decode a pyramid whose level 5 already carries X-hat^5.
        """
        if pyramid.channels() != self._encoder_channels:
            raise OSADModelError(f"Channel profile mismatch: pyramid {pyramid.channels()} vs decoder "
                                 f"{self._encoder_channels}")

        p = relu(conv2d(pyramid.level(5), self.param("p5.weight"), self.param("p5.bias")))
        features: list[Tensor] = [p]
        for m in range(4, 0, -1):
            x_m = pyramid.level(m)
            lateral = conv2d(x_m, self.param(f"lateral{m}.weight"), self.param(f"lateral{m}.bias"))
            up = bilinear_upsample(p, factor=2)
            if up.shape != lateral.shape:
                raise OSADModelError(f"Level {m}: upsampled {up.shape} does not match lateral {lateral.shape}")
            p = relu(conv2d(add(up, lateral), self.param(f"p{m}.weight"), self.param(f"p{m}.bias")))
            features.insert(0, p)

        maps = []
        for m, p_m in enumerate(features, start=1):
            d_m = sigmoid(conv2d(p_m, self.param(f"head{m}.weight"), self.param(f"head{m}.bias")))
            maps.append(bilinear_resize(d_m, tuple(input_size)))

        return PredictionStack(maps=maps, features=features)

    def forward(
            self,
            pyramid: FeaturePyramid,
            input_size: tuple[int, int],
    ) -> PredictionStack:
        return self.decode(pyramid, input_size)


def _check_mask(mask: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim == 2:
        mask = mask[None]
    if mask.shape != shape:
        raise OSADModelError(f"Mask shape {mask.shape} does not match prediction shape {shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise OSADModelError("Masks must be binary {0, 1}!")
    return mask


def binary_cross_entropy(
        pred: Tensor,
        mask: np.ndarray,
        eps: float = PROBABILITY_EPS,
) -> Tensor:
    """
    L = -(1/N) (sum_{j in Y+} log p_j + sum_{j in Y-} log(1 - p_j)) with p clamped to [eps, 1 - eps].
    """
    target = _check_mask(mask, pred.shape).astype(pred.dtype)
    p = clip(pred, eps, 1.0 - eps)
    pos = mul(Tensor(target, dtype=pred.dtype), log(p))
    neg = mul(Tensor(1.0 - target, dtype=pred.dtype), log(sub(1.0, p)))
    return mul(mean(add(pos, neg)), -1.0)


def deep_supervision_loss(
        preds: Sequence[PredictionStack],
        masks: Sequence[np.ndarray],
        eps: float = PROBABILITY_EPS,
) -> Tensor:
    """
    L = sum_i sum_m L_i^m over the n query images and the five prediction levels. The sum runs in a fixed order.
    """
    if len(preds) != len(masks) or not preds:
        raise OSADModelError(f"Got {len(preds)} predictions but {len(masks)} masks")

    terms = [binary_cross_entropy(d_m, mask, eps=eps) for stack, mask in zip(preds, masks) for d_m in stack.maps]
    total = functools.reduce(add, terms)
    if not math.isfinite(total.item()):
        logger.warning("Non-finite deep supervision loss: %s", total.item())
    return total
