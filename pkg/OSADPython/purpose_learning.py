# -*- coding: utf-8 -*-
"""
Purpose Learning Module (PLM): estimate the action purpose encoding F_sup from the deepest level of the support
feature pyramid and the bounding boxes of the person and the object interacting with it.

Reading of the products used here: a C vector f "times" a C x H x W map X is the channel broadcast product reduced
over the channels, i.e. one score per position; the softmax runs over the H * W positions. The interaction map M_HO
has a single channel, such that it scales every channel of M_H and M_O position-wise.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Any, Optional

import numpy as np

from OSADPython.encoder import (
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
    conv2d,
    crop,
    global_max_pool,
    matmul,
    mul,
    reshape,
    softmax,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

# pyramid level used for purpose estimation and transfer
PURPOSE_LEVEL: int = 5


@dataclasses.dataclass(frozen=True)
class BBox:
    """
    Pixel box [x0, x1) x [y0, y1), origin top-left.
    """
    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, width: int, height: int) -> None:
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise OSADModelError(f"Invalid box {self.as_list()} for image size {width}x{height}")

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, values: list[int] | tuple[int, ...]) -> BBox:
        if len(values) != 4:
            raise OSADModelError(f"A box needs 4 coordinates [x0, y0, x1, y1], got {values}")
        return cls(*(int(v) for v in values))

    def scaled(self, sx: float, sy: float) -> BBox:
        """
        Scale the box (e.g. after an image resize); rounding is outward and the box stays at least 1 pixel wide.
        """
        x0 = int(math.floor(self.x0 * sx))
        y0 = int(math.floor(self.y0 * sy))
        x1 = max(int(math.ceil(self.x1 * sx)), x0 + 1)
        y1 = max(int(math.ceil(self.y1 * sy)), y0 + 1)
        return BBox(x0, y0, x1, y1)

    def flipped(self, width: int) -> BBox:
        return BBox(width - self.x1, self.y0, width - self.x0, self.y1)


@dataclasses.dataclass
class SupportSample:
    """
    The support image (3 x H x W, values in [0, 1]) with the boxes of the person and the object.
    """
    image: np.ndarray
    human_box: BBox
    object_box: BBox

    def __post_init__(self) -> None:
        if self.image.ndim != 3:
            raise OSADModelError(f"Support image must be 3 x H x W, got shape {self.image.shape}")
        _, h, w = self.image.shape
        self.human_box.validate(width=w, height=h)
        self.object_box.validate(width=w, height=h)


@dataclasses.dataclass
class PurposeEncoding:
    """
    Encoding of the action purpose F_sup (C vector) with the pooled person / object features as intermediates.
    """
    f: Tensor
    f_h: Optional[Tensor] = None
    f_o: Optional[Tensor] = None


def extract_roi(
        x_sup: Tensor,
        box: BBox,
        image_size: tuple[int, int],
) -> Tensor:
    """
    Crop the feature cells covered by a pixel box. The box is divided by the level stride and rounded outward, such
    that at least one cell is always covered.

    Args:
        x_sup: feature map C x H x W
        box: pixel box in image coordinates
        image_size: (height, width) of the image the feature map was computed from
    """
    if x_sup.ndim != 3:
        raise OSADModelError(f"extract_roi expects C x H x W, got shape {x_sup.shape}")
    img_h, img_w = image_size
    box.validate(width=img_w, height=img_h)
    _, h, w = x_sup.shape
    stride_y = img_h / h
    stride_x = img_w / w

    y0 = min(int(math.floor(box.y0 / stride_y)), h - 1)
    x0 = min(int(math.floor(box.x0 / stride_x)), w - 1)
    y1 = min(max(int(math.ceil(box.y1 / stride_y)), y0 + 1), h)
    x1 = min(max(int(math.ceil(box.x1 / stride_x)), x0 + 1), w)

    return crop(x_sup, y0, y1, x0, x1)


def attention_field(f: Tensor, x: Tensor) -> Tensor:
    """
    Spatial attention of a C vector over a C x H x W map: score s_j = sum_c f_c * x_cj, alpha = softmax over the
    N = H * W positions. Returns alpha as 1 x N.
    """
    if f.ndim != 1 or x.ndim != 3 or f.shape[0] != x.shape[0]:
        raise OSADModelError(f"Channel mismatch between vector {f.shape} and map {x.shape}")
    c, h, w = x.shape
    scores = matmul(reshape(f, (1, c)), reshape(x, (c, h * w)))
    return softmax(scores, axis=1)


def guided_activation(f: Tensor, x_sup: Tensor) -> Tensor:
    """
    Activate x_sup with a pooled instance feature f: M[c, j] = alpha_j * x_sup[c, j].
    """
    alpha = attention_field(f, x_sup)
    c, h, w = x_sup.shape
    return reshape(mul(reshape(x_sup, (c, h * w)), alpha), (c, h, w))


def interaction_map(
        f_o: Tensor,
        x_h: Tensor,
        target_size: tuple[int, int],
        kernel: Tensor,
        bias: Optional[Tensor] = None,
) -> Tensor:
    """
    M_HO: the object vector scales the person features channel-wise, a single output channel 3x3 convolution
    reduces them to one map, which is resized from the person ROI size to target_size.
    """
    if f_o.ndim != 1 or x_h.ndim != 3 or f_o.shape[0] != x_h.shape[0]:
        raise OSADModelError(f"Channel mismatch between object vector {f_o.shape} and person features {x_h.shape}")
    if kernel.shape[0] != 1:
        raise OSADModelError(f"The interaction convolution has a single output channel, got kernel {kernel.shape}")

    c = f_o.shape[0]
    scaled = mul(x_h, reshape(f_o, (c, 1, 1)))
    m_ho = conv2d(scaled, kernel, bias)
    if m_ho.shape[1:] != tuple(target_size):
        m_ho = bilinear_resize(m_ho, tuple(target_size))
    return m_ho


def purpose_encode(m_ho: Tensor, m_h: Tensor, m_o: Tensor) -> PurposeEncoding:
    """
    F_sup = GMP(M_HO * M_H + M_HO * M_O), where the single channel M_HO scales every channel position-wise.
    """
    if m_ho.ndim != 3 or m_ho.shape[0] != 1:
        raise OSADModelError(f"Interaction map must be 1 x H x W, got shape {m_ho.shape}")
    if m_h.shape != m_o.shape or m_h.shape[1:] != m_ho.shape[1:]:
        raise OSADModelError(f"Spatial size mismatch: {m_ho.shape}, {m_h.shape}, {m_o.shape}")

    return PurposeEncoding(f=global_max_pool(add(mul(m_ho, m_h), mul(m_ho, m_o))))


class PurposeLearningModule(OSADModuleABC):
    """
    PLM with its only parameters: the single output channel interaction convolution.
    """

    def __init__(
            self,
            channels: int,
            seed: int = 0,
            dtype: Any = DTYPE_TRAIN,
    ) -> None:
        super().__init__(dtype=dtype)
        rng = np.random.default_rng([seed, 2])
        self._channels = channels
        self._add_parameter("hoi_conv.weight", fan_in_uniform(rng, (1, channels, 3, 3), channels * 9, dtype))
        self._add_parameter("hoi_conv.bias", np.zeros(1, dtype=dtype))

    def forward(self, support: SupportSample, pyramid: FeaturePyramid) -> PurposeEncoding:
        """
        Chain ROI extraction, GMP, guided activation, interaction map and purpose encoding on pyramid level 5.
        """
        x_sup = pyramid.level(PURPOSE_LEVEL)
        if x_sup.shape[0] != self._channels:
            raise OSADModelError(f"PLM configured for {self._channels} channels, level {PURPOSE_LEVEL} has "
                                 f"{x_sup.shape[0]}")
        image_size = (support.image.shape[1], support.image.shape[2])

        x_h = extract_roi(x_sup, support.human_box, image_size)
        x_o = extract_roi(x_sup, support.object_box, image_size)
        f_h = global_max_pool(x_h)
        f_o = global_max_pool(x_o)

        m_o = guided_activation(f_o, x_sup)
        m_h = guided_activation(f_h, x_sup)
        m_ho = interaction_map(
            f_o=f_o,
            x_h=x_h,
            target_size=(x_sup.shape[1], x_sup.shape[2]),
            kernel=self.param("hoi_conv.weight"),
            bias=self.param("hoi_conv.bias"),
        )

        encoding = purpose_encode(m_ho, m_h, m_o)
        encoding.f_h = f_h
        encoding.f_o = f_o
        return encoding
