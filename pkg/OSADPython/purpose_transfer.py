# -*- coding: utf-8 -*-
"""
Purpose Transfer Module (PTM): inject the purpose encoding into a query feature map via spatial attention with a
residual connection, X_T[:, j] = x[:, j] * (1 + alpha_j). The module has no parameters.
"""

import logging

from OSADPython.osad_module_abc import (
    OSADModelError,
)
from OSADPython.purpose_learning import (
    PurposeEncoding,
    attention_field,
)
from OSADPython.tensor_core import (
    Tensor,
    add,
    mul,
    reshape,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)


def transfer(x: Tensor, f_sup: PurposeEncoding) -> Tensor:
    """
    Transfer the purpose to one C x H x W query map. The output has the shape of the input.
    """
    if x.ndim != 3 or f_sup.f.ndim != 1 or x.shape[0] != f_sup.f.shape[0]:
        raise OSADModelError(f"Channel mismatch between query map {x.shape} and purpose encoding {f_sup.f.shape}")

    alpha = attention_field(f_sup.f, x)
    c, h, w = x.shape
    flat = reshape(x, (c, h * w))
    return reshape(mul(flat, add(alpha, 1.0)), (c, h, w))


def transfer_all(queries: list[Tensor], f_sup: PurposeEncoding) -> list[Tensor]:
    return [transfer(x, f_sup) for x in queries]
