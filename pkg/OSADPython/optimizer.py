# -*- coding: utf-8 -*-
"""
Adam optimizer over the flat parameter registry of a network.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional

import numpy as np

from OSADPython.osad_module_abc import (
    OSADModuleABC,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)


class OptimizerError(Exception):
    """
    Exception raised for misaligned parameters, gradients and moments.
    """


@dataclasses.dataclass
class AdamMoments:
    """
    First (m) and second (v) moment estimates per parameter name.
    """
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamMoments:
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(
        params: dict[str, np.ndarray],
        grads: dict[str, np.ndarray],
        moments: AdamMoments,
        lr: float,
        t: int,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamMoments]:
    """
    One bias corrected Adam update; returns new parameter and moment arrays, the inputs are not modified.

        m <- beta1 m + (1 - beta1) g
        v <- beta2 v + (1 - beta2) g^2
        p <- p - lr (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
    """
    if t < 1:
        raise OptimizerError(f"The Adam step counter starts at 1, got {t}")
    if set(params) != set(grads) or set(params) != set(moments.m) or set(params) != set(moments.v):
        raise OptimizerError("Parameters, gradients and moments must have the same names!")

    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        if g.shape != p.shape or moments.m[name].shape != p.shape or moments.v[name].shape != p.shape:
            raise OptimizerError(f"Shape mismatch for {repr(name)}: parameter {p.shape}, gradient {g.shape}, "
                                 f"moments {moments.m[name].shape} / {moments.v[name].shape}")
        m = beta1 * moments.m[name] + (1.0 - beta1) * g
        v = beta2 * moments.v[name] + (1.0 - beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)

    return new_params, AdamMoments(m=new_m, v=new_v)


class AdamOptimizer:
    """
    Single Adam optimizer over all trainable parameters of a module. Parameters without a gradient are updated with a
    zero gradient.
    """

    def __init__(
            self,
            module: OSADModuleABC,
            lr: float = 1e-3,
            beta1: float = 0.9,
            beta2: float = 0.999,
            eps: float = 1e-8,
    ) -> None:
        self._module = module
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        params = {name: tensor.data for name, tensor in module.parameters().items()}
        self.moments = AdamMoments.zeros_like(params)

    def step(self) -> None:
        params = {name: tensor.data for name, tensor in self._module.parameters().items()}
        grads = {}
        for name, tensor in self._module.parameters().items():
            grads[name] = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)

        self.t += 1
        new_params, self.moments = adam_step(
            params=params,
            grads=grads,
            moments=self.moments,
            lr=self.lr,
            t=self.t,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )
        self._module.load_parameters(new_params)

    def load_state(self, t: int, moments: Optional[AdamMoments]) -> None:
        """
        Restore the step counter and the moments (e.g. from a checkpoint).
        """
        if moments is not None:
            expected = {name: tensor.shape for name, tensor in self._module.parameters().items()}
            for part in (moments.m, moments.v):
                if {name: arr.shape for name, arr in part.items()} != expected:
                    raise OptimizerError("Optimizer moments do not match the parameter registry!")
            self.moments = moments
        self.t = t
