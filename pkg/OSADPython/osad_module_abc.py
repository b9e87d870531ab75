# -*- coding: utf-8 -*-
"""
Definition of the base class for all network parts with trainable parameters.
"""

from __future__ import annotations

import abc
import logging
from typing import Any, Optional

import numpy as np

from OSADPython.tensor_core import (
    DTYPE_TRAIN,
    Tensor,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)


class OSADModelError(Exception):
    """
    Exception used in the network classes (encoder, PLM, PTM, CEM, decoder).
    """


def fan_in_uniform(
        rng: np.random.Generator,
        shape: tuple[int, ...],
        fan_in: int,
        dtype: Any = DTYPE_TRAIN,
) -> np.ndarray:
    """
    Uniform initialisation in [-b, b] with b = sqrt(6 / fan_in).
    """
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class OSADModuleABC(metaclass=abc.ABCMeta):
    """
    Base class of a network part. Parameters are leaf tensors stored by name; submodules are registered with a prefix
    such that parameters() returns a flat, ordered registry used by the optimizer and the checkpoint code.

    Tensors are immutable - an update (optimizer step, checkpoint load) replaces the tensor stored under a name.
    """

    def __init__(
            self,
            dtype: Any = DTYPE_TRAIN,
    ) -> None:
        self._dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, OSADModuleABC] = {}

    def get_dtype(self) -> np.dtype:
        return self._dtype

    @abc.abstractmethod
    def forward(self, *args: Any, **kwargs: Any) -> Any:
        """
        Compute the output of the network part; operations are recorded on the active GradTape.
        """

    def _add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise OSADModelError(f"Parameter {repr(name)} defined twice in {self.__class__.__name__}!")
        tensor = Tensor(value, requires_grad=True, dtype=self._dtype)
        self._params[name] = tensor
        return tensor

    def _add_module(self, name: str, module: OSADModuleABC) -> OSADModuleABC:
        if name in self._modules:
            raise OSADModelError(f"Module {repr(name)} defined twice in {self.__class__.__name__}!")
        self._modules[name] = module
        return module

    def param(self, name: str) -> Tensor:
        """
        Return the current tensor of a local parameter.
        """
        try:
            return self._params[name]
        except KeyError as ex:
            raise OSADModelError(f"Unknown parameter {repr(name)} in {self.__class__.__name__}") from ex

    def parameters(self) -> dict[str, Tensor]:
        """
        Return all parameters of this module and its submodules as {'<prefix>.<name>': tensor}.
        """
        params = dict(self._params)
        for prefix, module in self._modules.items():
            for name, tensor in module.parameters().items():
                params[f"{prefix}.{name}"] = tensor
        return params

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        """
        Replace the parameter given by its full (prefixed) name with a new leaf tensor.
        """
        if name in self._params:
            old = self._params[name]
            value = np.asarray(value)
            if value.shape != old.shape:
                raise OSADModelError(f"Shape mismatch for parameter {repr(name)}: {value.shape} != {old.shape}")
            self._params[name] = Tensor(value, requires_grad=True, dtype=self._dtype)
            return

        prefix, _, rest = name.partition('.')
        if prefix in self._modules and rest:
            self._modules[prefix].set_parameter(rest, value)
            return

        raise OSADModelError(f"Unknown parameter {repr(name)} in {self.__class__.__name__}")

    def load_parameters(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        """
        Set several parameters at once; with strict=True the names must match the registry exactly.
        """
        if strict:
            expected = set(self.parameters())
            given = set(values)
            if expected != given:
                raise OSADModelError(f"Parameter set mismatch - missing: {sorted(expected - given)}, "
                                     f"unexpected: {sorted(given - expected)}")
        for name, value in values.items():
            self.set_parameter(name, value)

    def zero_grad(self) -> None:
        for tensor in self.parameters().values():
            tensor.zero_grad()

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def summary(self, prefix: Optional[str] = None) -> str:
        lines = [f"{self.__class__.__name__}: {self.parameter_count()} parameters"]
        for name, tensor in self.parameters().items():
            if prefix is None or name.startswith(prefix):
                lines.append(f"  {name}: {tensor.shape}")
        return "\n".join(lines)
