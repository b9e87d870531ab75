# -*- coding: utf-8 -*-
"""
Collaboration Enhancement Module (CEM): alternate E- and M-steps over the projected features of *all* query images
to estimate K shared bases, then reconstruct every query map from the bases and add the result back as a residual.

The E-M iterations run on detached values. Gradients reach the projection through the final responsibilities and
the learned initial bases through a straight-through read-out (value: final bases, gradient: identity).
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
    add,
    conv2d,
    matmul,
    reshape,
    softmax,
    transpose,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

EM_ITERATIONS: int = 3


@dataclasses.dataclass
class BasisSet:
    """
    K x C' bases mu, unit L2 norm per row.

    Attributes:
        mu: normalized bases
        unnormalized: bases of the last M-step before the row normalization (None at initialization)
    """
    mu: Tensor
    unnormalized: Tensor | None = None

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @property
    def channels(self) -> int:
        return self.mu.shape[1]


@dataclasses.dataclass
class Responsibilities:
    """
    Per image N x K soft assignments of positions to bases; every row sums to 1.
    """
    z: list[Tensor]


@dataclasses.dataclass
class CollaborationResult:
    """
    Output of cem_forward(): the enhanced maps X-hat_i, the final bases and responsibilities and the reconstructed
    features F-tilde_i (N x C').
    """
    outputs: list[Tensor]
    basis: BasisSet
    responsibilities: Responsibilities
    reconstructions: list[Tensor]


def _values(item: Tensor | np.ndarray) -> np.ndarray:
    return item.data if isinstance(item, Tensor) else np.asarray(item)


def normalize_rows(mu: np.ndarray) -> np.ndarray:
    norm = np.sqrt((mu * mu).sum(axis=1, keepdims=True))
    return mu / np.maximum(norm, 1e-12)


def project(
        x_t: Tensor,
        weight: Tensor,
        bias: Tensor | None = None,
) -> Tensor:
    """
    1x1 convolution of a C x H x W map followed by flattening of the grid: returns N x C' (row j = position j).
    """
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise OSADModelError(f"The projection needs a 1x1 kernel, got {weight.shape}")
    proj = conv2d(x_t, weight, bias)
    c_proj, h, w = proj.shape
    return transpose(reshape(proj, (c_proj, h * w)))


def e_step(
        features: Sequence[Tensor | np.ndarray],
        mu: Tensor | np.ndarray,
) -> Responsibilities:
    """
    Z_i = row-softmax(F_i mu^T), the normalized exponential kernel weights. Computed detached; each row only depends
    on its own feature vector.
    """
    mu_v = _values(mu)
    z = []
    for f in features:
        f_v = _values(f)
        if f_v.ndim != 2 or f_v.shape[1] != mu_v.shape[1]:
            raise OSADModelError(f"E-step: features {f_v.shape} do not match bases {mu_v.shape}")
        logits = (f_v[:, None, :] * mu_v[None, :, :]).sum(axis=2)
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        z.append(Tensor(e / e.sum(axis=1, keepdims=True), dtype=f_v.dtype))
    return Responsibilities(z=z)


def m_step(
        features: Sequence[Tensor | np.ndarray],
        responsibilities: Responsibilities,
        normalize: bool = True,
        previous: Tensor | np.ndarray | None = None,
) -> Tensor:
    """
    mu_k = sum_ij Z_ijk f_ij / sum_ij Z_ijk pooled over all images and positions, followed by the row normalization.

    The sums are taken over contributions sorted per element, which makes the result independent of the order of the
    images and of the positions within an image. A basis without any responsibility mass (all Z_ijk underflow to 0)
    keeps its previous value, or becomes the zero vector if previous is not given.
    """
    if len(features) != len(responsibilities.z) or not features:
        raise OSADModelError(f"M-step: {len(features)} feature maps but {len(responsibilities.z)} responsibilities")

    f_all = np.concatenate([_values(f) for f in features], axis=0)
    z_all = np.concatenate([_values(z) for z in responsibilities.z], axis=0)
    if f_all.shape[0] != z_all.shape[0]:
        raise OSADModelError(f"M-step: {f_all.shape[0]} feature rows but {z_all.shape[0]} responsibility rows")

    numerator = np.sort(z_all[:, :, None] * f_all[:, None, :], axis=0).sum(axis=0)
    denominator = np.sort(z_all, axis=0).sum(axis=0)
    empty = denominator <= 0.0
    mu = numerator / np.where(empty, 1.0, denominator)[:, None]
    if np.any(empty):
        logger.debug("M-step: %d of %d bases without responsibility mass", int(empty.sum()), empty.size)
        if previous is not None:
            prev_v = _values(previous)
            if prev_v.shape != mu.shape:
                raise OSADModelError(f"M-step: previous bases {prev_v.shape} do not match {mu.shape}")
            mu[empty] = prev_v[empty]
    if normalize:
        mu = normalize_rows(mu)

    return Tensor(mu, dtype=f_all.dtype)


class CollaborationEnhancementModule(OSADModuleABC):
    """
    CEM parameters: the 1x1 projection C -> C', the learned initial bases (K x C') and the 1x1 output convolution
    C' -> C mapping the reconstruction to the residual space.
    """

    def __init__(
            self,
            channels: int,
            num_bases: int = 16,
            basis_channels: int = 32,
            iterations: int = EM_ITERATIONS,
            seed: int = 0,
            dtype: Any = DTYPE_TRAIN,
    ) -> None:
        super().__init__(dtype=dtype)

        if num_bases < 1 or basis_channels < 1 or channels < 1:
            raise OSADModelError(f"Invalid CEM sizes: C={channels}, K={num_bases}, C'={basis_channels}")
        if iterations < 1:
            raise OSADModelError(f"At least one E-M iteration is needed, got {iterations}")

        self._channels = channels
        self._iterations = iterations

        rng = np.random.default_rng([seed, 3])
        self._add_parameter("proj.weight", fan_in_uniform(rng, (basis_channels, channels, 1, 1), channels, dtype))
        self._add_parameter("proj.bias", np.zeros(basis_channels, dtype=dtype))
        bases = rng.normal(0.0, np.sqrt(2.0 / num_bases), size=(num_bases, basis_channels))
        self._add_parameter("bases", normalize_rows(bases).astype(dtype))
        self._add_parameter("out.weight", fan_in_uniform(rng, (channels, basis_channels, 1, 1), basis_channels, dtype))
        self._add_parameter("out.bias", np.zeros(channels, dtype=dtype))

    def get_iterations(self) -> int:
        return self._iterations

    def initial_basis(self) -> BasisSet:
        return BasisSet(mu=Tensor(normalize_rows(self.param("bases").data)))

    def forward(
            self,
            x_t: list[Tensor],
            iterations: int | None = None,
    ) -> CollaborationResult:
        """
        Run the E-M iterations over the whole query set and return X-hat_i = x_t_i + Conv(F-tilde_i).
        """
        if len(x_t) < 1:
            raise OSADModelError("CEM needs at least one query map!")
        if iterations is None:
            iterations = self._iterations
        if iterations < 1:
            raise OSADModelError(f"At least one E-M iteration is needed, got {iterations}")
        for x in x_t:
            if x.ndim != 3 or x.shape[0] != self._channels:
                raise OSADModelError(f"CEM configured for {self._channels} channels, got map {x.shape}")

        features = [project(x, self.param("proj.weight"), self.param("proj.bias")) for x in x_t]
        detached = [f.data for f in features]

        bases_param = self.param("bases")
        mu = normalize_rows(bases_param.data)
        mu_used = mu
        resp = Responsibilities(z=[])
        unnormalized = None
        for _ in range(iterations):
            resp = e_step(detached, mu)
            mu_used = mu
            unnormalized = m_step(detached, resp, normalize=False, previous=mu)
            mu = normalize_rows(unnormalized.data)
        logger.debug("CEM: %d images, %d iterations, K=%d", len(x_t), iterations, mu.shape[0])

        # straight-through read-out of the final bases
        mu_read = add(bases_param, Tensor(mu - bases_param.data, dtype=bases_param.dtype))
        mu_prev = Tensor(mu_used, dtype=bases_param.dtype)

        outputs = []
        reconstructions = []
        for x, f in zip(x_t, features):
            z = softmax(matmul(f, transpose(mu_prev)), axis=1)
            f_rec = matmul(z, mu_read)
            reconstructions.append(f_rec)
            _, h, w = x.shape
            f_map = reshape(transpose(f_rec), (f_rec.shape[1], h, w))
            residual = conv2d(f_map, self.param("out.weight"), self.param("out.bias"))
            outputs.append(add(x, residual))

        return CollaborationResult(
            outputs=outputs,
            basis=BasisSet(mu=Tensor(mu, dtype=bases_param.dtype), unnormalized=unnormalized),
            responsibilities=resp,
            reconstructions=reconstructions,
        )
