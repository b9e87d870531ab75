# -*- coding: utf-8 -*-
"""
Composed one-shot affordance detection network:

    support image --encoder--> pyramid --PLM--> F_sup
    query images  --encoder--> pyramids --PTM(F_sup) on level 5--> X_T --CEM (whole query set)--> X-hat^5
    X-hat^5 + levels 1..4 --decoder--> D^1..D^5 per query

The network owns one flat parameter registry (prefixes encoder., plm., cem., decoder.) used by the optimizer and the
checkpoint code.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Optional, Sequence

import numpy as np

from OSADPython.collaboration_enhancement import (
    EM_ITERATIONS,
    CollaborationEnhancementModule,
    CollaborationResult,
)
from OSADPython.decoder import (
    Decoder,
    PredictionStack,
    deep_supervision_loss,
)
from OSADPython.encoder import (
    TOY_CHANNELS,
    Encoder,
)
from OSADPython.osad_module_abc import (
    OSADModelError,
    OSADModuleABC,
)
from OSADPython.purpose_learning import (
    PURPOSE_LEVEL,
    PurposeEncoding,
    PurposeLearningModule,
    SupportSample,
)
from OSADPython.purpose_transfer import (
    transfer_all,
)
from OSADPython.tensor_core import (
    DTYPE_TRAIN,
    Tensor,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)


@dataclasses.dataclass
class NetworkOutput:
    """
    Result of one forward pass over an episode.
    """
    predictions: list[PredictionStack]
    purpose: PurposeEncoding
    collaboration: CollaborationResult

    def final_maps(self) -> list[np.ndarray]:
        """
        D^1 of every query as H x W array.
        """
        return [stack.final.numpy()[0] for stack in self.predictions]


class OSADNetwork(OSADModuleABC):
    """
    Encoder, PLM, CEM and decoder with shared parameter registry; the PTM has no parameters.
    """

    def __init__(
            self,
            encoder_channels: Sequence[int] = TOY_CHANNELS,
            decoder_channels: int = 16,
            num_bases: int = 16,
            basis_channels: int = 32,
            em_iterations: int = EM_ITERATIONS,
            seed: int = 0,
            dtype: Any = DTYPE_TRAIN,
    ) -> None:
        super().__init__(dtype=dtype)

        self.encoder = Encoder(channels=encoder_channels, seed=seed, dtype=dtype)
        c5 = self.encoder.get_channels()[PURPOSE_LEVEL - 1]
        self.plm = PurposeLearningModule(channels=c5, seed=seed, dtype=dtype)
        self.cem = CollaborationEnhancementModule(
            channels=c5,
            num_bases=num_bases,
            basis_channels=basis_channels,
            iterations=em_iterations,
            seed=seed,
            dtype=dtype,
        )
        self.decoder = Decoder(
            encoder_channels=self.encoder.get_channels(),
            decoder_channels=decoder_channels,
            seed=seed,
            dtype=dtype,
        )

        self._add_module("encoder", self.encoder)
        self._add_module("plm", self.plm)
        self._add_module("cem", self.cem)
        self._add_module("decoder", self.decoder)

        logger.debug("Created %s", self.summary())

    def _image_tensor(self, image: np.ndarray | Tensor) -> Tensor:
        if isinstance(image, Tensor):
            return image
        arr = np.asarray(image)
        if arr.ndim == 2:
            arr = np.repeat(arr[None], 3, axis=0)
        return Tensor(arr, dtype=self.get_dtype())

    def forward(
            self,
            support: SupportSample,
            queries: Sequence[np.ndarray | Tensor],
            em_iterations: Optional[int] = None,
    ) -> NetworkOutput:
        """
        Run the full pipeline for one support sample and n >= 1 query images (all 3 x H x W).
        """
        if len(queries) < 1:
            raise OSADModelError("At least one query image is needed!")

        support_pyramid = self.encoder.encode(self._image_tensor(support.image))
        purpose = self.plm.forward(support=support, pyramid=support_pyramid)

        query_pyramids = [self.encoder.encode(self._image_tensor(q)) for q in queries]
        x_t = transfer_all([p.level(PURPOSE_LEVEL) for p in query_pyramids], purpose)
        collaboration = self.cem.forward(x_t, iterations=em_iterations)

        predictions = []
        for query, pyramid, x_hat in zip(queries, query_pyramids, collaboration.outputs):
            size = (query.shape[-2], query.shape[-1])
            predictions.append(self.decoder.decode(pyramid.with_level(PURPOSE_LEVEL, x_hat), input_size=size))

        return NetworkOutput(predictions=predictions, purpose=purpose, collaboration=collaboration)

    def loss(
            self,
            output: NetworkOutput,
            masks: Sequence[np.ndarray],
    ) -> Tensor:
        """
        Deeply supervised objective of a forward pass.
        """
        return deep_supervision_loss(output.predictions, masks)
