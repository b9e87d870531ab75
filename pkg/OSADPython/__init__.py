# -*- coding: utf-8 -*-
"""
OSADPython is a from-scratch numpy implementation of one-shot affordance detection: purpose learning from a support
image, purpose transfer to query images, collaborative E-M enhancement over the query set and a deeply supervised
decoder, together with the episodic protocol, the evaluation metrics and a synthetic benchmark.

```
import OSADPython

config = OSADPython.TrainConfig(steps=50)
result = OSADPython.train(config, OSADPython.SyntheticEpisodeSource())
report = OSADPython.evaluate(result.checkpoint, OSADPython.SyntheticEpisodeSource(), n_episodes=10)
```

"""

from OSADPython.tensor_core import (
    DTYPE_CHECK,
    DTYPE_TRAIN,
    GradientCheckResult,
    GradientError,
    GradTape,
    Tensor,
    TensorDimensionError,
    TensorException,
    backward,
    gradient_check,
    no_grad,
)
from OSADPython.osad_module_abc import (
    OSADModelError,
    OSADModuleABC,
)
from OSADPython.encoder import (
    Encoder,
    FeaturePyramid,
)
from OSADPython.purpose_learning import (
    BBox,
    PurposeEncoding,
    PurposeLearningModule,
    SupportSample,
)
from OSADPython.purpose_transfer import (
    transfer,
)
from OSADPython.collaboration_enhancement import (
    BasisSet,
    CollaborationEnhancementModule,
    CollaborationResult,
    Responsibilities,
)
from OSADPython.decoder import (
    Decoder,
    PredictionStack,
    binary_cross_entropy,
    deep_supervision_loss,
)
from OSADPython.network import (
    NetworkOutput,
    OSADNetwork,
)
from OSADPython.metrics import (
    ImageMetrics,
    MetricsError,
    MetricsReport,
    cc,
    e_measure,
    iou,
    mae,
)
from OSADPython.episodes_abc import (
    DataValidationError,
    Episode,
    EpisodeError,
    EpisodeSourceABC,
    FoldSplit,
    kfold_split,
    sample_episode,
)
from OSADPython.episodes_synthetic import (
    SceneObject,
    SyntheticEpisodeSource,
    affords,
    generate_synthetic,
    render_scene,
)
from OSADPython.episodes_pad import (
    PADDataset,
    PADEpisodeSource,
    load_pad_dir,
)
from OSADPython.config import (
    ConfigError,
    TrainConfig,
    TrainerError,
)
from OSADPython.optimizer import (
    AdamMoments,
    AdamOptimizer,
    adam_step,
)
from OSADPython.checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from OSADPython.trainer import (
    DivergenceError,
    Trainer,
    TrainResult,
    evaluate,
    evaluate_baseline,
    predict,
    train,
)

# global names imported if import 'from OSADPython import *' is used
__all__ = [
    'DTYPE_CHECK',
    'DTYPE_TRAIN',
    'GradientCheckResult',
    'GradientError',
    'GradTape',
    'Tensor',
    'TensorDimensionError',
    'TensorException',
    'backward',
    'gradient_check',
    'no_grad',

    'OSADModelError',
    'OSADModuleABC',
    'Encoder',
    'FeaturePyramid',
    'BBox',
    'PurposeEncoding',
    'PurposeLearningModule',
    'SupportSample',
    'transfer',
    'BasisSet',
    'CollaborationEnhancementModule',
    'CollaborationResult',
    'Responsibilities',
    'Decoder',
    'PredictionStack',
    'binary_cross_entropy',
    'deep_supervision_loss',
    'NetworkOutput',
    'OSADNetwork',

    'ImageMetrics',
    'MetricsError',
    'MetricsReport',
    'cc',
    'e_measure',
    'iou',
    'mae',

    'DataValidationError',
    'Episode',
    'EpisodeError',
    'EpisodeSourceABC',
    'FoldSplit',
    'kfold_split',
    'sample_episode',
    'SceneObject',
    'SyntheticEpisodeSource',
    'affords',
    'generate_synthetic',
    'render_scene',
    'PADDataset',
    'PADEpisodeSource',
    'load_pad_dir',

    'ConfigError',
    'TrainConfig',
    'TrainerError',
    'AdamMoments',
    'AdamOptimizer',
    'adam_step',
    'Checkpoint',
    'CheckpointError',
    'load_checkpoint',
    'save_checkpoint',
    'DivergenceError',
    'Trainer',
    'TrainResult',
    'evaluate',
    'evaluate_baseline',
    'predict',
    'train',
]
