# -*- coding: utf-8 -*-
"""
Episodic training loop, evaluation driver and prediction export.

Training is single threaded over steps: every step samples one train-role episode (seeded by the run seed and the
step counter), applies the optional crop / flip augmentation to the queries and their masks, runs the network, the
deeply supervised loss and backward(), and updates all parameters with one Adam optimizer. Evaluation distributes the
test episodes over worker threads and aggregates the metrics in episode order.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import pathlib
import queue
import threading
from typing import Any, Callable, Optional, Sequence

import numpy as np
import psutil

from OSADPython.checkpoint import (
    Checkpoint,
)
from OSADPython.config import (
    TrainConfig,
    TrainerError,
)
from OSADPython.episodes_abc import (
    Episode,
    EpisodeError,
    EpisodeSourceABC,
    FoldSplit,
    sample_episode,
)
from OSADPython.episodes_pad import (
    read_image,
    write_gray,
)
from OSADPython.metrics import (
    ImageMetrics,
    MetricsReport,
    evaluate_image,
)
from OSADPython.network import (
    OSADNetwork,
)
from OSADPython.optimizer import (
    AdamOptimizer,
)
from OSADPython.osad_module_abc import (
    OSADModelError,
)
from OSADPython.purpose_learning import (
    BBox,
    SupportSample,
)
from OSADPython.tensor_core import (
    GradTape,
    no_grad,
    resize_matrix,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

Predictor = Callable[[Episode], Sequence[np.ndarray]]


class DivergenceError(TrainerError):
    """
    Raised if the training loss becomes NaN or infinite.
    """

    def __init__(self, message: str, step: int) -> None:
        self.step = step
        super().__init__(message)


@dataclasses.dataclass
class LossRecord:
    step: int
    loss: float
    affordance_id: int
    episode_seed: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class TrainResult:
    """
    Final checkpoint and the per step loss trace of a training run.
    """
    checkpoint: Checkpoint
    losses: list[LossRecord]

    def write_trace(self, path: os.PathLike | str) -> pathlib.Path:
        """
        Write the loss trace as line delimited JSON.
        """
        path = pathlib.Path(path)
        path.write_text("".join(json.dumps(rec.to_dict()) + "\n" for rec in self.losses), encoding='utf-8')
        return path


def resize_hw(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """
    Bilinear resize of the last two axes of a numpy array (same sampling as the network's bilinear_resize).
    """
    h_in, w_in = arr.shape[-2:]
    if (h_in, w_in) == tuple(size):
        return arr
    rh = resize_matrix(size[0], h_in)
    rw = resize_matrix(size[1], w_in)
    out = np.einsum('ij,...jk,lk->...il', rh, np.asarray(arr, dtype=np.float64), rw, optimize=True)
    return out.astype(arr.dtype) if np.issubdtype(arr.dtype, np.floating) else out


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return (resize_hw(np.asarray(mask, dtype=np.float64), size) >= 0.5).astype(np.uint8)


def fit_support(support: SupportSample, size: tuple[int, int]) -> SupportSample:
    """
    Resize a support sample to size = (height, width); the boxes are scaled outward.
    """
    _, h, w = support.image.shape
    if (h, w) == tuple(size):
        return support

    def scale(box: BBox) -> BBox:
        scaled = box.scaled(size[1] / w, size[0] / h)
        x0 = min(scaled.x0, size[1] - 1)
        y0 = min(scaled.y0, size[0] - 1)
        return BBox(x0, y0, min(scaled.x1, size[1]), min(scaled.y1, size[0]))

    return SupportSample(
        image=resize_hw(support.image, size),
        human_box=scale(support.human_box),
        object_box=scale(support.object_box),
    )


def fit_episode(episode: Episode, size: tuple[int, int]) -> Episode:
    """
    Bring all images of an episode to the network input size.
    """
    if all(q.shape[1:] == tuple(size) for q in episode.queries) and episode.support.image.shape[1:] == tuple(size):
        return episode
    return Episode(
        support=fit_support(episode.support, size),
        queries=[resize_hw(q, size) for q in episode.queries],
        gt_masks=[resize_mask(m, size) for m in episode.gt_masks],
        affordance_id=episode.affordance_id,
        seed=episode.seed,
    )


def augment(
        queries: Sequence[np.ndarray],
        masks: Sequence[np.ndarray],
        rng: np.random.Generator,
        crop_size: Optional[int] = None,
        flip: bool = False,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """
    Random crop (resized back to the input size) and horizontal flip, applied identically to each query and its mask.
    """
    out_q = []
    out_m = []
    for query, mask in zip(queries, masks):
        size = query.shape[1:]
        if crop_size is not None and crop_size < min(size):
            oy = int(rng.integers(0, size[0] - crop_size + 1))
            ox = int(rng.integers(0, size[1] - crop_size + 1))
            query = resize_hw(query[:, oy:oy + crop_size, ox:ox + crop_size], size)
            mask = resize_mask(mask[oy:oy + crop_size, ox:ox + crop_size], size)
        if flip and rng.random() < 0.5:
            query = query[:, :, ::-1]
            mask = mask[:, ::-1]
        out_q.append(np.ascontiguousarray(query, dtype=np.float32))
        out_m.append(np.ascontiguousarray(mask, dtype=np.uint8))
    return out_q, out_m


def build_network(config: TrainConfig) -> OSADNetwork:
    return OSADNetwork(
        encoder_channels=config.encoder_channels,
        decoder_channels=config.decoder_channels,
        num_bases=config.num_bases,
        basis_channels=config.basis_channels,
        em_iterations=config.em_iterations,
        seed=config.seed,
    )


def network_from_checkpoint(checkpoint: Checkpoint) -> tuple[OSADNetwork, TrainConfig]:
    config = TrainConfig.from_dict(checkpoint.config)
    network = build_network(config)
    network.load_parameters(checkpoint.params)
    return network, config


def _memory_mb() -> float:
    return psutil.Process().memory_info().rss / 2 ** 20


class Trainer:
    """
    Episodic trainer. The episode of step s is a pure function of (config.seed, s) - or of (config.seed,
    s mod episode_pool) if a fixed pool of episodes is configured.
    """

    def __init__(
            self,
            config: TrainConfig,
            source: EpisodeSourceABC,
            split: Optional[FoldSplit] = None,
            network: Optional[OSADNetwork] = None,
    ) -> None:
        self._config = config
        self._source = source
        self._split = split if split is not None else source.default_split(k=config.num_folds, seed=config.seed)
        if not self._split.train_categories(config.fold_id):
            raise EpisodeError(f"Fold {config.fold_id} has no training categories!")

        self.network = network if network is not None else build_network(config)
        self.optimizer = AdamOptimizer(
            module=self.network,
            lr=config.learning_rate,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )
        self.step = 0
        self.losses: list[LossRecord] = []

    @property
    def config(self) -> TrainConfig:
        return self._config

    @property
    def split(self) -> FoldSplit:
        return self._split

    def episode_seed(self, step: int) -> int:
        index = step % self._config.episode_pool if self._config.episode_pool > 0 else step
        return int(np.random.default_rng([self._config.seed, 11, index]).integers(2 ** 31 - 1))

    def episode(self, step: int) -> Episode:
        episode = sample_episode(
            source=self._source,
            split=self._split,
            fold=self._config.fold_id,
            role="train",
            n=self._config.n_queries,
            seed=self.episode_seed(step),
        )
        return fit_episode(episode, self._config.input_shape())

    def training_batch(self, step: int) -> tuple[Episode, list[np.ndarray], list[np.ndarray]]:
        """
        Episode of a step with its augmented queries and masks.
        """
        episode = self.episode(step)
        rng = np.random.default_rng([self._config.seed, 12, step])
        queries, masks = augment(
            queries=episode.queries,
            masks=episode.gt_masks,
            rng=rng,
            crop_size=self._config.crop_size if self._config.crop else None,
            flip=self._config.flip,
        )
        return episode, queries, masks

    def train_step(self) -> LossRecord:
        episode, queries, masks = self.training_batch(self.step)

        self.network.zero_grad()
        with GradTape() as tape:
            output = self.network.forward(episode.support, queries)
            loss = self.network.loss(output, masks)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"Loss is {value} at step {self.step} (category {episode.affordance_id}, "
                                      f"episode seed {episode.seed})", step=self.step)
            tape.backward(loss)
        self.optimizer.step()

        record = LossRecord(step=self.step, loss=value, affordance_id=episode.affordance_id, episode_seed=episode.seed)
        self.losses.append(record)
        self.step += 1

        if self.step % self._config.log_every == 0:
            logger.info("step %d: loss %.6f (memory %.1f MB)", self.step, value, _memory_mb())
        else:
            logger.debug("step %d: loss %.6f", self.step, value)
        return record

    def train(self, steps: Optional[int] = None) -> TrainResult:
        """
        Run until the step counter reaches steps (default: config.steps).
        """
        target = self._config.steps if steps is None else steps
        logger.info("Train fold %d for %d steps (start at step %d, %d parameters)",
                    self._config.fold_id, target, self.step, self.network.parameter_count())
        while self.step < target:
            self.train_step()
        return TrainResult(checkpoint=self.checkpoint(), losses=list(self.losses))

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params={name: tensor.numpy() for name, tensor in self.network.parameters().items()},
            step=self.step,
            config=self._config.to_dict(),
            moments=self.optimizer.moments,
            adam_t=self.optimizer.t,
        )

    @classmethod
    def from_checkpoint(
            cls,
            checkpoint: Checkpoint,
            source: EpisodeSourceABC,
            split: Optional[FoldSplit] = None,
    ) -> Trainer:
        """
        Resume training: parameters, optimizer state and step counter are restored.
        """
        network, config = network_from_checkpoint(checkpoint)
        trainer = cls(config=config, source=source, split=split, network=network)
        trainer.optimizer.load_state(t=checkpoint.adam_t, moments=checkpoint.moments)
        trainer.step = checkpoint.step
        return trainer


def train(
        config: TrainConfig,
        source: EpisodeSourceABC,
        split: Optional[FoldSplit] = None,
) -> TrainResult:
    return Trainer(config=config, source=source, split=split).train()


def network_predictor(network: OSADNetwork, em_iterations: Optional[int] = None) -> Predictor:
    """
    D^1 of every query computed without gradient recording.
    """

    def predict_episode(episode: Episode) -> list[np.ndarray]:
        with no_grad():
            output = network.forward(episode.support, episode.queries, em_iterations=em_iterations)
        return output.final_maps()

    return predict_episode


def constant_predictor(value: float = 1.0) -> Predictor:
    """
    Constant prediction maps; value 1 is the all-foreground baseline.
    """

    def predict_episode(episode: Episode) -> list[np.ndarray]:
        return [np.full(mask.shape, value, dtype=np.float64) for mask in episode.gt_masks]

    return predict_episode


def default_workers() -> int:
    return max(1, psutil.cpu_count(logical=False) or psutil.cpu_count() or 1)


def evaluate_episodes(
        predictor: Predictor,
        source: EpisodeSourceABC,
        split: FoldSplit,
        fold: int,
        n_episodes: int,
        n_queries: int,
        seed: int = 0,
        input_size: Optional[tuple[int, int]] = None,
        num_workers: Optional[int] = None,
) -> MetricsReport:
    """
    Evaluate a predictor on n_episodes test-role episodes of a fold using a pool of worker threads. The records are
    aggregated in episode order, independent of the number of workers.
    """
    if n_episodes < 1 or n_queries < 1:
        raise TrainerError(f"Invalid evaluation size: {n_episodes} episodes with {n_queries} queries")
    if num_workers is None:
        num_workers = default_workers()
    num_workers = max(1, min(num_workers, n_episodes))

    task_queue: queue.Queue = queue.Queue()
    for index in range(n_episodes):
        task_queue.put(index)

    results: dict[int, list[ImageMetrics]] = {}
    errors: dict[int, BaseException] = {}
    lock = threading.Lock()

    def worker(worker_id: int) -> None:
        while True:
            try:
                index = task_queue.get(block=False)
            except queue.Empty:
                logger.debug("[Worker %d] No more episodes to evaluate.", worker_id)
                break

            try:
                episode_seed = int(np.random.default_rng([seed, 13, index]).integers(2 ** 31 - 1))
                episode = sample_episode(source=source, split=split, fold=fold, role="test", n=n_queries,
                                         seed=episode_seed)
                if input_size is not None:
                    episode = fit_episode(episode, input_size)
                maps = predictor(episode)
                records = [evaluate_image(pred=pred, gt=gt, fold=fold, episode_id=index, image_id=image_id)
                           for image_id, (pred, gt) in enumerate(zip(maps, episode.gt_masks))]
                with lock:
                    results[index] = records
            except Exception as ex:  # pylint: disable=broad-exception-caught
                with lock:
                    errors[index] = ex
            finally:
                task_queue.task_done()

    logger.info("Evaluate fold %d on %d episodes (n = %d) using %d workers ...",
                fold, n_episodes, n_queries, num_workers)
    threads = []
    for i in range(num_workers):
        thread = threading.Thread(target=worker, args=(i,))
        thread.start()
        threads.append(thread)
    for thread in threads:
        thread.join()

    if errors:
        first = min(errors)
        raise errors[first]

    records = [rec for index in range(n_episodes) for rec in results[index]]
    report = MetricsReport.from_records(records, fold_id=fold)
    logger.info("Evaluation finished: IoU %.4f, MAE %.4f, E %.4f, CC %.4f over %d images",
                report.iou, report.mae, report.e_phi, report.cc, report.count)
    return report


def evaluate(
        checkpoint: Checkpoint,
        source: EpisodeSourceABC,
        fold: Optional[int] = None,
        split: Optional[FoldSplit] = None,
        n_episodes: Optional[int] = None,
        n_queries: Optional[int] = None,
        num_workers: Optional[int] = None,
        predictor: Optional[Predictor] = None,
) -> MetricsReport:
    """
    Evaluate a checkpoint on the test categories of a fold. The model parameters are not modified. A fold different
    from the training fold of the checkpoint is allowed but logged as warning.
    """
    network, config = network_from_checkpoint(checkpoint)
    if fold is None:
        fold = config.fold_id
    elif fold != config.fold_id:
        logger.warning("Fold mismatch: checkpoint was trained on fold %d, evaluating fold %d", config.fold_id, fold)
    if split is None:
        split = source.default_split(k=config.num_folds, seed=config.seed)

    return evaluate_episodes(
        predictor=predictor if predictor is not None else network_predictor(network),
        source=source,
        split=split,
        fold=fold,
        n_episodes=config.eval_episodes if n_episodes is None else n_episodes,
        n_queries=config.n_queries if n_queries is None else n_queries,
        seed=config.seed,
        input_size=config.input_shape(),
        num_workers=num_workers,
    )


def evaluate_baseline(
        source: EpisodeSourceABC,
        split: FoldSplit,
        fold: int,
        config: TrainConfig,
        n_episodes: Optional[int] = None,
        num_workers: Optional[int] = None,
) -> MetricsReport:
    """
    All-foreground baseline through the same episodes and metrics as evaluate().
    """
    return evaluate_episodes(
        predictor=constant_predictor(1.0),
        source=source,
        split=split,
        fold=fold,
        n_episodes=config.eval_episodes if n_episodes is None else n_episodes,
        n_queries=config.n_queries,
        seed=config.seed,
        input_size=config.input_shape(),
        num_workers=num_workers,
    )


def read_support(
        image_path: os.PathLike | str,
        annotation_path: os.PathLike | str,
) -> SupportSample:
    """
    Read a support image with its JSON annotation {"human_box": [...], "object_box": [...]}.
    """
    annotation_path = pathlib.Path(annotation_path)
    try:
        data = json.loads(annotation_path.read_text(encoding='utf-8'))
        human_box = BBox.from_list(data["human_box"])
        object_box = BBox.from_list(data["object_box"])
    except (OSError, ValueError, KeyError, TypeError) as ex:
        raise EpisodeError(f"Cannot read support annotation {annotation_path.as_posix()}: {ex}") from ex

    image = read_image(image_path)
    try:
        return SupportSample(image=image, human_box=human_box, object_box=object_box)
    except OSADModelError as ex:
        raise EpisodeError(f"Invalid support annotation {annotation_path.as_posix()}: {ex}") from ex


def predict(
        checkpoint: Checkpoint,
        support_image: os.PathLike | str,
        support_annotation: os.PathLike | str,
        query_images: Sequence[os.PathLike | str],
        out_dir: os.PathLike | str,
) -> pathlib.Path:
    """
    Write one 8-bit grayscale PNG per query (round(255 D^1), at the size of the query image) and manifest.json into
    out_dir. The mask is named after the query file stem, so the stems must be distinct. Returns the manifest path.
    """
    if not query_images:
        raise TrainerError("At least one query image is needed!")
    stems = [pathlib.Path(path).stem for path in query_images]
    duplicates = sorted({stem for stem in stems if stems.count(stem) > 1})
    if duplicates:
        raise TrainerError(f"Query images would share an output mask name: {duplicates}")
    network, config = network_from_checkpoint(checkpoint)
    size = config.input_shape()

    support = fit_support(read_support(support_image, support_annotation), size)
    originals = [read_image(path) for path in query_images]
    queries = [resize_hw(image, size) for image in originals]

    with no_grad():
        output = network.forward(support, queries)

    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for path, original, d_1 in zip(query_images, originals, output.final_maps()):
        path = pathlib.Path(path)
        height, width = original.shape[1:]
        prob = resize_hw(np.asarray(d_1, dtype=np.float64), (height, width))
        pixels = np.rint(255.0 * np.clip(prob, 0.0, 1.0)).astype(np.uint8)
        mask_path = out_dir / f"{path.stem}.png"
        write_gray(mask_path, pixels)
        entries.append({"query": path.as_posix(), "mask": mask_path.name, "width": width, "height": height})

    manifest = {
        "support": pathlib.Path(support_image).as_posix(),
        "support_annotation": pathlib.Path(support_annotation).as_posix(),
        "step": checkpoint.step,
        "outputs": entries,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding='utf-8')
    logger.info("Wrote %d prediction masks to %s", len(entries), out_dir.as_posix())
    return manifest_path
