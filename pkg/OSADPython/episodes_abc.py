# -*- coding: utf-8 -*-
"""
Definition of the episode record, the category folds and the base class of all episode sources.

An episode is one support sample plus n query images with their ground truth masks, all of one affordance category.
Sources are stateless: an episode is a pure function of (affordance_id, n, seed).
"""

from __future__ import annotations

import abc
import dataclasses
import logging
from typing import Iterable, Literal

import numpy as np

from OSADPython.purpose_learning import (
    SupportSample,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

DEFAULT_FOLDS: int = 3
DEFAULT_QUERIES: int = 5

EpisodeRole = Literal["train", "test"]


class EpisodeError(Exception):
    """
    Exception used for episode generation, fold handling and sampling.
    """


class DataValidationError(EpisodeError):
    """
    Malformed on-disk data; the message lists every issue with the file path.
    """

    def __init__(self, issues: list[str]) -> None:
        self.issues = list(issues)
        super().__init__("Data validation failed:\n" + "\n".join(f"  {issue}" for issue in self.issues))


@dataclasses.dataclass
class Episode:
    """
    One training / evaluation unit.

    Attributes:
        support: support image with the person and object boxes
        queries: n query images, 3 x H x W float32 in [0, 1]
        gt_masks: n binary masks (H x W uint8, values 0 / 1)
        affordance_id: category label
        seed: seed the episode was generated / sampled with
    """
    support: SupportSample
    queries: list[np.ndarray]
    gt_masks: list[np.ndarray]
    affordance_id: int
    seed: int

    def __post_init__(self) -> None:
        if len(self.queries) < 1:
            raise EpisodeError("An episode needs at least one query image!")
        if len(self.queries) != len(self.gt_masks):
            raise EpisodeError(f"Episode has {len(self.queries)} queries but {len(self.gt_masks)} masks")
        for idx, (query, mask) in enumerate(zip(self.queries, self.gt_masks)):
            if query.ndim != 3 or query.shape[1:] != mask.shape:
                raise EpisodeError(f"Query {idx}: image shape {query.shape} does not match mask shape {mask.shape}")

    @property
    def n(self) -> int:
        return len(self.queries)


@dataclasses.dataclass
class FoldSplit:
    """
    k disjoint parts of the affordance category ids. Fold f (1-based) tests on part f and trains on all other parts.
    """
    parts: list[list[int]]

    def __post_init__(self) -> None:
        self.parts = [sorted(int(c) for c in part) for part in self.parts]
        seen: set[int] = set()
        for part in self.parts:
            overlap = seen.intersection(part)
            if overlap:
                raise EpisodeError(f"Fold parts are not disjoint, categories {sorted(overlap)} appear twice")
            seen.update(part)

    @property
    def k(self) -> int:
        return len(self.parts)

    def all_categories(self) -> list[int]:
        return sorted(c for part in self.parts for c in part)

    def _check_fold(self, fold: int) -> None:
        if not 1 <= fold <= self.k:
            raise EpisodeError(f"Invalid fold {fold}; valid folds are 1 .. {self.k}")

    def test_categories(self, fold: int) -> list[int]:
        self._check_fold(fold)
        return list(self.parts[fold - 1])

    def train_categories(self, fold: int) -> list[int]:
        self._check_fold(fold)
        return sorted(c for idx, part in enumerate(self.parts, start=1) if idx != fold for c in part)

    def categories(self, fold: int, role: EpisodeRole) -> list[int]:
        if role == "train":
            return self.train_categories(fold)
        if role == "test":
            return self.test_categories(fold)
        raise EpisodeError(f"Invalid episode role: {repr(role)}")


def kfold_split(
        categories: Iterable[int],
        k: int = DEFAULT_FOLDS,
        seed: int = 0,
) -> FoldSplit:
    """
    Seeded partition of the categories (never of images) into k parts whose sizes differ by at most one.
    """
    cats = sorted(set(int(c) for c in categories))
    if k < 1:
        raise EpisodeError(f"Invalid number of folds: {k}")
    if k > len(cats):
        raise EpisodeError(f"Cannot split {len(cats)} categories into {k} folds")

    rng = np.random.default_rng([seed, 5])
    perm = rng.permutation(len(cats))
    parts = [[cats[int(i)] for i in chunk] for chunk in np.array_split(perm, k)]
    return FoldSplit(parts=parts)


class EpisodeSourceABC(metaclass=abc.ABCMeta):
    """
    Base class of all episode suppliers (synthetic generator, PAD-style directory).
    """

    @abc.abstractmethod
    def categories(self) -> list[int]:
        """
        Return the affordance ids this source can produce episodes for.
        """

    @abc.abstractmethod
    def episode(self, affordance_id: int, n: int, seed: int) -> Episode:
        """
        Return the episode of one category; deterministic given the arguments.
        """

    def default_split(self, k: int = DEFAULT_FOLDS, seed: int = 0) -> FoldSplit:
        return kfold_split(self.categories(), k=k, seed=seed)


def sample_category(
        split: FoldSplit,
        fold: int,
        role: EpisodeRole,
        seed: int,
) -> int:
    """
    Uniformly draw one category of the fold role.
    """
    cats = split.categories(fold, role)
    if not cats:
        raise EpisodeError(f"Fold {fold} has no {role} categories!")
    rng = np.random.default_rng([seed, 6])
    return cats[int(rng.integers(len(cats)))]


def sample_episode(
        source: EpisodeSourceABC,
        split: FoldSplit,
        fold: int,
        role: EpisodeRole,
        n: int = DEFAULT_QUERIES,
        seed: int = 0,
) -> Episode:
    """
    Draw a category of the fold role, then a support sample and n queries of that category.

    Args:
        source: episode supplier
        split: category folds
        fold: 1-based fold id
        role: 'train' or 'test'
        n: number of query images (n >= 1)
        seed: sampling seed
    """
    if n < 1:
        raise EpisodeError(f"Invalid number of queries: {n}")
    affordance_id = sample_category(split=split, fold=fold, role=role, seed=seed)
    episode_seed = int(np.random.default_rng([seed, 7]).integers(2 ** 31 - 1))
    logger.debug("Sample %s episode: fold %d, category %d, seed %d", role, fold, affordance_id, episode_seed)
    return source.episode(affordance_id=affordance_id, n=n, seed=episode_seed)
