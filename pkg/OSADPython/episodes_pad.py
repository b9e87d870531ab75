# -*- coding: utf-8 -*-
"""
PAD-style on-disk data: loader with validation, episode source and the writer used by `gen-data`.

Layout below the root directory:

    images/<id>.png             8-bit RGB query image; <id> starts with '<affordance_id>_'
    masks/<id>.png              8-bit grayscale, > 127 = foreground
    support/<id>.png            support image
    support/<id>.json           {"human_box": [x0, y0, x1, y1], "object_box": [...], "affordance_id": int}
    categories.json             {"<affordance_id>": "<name>", ...}
    splits/fold_<k>.json        list of the category ids of part k (k = 1, 2, 3)

All coordinates are integer pixel positions with the origin at the top-left corner.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import pathlib
from typing import Any, Optional

import numpy as np
from PIL import Image

from OSADPython.episodes_abc import (
    DEFAULT_FOLDS,
    DataValidationError,
    Episode,
    EpisodeError,
    EpisodeSourceABC,
    FoldSplit,
    kfold_split,
)
from OSADPython.purpose_learning import (
    BBox,
    SupportSample,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

MASK_THRESHOLD: int = 127


def read_image(path: os.PathLike | str, size: Optional[tuple[int, int]] = None) -> np.ndarray:
    """
    Read an image as 3 x H x W float32 in [0, 1]; optionally resized to size = (height, width).
    """
    path = pathlib.Path(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if size is not None and (rgb.height, rgb.width) != tuple(size):
                rgb = rgb.resize((size[1], size[0]), resample=Image.Resampling.BILINEAR)
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (OSError, ValueError) as ex:
        raise EpisodeError(f"Cannot read image {path.as_posix()}: {ex}") from ex
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_mask(path: os.PathLike | str, size: Optional[tuple[int, int]] = None) -> np.ndarray:
    """
    Read a grayscale mask as H x W uint8 with values 0 / 1.
    """
    path = pathlib.Path(path)
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            if size is not None and (gray.height, gray.width) != tuple(size):
                gray = gray.resize((size[1], size[0]), resample=Image.Resampling.NEAREST)
            arr = np.asarray(gray)
    except (OSError, ValueError) as ex:
        raise EpisodeError(f"Cannot read mask {path.as_posix()}: {ex}") from ex
    return (arr > MASK_THRESHOLD).astype(np.uint8)


def write_image(path: os.PathLike | str, image: np.ndarray) -> None:
    """
    Write a 3 x H x W image in [0, 1] as 8-bit RGB PNG.
    """
    arr = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def write_gray(path: os.PathLike | str, values: np.ndarray) -> None:
    """
    Write an H x W uint8 array as 8-bit grayscale PNG.
    """
    Image.fromarray(np.asarray(values, dtype=np.uint8)).save(path, format="PNG")


def _image_size(path: pathlib.Path, issues: list[str]) -> Optional[tuple[int, int]]:
    try:
        with Image.open(path) as img:
            return img.height, img.width
    except (OSError, ValueError) as ex:
        # PIL.UnidentifiedImageError is an OSError
        issues.append(f"{path.as_posix()}: unreadable image ({ex})")
        return None


@dataclasses.dataclass(frozen=True)
class PADImage:
    image_id: str
    image_path: pathlib.Path
    mask_path: pathlib.Path
    affordance_id: int


@dataclasses.dataclass(frozen=True)
class PADSupport:
    support_id: str
    image_path: pathlib.Path
    annotation_path: pathlib.Path
    human_box: BBox
    object_box: BBox
    affordance_id: int


@dataclasses.dataclass
class PADDataset:
    """
    Indexed access to the validated records of a PAD-style directory. Records which failed validation in non-strict
    mode are listed in issues.
    """
    root: pathlib.Path
    categories: dict[int, str]
    images: list[PADImage]
    supports: list[PADSupport]
    folds: Optional[FoldSplit] = None
    issues: list[str] = dataclasses.field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def summary(self) -> dict[str, Any]:
        return {
            "root": self.root.as_posix(),
            "images": len(self.images),
            "supports": len(self.supports),
            "categories": len(self.categories),
            "folds": 0 if self.folds is None else self.folds.k,
            "issues": len(self.issues),
        }

    def images_of(self, affordance_id: int) -> list[PADImage]:
        return [rec for rec in self.images if rec.affordance_id == affordance_id]

    def supports_of(self, affordance_id: int) -> list[PADSupport]:
        return [rec for rec in self.supports if rec.affordance_id == affordance_id]

    def load_query(self, rec: PADImage, size: Optional[tuple[int, int]] = None) -> tuple[np.ndarray, np.ndarray]:
        return read_image(rec.image_path, size=size), read_mask(rec.mask_path, size=size)

    def load_support(self, rec: PADSupport, size: Optional[tuple[int, int]] = None) -> SupportSample:
        image = read_image(rec.image_path)
        human_box = rec.human_box
        object_box = rec.object_box
        if size is not None and image.shape[1:] != tuple(size):
            sy = size[0] / image.shape[1]
            sx = size[1] / image.shape[2]
            image = read_image(rec.image_path, size=size)
            human_box = _clamp_box(human_box.scaled(sx, sy), size)
            object_box = _clamp_box(object_box.scaled(sx, sy), size)
        return SupportSample(image=image, human_box=human_box, object_box=object_box)


def _clamp_box(box: BBox, size: tuple[int, int]) -> BBox:
    h, w = size
    x0 = min(box.x0, w - 1)
    y0 = min(box.y0, h - 1)
    return BBox(x0, y0, min(max(box.x1, x0 + 1), w), min(max(box.y1, y0 + 1), h))


def _load_json(path: pathlib.Path, issues: list[str]) -> Any:
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except (OSError, ValueError) as ex:
        issues.append(f"{path.as_posix()}: unreadable JSON ({ex})")
        return None


def _category_of(image_id: str) -> Optional[int]:
    prefix, _, rest = image_id.partition('_')
    if not rest:
        return None
    try:
        return int(prefix)
    except ValueError:
        return None


def _check_box(
        values: Any,
        name: str,
        size: tuple[int, int],
        path: pathlib.Path,
) -> tuple[Optional[BBox], list[str]]:
    if not isinstance(values, (list, tuple)) or len(values) != 4 or not all(isinstance(v, int) for v in values):
        return None, [f"{path.as_posix()}: {name} must be 4 integers [x0, y0, x1, y1], got {values}"]
    x0, y0, x1, y1 = values
    h, w = size
    issues = []
    if x1 <= x0 or y1 <= y0:
        issues.append(f"{path.as_posix()}: {name} {values} is empty (x1 <= x0 or y1 <= y0)")
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        issues.append(f"{path.as_posix()}: {name} {values} outside image bounds {w}x{h}")
    if issues:
        return None, issues
    return BBox(x0, y0, x1, y1), []


def _load_folds(root: pathlib.Path, categories: dict[int, str], issues: list[str]) -> Optional[FoldSplit]:
    split_dir = root / "splits"
    files = sorted(split_dir.glob("fold_*.json")) if split_dir.is_dir() else []
    if not files:
        return None

    parts = []
    for idx in range(1, len(files) + 1):
        path = split_dir / f"fold_{idx}.json"
        data = _load_json(path, issues) if path.is_file() else None
        if data is None:
            issues.append(f"{path.as_posix()}: missing fold file")
            return None
        if isinstance(data, dict):
            data = data.get("categories")
        if not isinstance(data, list) or not all(isinstance(c, int) for c in data):
            issues.append(f"{path.as_posix()}: fold file must list integer category ids")
            return None
        unknown = [c for c in data if c not in categories]
        if unknown:
            issues.append(f"{path.as_posix()}: unknown category ids {unknown}")
            return None
        parts.append(data)

    try:
        return FoldSplit(parts=parts)
    except EpisodeError as ex:
        issues.append(f"{split_dir.as_posix()}: {ex}")
        return None


def load_pad_dir(root: os.PathLike | str, strict: bool = True) -> PADDataset:
    """
    Index and validate a PAD-style directory.

    With strict=True any malformed record raises DataValidationError listing all issues; otherwise malformed records
    are skipped (with a warning) and listed in PADDataset.issues.
    """
    root = pathlib.Path(root)
    if not root.is_dir():
        raise DataValidationError([f"{root.as_posix()}: not a directory"])

    issues: list[str] = []

    # without categories.json the categories are taken from the records
    categories: dict[int, str] = {}
    cat_file = root / "categories.json"
    infer_categories = not cat_file.is_file()

    def known(affordance_id: Any) -> bool:
        if not isinstance(affordance_id, int):
            return False
        if infer_categories:
            categories.setdefault(affordance_id, f"category_{affordance_id}")
        return affordance_id in categories

    if not infer_categories:
        data = _load_json(cat_file, issues)
        if isinstance(data, dict):
            try:
                categories = {int(key): str(value) for key, value in data.items()}
            except ValueError:
                issues.append(f"{cat_file.as_posix()}: category ids must be integers")
        elif data is not None:
            issues.append(f"{cat_file.as_posix()}: expected a mapping of ids to names")

    images: list[PADImage] = []
    image_dir = root / "images"
    mask_dir = root / "masks"
    for path in sorted(image_dir.glob("*.png")) if image_dir.is_dir() else []:
        image_id = path.stem
        mask_path = mask_dir / f"{image_id}.png"
        affordance_id = _category_of(image_id)
        if not mask_path.is_file():
            issues.append(f"{path.as_posix()}: missing mask {mask_path.as_posix()}")
            continue
        if not known(affordance_id):
            issues.append(f"{path.as_posix()}: unknown category id in image name {repr(image_id)}")
            continue
        image_size = _image_size(path, issues)
        mask_size = _image_size(mask_path, issues)
        if image_size is None or mask_size is None:
            continue
        if image_size != mask_size:
            issues.append(f"{mask_path.as_posix()}: mask size differs from image size")
            continue
        images.append(PADImage(image_id=image_id, image_path=path, mask_path=mask_path, affordance_id=affordance_id))

    supports: list[PADSupport] = []
    support_dir = root / "support"
    for path in sorted(support_dir.glob("*.json")) if support_dir.is_dir() else []:
        image_path = path.with_suffix(".png")
        if not image_path.is_file():
            issues.append(f"{path.as_posix()}: missing support image {image_path.as_posix()}")
            continue
        data = _load_json(path, issues)
        if not isinstance(data, dict):
            if data is not None:
                issues.append(f"{path.as_posix()}: expected a JSON object")
            continue
        affordance_id = data.get("affordance_id")
        if not known(affordance_id):
            issues.append(f"{path.as_posix()}: unknown category id {repr(affordance_id)}")
            continue
        size = _image_size(image_path, issues)
        if size is None:
            continue
        human_box, human_issues = _check_box(data.get("human_box"), "human_box", size, path)
        object_box, object_issues = _check_box(data.get("object_box"), "object_box", size, path)
        if human_box is None or object_box is None:
            issues.extend(human_issues + object_issues)
            continue
        supports.append(PADSupport(
            support_id=path.stem,
            image_path=image_path,
            annotation_path=path,
            human_box=human_box,
            object_box=object_box,
            affordance_id=affordance_id,
        ))

    folds = _load_folds(root, categories, issues)

    if issues:
        if strict:
            raise DataValidationError(issues)
        for issue in issues:
            logger.warning("Skip malformed record: %s", issue)

    dataset = PADDataset(
        root=root,
        categories=categories,
        images=images,
        supports=supports,
        folds=folds,
        issues=issues,
    )
    logger.info("Loaded PAD directory %s: %s", root.as_posix(), dataset.summary())
    return dataset


class PADEpisodeSource(EpisodeSourceABC):
    """
    Episode source on top of a PADDataset. Images are resized to input_size = (height, width) if given.
    """

    def __init__(
            self,
            dataset: PADDataset,
            input_size: Optional[tuple[int, int]] = None,
    ) -> None:
        self._dataset = dataset
        self._input_size = input_size

    @property
    def dataset(self) -> PADDataset:
        return self._dataset

    def categories(self) -> list[int]:
        """
        Categories with at least one support record and one query image.
        """
        return sorted(c for c in self._dataset.categories
                      if self._dataset.images_of(c) and self._dataset.supports_of(c))

    def default_split(self, k: int = DEFAULT_FOLDS, seed: int = 0) -> FoldSplit:
        if self._dataset.folds is not None:
            return self._dataset.folds
        return kfold_split(self.categories(), k=k, seed=seed)

    def episode(self, affordance_id: int, n: int, seed: int) -> Episode:
        images = self._dataset.images_of(affordance_id)
        supports = self._dataset.supports_of(affordance_id)
        if not images or not supports:
            raise EpisodeError(f"Category {affordance_id} has {len(images)} images and {len(supports)} supports")

        rng = np.random.default_rng([seed, affordance_id])
        support_rec = supports[int(rng.integers(len(supports)))]
        picks = rng.choice(len(images), size=n, replace=n > len(images))

        queries = []
        masks = []
        for idx in picks:
            query, mask = self._dataset.load_query(images[int(idx)], size=self._input_size)
            queries.append(query)
            masks.append(mask)

        return Episode(
            support=self._dataset.load_support(support_rec, size=self._input_size),
            queries=queries,
            gt_masks=masks,
            affordance_id=affordance_id,
            seed=seed,
        )


def write_episode(root: os.PathLike | str, episode: Episode, index: int) -> list[str]:
    """
    Append one episode to a PAD-style directory; returns the ids of the written query images.
    """
    root = pathlib.Path(root)
    for sub in ("images", "masks", "support"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    support_id = f"{episode.affordance_id}_{index:05d}"
    write_image(root / "support" / f"{support_id}.png", episode.support.image)
    annotation = {
        "human_box": episode.support.human_box.as_list(),
        "object_box": episode.support.object_box.as_list(),
        "affordance_id": int(episode.affordance_id),
    }
    (root / "support" / f"{support_id}.json").write_text(json.dumps(annotation), encoding='utf-8')

    ids = []
    for q_idx, (query, mask) in enumerate(zip(episode.queries, episode.gt_masks)):
        image_id = f"{support_id}_{q_idx}"
        write_image(root / "images" / f"{image_id}.png", query)
        write_gray(root / "masks" / f"{image_id}.png", np.asarray(mask, dtype=np.uint8) * 255)
        ids.append(image_id)
    return ids


def write_metadata(
        root: os.PathLike | str,
        categories: dict[int, str],
        split: FoldSplit,
) -> None:
    """
    Write categories.json and splits/fold_<k>.json.
    """
    root = pathlib.Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "categories.json").write_text(
        json.dumps({str(key): value for key, value in sorted(categories.items())}, indent=2),
        encoding='utf-8',
    )
    split_dir = root / "splits"
    split_dir.mkdir(exist_ok=True)
    for idx, part in enumerate(split.parts, start=1):
        (split_dir / f"fold_{idx}.json").write_text(json.dumps(part), encoding='utf-8')

