# -*- coding: utf-8 -*-
"""
Deterministic synthetic affordance scenes at 64 x 64.

Affordances are geometric predicates on the object outline, not on the object name:

* CONTAIN: a closed outline with an upward opening (cup, box and bowl profiles)
* SUPPORT: a horizontal slab on at least two vertical legs (table and bench profiles)
* ROLL: a convex round outline (ball and wheel profiles)

Neutral objects look similar but fail every predicate (a closed crate, a slab on a single post). Objects never
overlap; every query mask is the union of the objects satisfying the episode predicate. A support scene shows one
qualifying object touched by an agent blob at its interaction surface (rim, top or side).
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional, Sequence

import numpy as np

from OSADPython.episodes_abc import (
    DEFAULT_QUERIES,
    Episode,
    EpisodeError,
    EpisodeSourceABC,
)
from OSADPython.purpose_learning import (
    BBox,
    SupportSample,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

CANVAS_SIZE: int = 64

CONTAIN: int = 0
SUPPORT: int = 1
ROLL: int = 2

FAMILIES: tuple[int, ...] = (CONTAIN, SUPPORT, ROLL)
FAMILY_NAMES: dict[int, str] = {
    CONTAIN: "contain",
    SUPPORT: "support",
    ROLL: "roll",
}

BACKGROUND_LEVEL: float = 0.1
AGENT_LEVEL: float = 0.45


@dataclasses.dataclass(frozen=True)
class Geometry:
    """
    Outline properties the affordance predicates are evaluated on.
    """
    open_top: bool = False
    round: bool = False
    slab: bool = False
    legs: int = 0


KIND_GEOMETRY: dict[str, Geometry] = {
    "cup": Geometry(open_top=True),
    "box": Geometry(open_top=True),
    "bowl": Geometry(open_top=True),
    "crate": Geometry(),
    "table": Geometry(slab=True, legs=2),
    "bench": Geometry(slab=True, legs=3),
    "pedestal": Geometry(slab=True, legs=1),
    "ball": Geometry(round=True),
    "wheel": Geometry(round=True),
}

FAMILY_KINDS: dict[int, tuple[str, ...]] = {
    CONTAIN: ("cup", "box", "bowl"),
    SUPPORT: ("table", "bench"),
    ROLL: ("ball", "wheel"),
}
NEUTRAL_KINDS: tuple[str, ...] = ("crate", "pedestal")

# (width range, height range) per kind, inclusive; round kinds use the width range for both extents
KIND_SIZES: dict[str, tuple[tuple[int, int], tuple[int, int]]] = {
    "cup": ((12, 18), (18, 26)),
    "box": ((20, 26), (12, 18)),
    "bowl": ((18, 26), (10, 14)),
    "crate": ((14, 22), (14, 22)),
    "table": ((20, 26), (14, 22)),
    "bench": ((22, 26), (10, 14)),
    "pedestal": ((16, 24), (16, 22)),
    "ball": ((12, 22), (12, 22)),
    "wheel": ((16, 24), (16, 24)),
}


@dataclasses.dataclass(frozen=True)
class SceneObject:
    """
    One object placed in its bounding box [x0, x1) x [y0, y1) with a uniform intensity.
    """
    kind: str
    x0: int
    y0: int
    x1: int
    y1: int
    intensity: float = 0.8

    def __post_init__(self) -> None:
        if self.kind not in KIND_GEOMETRY:
            raise EpisodeError(f"Unknown object kind: {repr(self.kind)}")
        if self.x1 - self.x0 < 4 or self.y1 - self.y0 < 4:
            raise EpisodeError(f"Object {repr(self.kind)} is too small: {self.bbox().as_list()}")

    @property
    def geometry(self) -> Geometry:
        return KIND_GEOMETRY[self.kind]

    def bbox(self) -> BBox:
        return BBox(self.x0, self.y0, self.x1, self.y1)


@dataclasses.dataclass(frozen=True)
class TextureDistractor:
    """
    Low contrast stripe patch on the background; never part of a mask.
    """
    x0: int
    y0: int
    x1: int
    y1: int
    period: int = 4
    vertical: bool = False
    amplitude: float = 0.15


@dataclasses.dataclass(frozen=True)
class AgentBlob:
    """
    Elliptic agent (person) blob of the support scene.
    """
    cx: float
    cy: float
    rx: float
    ry: float


@dataclasses.dataclass
class SceneRender:
    """
    Rendered scene: 3 x H x W image in [0, 1], the affordance mask (H x W, 0 / 1) and one boolean mask per object.
    """
    image: np.ndarray
    mask: np.ndarray
    object_masks: list[np.ndarray]
    agent_mask: Optional[np.ndarray] = None


def check_affordance(affordance_id: int) -> None:
    if affordance_id not in FAMILIES:
        raise EpisodeError(f"Unknown affordance id {affordance_id}; known ids are {list(FAMILIES)}")


def affords(obj: SceneObject, affordance_id: int) -> bool:
    """
    Geometric affordance predicate of an object.
    """
    check_affordance(affordance_id)
    geo = obj.geometry
    if affordance_id == CONTAIN:
        return geo.open_top
    if affordance_id == SUPPORT:
        return geo.slab and geo.legs >= 2
    return geo.round and not geo.open_top


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    return yy.astype(np.float64), xx.astype(np.float64)


def rasterize_object(obj: SceneObject, size: int = CANVAS_SIZE) -> np.ndarray:
    """
    Boolean pixel mask of a single object.
    """
    yy, xx = _grid(size)
    x0, y0, x1, y1 = obj.x0, obj.y0, obj.x1, obj.y1
    w = x1 - x0
    h = y1 - y0
    t = max(2, min(w, h) // 6)
    inside = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
    cx = (x0 + x1 - 1) / 2.0
    cy = (y0 + y1 - 1) / 2.0

    if obj.kind in ("cup", "box"):
        cavity = (xx >= x0 + t) & (xx < x1 - t) & (yy < y1 - t)
        shape = inside & ~cavity
    elif obj.kind == "bowl":
        rx = w / 2.0
        ry = float(h)
        outer = ((xx - cx) / rx) ** 2 + ((yy - y0) / ry) ** 2 <= 1.0
        inner = ((xx - cx) / (rx - t)) ** 2 + ((yy - y0) / (ry - t)) ** 2 <= 1.0
        shape = inside & outer & ~inner
    elif obj.kind == "crate":
        shape = inside
    elif obj.kind in ("table", "bench", "pedestal"):
        slab = inside & (yy < y0 + t)
        if obj.kind == "pedestal":
            starts = [x0 + (w - t) // 2]
        elif obj.kind == "bench":
            starts = [x0, x0 + (w - t) // 2, x1 - t]
        else:
            starts = [x0, x1 - t]
        legs = np.zeros_like(inside)
        for start in starts:
            legs |= (xx >= start) & (xx < start + t)
        shape = slab | (inside & legs)
    else:
        r = min(w, h) / 2.0
        dist2 = (xx - cx) ** 2 + (yy - cy) ** 2
        disc = inside & (dist2 <= r * r)
        if obj.kind == "wheel":
            hub = dist2 <= max(1.5, r / 4.0) ** 2
            shape = (disc & (dist2 > (r - t) ** 2)) | (disc & hub)
        else:
            shape = disc

    return shape


def rasterize_agent(agent: AgentBlob, size: int = CANVAS_SIZE) -> np.ndarray:
    yy, xx = _grid(size)
    return ((xx - agent.cx) / agent.rx) ** 2 + ((yy - agent.cy) / agent.ry) ** 2 <= 1.0


def _stripes(distractor: TextureDistractor, size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = _grid(size)
    region = (xx >= distractor.x0) & (xx < distractor.x1) & (yy >= distractor.y0) & (yy < distractor.y1)
    coord = xx if distractor.vertical else yy
    values = distractor.amplitude * (0.5 + 0.5 * np.sin(2.0 * np.pi * coord / distractor.period))
    return region, values


def render_scene(
        objects: Sequence[SceneObject],
        affordance_id: int,
        distractors: Sequence[TextureDistractor] = (),
        agent: Optional[AgentBlob] = None,
        size: int = CANVAS_SIZE,
) -> SceneRender:
    """
    Rasterize an explicit object list. The mask marks all objects satisfying affords(obj, affordance_id).
    """
    check_affordance(affordance_id)

    gray = np.full((size, size), BACKGROUND_LEVEL, dtype=np.float64)
    for distractor in distractors:
        region, values = _stripes(distractor, size)
        gray[region] = BACKGROUND_LEVEL + values[region]

    occupied = np.zeros((size, size), dtype=bool)
    agent_mask = None
    if agent is not None:
        agent_mask = rasterize_agent(agent, size)
        gray[agent_mask] = AGENT_LEVEL
        occupied |= agent_mask

    mask = np.zeros((size, size), dtype=np.uint8)
    object_masks = []
    for obj in objects:
        shape = rasterize_object(obj, size)
        if np.any(occupied & shape):
            raise EpisodeError(f"Object {repr(obj.kind)} at {obj.bbox().as_list()} overlaps another scene element")
        occupied |= shape
        gray[shape] = obj.intensity
        if affords(obj, affordance_id):
            mask[shape] = 1
        object_masks.append(shape)

    image = np.repeat(gray[None], 3, axis=0).astype(np.float32)
    return SceneRender(image=image, mask=mask, object_masks=object_masks, agent_mask=agent_mask)


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _extent(rng: np.random.Generator, kind: str) -> tuple[int, int]:
    (w_lo, w_hi), (h_lo, h_hi) = KIND_SIZES[kind]
    w = int(rng.integers(w_lo, w_hi + 1))
    if KIND_GEOMETRY[kind].round:
        return w, w
    return w, int(rng.integers(h_lo, h_hi + 1))


def _place_in_slot(rng: np.random.Generator, kind: str, slot: int) -> SceneObject:
    # slots are the four 32 x 32 quadrants of the canvas
    half = CANVAS_SIZE // 2
    qx = (slot % 2) * half
    qy = (slot // 2) * half
    w, h = _extent(rng, kind)
    x0 = qx + int(rng.integers(2, half - w - 1))
    y0 = qy + int(rng.integers(2, half - h - 1))
    return SceneObject(kind=kind, x0=x0, y0=y0, x1=x0 + w, y1=y0 + h, intensity=float(rng.uniform(0.6, 1.0)))


def _distractors(rng: np.random.Generator) -> list[TextureDistractor]:
    items = []
    for _ in range(int(rng.integers(1, 3))):
        w = int(rng.integers(10, 25))
        h = int(rng.integers(10, 25))
        x0 = int(rng.integers(0, CANVAS_SIZE - w))
        y0 = int(rng.integers(0, CANVAS_SIZE - h))
        items.append(TextureDistractor(
            x0=x0,
            y0=y0,
            x1=x0 + w,
            y1=y0 + h,
            period=int(rng.integers(3, 7)),
            vertical=bool(rng.integers(2)),
            amplitude=float(rng.uniform(0.1, 0.25)),
        ))
    return items


def query_objects(
        rng: np.random.Generator,
        affordance_id: int,
        negative: bool = False,
) -> list[SceneObject]:
    """
    Draw 2 - 4 non overlapping objects from at least two families. A positive query holds at least one qualifying
    object, a negative one none.
    """
    others = [f for f in FAMILIES if f != affordance_id]
    count = int(rng.integers(2, 5))
    if negative:
        kinds = [_pick(rng, FAMILY_KINDS[f]) for f in others]
        pool = [k for f in others for k in FAMILY_KINDS[f]] + list(NEUTRAL_KINDS)
    else:
        kinds = [_pick(rng, FAMILY_KINDS[affordance_id]), _pick(rng, FAMILY_KINDS[others[int(rng.integers(2))]])]
        pool = list(KIND_GEOMETRY)
    while len(kinds) < count:
        kinds.append(_pick(rng, pool))

    slots = rng.permutation(4)
    return [_place_in_slot(rng, kind, int(slot)) for kind, slot in zip(kinds, slots)]


def support_scene(
        rng: np.random.Generator,
        affordance_id: int,
) -> tuple[SceneObject, AgentBlob]:
    """
    One qualifying object and the agent blob touching its interaction surface.
    """
    kind = _pick(rng, FAMILY_KINDS[affordance_id])
    (w_lo, w_hi), (h_lo, h_hi) = KIND_SIZES[kind]
    w = int(rng.integers(max(w_lo, 18), max(w_hi, 18) + 1))

    if affordance_id == ROLL:
        w = min(w, 24)
        x0 = int(rng.integers(28, CANVAS_SIZE - 2 - w + 1))
        y0 = int(rng.integers(12, CANVAS_SIZE - 2 - w + 1))
        obj = SceneObject(kind=kind, x0=x0, y0=y0, x1=x0 + w, y1=y0 + w, intensity=float(rng.uniform(0.6, 1.0)))
        rx = float(rng.integers(6, 10))
        ry = float(rng.integers(8, 12))
        agent = AgentBlob(cx=x0 - rx - 0.5, cy=(y0 + obj.y1 - 1) / 2.0, rx=rx, ry=ry)
        return obj, agent

    h = int(rng.integers(h_lo, h_hi + 1))
    x0 = int(rng.integers(10, CANVAS_SIZE - 10 - w + 1))
    y1 = int(rng.integers(54, 63))
    obj = SceneObject(kind=kind, x0=x0, y0=y1 - h, x1=x0 + w, y1=y1, intensity=float(rng.uniform(0.6, 1.0)))
    rx = float(rng.integers(6, 10))
    ry = float(rng.integers(7, 11))
    agent = AgentBlob(cx=(x0 + obj.x1 - 1) / 2.0, cy=obj.y0 - ry - 0.5, rx=rx, ry=ry)
    return obj, agent


def _bounds(mask: np.ndarray) -> BBox:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    if rows.size == 0:
        raise EpisodeError("Cannot compute the box of an empty mask!")
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def generate_synthetic(
        seed: int,
        affordance_id: int,
        n: int = DEFAULT_QUERIES,
        negative_query_rate: float = 0.0,
) -> Episode:
    """
    Generate one synthetic episode; bitwise identical for identical arguments.

    Args:
        seed: generation seed
        affordance_id: CONTAIN, SUPPORT or ROLL
        n: number of query images
        negative_query_rate: probability of a query without any qualifying object
    """
    check_affordance(affordance_id)
    if n < 1:
        raise EpisodeError(f"Invalid number of queries: {n}")
    if not 0.0 <= negative_query_rate <= 1.0:
        raise EpisodeError(f"Invalid negative query rate: {negative_query_rate}")

    rng = np.random.default_rng([seed, affordance_id])

    obj, agent = support_scene(rng, affordance_id)
    scene = render_scene([obj], affordance_id, distractors=_distractors(rng), agent=agent)
    support = SupportSample(
        image=scene.image,
        human_box=_bounds(scene.agent_mask),
        object_box=_bounds(scene.object_masks[0]),
    )

    queries = []
    masks = []
    for _ in range(n):
        negative = negative_query_rate > 0.0 and bool(rng.random() < negative_query_rate)
        objects = query_objects(rng, affordance_id, negative=negative)
        rendered = render_scene(objects, affordance_id, distractors=_distractors(rng))
        queries.append(rendered.image)
        masks.append(rendered.mask)

    return Episode(support=support, queries=queries, gt_masks=masks, affordance_id=affordance_id, seed=seed)


class SyntheticEpisodeSource(EpisodeSourceABC):
    """
    Episode source backed by generate_synthetic().
    """

    def __init__(
            self,
            families: Sequence[int] = FAMILIES,
            negative_query_rate: float = 0.0,
    ) -> None:
        for family in families:
            check_affordance(family)
        self._families = sorted(set(families))
        self._negative_query_rate = negative_query_rate

    def categories(self) -> list[int]:
        return list(self._families)

    def episode(self, affordance_id: int, n: int, seed: int) -> Episode:
        if affordance_id not in self._families:
            raise EpisodeError(f"Affordance {affordance_id} is not part of this source ({self._families})")
        return generate_synthetic(
            seed=seed,
            affordance_id=affordance_id,
            n=n,
            negative_query_rate=self._negative_query_rate,
        )
