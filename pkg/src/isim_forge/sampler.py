"""Layout sampling: draw an object count, then chain classes through ``p_id``.

Per layout the order of random draws is fixed:

1. instance count N from ``p_in`` (rounded, clamped to [1, max_objects]);
2. first class from ``p_ic``;
3. for each of the N objects: aspect ratio, scale, center from that class's
   geometry (repeated on same-class overlap rejection), then the next class
   from the ``p_id`` row of the current class.

Pixel boxes use half-open integer edges: a box ``(x0, y0, x1, y1)`` covers
columns ``x0 <= x < x1`` and rows ``y0 <= y < y1``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .scdkg import Scdkg

MIN_IMAGE_SIDE = 32


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    max_objects: int = 100
    max_iou: float = 0.3
    max_retries: int = 10
    min_box_px: int = 2

    def validate(self) -> None:
        if self.max_objects < 1:
            raise SamplerError("max_objects must be >= 1")
        if not 0.0 <= self.max_iou <= 1.0:
            raise SamplerError("max_iou must lie in [0, 1]")
        if self.max_retries < 0:
            raise SamplerError("max_retries must be >= 0")
        if self.min_box_px < 1:
            raise SamplerError("min_box_px must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayoutObject:
    class_id: int
    class_name: str
    aspect_ratio: float
    scale: float
    center: tuple[float, float]
    bbox: tuple[int, int, int, int]

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class Layout:
    image_size: tuple[int, int]  # (W, H)
    objects: tuple[LayoutObject, ...]
    seed: int
    provenance: str
    class_table: Mapping[str, int] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_table)

    def class_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for o in self.objects:
            out[o.class_id] = out.get(o.class_id, 0) + 1
        return out


def box_from_geometry(
    aspect: float,
    scale: float,
    center: tuple[float, float],
    image_size: tuple[int, int],
    min_px: int = 2,
) -> tuple[int, int, int, int]:
    """Pixel box for (aspect, scale, center); clamped to the frame, grown to ``min_px``."""
    W, H = image_size
    side = scale * W
    root = math.sqrt(aspect)
    w, h = side * root, side / root
    cx, cy = center[0] * W, center[1] * H
    x0 = _clamp(math.floor(cx - w / 2 + 0.5), 0, W)
    x1 = _clamp(math.floor(cx + w / 2 + 0.5), 0, W)
    y0 = _clamp(math.floor(cy - h / 2 + 0.5), 0, H)
    y1 = _clamp(math.floor(cy + h / 2 + 0.5), 0, H)
    x0, x1 = _grow(x0, x1, W, min_px)
    y0, y1 = _grow(y0, y1, H, min_px)
    return x0, y0, x1, y1


def _clamp(v: int, lo: int, hi: int) -> int:
    return lo if v < lo else hi if v > hi else v


def _grow(a: int, b: int, limit: int, min_px: int) -> tuple[int, int]:
    if b - a >= min_px:
        return a, b
    mid = (a + b) // 2
    a = mid - min_px // 2
    b = a + min_px
    if a < 0:
        a, b = 0, min_px
    elif b > limit:
        a, b = limit - min_px, limit
    return a, b


def iou(a: Sequence[int], b: Sequence[int]) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def draw_count(g: Scdkg, rng: np.random.Generator, max_objects: int) -> int:
    n = math.floor(g.p_in.sample(rng) + 0.5)
    return _clamp(n, 1, max_objects)


def sample_layout(
    g: Scdkg,
    image_size: tuple[int, int] = (800, 800),
    seed: int = 0,
    cfg: SamplerConfig | None = None,
) -> Layout:
    cfg = cfg or SamplerConfig()
    cfg.validate()
    W, H = image_size
    if W < MIN_IMAGE_SIDE or H < MIN_IMAGE_SIDE:
        raise SamplerError(f"image size {W}x{H} below the {MIN_IMAGE_SIDE}px minimum")
    rng = np.random.default_rng(seed)

    n = draw_count(g, rng, cfg.max_objects)
    cls = g.p_ic.sample(rng)
    objects: list[LayoutObject] = []
    accepted: dict[int, list[tuple[int, int, int, int]]] = {}
    for _ in range(n):
        geom = g.geometry[cls]
        same = accepted.setdefault(cls, [])
        for attempt in range(cfg.max_retries + 1):
            aspect = geom.aspect_ratio.sample(rng)
            scale = geom.scale.sample(rng)
            center = geom.location.sample(rng)
            box = box_from_geometry(aspect, scale, center, image_size, cfg.min_box_px)
            if cfg.max_iou <= 0 or not any(iou(box, other) > cfg.max_iou for other in same):
                break
        same.append(box)
        objects.append(LayoutObject(cls, g.class_name(cls), aspect, scale, center, box))
        cls = g.next_class(cls).sample(rng)

    return Layout((W, H), tuple(objects), int(seed), g.digest, dict(g.class_table))


def split_seed(base_seed: int, index: int) -> int:
    """64-bit child seed for layout ``index`` of a batch.

    Uses numpy's SeedSequence spawn-key hashing, so children are
    statistically independent and depend only on (base_seed, index).
    """
    if base_seed < 0 or index < 0:
        raise SamplerError("seeds and indices must be nonnegative")
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


_WORKER_GRAPH: Scdkg | None = None


def _init_worker(g: Scdkg) -> None:
    global _WORKER_GRAPH
    _WORKER_GRAPH = g


def _sample_chunk(args) -> list[Layout]:
    image_size, base_seed, start, stop, cfg = args
    assert _WORKER_GRAPH is not None
    return [sample_layout(_WORKER_GRAPH, image_size, split_seed(base_seed, i), cfg) for i in range(start, stop)]


def chunk_ranges(count: int, jobs: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(count / (jobs * 4)))
    return [(i, min(i + size, count)) for i in range(0, count, size)]


def sample_batch(
    g: Scdkg,
    image_size: tuple[int, int] = (800, 800),
    base_seed: int = 0,
    count: int = 1,
    cfg: SamplerConfig | None = None,
    jobs: int = 1,
) -> list[Layout]:
    """``count`` layouts; layout ``i`` is ``sample_layout(..., split_seed(base_seed, i))``."""
    if count < 1:
        raise SamplerError("count must be >= 1")
    cfg = cfg or SamplerConfig()
    if jobs <= 1 or count == 1:
        return [sample_layout(g, image_size, split_seed(base_seed, i), cfg) for i in range(count)]
    tasks = [(tuple(image_size), base_seed, a, b, cfg) for a, b in chunk_ranges(count, jobs)]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(g,)) as pool:
        return [layout for chunk in pool.map(_sample_chunk, tasks) for layout in chunk]
