"""Iso-spacing instance maps: class ids painted as evenly spaced gray levels."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .sampler import Layout

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class IsimError(ValueError):
    pass


def gray_value(m: int, M: int) -> int:
    """floor(255 * m / M) in exact integer arithmetic. Gray 0 is background, so m >= 1."""
    if not 1 <= M <= 255:
        raise IsimError(f"class count M={M} outside 1..255")
    if not 1 <= m <= M:
        raise IsimError(f"class id m={m} outside 1..{M} (0 is reserved for background)")
    return (255 * m) // M


def gray_table(M: int) -> dict[int, int]:
    return {m: gray_value(m, M) for m in range(1, M + 1)}


@dataclass(frozen=True, eq=False)
class IsimRaster:
    pixels: np.ndarray  # (H, W) uint8, row-major
    num_classes: int

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def gray_table(self) -> dict[int, int]:
        return gray_table(self.num_classes)

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        # Fixed encoder settings and no metadata chunks keep output byte-stable.
        im = Image.fromarray(np.ascontiguousarray(self.pixels, dtype=np.uint8))
        im.save(buf, format="PNG", compress_level=6, optimize=False)
        return buf.getvalue()

    def save_png(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    @classmethod
    def from_png(cls, path: str | Path, num_classes: int) -> IsimRaster:
        with Image.open(path) as im:
            im.load()
            if im.mode != "L":
                raise IsimError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
            pixels = np.array(im, dtype=np.uint8)
        return cls(pixels, num_classes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IsimRaster):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.pixels, other.pixels)

    __hash__ = None  # type: ignore[assignment]


def paint_order(layout: Layout) -> list[int]:
    """Object indices largest-area first; ties keep layout order."""
    return sorted(range(len(layout.objects)), key=lambda i: -layout.objects[i].area)


def render_isim(layout: Layout, num_classes: int | None = None) -> IsimRaster:
    """Fill each object's box with its class gray; small boxes are painted over large ones."""
    M = num_classes if num_classes is not None else layout.num_classes
    W, H = layout.image_size
    pixels = np.zeros((H, W), dtype=np.uint8)
    for i in paint_order(layout):
        obj = layout.objects[i]
        x0, y0, x1, y1 = obj.bbox
        pixels[y0:y1, x0:x1] = gray_value(obj.class_id, M)
    return IsimRaster(pixels, M)


@dataclass(frozen=True, eq=False)
class DecodedRegion:
    class_id: int
    bbox: tuple[int, int, int, int]  # half-open pixel edges
    mask: np.ndarray  # boolean, cropped to bbox

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def decode_isim(r: IsimRaster, M: int | None = None) -> list[DecodedRegion]:
    """4-connected regions per gray level, in (class_id, top-left) order."""
    M = M if M is not None else r.num_classes
    inverse = {v: m for m, v in gray_table(M).items()}
    present = np.flatnonzero(np.bincount(r.pixels.ravel(), minlength=256))
    unknown = [int(v) for v in present if v != 0 and int(v) not in inverse]
    if unknown:
        raise IsimError(f"gray values not in the table for M={M}: {unknown}")
    # Label the foreground once; only blobs holding several gray levels need
    # a second, local pass. A same-gray region never leaves its blob.
    blobs, _ = ndimage.label(r.pixels != 0, structure=_FOUR_CONNECTED)
    regions: list[DecodedRegion] = []
    for k, sl in enumerate(ndimage.find_objects(blobs), start=1):
        ys, xs = sl
        inside = blobs[sl] == k
        sub = r.pixels[sl]
        values = np.unique(sub[inside])
        if len(values) == 1:
            regions.append(DecodedRegion(inverse[int(values[0])], (xs.start, ys.start, xs.stop, ys.stop), inside))
            continue
        for v in values:
            parts, _ = ndimage.label(inside & (sub == v), structure=_FOUR_CONNECTED)
            for j, psl in enumerate(ndimage.find_objects(parts), start=1):
                py, px = psl
                regions.append(
                    DecodedRegion(
                        inverse[int(v)],
                        (xs.start + px.start, ys.start + py.start, xs.start + px.stop, ys.start + py.stop),
                        parts[psl] == j,
                    )
                )
    regions.sort(key=lambda d: (d.class_id, d.bbox[1], d.bbox[0]))
    return regions
