"""Annotation ingest: VOC-style XML directories and this toolkit's label manifests."""

from __future__ import annotations

import logging
import re
import xml.etree.ElementTree as ET
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import _canon

log = logging.getLogger(__name__)

MAX_CLASSES = 255
MIN_BOX_AREA = 4.0


class IngestError(Exception):
    """Fatal ingest failure (nothing usable was found, or the input is invalid)."""


class SchemaError(IngestError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def normalize_class_name(name: str) -> str:
    return re.sub(r"\s+", " ", name.strip()).lower()


def build_class_table(names: Iterable[str]) -> dict[str, int]:
    """Lexicographic (byte order) numbering from 1; 0 stays reserved for background."""
    distinct = sorted({normalize_class_name(n) for n in names}, key=lambda s: s.encode("utf-8"))
    if len(distinct) > MAX_CLASSES:
        raise IngestError(f"{len(distinct)} classes exceed the 8-bit gray budget of {MAX_CLASSES}")
    return {name: i for i, name in enumerate(distinct, start=1)}


@dataclass(frozen=True)
class InstanceAnnotation:
    image_id: str
    class_name: str
    bbox: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max

    @property
    def width(self) -> float:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> float:
        return self.bbox[3] - self.bbox[1]


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    annotations: tuple[InstanceAnnotation, ...]


@dataclass(frozen=True)
class DatasetSummary:
    images: tuple[ImageRecord, ...]
    class_table: Mapping[str, int]
    errors: tuple[str, ...] = field(default=(), compare=False)
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def M(self) -> int:
        return len(self.class_table)

    @property
    def class_names(self) -> dict[int, str]:
        return {v: k for k, v in self.class_table.items()}

    def annotations(self) -> list[InstanceAnnotation]:
        return [a for im in self.images for a in im.annotations]

    @property
    def n_annotations(self) -> int:
        return sum(len(im.annotations) for im in self.images)

    def digest(self) -> str:
        """Content hash, independent of image enumeration order."""
        images = sorted(self.images, key=lambda im: im.image_id)
        payload = {
            "class_table": dict(self.class_table),
            "images": [
                [im.image_id, im.width, im.height, sorted([a.class_name, *map(float, a.bbox)] for a in im.annotations)]
                for im in images
            ],
        }
        return _canon.digest(payload)


def clamp_box(
    box: tuple[float, float, float, float], width: float, height: float
) -> tuple[tuple[float, float, float, float], bool]:
    x0, y0, x1, y1 = box
    c = (min(max(x0, 0.0), width), min(max(y0, 0.0), height), min(max(x1, 0.0), width), min(max(y1, 0.0), height))
    return c, c != (x0, y0, x1, y1)


def _admit(
    image_id: str,
    name: str,
    box: tuple[float, float, float, float],
    width: int,
    height: int,
    warnings: list[str],
) -> InstanceAnnotation | None:
    name = normalize_class_name(name)
    if not name:
        warnings.append(f"{image_id}: object with empty class name dropped")
        return None
    box, clamped = clamp_box(box, width, height)
    if clamped:
        warnings.append(f"{image_id}: {name} box clamped to image extent")
    x0, y0, x1, y1 = box
    if x1 <= x0 or y1 <= y0 or (x1 - x0) * (y1 - y0) < MIN_BOX_AREA:
        warnings.append(f"{image_id}: degenerate {name} box {box} dropped")
        return None
    return InstanceAnnotation(image_id, name, box)


def _summarize(
    raw: list[tuple[str, int, int, list[InstanceAnnotation]]],
    errors: list[str],
    warnings: list[str],
    extra_names: Iterable[str] = (),
) -> DatasetSummary:
    images = tuple(
        ImageRecord(image_id, w, h, tuple(anns)) for image_id, w, h, anns in sorted(raw, key=lambda r: r[0])
    )
    names = [a.class_name for im in images for a in im.annotations]
    table = build_class_table([*names, *extra_names])
    return DatasetSummary(images, table, tuple(errors), tuple(warnings))


# -- VOC XML ------------------------------------------------------------------

_ROTATED_KEYS = (
    ("x_left_top", "y_left_top"),
    ("x_right_top", "y_right_top"),
    ("x_right_bottom", "y_right_bottom"),
    ("x_left_bottom", "y_left_bottom"),
)
_POLY_KEYS = tuple((f"x{i}", f"y{i}") for i in range(1, 5))


def _num(el: ET.Element, tag: str) -> float:
    node = el.find(tag)
    if node is None or node.text is None:
        raise ValueError(f"missing <{tag}>")
    return float(node.text.strip())


def _envelope(el: ET.Element, keys) -> tuple[float, float, float, float]:
    xs = [_num(el, kx) for kx, _ in keys]
    ys = [_num(el, ky) for _, ky in keys]
    return min(xs), min(ys), max(xs), max(ys)


def _object_box(obj: ET.Element) -> tuple[float, float, float, float]:
    bb = obj.find("bndbox")
    if bb is not None:
        return _num(bb, "xmin"), _num(bb, "ymin"), _num(bb, "xmax"), _num(bb, "ymax")
    # Oriented boxes (DIOR-R style) are reduced to their axis-aligned envelope.
    rb = obj.find("robndbox")
    if rb is not None:
        return _envelope(rb, _ROTATED_KEYS)
    poly = obj.find("polygon")
    if poly is not None:
        return _envelope(poly, _POLY_KEYS)
    raise ValueError("object has no bndbox/robndbox/polygon")


def parse_voc_file(path: Path) -> tuple[str, int, int, list[InstanceAnnotation], list[str]]:
    root = ET.parse(path).getroot()
    image_id = path.stem
    size = root.find("size")
    if size is None:
        raise ValueError("missing <size>")
    width, height = int(_num(size, "width")), int(_num(size, "height"))
    if width <= 0 or height <= 0:
        raise ValueError(f"invalid image size {width}x{height}")
    warnings: list[str] = []
    anns = []
    for obj in root.iter("object"):
        name_el = obj.find("name")
        name = name_el.text if name_el is not None and name_el.text else ""
        try:
            box = _object_box(obj)
        except ValueError as exc:
            warnings.append(f"{image_id}: object {name!r} skipped ({exc})")
            continue
        ann = _admit(image_id, name, box, width, height, warnings)
        if ann is not None:
            anns.append(ann)
    return image_id, width, height, anns, warnings


def load_voc_xml(dir_path: str | Path, jobs: int = 1) -> DatasetSummary:
    """Ingest every ``*.xml`` file under ``dir_path`` (recursively).

    Malformed files are recorded in ``errors`` and skipped; out-of-frame boxes
    are clamped with a warning. Raises ``IngestError`` when nothing parses.
    """
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise IngestError(f"not a directory: {dir_path}")
    files = sorted(dir_path.rglob("*.xml"))

    def _one(p: Path):
        try:
            return p, parse_voc_file(p), None
        except (ET.ParseError, ValueError) as exc:
            return p, None, f"{p}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, files))
    else:
        results = [_one(p) for p in files]

    raw, errors, warnings = [], [], []
    for _, parsed, err in results:
        if err is not None:
            errors.append(err)
            continue
        image_id, w, h, anns, warn = parsed
        raw.append((image_id, w, h, anns))
        warnings.extend(warn)
    if not raw:
        raise IngestError(f"no annotations found in {dir_path}")
    for e in errors:
        log.warning("ingest error: %s", e)
    return _summarize(raw, errors, warnings)


# -- JSON label manifests -------------------------------------------------------

LABELS_SCHEMA_VERSION = "isim-forge/1"

LABELS_SCHEMA = {
    "type": "object",
    "required": ["schema", "bundle_id", "image_size", "class_table", "objects"],
    "properties": {
        "schema": {"const": LABELS_SCHEMA_VERSION},
        "bundle_id": {"type": "string", "minLength": 1},
        "image_size": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "seed": {"type": "integer", "minimum": 0},
        "scdkg_digest": {"type": "string"},
        "num_classes": {"type": "integer", "minimum": 1, "maximum": MAX_CLASSES},
        "class_table": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 1, "maximum": MAX_CLASSES},
        },
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class_name", "class_id", "bbox_px"],
                "properties": {
                    "class_name": {"type": "string", "minLength": 1},
                    "class_id": {"type": "integer", "minimum": 1, "maximum": MAX_CLASSES},
                    "gray_value": {"type": "integer", "minimum": 1, "maximum": 255},
                    "bbox_px": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 4,
                        "maxItems": 4,
                    },
                    "center_norm": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "scale": {"type": "number", "exclusiveMinimum": 0},
                    "aspect_ratio": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
    },
}


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate_labels(doc: object) -> None:
    """Raise ``SchemaError`` (with a JSON pointer) if ``doc`` is not a valid label manifest."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(LABELS_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise SchemaError(_pointer(err.absolute_path), err.message)
    table = doc["class_table"]  # type: ignore[index]
    if len(set(table.values())) != len(table):
        raise SchemaError("/class_table", "class ids are not unique")
    for i, obj in enumerate(doc["objects"]):  # type: ignore[index]
        name = obj["class_name"]
        if name in table and table[name] != obj["class_id"]:
            raise SchemaError(f"/objects/{i}/class_id", f"{obj['class_id']} disagrees with class_table[{name!r}]")


def _labels_files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(path.rglob("*.labels.json"))
    return [path]


def load_json_labels(path: str | Path) -> DatasetSummary:
    """Ingest one label manifest or a directory of ``*.labels.json`` files.

    Class numbering is rebuilt lexicographically from the class names seen,
    exactly as for VOC input.
    """
    path = Path(path)
    files = _labels_files(path)
    if not files:
        raise IngestError(f"no annotations found in {path}")
    raw, warnings, extra = [], [], []
    for f in files:
        try:
            doc = _canon.read_json(f)
        except (OSError, ValueError) as exc:
            raise IngestError(f"{f}: {exc}") from exc
        try:
            validate_labels(doc)
        except SchemaError as exc:
            raise SchemaError(exc.pointer, f"{f}: {exc.args[0]}") from None
        width, height = doc["image_size"]
        image_id = doc["bundle_id"]
        anns = []
        for obj in doc["objects"]:
            ann = _admit(image_id, obj["class_name"], tuple(map(float, obj["bbox_px"])), width, height, warnings)
            if ann is not None:
                anns.append(ann)
        raw.append((image_id, width, height, anns))
        extra.extend(doc["class_table"])
    return _summarize(raw, [], warnings, extra_names=extra)
