"""Fixture builders shared by the test modules."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from isim_forge.dataset import DatasetSummary, ImageRecord, InstanceAnnotation, build_class_table
from isim_forge.density import Categorical, EmpiricalDensity1D, EmpiricalDensity2D
from isim_forge.sampler import Layout, LayoutObject
from isim_forge.scdkg import ClassGeometry, Scdkg

DIOR_CLASSES = [
    "airplane",
    "airport",
    "baseball field",
    "basketball court",
    "bridge",
    "chimney",
    "dam",
    "expressway service area",
    "expressway toll station",
    "golf field",
    "ground track field",
    "harbor",
    "overpass",
    "ship",
    "stadium",
    "storage tank",
    "tennis court",
    "train station",
    "vehicle",
    "windmill",
]

# Per-class (aspect ratio, scale, center) for the structured synthetic corpus.
SYNTH_GEOMETRY = {
    "harbor": (0.5, 0.15, (0.25, 0.25)),
    "ship": (3.0, 0.03, (0.30, 0.60)),
    "airplane": (1.0, 0.06, (0.70, 0.30)),
    "vehicle": (2.0, 0.015, (0.75, 0.75)),
    "bridge": (4.0, 0.08, (0.50, 0.50)),
    "storage tank": (1.0, 0.04, (0.20, 0.85)),
}
# Filled by test_acceptance, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []

SYNTH_SCENES = [("harbor", "ship"), ("airplane", "vehicle"), ("bridge", "storage tank")]


def synthetic_dataset(n_images: int = 1500, seed: int = 0, size: int = 800) -> DatasetSummary:
    """Scenes pair two classes; every class has its own tight geometry."""
    rng = np.random.default_rng(seed)
    images = []
    for i in range(n_images):
        image_id = f"img{i:06d}"
        a, b = SYNTH_SCENES[rng.integers(len(SYNTH_SCENES))]
        counts = {a: 1 + rng.poisson(2.0), b: 1 + rng.poisson(3.0)}
        anns = []
        for name, n in counts.items():
            ar0, s0, (cx0, cy0) = SYNTH_GEOMETRY[name]
            for _ in range(n):
                ar = ar0 * math.exp(rng.normal(0, 0.1))
                s = s0 * math.exp(rng.normal(0, 0.1))
                cx = min(max(rng.normal(cx0, 0.04), 0.05), 0.95)
                cy = min(max(rng.normal(cy0, 0.04), 0.05), 0.95)
                w, h = s * size * math.sqrt(ar), s * size / math.sqrt(ar)
                x0, y0 = cx * size - w / 2, cy * size - h / 2
                box = (max(x0, 0.0), max(y0, 0.0), min(x0 + w, size), min(y0 + h, size))
                anns.append(InstanceAnnotation(image_id, name, box))
        images.append(ImageRecord(image_id, size, size, tuple(anns)))
    return DatasetSummary(tuple(images), build_class_table(SYNTH_GEOMETRY))


def write_voc(ds: DatasetSummary, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for im in ds.images:
        root = ET.Element("annotation")
        ET.SubElement(root, "filename").text = f"{im.image_id}.jpg"
        size = ET.SubElement(root, "size")
        ET.SubElement(size, "width").text = str(im.width)
        ET.SubElement(size, "height").text = str(im.height)
        ET.SubElement(size, "depth").text = "3"
        for a in im.annotations:
            obj = ET.SubElement(root, "object")
            ET.SubElement(obj, "name").text = a.class_name
            bb = ET.SubElement(obj, "bndbox")
            for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), a.bbox):
                ET.SubElement(bb, tag).text = repr(float(v))
        ET.ElementTree(root).write(out_dir / f"{im.image_id}.xml")


def point_1d(value: float, width: float = 1e-9) -> EmpiricalDensity1D:
    return EmpiricalDensity1D(np.array([value, value + width]), np.array([1.0]))


def point_2d(x: float, y: float, width: float = 1e-9) -> EmpiricalDensity2D:
    return EmpiricalDensity2D(np.array([x, x + width]), np.array([y, y + width]), np.array([[1.0]]))


def point_count(n: int) -> EmpiricalDensity1D:
    return EmpiricalDensity1D(np.array([n - 0.5, n + 0.5]), np.array([1.0]))


def point_geometry(aspect: float, scale: float, center: tuple[float, float]) -> ClassGeometry:
    return ClassGeometry(point_1d(aspect), point_1d(scale), point_2d(*center))


def make_graph(
    names: list[str],
    p_ic: list[float],
    p_in: EmpiricalDensity1D,
    geometry: dict[int, ClassGeometry],
    p_id: np.ndarray,
    geometry_all: ClassGeometry | None = None,
) -> Scdkg:
    table = build_class_table(names)
    M = len(table)
    return Scdkg(
        class_table=table,
        p_ic=Categorical(tuple(range(1, M + 1)), np.asarray(p_ic, dtype=float)),
        p_in=p_in,
        geometry=geometry,
        geometry_all=geometry_all or next(iter(geometry.values())),
        p_id=np.asarray(p_id, dtype=float),
    )


def random_nonoverlapping_layout(
    rng: np.random.Generator,
    M: int = 20,
    size: tuple[int, int] = (800, 800),
    max_objects: int = 30,
    names: list[str] | None = None,
) -> Layout:
    """Boxes >= 2 px per side with at least one background pixel between any two."""
    names = names or DIOR_CLASSES[:M]
    table = build_class_table(names)
    inv = {v: k for k, v in table.items()}
    W, H = size
    placed: list[tuple[int, int, int, int]] = []
    objects = []
    target = int(rng.integers(1, max_objects + 1))
    attempts = 0
    while len(objects) < target and attempts < 50 * target:
        attempts += 1
        w = int(rng.integers(2, 120))
        h = int(rng.integers(2, 120))
        x0 = int(rng.integers(0, W - w + 1))
        y0 = int(rng.integers(0, H - h + 1))
        box = (x0, y0, x0 + w, y0 + h)
        # Require a one-pixel gap so no two boxes touch.
        if any(box[0] <= b[2] and b[0] <= box[2] and box[1] <= b[3] and b[1] <= box[3] for b in placed):
            continue
        placed.append(box)
        cid = int(rng.integers(1, M + 1))
        center = ((x0 + w / 2) / W, (y0 + h / 2) / H)
        objects.append(LayoutObject(cid, inv[cid], w / h, math.sqrt(w * h) / W, center, box))
    return Layout(size, tuple(objects), 0, "fixture", table)
