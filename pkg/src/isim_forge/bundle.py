"""Condition bundles: ``{id}.isim.png``, ``{id}.sodi.txt``, ``{id}.labels.json`` plus a batch manifest."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _canon
from .dataset import LABELS_SCHEMA_VERSION, SchemaError, validate_labels
from .isim import IsimError, IsimRaster, decode_isim, gray_value, render_isim
from .sampler import Layout, LayoutObject, SamplerConfig, chunk_ranges, sample_layout, split_seed
from .scdkg import Scdkg
from .sodi import SodiError, generate_sodi, ordered_counts, parse_sodi

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = LABELS_SCHEMA_VERSION


class BundleError(Exception):
    pass


def bundle_id_for(index: int, seed: int) -> str:
    return f"{index:06d}-{_canon.sha256_hex(str(seed))[:8]}"


@dataclass(frozen=True)
class Bundle:
    bundle_id: str
    root: Path
    isim_path: str
    sodi_path: str
    labels_path: str
    layout: Layout | None = None

    @classmethod
    def at(cls, root: str | Path, bundle_id: str, layout: Layout | None = None) -> Bundle:
        return cls(
            bundle_id,
            Path(root),
            f"{bundle_id}.isim.png",
            f"{bundle_id}.sodi.txt",
            f"{bundle_id}.labels.json",
            layout,
        )

    def paths(self) -> dict[str, Path]:
        return {
            "isim": self.root / self.isim_path,
            "sodi": self.root / self.sodi_path,
            "labels": self.root / self.labels_path,
        }


def labels_document(layout: Layout, bundle_id: str) -> dict:
    M = layout.num_classes
    return {
        "schema": LABELS_SCHEMA_VERSION,
        "bundle_id": bundle_id,
        "image_size": list(layout.image_size),
        "seed": layout.seed,
        "scdkg_digest": layout.provenance,
        "num_classes": M,
        "class_table": dict(layout.class_table),
        "objects": [
            {
                "class_name": o.class_name,
                "class_id": o.class_id,
                "gray_value": gray_value(o.class_id, M),
                "bbox_px": list(o.bbox),
                "center_norm": [float(o.center[0]), float(o.center[1])],
                "scale": float(o.scale),
                "aspect_ratio": float(o.aspect_ratio),
            }
            for o in layout.objects
        ],
    }


def layout_from_labels(doc: dict) -> Layout:
    objects = tuple(
        LayoutObject(
            class_id=o["class_id"],
            class_name=o["class_name"],
            aspect_ratio=o.get("aspect_ratio", 1.0),
            scale=o.get("scale", 0.0),
            center=tuple(o.get("center_norm", (0.0, 0.0))),
            bbox=tuple(int(v) for v in o["bbox_px"]),
        )
        for o in doc["objects"]
    )
    return Layout(
        tuple(doc["image_size"]),
        objects,
        int(doc.get("seed", 0)),
        doc.get("scdkg_digest", ""),
        dict(doc["class_table"]),
    )


def _file_entry(bundle: Bundle, index: int, layout: Layout) -> dict:
    return {
        "bundle_id": bundle.bundle_id,
        "index": index,
        "seed": layout.seed,
        "n_objects": len(layout.objects),
        "files": {"isim": bundle.isim_path, "sodi": bundle.sodi_path, "labels": bundle.labels_path},
        "sha256": {k: _canon.sha256_hex(p.read_bytes()) for k, p in bundle.paths().items()},
    }


def _write_bundle_files(layout: Layout, bundle: Bundle, overwrite: bool) -> None:
    paths = bundle.paths()
    if not overwrite:
        existing = [str(p) for p in paths.values() if p.exists()]
        if existing:
            raise BundleError(f"bundle {bundle.bundle_id} already exists ({existing[0]}); use overwrite")
    png = render_isim(layout).to_png_bytes()
    sodi = generate_sodi(layout).text + "\n"
    labels = _canon.dumps(labels_document(layout, bundle.bundle_id), indent=1) + "\n"
    paths["isim"].write_bytes(png)
    paths["sodi"].write_text(sodi, encoding="utf-8")
    paths["labels"].write_text(labels, encoding="utf-8")


def export_bundle(
    layout: Layout,
    out_dir: str | Path,
    index: int = 0,
    overwrite: bool = False,
    update_manifest: bool = True,
) -> Bundle:
    """Write one bundle. With ``update_manifest`` the batch manifest is read, extended and rewritten."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = Bundle.at(out_dir, bundle_id_for(index, layout.seed), layout)
    _write_bundle_files(layout, bundle, overwrite)
    if update_manifest:
        write_manifest(
            out_dir,
            [_file_entry(bundle, index, layout)],
            scdkg_digest=layout.provenance,
            image_size=layout.image_size,
            cfg={},
        )
    return bundle


# -- batch manifest -----------------------------------------------------------------


def read_manifest(out_dir: str | Path) -> dict | None:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return None
    doc = _canon.read_json(path)
    if doc.get("format_version") != MANIFEST_VERSION:
        raise BundleError(f"{path}: unsupported manifest version {doc.get('format_version')!r}")
    return doc


def write_manifest(
    out_dir: str | Path,
    entries: Iterable[dict],
    scdkg_digest: str,
    image_size: Sequence[int],
    cfg: dict,
) -> dict:
    """Merge ``entries`` into ``manifest.json`` (one entry per bundle id, sorted)."""
    out_dir = Path(out_dir)
    old = read_manifest(out_dir)
    merged: dict[str, dict] = {}
    if old is not None:
        if old.get("scdkg_digest") and scdkg_digest and old["scdkg_digest"] != scdkg_digest:
            raise BundleError(f"{out_dir}: manifest was produced from a different knowledge graph")
        merged = {e["bundle_id"]: e for e in old.get("bundles", [])}
        cfg = cfg or old.get("cfg", {})
    for e in entries:
        merged[e["bundle_id"]] = e
    doc = {
        "format_version": MANIFEST_VERSION,
        "scdkg_digest": scdkg_digest,
        "image_size": list(image_size),
        "cfg": cfg,
        "bundles": [merged[k] for k in sorted(merged)],
    }
    _canon.write_json(out_dir / MANIFEST_NAME, doc)
    return doc


def export_batch(
    layouts: Sequence[Layout],
    out_dir: str | Path,
    overwrite: bool = False,
    cfg: dict | None = None,
    start_index: int = 0,
) -> list[Bundle]:
    """Export already-sampled layouts, then write the manifest once."""
    if not layouts:
        raise BundleError("nothing to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundles, entries = [], []
    for i, layout in enumerate(layouts, start=start_index):
        b = export_bundle(layout, out_dir, i, overwrite=overwrite, update_manifest=False)
        bundles.append(b)
        entries.append(_file_entry(b, i, layout))
    write_manifest(out_dir, entries, layouts[0].provenance, layouts[0].image_size, cfg or {})
    return bundles


_WORKER_GRAPH: Scdkg | None = None


def _init_worker(g: Scdkg) -> None:
    global _WORKER_GRAPH
    _WORKER_GRAPH = g


def _generate_chunk(args) -> list[dict]:
    out_dir, indices, base_seed, image_size, cfg, overwrite = args
    g = _WORKER_GRAPH
    assert g is not None
    entries = []
    for i in indices:
        layout = sample_layout(g, image_size, split_seed(base_seed, i), cfg)
        b = export_bundle(layout, out_dir, i, overwrite=overwrite, update_manifest=False)
        entries.append(_file_entry(b, i, layout))
    return entries


def generate_bundles(
    g: Scdkg,
    out_dir: str | Path,
    count: int,
    base_seed: int,
    image_size: tuple[int, int] = (800, 800),
    cfg: SamplerConfig | None = None,
    jobs: int = 1,
    overwrite: bool = False,
    resume: bool = False,
) -> dict:
    """Sample and export bundles ``0..count-1``; returns the written manifest.

    Output bytes depend only on (g, count, base_seed, image_size, cfg), never
    on ``jobs``. With ``resume``, bundles already listed in the manifest (and
    present on disk) are skipped.
    """
    cfg = cfg or SamplerConfig()
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    todo = list(range(count))
    if resume:
        old = read_manifest(out_dir)
        done = set()
        if old is not None:
            for e in old.get("bundles", []):
                if all((out_dir / f).exists() for f in e["files"].values()):
                    done.add(e["bundle_id"])
        todo = [i for i in todo if bundle_id_for(i, split_seed(base_seed, i)) not in done]
        log.info("resume: %d of %d bundles already present", count - len(todo), count)

    entries: list[dict] = []
    if todo:
        image_size = (int(image_size[0]), int(image_size[1]))
        if jobs <= 1:
            _init_worker(g)
            entries = _generate_chunk((out_dir, todo, base_seed, image_size, cfg, overwrite))
        else:
            chunks = [todo[a:b] for a, b in chunk_ranges(len(todo), jobs)]
            tasks = [(out_dir, c, base_seed, image_size, cfg, overwrite) for c in chunks]
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(g,)) as pool:
                entries = [e for chunk in pool.map(_generate_chunk, tasks) for e in chunk]
    manifest_cfg = {"sampler": cfg.to_dict(), "base_seed": base_seed}
    return write_manifest(out_dir, entries, g.digest, image_size, manifest_cfg)


# -- verification -------------------------------------------------------------------


@dataclass
class VerifyReport:
    bundle_id: str
    acc_c: float
    acc_n: float
    sodi_consistent: bool
    violations: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "acc_c": self.acc_c,
            "acc_n": self.acc_n,
            "sodi_consistent": self.sodi_consistent,
            "passed": self.passed,
            "violations": list(self.violations),
            "notes": list(self.notes),
        }


def load_bundle(labels_path: str | Path) -> Bundle:
    labels_path = Path(labels_path)
    name = labels_path.name
    if not name.endswith(".labels.json"):
        raise BundleError(f"{labels_path}: not a label manifest")
    return Bundle.at(labels_path.parent, name[: -len(".labels.json")])


def find_bundles(bundle_dir: str | Path) -> list[Bundle]:
    """Bundles listed in the manifest, or every ``*.labels.json`` when there is none."""
    bundle_dir = Path(bundle_dir)
    manifest = read_manifest(bundle_dir)
    if manifest is not None:
        return [Bundle.at(bundle_dir, e["bundle_id"]) for e in manifest["bundles"]]
    return [load_bundle(p) for p in sorted(bundle_dir.glob("*.labels.json"))]


def load_layouts(bundle_dir: str | Path) -> list[Layout]:
    return [layout_from_labels(_canon.read_json(b.paths()["labels"])) for b in find_bundles(bundle_dir)]


def acc_per_class_counts(decoded: dict[int, int], expected: dict[int, int]) -> float:
    classes = set(decoded) | set(expected)
    if not classes:
        return 1.0
    total = 0.0
    for c in classes:
        a, b = decoded.get(c, 0), expected.get(c, 0)
        total += min(a, b) / max(a, b)
    return total / len(classes)


def verify_bundle(b: Bundle, floor: float = 0.5) -> VerifyReport:
    """Cross-check a bundle's raster, prompt and labels.

    ``acc_c``: fraction of labeled objects whose box is more than half covered
    by their own gray value. ``acc_n``: mean over classes of
    min(decoded, labeled) / max(decoded, labeled) region counts. Hard
    violations are a raster that differs from a re-render of the labels,
    prompt/label disagreement, gray values inconsistent with class ids, and
    either accuracy below ``floor``. Raises ``BundleError`` for unreadable
    or corrupt files.
    """
    paths = b.paths()
    try:
        doc = _canon.read_json(paths["labels"])
        validate_labels(doc)
    except (OSError, ValueError, SchemaError) as exc:
        raise BundleError(f"{paths['labels']}: {exc}") from exc
    layout = layout_from_labels(doc)
    M = doc.get("num_classes", len(doc["class_table"]))
    try:
        raster = IsimRaster.from_png(paths["isim"], M)
    except (OSError, IsimError) as exc:
        raise BundleError(f"{paths['isim']}: {exc}") from exc
    try:
        sodi_text = paths["sodi"].read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise BundleError(f"{paths['sodi']}: {exc}") from exc

    violations: list[str] = []
    notes: list[str] = []
    W, H = layout.image_size
    if raster.pixels.shape != (H, W):
        raise BundleError(f"{paths['isim']}: raster is {raster.width}x{raster.height}, labels say {W}x{H}")

    for i, (o, raw) in enumerate(zip(layout.objects, doc["objects"])):
        expected_gray = gray_value(o.class_id, M)
        if raw.get("gray_value", expected_gray) != expected_gray:
            violations.append(f"object {i}: gray_value {raw['gray_value']} != {expected_gray} for class {o.class_id}")

    try:
        regions = decode_isim(raster, M)
    except IsimError as exc:
        raise BundleError(f"{paths['isim']}: {exc}") from exc

    dominated = 0
    for i, o in enumerate(layout.objects):
        x0, y0, x1, y1 = o.bbox
        patch = raster.pixels[y0:y1, x0:x1]
        frac = float(np.count_nonzero(patch == gray_value(o.class_id, M))) / max(patch.size, 1)
        if frac > 0.5:
            dominated += 1
        else:
            notes.append(f"object {i} ({o.class_name}) covers {frac:.1%} of its box")
    n_obj = len(layout.objects)
    acc_c = dominated / n_obj if n_obj else 1.0

    decoded_counts: dict[int, int] = {}
    for r in regions:
        decoded_counts[r.class_id] = decoded_counts.get(r.class_id, 0) + 1
    acc_n = acc_per_class_counts(decoded_counts, layout.class_counts())

    expected = render_isim(layout, M)
    diff = int(np.count_nonzero(expected.pixels != raster.pixels))
    if diff:
        violations.append(f"isim-mismatch: {diff} pixels differ from a re-render of the labels")
    if acc_c < floor:
        violations.append(f"acc_c {acc_c:.3f} below floor {floor}")
    if acc_n < floor:
        violations.append(f"acc_n {acc_n:.3f} below floor {floor}")

    sodi_ok = False
    names = {cid: name for name, cid in layout.class_table.items()}
    want = ordered_counts(layout.class_counts(), names)
    if not sodi_text.endswith("\n") or sodi_text.count("\n") != 1:
        violations.append("sodi-format: prompt must be one line terminated by a newline")
    try:
        got = parse_sodi(sodi_text.rstrip("\n"), layout.class_table)
    except SodiError as exc:
        violations.append(f"sodi-parse: {exc}")
    else:
        if got != want:
            violations.append(f"sodi-mismatch: prompt lists {list(got)}, labels give {list(want)}")
        else:
            sodi_ok = True
    return VerifyReport(b.bundle_id, acc_c, acc_n, sodi_ok, violations, notes)
