"""Spatial-cross dependency knowledge graph.

The graph bundles four fitted pieces:

* ``p_ic`` -- class prior over class ids,
* ``p_in`` -- per-image instance-count density (unit-width bins on integers),
* ``geometry`` -- per-class aspect-ratio / scale / center-location densities,
  with ``geometry_all`` pooled over every class as the rare-class fallback,
* ``p_id`` -- row-stochastic class-to-next-class matrix estimated from
  image-level co-occurrence.

Geometry conventions: aspect ratio is box width / height; scale is
sqrt(box area) / image width; location is the box center normalized by the
image size.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _canon
from .dataset import DatasetSummary
from .density import (
    DEFAULT_BINS_1D,
    DEFAULT_BINS_2D,
    SMOOTHING_ALPHA,
    Categorical,
    DensityError,
    EmpiricalDensity1D,
    EmpiricalDensity2D,
    fit_1d,
    fit_2d,
    smooth,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = "isim-forge-scdkg/1"
_ROW_TOL = 1e-9


class ScdkgError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    bins_1d: int = DEFAULT_BINS_1D
    bins_2d: tuple[int, int] = DEFAULT_BINS_2D
    alpha: float = SMOOTHING_ALPHA
    min_samples: int = 20
    beta: float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bins_2d"] = list(self.bins_2d)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> FitConfig:
        d = dict(d)
        if "bins_2d" in d:
            d["bins_2d"] = tuple(d["bins_2d"])
        return cls(**d)


@dataclass(frozen=True)
class ClassGeometry:
    aspect_ratio: EmpiricalDensity1D
    scale: EmpiricalDensity1D
    location: EmpiricalDensity2D

    def validate(self, where: str) -> None:
        if self.aspect_ratio.support[0] <= 0:
            raise ScdkgError(f"{where}: aspect-ratio support must be positive")
        lo, hi = self.scale.support
        if lo <= 0 or hi > 1.0 + 1e-6:
            raise ScdkgError(f"{where}: scale support {lo, hi} outside (0, 1]")
        (x0, x1), (y0, y1) = self.location.support
        if x0 < 0 or y0 < 0 or x1 > 1.0 + 1e-6 or y1 > 1.0 + 1e-6:
            raise ScdkgError(f"{where}: location support outside the unit square")

    def to_dict(self) -> dict:
        return {
            "aspect_ratio": self.aspect_ratio.to_dict(),
            "scale": self.scale.to_dict(),
            "location": self.location.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ClassGeometry:
        return cls(
            EmpiricalDensity1D.from_dict(d["aspect_ratio"]),
            EmpiricalDensity1D.from_dict(d["scale"]),
            EmpiricalDensity2D.from_dict(d["location"]),
        )


@dataclass(frozen=True, eq=False)
class Scdkg:
    class_table: Mapping[str, int]
    p_ic: Categorical
    p_in: EmpiricalDensity1D
    geometry: Mapping[int, ClassGeometry]
    geometry_all: ClassGeometry
    p_id: np.ndarray
    fit_config: FitConfig = field(default_factory=FitConfig)
    source_digest: str = ""
    ablated: tuple[str, ...] = ()
    _digest: str = field(init=False, repr=False, default="")

    def __post_init__(self) -> None:
        p_id = np.asarray(self.p_id, dtype=np.float64)
        p_id.setflags(write=False)
        object.__setattr__(self, "p_id", p_id)
        object.__setattr__(self, "class_table", dict(self.class_table))
        object.__setattr__(self, "geometry", {int(k): v for k, v in self.geometry.items()})
        object.__setattr__(self, "ablated", tuple(sorted(self.ablated)))
        self.validate()
        object.__setattr__(self, "_row_dists", [Categorical(tuple(range(1, self.M + 1)), row) for row in p_id])
        object.__setattr__(self, "_names", {v: k for k, v in self.class_table.items()})
        object.__setattr__(self, "_digest", _canon.sha256_hex(_canon.dumps(self._body())))

    @property
    def M(self) -> int:
        return len(self.class_table)

    @property
    def digest(self) -> str:
        return self._digest

    def class_name(self, class_id: int) -> str:
        return self._names[class_id]

    def next_class(self, class_id: int) -> Categorical:
        """Distribution over the class that follows ``class_id``."""
        return self._row_dists[class_id - 1]

    def validate(self) -> None:
        M = len(self.class_table)
        if M < 1:
            raise ScdkgError("empty class table")
        if sorted(self.class_table.values()) != list(range(1, M + 1)):
            raise ScdkgError("class ids must be contiguous 1..M")
        if set(self.p_ic.labels) != set(range(1, M + 1)):
            raise ScdkgError("p_ic must cover every class id")
        if self.p_id.shape != (M, M):
            raise ScdkgError(f"p_id shape {self.p_id.shape} != ({M}, {M})")
        if not np.all(np.isfinite(self.p_id)) or np.any(self.p_id < 0):
            raise ScdkgError("p_id entries must be finite and nonnegative")
        sums = self.p_id.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > _ROW_TOL)
        if bad.size:
            i = int(bad[0])
            raise ScdkgError(f"p_id row not stochastic: row {i + 1} sums to {sums[i]!r}")
        if set(self.geometry) != set(range(1, M + 1)):
            raise ScdkgError("geometry must cover every class id")
        for cid, geom in self.geometry.items():
            geom.validate(f"geometry[{cid}]")
        self.geometry_all.validate("geometry_all")
        if self.p_in.support[0] < 0:
            raise ScdkgError("p_in support must be nonnegative")

    def _body(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "class_table": dict(self.class_table),
            "p_ic": self.p_ic.to_dict(),
            "p_in": self.p_in.to_dict(),
            "p_id": self.p_id.tolist(),
            "geometry": {str(k): self.geometry[k].to_dict() for k in sorted(self.geometry)},
            "geometry_all": self.geometry_all.to_dict(),
            "fit_config": self.fit_config.to_dict(),
            "source_digest": self.source_digest,
            "ablated": list(self.ablated),
        }

    def to_dict(self) -> dict:
        body = self._body()
        body["checksum"] = self._digest
        return body

    @classmethod
    def from_dict(cls, d: Mapping) -> Scdkg:
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ScdkgError(f"format version mismatch: {version!r} (expected {FORMAT_VERSION!r})")
        try:
            g = cls(
                class_table={str(k): int(v) for k, v in d["class_table"].items()},
                p_ic=Categorical(tuple(int(x) for x in d["p_ic"]["labels"]), np.asarray(d["p_ic"]["probs"])),
                p_in=EmpiricalDensity1D.from_dict(d["p_in"]),
                geometry={int(k): ClassGeometry.from_dict(v) for k, v in d["geometry"].items()},
                geometry_all=ClassGeometry.from_dict(d["geometry_all"]),
                p_id=np.asarray(d["p_id"], dtype=np.float64),
                fit_config=FitConfig.from_dict(d.get("fit_config", {})),
                source_digest=d.get("source_digest", ""),
                ablated=tuple(d.get("ablated", ())),
            )
        except KeyError as exc:
            raise ScdkgError(f"missing field {exc.args[0]!r}") from None
        except DensityError as exc:
            raise ScdkgError(str(exc)) from None
        checksum = d.get("checksum")
        if checksum is not None and checksum != g.digest:
            raise ScdkgError(f"checksum mismatch: file says {checksum}, content hashes to {g.digest}")
        return g

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scdkg):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None  # type: ignore[assignment]

    def with_(self, **changes) -> Scdkg:
        return replace(self, **changes)


# -- fitting ------------------------------------------------------------------------


def _fit_geometry(aspect: np.ndarray, scale: np.ndarray, centers: np.ndarray, cfg: FitConfig) -> ClassGeometry:
    return ClassGeometry(
        aspect_ratio=fit_1d(aspect, cfg.bins_1d, alpha=cfg.alpha),
        scale=fit_1d(scale, cfg.bins_1d, alpha=cfg.alpha),
        location=fit_2d(centers, cfg.bins_2d, support=((0.0, 1.0), (0.0, 1.0)), alpha=cfg.alpha),
    )


def fit_count_density(counts: np.ndarray, alpha: float = SMOOTHING_ALPHA) -> EmpiricalDensity1D:
    """Unit-width bins centered on the integers min(counts)..max(counts)."""
    counts = np.asarray(counts, dtype=np.int64)
    lo, hi = int(counts.min()), int(counts.max())
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    hist = np.bincount(counts - lo, minlength=hi - lo + 1)
    return EmpiricalDensity1D(edges, smooth(hist, alpha))


def cooccurrence_counts(class_counts: np.ndarray) -> np.ndarray:
    """Image-level co-occurrence from an (images x M) instance-count matrix.

    Off-diagonal [A, B]: images holding at least one A and one B.
    Diagonal [A, A]: images holding at least two A.
    """
    present = (class_counts > 0).astype(np.int64)
    co = present.T @ present
    np.fill_diagonal(co, (class_counts >= 2).sum(axis=0))
    return co


def row_normalize(counts: np.ndarray, beta: float = 0.0) -> np.ndarray:
    m = counts.astype(np.float64) + beta
    sums = m.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, m / np.where(sums > 0, sums, 1.0), 0.0)
    return out


def fit_scdkg(ds: DatasetSummary, cfg: FitConfig | None = None) -> Scdkg:
    cfg = cfg or FitConfig()
    M = ds.M
    if ds.n_annotations == 0 or M == 0:
        raise ScdkgError("cannot fit a knowledge graph on an empty dataset")

    images = sorted(ds.images, key=lambda im: im.image_id)
    ids, aspect, scale, cx, cy = [], [], [], [], []
    class_counts = np.zeros((len(images), M), dtype=np.int64)
    for i, im in enumerate(images):
        for a in im.annotations:
            cid = ds.class_table[a.class_name]
            class_counts[i, cid - 1] += 1
            x0, y0, x1, y1 = a.bbox
            w, h = x1 - x0, y1 - y0
            ids.append(cid)
            aspect.append(w / h)
            scale.append(min(np.sqrt(w * h) / im.width, 1.0))
            cx.append(0.5 * (x0 + x1) / im.width)
            cy.append(0.5 * (y0 + y1) / im.height)
    ids_a = np.asarray(ids)
    aspect_a = np.asarray(aspect)
    scale_a = np.asarray(scale)
    centers = np.column_stack([cx, cy])

    per_class = class_counts.sum(axis=0)
    p_ic = Categorical(tuple(range(1, M + 1)), per_class / per_class.sum())

    per_image = class_counts.sum(axis=1)
    p_in = fit_count_density(per_image[per_image > 0], cfg.alpha)

    geometry_all = _fit_geometry(aspect_a, scale_a, centers, cfg)
    geometry = {}
    for cid in range(1, M + 1):
        sel = ids_a == cid
        if sel.sum() < cfg.min_samples:
            geometry[cid] = geometry_all
        else:
            geometry[cid] = _fit_geometry(aspect_a[sel], scale_a[sel], centers[sel], cfg)
    n_fallback = sum(1 for g in geometry.values() if g is geometry_all)
    if n_fallback:
        log.info("%d of %d classes use pooled geometry (< %d samples)", n_fallback, M, cfg.min_samples)

    p_id = row_normalize(cooccurrence_counts(class_counts), cfg.beta)

    return Scdkg(
        class_table=dict(ds.class_table),
        p_ic=p_ic,
        p_in=p_in,
        geometry=geometry,
        geometry_all=geometry_all,
        p_id=p_id,
        fit_config=cfg,
        source_digest=ds.digest(),
    )


def save_scdkg(g: Scdkg, path: str | Path) -> None:
    _canon.write_json(path, g.to_dict())


def load_scdkg(path: str | Path) -> Scdkg:
    try:
        doc = _canon.read_json(path)
    except ValueError as exc:
        raise ScdkgError(f"{path}: not valid JSON ({exc})") from None
    return Scdkg.from_dict(doc)
