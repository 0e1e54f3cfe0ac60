"""How closely sampled layouts reproduce the graph they were drawn from.

All distances are total variation on the graph's own bins, so nothing here
introduces a new discretization. ``ablate`` swaps graph factors for their
uninformed baselines, which gives the with/without grid of
:data:`ABLATION_ROWS`.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .density import tv_distance
from .sampler import Layout, SamplerConfig, sample_batch
from .scdkg import ClassGeometry, Scdkg, cooccurrence_counts, row_normalize

FACTORS = ("aspect", "scale", "location", "p_id")
MIN_LAYOUTS = 100

# Enabled factors per row, matching the nine-row SCDKG ablation grid.
ABLATION_ROWS: tuple[frozenset[str], ...] = (
    frozenset(),
    frozenset({"p_id"}),
    frozenset({"aspect", "p_id"}),
    frozenset({"scale", "p_id"}),
    frozenset({"location", "p_id"}),
    frozenset({"aspect", "scale", "p_id"}),
    frozenset({"scale", "location", "p_id"}),
    frozenset({"aspect", "location", "p_id"}),
    frozenset(FACTORS),
)


class FidelityError(ValueError):
    pass


@dataclass
class FidelityReport:
    tv_class: float
    tv_count: float
    per_class_geom: dict[int, dict[str, float]]
    cooccurrence_tv: float
    n_layouts: int
    axis_means: dict[str, float] = field(default_factory=dict)

    @property
    def tv_aspect(self) -> float:
        return self.axis_means["aspect"]

    @property
    def tv_scale(self) -> float:
        return self.axis_means["scale"]

    @property
    def tv_location(self) -> float:
        return self.axis_means["location"]

    def axis(self, factor: str) -> float:
        """TV along one ablation factor's own axis."""
        if factor == "p_id":
            return self.cooccurrence_tv
        return self.axis_means[factor]

    @property
    def summed_tv(self) -> float:
        return self.tv_class + self.tv_count + sum(self.axis_means.values()) + self.cooccurrence_tv

    def to_dict(self) -> dict:
        return {
            "tv_class": self.tv_class,
            "tv_count": self.tv_count,
            "tv_aspect": self.tv_aspect,
            "tv_scale": self.tv_scale,
            "tv_location": self.tv_location,
            "cooccurrence_tv": self.cooccurrence_tv,
            "summed_tv": self.summed_tv,
            "n_layouts": self.n_layouts,
            "per_class_geom": {str(k): v for k, v in sorted(self.per_class_geom.items())},
        }


def _class_vector(counts: dict[int, int], M: int) -> np.ndarray:
    v = np.zeros(M)
    for cid, n in counts.items():
        v[cid - 1] = n
    return v


def evaluate_fidelity(g: Scdkg, layouts: Sequence[Layout], min_layouts: int = MIN_LAYOUTS) -> FidelityReport:
    if len(layouts) < min_layouts:
        raise FidelityError(f"need at least {min_layouts} layouts, got {len(layouts)}")
    M = g.M

    first = np.zeros(M)
    sizes = np.empty(len(layouts))
    class_counts = np.zeros((len(layouts), M), dtype=np.int64)
    attrs: dict[int, tuple[list[float], list[float], list[tuple[float, float]]]] = {}
    for i, lay in enumerate(layouts):
        if lay.objects:
            first[lay.objects[0].class_id - 1] += 1
        sizes[i] = len(lay.objects)
        for o in lay.objects:
            class_counts[i, o.class_id - 1] += 1
            a, s, c = attrs.setdefault(o.class_id, ([], [], []))
            a.append(o.aspect_ratio)
            s.append(o.scale)
            c.append(o.center)

    p_ic = np.array([g.p_ic.prob(c) for c in range(1, M + 1)])
    tv_class = tv_distance(first / max(first.sum(), 1), p_ic)
    tv_count = tv_distance(g.p_in.bin_probs(sizes), g.p_in.probs)

    per_class: dict[int, dict[str, float]] = {}
    for cid in sorted(attrs):
        a, s, c = attrs[cid]
        geom = g.geometry[cid]
        per_class[cid] = {
            "tv_aspect": tv_distance(geom.aspect_ratio.bin_probs(a), geom.aspect_ratio.probs),
            "tv_scale": tv_distance(geom.scale.bin_probs(s), geom.scale.probs),
            "tv_location": tv_distance(geom.location.bin_probs(c), geom.location.probs),
        }
    axis_means = {
        name: float(np.mean([v[f"tv_{name}"] for v in per_class.values()])) if per_class else 0.0
        for name in ("aspect", "scale", "location")
    }

    sampled = row_normalize(cooccurrence_counts(class_counts))
    rows = [r for r in range(M) if sampled[r].sum() > 0]
    co_tv = float(np.mean([tv_distance(sampled[r], g.p_id[r]) for r in rows])) if rows else 0.0

    return FidelityReport(tv_class, tv_count, per_class, co_tv, len(layouts), axis_means)


def ablate(g: Scdkg, factors: Iterable[str]) -> Scdkg:
    """Copy of ``g`` with each named factor replaced by its uninformed baseline.

    Geometry factors fall back to the pooled density; disabling ``p_id``
    makes every row equal to the class prior, i.e. independent class draws.
    """
    factors = set(factors)
    unknown = factors - set(FACTORS)
    if unknown:
        raise FidelityError(f"unknown ablation factors {sorted(unknown)}; choose from {FACTORS}")
    if not factors:
        return g
    pooled = g.geometry_all
    geometry = {}
    for cid, geom in g.geometry.items():
        geometry[cid] = ClassGeometry(
            aspect_ratio=pooled.aspect_ratio if "aspect" in factors else geom.aspect_ratio,
            scale=pooled.scale if "scale" in factors else geom.scale,
            location=pooled.location if "location" in factors else geom.location,
        )
    p_id = g.p_id
    if "p_id" in factors:
        prior = np.array([g.p_ic.prob(c) for c in range(1, g.M + 1)])
        p_id = np.tile(prior, (g.M, 1))
    return g.with_(geometry=geometry, p_id=p_id, ablated=tuple(set(g.ablated) | factors))


@dataclass
class AblationRow:
    row: int
    enabled: frozenset[str]
    report: FidelityReport


def run_ablation_grid(
    g: Scdkg,
    n_layouts: int = 2000,
    base_seed: int = 0,
    image_size: tuple[int, int] = (800, 800),
    cfg: SamplerConfig | None = None,
    rows: Sequence[frozenset[str]] = ABLATION_ROWS,
    jobs: int = 1,
) -> list[AblationRow]:
    """Sample from each ablated variant and score it against the full graph."""
    cfg = cfg or SamplerConfig(max_iou=0.0)
    out = []
    for i, enabled in enumerate(rows, start=1):
        variant = ablate(g, set(FACTORS) - enabled)
        layouts = sample_batch(variant, image_size, base_seed, n_layouts, cfg, jobs=jobs)
        out.append(AblationRow(i, enabled, evaluate_fidelity(g, layouts)))
    return out


def format_report(report: FidelityReport) -> str:
    lines = [
        f"layouts          {report.n_layouts}",
        f"tv_class         {report.tv_class:.4f}",
        f"tv_count         {report.tv_count:.4f}",
        f"tv_aspect        {report.tv_aspect:.4f}",
        f"tv_scale         {report.tv_scale:.4f}",
        f"tv_location      {report.tv_location:.4f}",
        f"cooccurrence_tv  {report.cooccurrence_tv:.4f}",
        f"summed_tv        {report.summed_tv:.4f}",
    ]
    return "\n".join(lines)


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    def mark(on: bool) -> str:
        return "x" if on else ""

    header = (
        f"{'#':>2}  {'aspect':^6} {'scale':^5} {'loc':^5} {'p_id':^5} | "
        f"{'aspect':>7} {'scale':>7} {'loc':>7} {'co-occ':>7} {'sum':>7}"
    )
    lines = [header, "-" * len(header)]
    for r in rows:
        rep = r.report
        lines.append(
            f"{r.row:>2}  {mark('aspect' in r.enabled):^6} {mark('scale' in r.enabled):^5} "
            f"{mark('location' in r.enabled):^5} {mark('p_id' in r.enabled):^5} | "
            f"{rep.tv_aspect:7.4f} {rep.tv_scale:7.4f} {rep.tv_location:7.4f} "
            f"{rep.cooccurrence_tv:7.4f} {rep.summed_tv:7.4f}"
        )
    return "\n".join(lines)
