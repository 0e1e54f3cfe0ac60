"""Histogram densities with exact inverse-CDF sampling.

Every density is a frozen set of bin edges and bin probabilities. Sampling
picks a bin by inverting the cumulative mass, then places the value uniformly
inside that bin. All randomness comes from a caller-supplied
``numpy.random.Generator``; nothing here touches global RNG state.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections.abc import Hashable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

DEFAULT_BINS_1D = 64
DEFAULT_BINS_2D = (32, 32)
SMOOTHING_ALPHA = 1e-6
_NORM_TOL = 1e-9


class DensityError(ValueError):
    pass


def _cdf(probs: np.ndarray) -> list[float]:
    cdf = np.cumsum(probs, dtype=np.float64)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    return cdf.tolist()


def _check_probs(probs: np.ndarray, what: str) -> None:
    if probs.size == 0:
        raise DensityError(f"{what}: empty probability vector")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise DensityError(f"{what}: probabilities must be finite and nonnegative")
    total = float(probs.sum())
    if abs(total - 1.0) > _NORM_TOL:
        raise DensityError(f"{what}: probabilities sum to {total!r}, expected 1")


def _check_edges(edges: np.ndarray, n_bins: int, what: str) -> None:
    if edges.ndim != 1 or edges.size != n_bins + 1:
        raise DensityError(f"{what}: expected {n_bins + 1} edges, got {edges.size}")
    if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
        raise DensityError(f"{what}: edges must be finite and strictly ascending")


def _below(x: float, hi: float, lo: float) -> float:
    # Jitter can round up onto the open upper edge.
    return x if x < hi else math.nextafter(hi, lo)


def smooth(counts: np.ndarray, alpha: float = SMOOTHING_ALPHA) -> np.ndarray:
    """Normalize counts, give empty bins ``alpha`` of the mass, renormalize."""
    total = counts.sum()
    if total <= 0:
        raise DensityError("cannot fit empty density")
    p = counts.astype(np.float64) / total
    p[p == 0] = alpha
    return p / p.sum()


@dataclass(frozen=True, eq=False)
class EmpiricalDensity1D:
    bin_edges: np.ndarray
    probs: np.ndarray
    _cdf: list[float] = field(init=False, repr=False)
    _edges: list[float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        _check_edges(edges, probs.size, "EmpiricalDensity1D")
        _check_probs(probs, "EmpiricalDensity1D")
        edges.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", _cdf(probs))
        object.__setattr__(self, "_edges", edges.tolist())

    @property
    def n_bins(self) -> int:
        return self.probs.size

    @property
    def support(self) -> tuple[float, float]:
        return self._edges[0], self._edges[-1]

    def mean(self) -> float:
        centers = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        return float(np.dot(centers, self.probs))

    def bin_probs(self, values: Any) -> np.ndarray:
        """Fraction of ``values`` in each bin; mass outside the support is dropped."""
        values = np.asarray(values, dtype=np.float64)
        counts, _ = np.histogram(values, bins=self.bin_edges)
        return counts / max(values.size, 1)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            i = bisect_right(self._cdf, rng.random())
            lo, hi = self._edges[i], self._edges[i + 1]
            return _below(lo + rng.random() * (hi - lo), self._edges[-1], lo)
        u = rng.random(size)
        idx = np.searchsorted(np.asarray(self._cdf), u, side="right")
        lo = self.bin_edges[idx]
        hi = self.bin_edges[idx + 1]
        x = lo + rng.random(size) * (hi - lo)
        top = self._edges[-1]
        return np.where(x < top, x, np.nextafter(top, -np.inf))

    def to_dict(self) -> dict:
        return {"bin_edges": self.bin_edges.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> EmpiricalDensity1D:
        return cls(np.asarray(d["bin_edges"], dtype=np.float64), np.asarray(d["probs"], dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmpiricalDensity1D):
            return NotImplemented
        return np.array_equal(self.bin_edges, other.bin_edges) and np.array_equal(self.probs, other.probs)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class EmpiricalDensity2D:
    x_edges: np.ndarray
    y_edges: np.ndarray
    probs: np.ndarray  # shape (Bx, By)
    _cdf: list[float] = field(init=False, repr=False)
    _xe: list[float] = field(init=False, repr=False)
    _ye: list[float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        xe = np.asarray(self.x_edges, dtype=np.float64)
        ye = np.asarray(self.y_edges, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise DensityError("EmpiricalDensity2D: probs must be a 2-D grid")
        _check_edges(xe, probs.shape[0], "EmpiricalDensity2D x")
        _check_edges(ye, probs.shape[1], "EmpiricalDensity2D y")
        _check_probs(probs, "EmpiricalDensity2D")
        for a in (xe, ye, probs):
            a.setflags(write=False)
        object.__setattr__(self, "x_edges", xe)
        object.__setattr__(self, "y_edges", ye)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", _cdf(probs.ravel()))
        object.__setattr__(self, "_xe", xe.tolist())
        object.__setattr__(self, "_ye", ye.tolist())

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape  # type: ignore[return-value]

    @property
    def support(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (self._xe[0], self._xe[-1]), (self._ye[0], self._ye[-1])

    def marginal_x(self) -> EmpiricalDensity1D:
        p = self.probs.sum(axis=1)
        return EmpiricalDensity1D(self.x_edges, p / p.sum())

    def marginal_y(self) -> EmpiricalDensity1D:
        p = self.probs.sum(axis=0)
        return EmpiricalDensity1D(self.y_edges, p / p.sum())

    def bin_probs(self, points: Any) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=[self.x_edges, self.y_edges])
        return counts / max(len(pts), 1)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        by = self.probs.shape[1]
        if size is None:
            k = bisect_right(self._cdf, rng.random())
            ix, iy = divmod(k, by)
            x0, x1 = self._xe[ix], self._xe[ix + 1]
            y0, y1 = self._ye[iy], self._ye[iy + 1]
            x = _below(x0 + rng.random() * (x1 - x0), self._xe[-1], x0)
            y = _below(y0 + rng.random() * (y1 - y0), self._ye[-1], y0)
            return x, y
        k = np.searchsorted(np.asarray(self._cdf), rng.random(size), side="right")
        ix, iy = np.divmod(k, by)
        x0, x1 = self.x_edges[ix], self.x_edges[ix + 1]
        y0, y1 = self.y_edges[iy], self.y_edges[iy + 1]
        jitter = rng.random((2, size))
        x = x0 + jitter[0] * (x1 - x0)
        y = y0 + jitter[1] * (y1 - y0)
        x = np.where(x < self._xe[-1], x, np.nextafter(self._xe[-1], -np.inf))
        y = np.where(y < self._ye[-1], y, np.nextafter(self._ye[-1], -np.inf))
        return np.stack([x, y], axis=1)

    def to_dict(self) -> dict:
        return {
            "x_edges": self.x_edges.tolist(),
            "y_edges": self.y_edges.tolist(),
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EmpiricalDensity2D:
        return cls(
            np.asarray(d["x_edges"], dtype=np.float64),
            np.asarray(d["y_edges"], dtype=np.float64),
            np.asarray(d["probs"], dtype=np.float64),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmpiricalDensity2D):
            return NotImplemented
        return (
            np.array_equal(self.x_edges, other.x_edges)
            and np.array_equal(self.y_edges, other.y_edges)
            and np.array_equal(self.probs, other.probs)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Categorical:
    """Discrete distribution over hashable labels.

    Sampling walks the labels in sorted order, so two categoricals with the
    same label->prob mapping draw identical sequences from identical
    generators regardless of the order the labels were given in.
    """

    labels: tuple
    probs: np.ndarray
    _order: tuple = field(init=False, repr=False)
    _cdf: list[float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        probs = np.asarray(self.probs, dtype=np.float64)
        if len(labels) != probs.size:
            raise DensityError("Categorical: labels and probs differ in length")
        if len(set(labels)) != len(labels):
            raise DensityError("Categorical: duplicate labels")
        _check_probs(probs, "Categorical")
        probs.setflags(write=False)
        perm = sorted(range(len(labels)), key=lambda i: labels[i])
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_order", tuple(labels[i] for i in perm))
        object.__setattr__(self, "_cdf", _cdf(probs[perm]))

    def prob(self, label: Hashable) -> float:
        return float(self.probs[self.labels.index(label)])

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.probs.tolist()))

    def sample(self, rng: np.random.Generator):
        return self._order[bisect_right(self._cdf, rng.random())]

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Categorical:
        return cls(tuple(d["labels"]), np.asarray(d["probs"], dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Categorical):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.probs, other.probs)

    __hash__ = None  # type: ignore[assignment]


def default_support(samples: np.ndarray) -> tuple[float, float]:
    lo = float(samples.min())
    hi = float(samples.max())
    # Widen so the maximum lands strictly inside the last bin.
    return lo, hi + 1e-9 * max(1.0, abs(hi))


def fit_1d(
    samples: Sequence[float] | np.ndarray,
    bins: int = DEFAULT_BINS_1D,
    support: tuple[float, float] | None = None,
    alpha: float = SMOOTHING_ALPHA,
) -> EmpiricalDensity1D:
    """Histogram density over ``support`` (default: sample range).

    Samples outside an explicit support are ignored.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise DensityError("cannot fit empty density")
    if bins < 1:
        raise DensityError("bins must be >= 1")
    lo, hi = support if support is not None else default_support(x)
    if not hi > lo:
        raise DensityError(f"degenerate support ({lo}, {hi})")
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    return EmpiricalDensity1D(edges, smooth(counts, alpha))


def fit_2d(
    points: Sequence[tuple[float, float]] | np.ndarray,
    bins: tuple[int, int] = DEFAULT_BINS_2D,
    support: tuple[tuple[float, float], tuple[float, float]] | None = None,
    alpha: float = SMOOTHING_ALPHA,
) -> EmpiricalDensity2D:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise DensityError("cannot fit empty density")
    bx, by = bins
    if bx < 1 or by < 1:
        raise DensityError("bins must be >= 1 on each axis")
    if support is None:
        support = (default_support(pts[:, 0]), default_support(pts[:, 1]))
    (x0, x1), (y0, y1) = support
    xe = np.linspace(x0, x1, bx + 1)
    ye = np.linspace(y0, y1, by + 1)
    counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=[xe, ye])
    return EmpiricalDensity2D(xe, ye, smooth(counts, alpha))


def sample_1d(d: EmpiricalDensity1D, rng: np.random.Generator) -> float:
    return d.sample(rng)


def sample_2d(d: EmpiricalDensity2D, rng: np.random.Generator) -> tuple[float, float]:
    return d.sample(rng)


def sample_categorical(c: Categorical, rng: np.random.Generator):
    return c.sample(rng)


def tv_distance(p: Any, q: Any) -> float:
    """Total variation distance; inputs need not sum to 1 (missing mass counts)."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    gap = abs((1.0 - p.sum()) - (1.0 - q.sum()))
    return float(min(1.0, 0.5 * (np.abs(p - q).sum() + gap)))
