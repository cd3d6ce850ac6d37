"""Histograms, total-variation and Wasserstein-2 distances.

Distances are computed between empirical objects: histograms on a shared
rectangular grid for TV, and (weighted) point clouds for W2. The W2 solver
is exact: sorted/quantile coupling in one dimension and a network simplex
on the transportation problem otherwise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "GridSpec",
    "EmpiricalDistribution",
    "WeightedPointSet",
    "W2_POINT_CAP",
    "build_histogram",
    "tv_distance",
    "w2_one_dim",
    "w2_discrete",
    "subsample",
    "distance_curve",
    "quantile_points",
    "sample_points",
]

#: Largest marginal accepted by :func:`w2_discrete`.
W2_POINT_CAP = 2000
_MAX_PIVOTS = 10**8


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid, one ``(lower, upper, bins)`` triple per dimension."""

    axes: tuple[tuple[float, float, int], ...]

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        if not axes:
            raise ValueError("grid needs at least one dimension")
        for lo, hi, n in axes:
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"grid bounds must be finite, got ({lo}, {hi})")
            if not lo < hi:
                raise ValueError(f"grid lower bound {lo} must be below upper bound {hi}")
            if n < 1:
                raise ValueError(f"grid bin count must be positive, got {n}")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def regular(cls, lower, upper, bins) -> "GridSpec":
        lower, upper, bins = np.atleast_1d(lower), np.atleast_1d(upper), np.atleast_1d(bins)
        return cls(tuple(zip(lower.tolist(), upper.tolist(), bins.tolist())))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n for _, _, n in self.axes)

    def edges(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n + 1) for lo, hi, n in self.axes]

    def centers(self) -> list[np.ndarray]:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges()]

    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / n for lo, hi, n in self.axes])

    def bin_volume(self) -> float:
        return float(np.prod(self.widths()))

    def scaled(self, factor: float) -> "GridSpec":
        """Grid widened by ``factor`` about its center, keeping the bin width."""
        axes = []
        for lo, hi, n in self.axes:
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * factor
            axes.append((mid - half, mid + half, int(round(n * factor))))
        return GridSpec(tuple(axes))


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Normalized histogram over a :class:`GridSpec`.

    ``counts`` is ``None`` for distributions that do not come from samples
    (e.g. quadrature reference densities), in which case ``weights`` holds
    the bin masses directly.
    """

    grid: GridSpec
    counts: np.ndarray | None = None
    dropped: int = 0
    weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def total(self) -> int:
        return 0 if self.counts is None else int(self.counts.sum())

    @property
    def masses(self) -> np.ndarray:
        if self.counts is None:
            return self.weights
        total = self.total
        if total == 0:
            raise ValueError(
                f"cannot normalize histogram: no samples inside the grid ({self.dropped} dropped)"
            )
        return self.counts / total

    def density(self) -> np.ndarray:
        """Masses divided by the bin volume."""
        return self.masses / self.grid.bin_volume()


@dataclass(frozen=True, eq=False)
class WeightedPointSet:
    """Discrete probability measure: ``points`` (n, d) with ``weights`` (n,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or w.shape != (pts.shape[0],):
            raise ValueError("points must be (n, d) and weights (n,)")
        if pts.shape[0] == 0:
            raise ValueError("empty point set")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "WeightedPointSet":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def __len__(self):
        return self.points.shape[0]


def _as_samples(samples, dim: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1 and dim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"samples must have shape (n, {dim}), got {x.shape}")
    return x


def build_histogram(samples, grid: GridSpec) -> EmpiricalDistribution:
    """Bin ``samples`` on ``grid``.

    Bins are half-open ``[a, b)`` except the last bin of each axis, which is
    closed. Samples outside the grid (or non-finite) are counted in
    ``dropped``.
    """
    x = _as_samples(samples, grid.dim)
    if x.shape[0] == 0:
        raise ValueError("cannot build a histogram from zero samples")
    flat = np.zeros(x.shape[0], dtype=np.int64)
    inside = np.all(np.isfinite(x), axis=1)
    for j, (lo, hi, n) in enumerate(grid.axes):
        col = x[:, j]
        with np.errstate(invalid="ignore"):
            inside &= (col >= lo) & (col <= hi)
            idx = np.floor((col - lo) / (hi - lo) * n)
        idx = np.clip(np.nan_to_num(idx, nan=0.0), 0, n - 1).astype(np.int64)
        flat = flat * n + idx
    counts = np.bincount(flat[inside], minlength=int(np.prod(grid.shape)))
    return EmpiricalDistribution(
        grid=grid,
        counts=counts.reshape(grid.shape),
        dropped=int(x.shape[0] - inside.sum()),
    )


def tv_distance(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """Half the L1 distance between bin masses on a common grid."""
    if p.grid != q.grid:
        raise ValueError("tv_distance needs both histograms on the same grid")
    return float(0.5 * np.abs(p.masses - q.masses).sum())


def _w2_1d_weighted(a, wa, b, wb) -> float:
    """Exact W2 between two weighted 1-D measures via their quantile functions."""
    ia, ib = np.argsort(a, kind="stable"), np.argsort(b, kind="stable")
    a, wa, b, wb = a[ia], wa[ia], b[ib], wb[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    breaks = np.union1d(ca, cb)
    lengths = np.diff(np.concatenate([[0.0], breaks]))
    # quantile functions are left-continuous step functions; evaluate each
    # segment at its right end
    qa = a[np.minimum(np.searchsorted(ca, breaks, side="left"), len(a) - 1)]
    qb = b[np.minimum(np.searchsorted(cb, breaks, side="left"), len(b) - 1)]
    return float(np.sqrt(max(np.sum(lengths * (qa - qb) ** 2), 0.0)))


def w2_one_dim(a: Sequence[float], b: Sequence[float]) -> float:
    """Exact W2 between the empirical measures of two 1-D samples.

    Equal lengths reduce to pairing sorted samples; unequal lengths integrate
    the squared difference of the two quantile step functions exactly.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("w2_one_dim needs non-empty samples")
    if a.size == b.size:
        return float(np.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2)))
    return _w2_1d_weighted(a, np.full(a.size, 1 / a.size), b, np.full(b.size, 1 / b.size))


def _sq_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)


def _network_simplex(wa: np.ndarray, wb: np.ndarray, cost: np.ndarray) -> float:
    # POT probes every installed tensor library on import; none is needed here
    for lib in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{lib}", "1")
    import ot

    # the solver wants marginals of equal total mass to machine precision
    wb = wb * (wa.sum() / wb.sum())
    total, log = ot.emd2(wa, wb, cost, numItermax=_MAX_PIVOTS, log=True)
    if log["result_code"] != 1:
        raise RuntimeError(f"transport solver failed: {log['warning']}")
    return float(total)


def w2_discrete(mu: WeightedPointSet, nu: WeightedPointSet) -> float:
    """Exact W2 between two discrete measures with squared Euclidean cost."""
    if mu.points.shape[1] != nu.points.shape[1]:
        raise ValueError("point sets live in different dimensions")
    n, m = len(mu), len(nu)
    if max(n, m) > W2_POINT_CAP:
        raise ValueError(
            f"w2_discrete accepts at most {W2_POINT_CAP} points per marginal "
            f"(got {n} and {m}); subsample first, e.g. with masla.metrics.subsample"
        )
    total = _network_simplex(mu.weights, nu.weights, _sq_cost(mu.points, nu.points))
    return float(np.sqrt(max(total, 0.0)))


def subsample(points, cap: int = W2_POINT_CAP, seed: int = 0) -> np.ndarray:
    """Uniform subsample without replacement, deterministic in ``seed``."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] <= cap:
        return points
    idx = np.random.default_rng(seed).choice(points.shape[0], size=cap, replace=False)
    return points[np.sort(idx)]


def distance_curve(snapshots, reference, metric: str, seed: int = 0) -> list[tuple[int, float]]:
    """Distance from each scheduled snapshot of an ensemble to ``reference``.

    ``metric="tv"`` needs an :class:`EmpiricalDistribution` reference; every
    snapshot is binned on its grid. ``metric="w2"`` needs a
    :class:`WeightedPointSet`; snapshot positions are used as unit-weight
    points, subsampled to :data:`W2_POINT_CAP` in two or more dimensions.
    """
    out = []
    if metric == "tv":
        if not isinstance(reference, EmpiricalDistribution):
            raise ValueError("tv curves need a histogram reference")
        for k, pts in zip(snapshots.schedule, snapshots.snapshots):
            out.append((int(k), tv_distance(build_histogram(pts, reference.grid), reference)))
    elif metric == "w2":
        if not isinstance(reference, WeightedPointSet):
            raise ValueError("w2 curves need a point-set reference")
        for k, pts in zip(snapshots.schedule, snapshots.snapshots):
            pts = np.asarray(pts, dtype=float)
            if pts.shape[1] == 1 and reference.is_uniform:
                value = w2_one_dim(pts[:, 0], reference.points[:, 0])
            elif pts.shape[1] == 1:
                value = _w2_1d_weighted(
                    pts[:, 0], np.full(len(pts), 1 / len(pts)),
                    reference.points[:, 0], reference.weights,
                )
            else:
                value = w2_discrete(WeightedPointSet.uniform(subsample(pts, seed=seed)), reference)
            out.append((int(k), value))
    else:
        raise ValueError(f"unknown metric {metric!r}; expected 'tv' or 'w2'")
    return out


def quantile_points(reference: EmpiricalDistribution, n: int) -> np.ndarray:
    """``n`` deterministic points at the quantile midpoints of a 1-D histogram.

    Mass is spread uniformly inside each bin, so the quantile function is
    piecewise linear.
    """
    if reference.grid.dim != 1:
        raise ValueError("quantile_points needs a one-dimensional reference")
    if n < 1:
        raise ValueError("need at least one point")
    edges = reference.grid.edges()[0]
    cdf = np.concatenate([[0.0], np.cumsum(reference.masses)])
    cdf[-1] = 1.0
    probs = (np.arange(n) + 0.5) / n
    return np.interp(probs, cdf, edges)[:, None]


def sample_points(reference: EmpiricalDistribution, n: int, seed: int = 0) -> np.ndarray:
    """``n`` i.i.d. draws from a histogram, uniform within the chosen bin."""
    rng = np.random.default_rng(seed)
    grid = reference.grid
    masses = reference.masses.ravel()
    flat = rng.choice(masses.size, size=n, p=masses / masses.sum())
    idx = np.unravel_index(flat, grid.shape)
    lows = np.array([lo for lo, _, _ in grid.axes])
    jitter = rng.random((n, grid.dim))
    return lows + (np.stack(idx, axis=1) + jitter) * grid.widths()
