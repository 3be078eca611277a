"""Nearest-neighbour graph edge-length measures and their stabilization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from rsalab import rng
from rsalab.fields import FieldSpec, Region, generate
from rsalab.limits import FINITE, INFINITE, RescaledVectorSample, center_counts
from rsalab.stats import InsufficientDataError, ScalingFit, fit_exponential

_TAG_NN = 31
_TAG_STAB = 32


@dataclass
class WeightedPointMeasure:
    """Atoms at ``points`` with half the length of every incident NN edge."""

    points: np.ndarray
    weights: np.ndarray
    neighbour: np.ndarray

    def measure(self, region: Region) -> float:
        if self.points.shape[0] == 0:
            return 0.0
        return float(self.weights[region.contains(self.points)].sum())

    @property
    def total(self) -> float:
        return float(self.weights.sum())


def _lex_less(a: np.ndarray, b: np.ndarray) -> bool:
    for u, v in zip(a, b):
        if u != v:
            return u < v
    return False


def _dist(x: np.ndarray, i, j) -> np.ndarray:
    return np.sqrt(((x[i] - x[j]) ** 2).sum(axis=-1))


def nearest_neighbours(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and distance of each point's nearest neighbour.

    Equidistant candidates are resolved by the lexicographically smallest
    coordinates.
    """
    x = np.asarray(points, dtype=float)
    n = x.shape[0]
    if n < 2:
        return np.full(n, -1, dtype=np.int64), np.full(n, np.inf)
    tree = cKDTree(x)
    k = min(n, 4)
    _, idx = tree.query(x, k=k)
    # drop each point's own index explicitly: coincident points can precede it
    rows = np.arange(n)
    others = np.where(idx == rows[:, None], n, idx)
    others.sort(axis=1)
    others = others[:, :k - 1]
    dist = np.where(others < n, _dist(x, rows[:, None], np.minimum(others, n - 1)), np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    others = np.take_along_axis(others, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    nbr = others[:, 0].astype(np.int64)
    nd = dist[:, 0].copy()
    tied = np.flatnonzero(dist[:, 1] == nd) if k > 2 else np.zeros(0, dtype=np.int64)
    for i in tied:
        cand = np.array([j for j in tree.query_ball_point(x[i], nd[i] * (1 + 1e-9) + 1e-300)
                         if j != i], dtype=np.int64)
        exact = cand[_dist(x, i, cand) == nd[i]]
        best = int(exact[0])
        for j in exact[1:]:
            if _lex_less(x[j], x[best]):
                best = int(j)
        nbr[i] = best
    return nbr, nd


def nn_edges(points: np.ndarray) -> set[tuple[int, int]]:
    nbr, _ = nearest_neighbours(points)
    return {(min(i, int(j)), max(i, int(j))) for i, j in enumerate(nbr) if j >= 0}


def nn_weights(points) -> WeightedPointMeasure:
    """Weights of the NN graph: every undirected edge gives half its length to each end."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    nbr, nd = nearest_neighbours(x)
    return WeightedPointMeasure(x, _edge_weights(nbr, nd), nbr)


def _edge_weights(nbr: np.ndarray, nd: np.ndarray) -> np.ndarray:
    n = nbr.shape[0]
    w = np.zeros(n)
    if n >= 2:
        i = np.arange(n)
        j = nbr
        # a mutual pair contributes its edge once
        mutual = nbr[j] == i
        keep = ~mutual | (i < j)
        half = 0.5 * nd[keep]
        np.add.at(w, i[keep], half)
        np.add.at(w, j[keep], half)
    return w


def nn_measure(points, query_region: Region) -> float:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[0] < 2:
        warnings.warn("nearest-neighbour measure of fewer than two points is zero", stacklevel=2)
        return 0.0
    return nn_weights(x).measure(query_region)


def total_edge_length_bruteforce(points) -> float:
    """Total NN-graph edge length from the full distance matrix (independent route)."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    n = x.shape[0]
    if n < 2:
        return 0.0
    dm = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    np.fill_diagonal(dm, np.inf)
    edges = set()
    for i in range(n):
        m = dm[i].min()
        cands = [j for j in range(n) if dm[i, j] == m]
        best = min(cands, key=lambda j: tuple(x[j]))
        edges.add((min(i, best), max(i, best)))
    return float(sum(dm[a, b] for a, b in edges))


# -- spatial Poisson input -------------------------------------------------------------


def poisson_points(fld, region: Region) -> np.ndarray:
    """Spatial projection of the field in ``region``: a unit-intensity Poisson sample when
    the field has ``tau = 1``."""
    if region.is_empty:
        return np.zeros((0, fld.dimension))
    batch = fld.points_in_cells(region.cells(fld.cell_size))
    return batch.x[region.contains(batch.x)]


def _grow(region: Region, m: float) -> Region:
    lo, hi = region.bounds
    return Region.box(lo - m, hi + m)


def _occupied(points: np.ndarray, lo: np.ndarray, hi: np.ndarray, side: float) -> bool:
    """Every grid cell of ``side`` meeting ``[lo, hi]`` holds a point."""
    c_lo = np.floor(lo / side).astype(np.int64)
    c_hi = np.floor(hi / side).astype(np.int64)
    shape = c_hi - c_lo + 1
    cells = np.floor(points / side).astype(np.int64) - c_lo
    ok = np.all((cells >= 0) & (cells < shape), axis=1)
    flat = np.ravel_multi_index(cells[ok].T, shape)
    return np.unique(flat).size == int(np.prod(shape))


def nn_weights_infinite(fld, region: Region, margin0: float = 8.0,
                        cap: float = 256.0) -> WeightedPointMeasure:
    """NN weights of the points in ``region`` within the whole infinite Poisson input.

    A margin ``m`` around the region's bounding box is explored and doubled until
    (i) every grid cell of side ``a`` with ``a sqrt(d) <= m/2`` meeting the region
    grown by ``m/2`` is occupied, so no unexplored point can have its nearest
    neighbour in the region, and (ii) every explored point whose nearest neighbour
    is in the region, and every point of the region, is closer to that neighbour
    than to the unexplored complement.
    """
    d = fld.dimension
    m = margin0
    lo, hi = region.bounds
    while True:
        box = _grow(region, m)
        x = poisson_points(fld, box)
        side = m / (2 * math.sqrt(d))
        nbr, nd = nearest_neighbours(x)
        inside = region.contains(x) if x.shape[0] else np.zeros(0, dtype=bool)
        ok = _occupied(x, lo - m / 2, hi + m / 2, side)
        if ok and x.shape[0] >= 2:
            frontier = np.minimum(x - (lo - m), (hi + m) - x).min(axis=1)
            relevant = inside | inside[nbr]
            ok = bool(np.all(nd[relevant] < frontier[relevant]))
        if ok:
            w = _edge_weights(nbr, nd)
            return WeightedPointMeasure(x[inside], w[inside], nbr[inside])
        m *= 2
        if m > cap:
            raise RuntimeError(f"nearest-neighbour certification exceeded margin {cap}")


def nn_raw_measures(spec: FieldSpec, seeds: Sequence[int], lam: float, boxes: Sequence[Region],
                    mode: str = INFINITE, A: Optional[Region] = None) -> np.ndarray:
    scaled = [b.scaled(lam) for b in boxes]
    out = np.zeros((len(seeds), len(boxes)))
    for r, s in enumerate(seeds):
        fld = spec.make(int(s))
        if mode == INFINITE:
            for k, b in enumerate(scaled):
                out[r, k] = nn_weights_infinite(fld, b).total
        elif mode == FINITE:
            if A is None:
                raise ValueError("finite-volume mode needs the house region A")
            w = nn_weights(poisson_points(fld, A.scaled(lam)))
            for k, b in enumerate(scaled):
                out[r, k] = w.measure(b)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return out


def nn_seeds(master_seed: int, n: int) -> np.ndarray:
    return rng.derive_seeds(master_seed, n, _TAG_NN)


def nn_rescaled_family(spec: FieldSpec, master_seed: int, n_replicates: int, lam: float,
                       boxes: Sequence[Region], mode: str = INFINITE,
                       A: Optional[Region] = None) -> list[RescaledVectorSample]:
    """NN measures of ``lam * B_i``, centred by pooled means and scaled by ``lam^{d/2}``."""
    _check_unit_intensity(spec)
    seeds = [int(s) for s in nn_seeds(master_seed, n_replicates)]
    raw = nn_raw_measures(spec, seeds, lam, boxes, mode, A)
    return center_counts(raw, lam, boxes, mode, seeds, spec.dimension)


def nn_rescaled_sample(spec: FieldSpec, seed: int, lam: float, boxes: Sequence[Region], means,
                       mode: str = INFINITE, A: Optional[Region] = None) -> RescaledVectorSample:
    _check_unit_intensity(spec)
    raw = nn_raw_measures(spec, [seed], lam, boxes, mode, A)
    return center_counts(raw, lam, boxes, mode, [seed], spec.dimension, means)[0]


def _check_unit_intensity(spec: FieldSpec) -> None:
    if spec.tau != 1.0:
        raise ValueError("NN measures use the unit-intensity spatial input (tau = 1)")


# -- stabilization ------------------------------------------------------------------------


@njit(cache=True)
def _probe_weight(x, probe):
    """Weight of atom ``probe`` in the NN graph of the rows of ``x`` (lexicographic ties)."""
    n, d = x.shape
    if n < 2:
        return 0.0
    nbr = np.empty(n, dtype=np.int64)
    nd = np.empty(n)
    for i in range(n):
        best = -1
        bd = np.inf
        for j in range(n):
            if j == i:
                continue
            s = 0.0
            for k in range(d):
                s += (x[i, k] - x[j, k]) ** 2
            s = math.sqrt(s)
            better = s < bd
            if not better and s == bd:
                for k in range(d):
                    if x[j, k] != x[best, k]:
                        better = x[j, k] < x[best, k]
                        break
            if better:
                bd = s
                best = j
        nbr[i] = best
        nd[i] = bd
    w = 0.5 * nd[probe]
    q = nbr[probe]
    for j in range(n):
        if j != probe and nbr[j] == probe and j != q:
            w += 0.5 * nd[j]
    return w


def adversarial_grid(dimension: int, r_inner: float, width: float = 3.0,
                     spacing: float = 0.5) -> np.ndarray:
    """Grid points ``y`` with ``r_inner < |y| <= r_inner + width``."""
    r_out = r_inner + width
    k = int(math.ceil(r_out / spacing))
    axes = [np.arange(-k, k + 1) * spacing] * dimension
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    norm = np.sqrt((grid ** 2).sum(axis=1))
    return grid[(norm > r_inner) & (norm <= r_out)]


def stabilizes(local: np.ndarray, outside: np.ndarray, r: float, width: float = 3.0,
               spacing: float = 0.5) -> bool:
    """Whether the probe's weight (row 0 of ``local``) is unchanged by the tested
    environments outside ``B_r``: nothing, each adversarial grid point alone, the
    whole grid, and the actual outside configuration."""
    base = _probe_weight(local, 0)
    grid = adversarial_grid(local.shape[1], r, width, spacing)
    envs = [grid, outside] + [grid[i:i + 1] for i in range(grid.shape[0])]
    for env in envs:
        if env.shape[0] == 0:
            continue
        if _probe_weight(np.concatenate([local, env]), 0) != base:
            return False
    return True


def stabilization_radius_of(points: np.ndarray, probe: np.ndarray, r_grid, width: float = 3.0,
                            spacing: float = 0.5) -> float:
    """Smallest ``R`` in ``r_grid`` at which the probe's weight stabilizes (``inf`` if none)."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    probe = np.asarray(probe, dtype=float)
    rel = x - probe
    norm = np.sqrt((rel ** 2).sum(axis=1))
    for r in r_grid:
        inner = norm <= r
        local = np.concatenate([np.zeros((1, x.shape[1])), rel[inner]])
        if stabilizes(local, rel[~inner], r, width, spacing):
            return float(r)
    return math.inf


@dataclass
class StabilizationResult:
    radii: np.ndarray  # inf marks censored probes
    cap: float
    t_grid: np.ndarray
    tail: np.ndarray
    tail_se: np.ndarray
    fit: Optional[object]

    @property
    def censored(self) -> np.ndarray:
        return ~np.isfinite(self.radii)


def stabilization_radius(spec: FieldSpec, master_seed: int, n_probes: int,
                         r_grid=None, t_grid=None, width: float = 3.0,
                         spacing: float = 0.5) -> StabilizationResult:
    """Stabilization radii of the NN weight at a probe inserted at the origin of
    independent Poisson samples, with the empirical tail ``P[R > t]``."""
    _check_unit_intensity(spec)
    r_grid = np.arange(0.25, 16.01, 0.25) if r_grid is None else np.asarray(r_grid, float)
    t_grid = np.arange(2.0, 8.01, 1.0) if t_grid is None else np.asarray(t_grid, float)
    cap = float(r_grid[-1])
    seeds = rng.derive_seeds(master_seed, n_probes, _TAG_STAB)
    reach = cap + width + 1.0
    window = Region.centered_cube(spec.dimension, reach)
    cells = window.cells(spec.cell_size)
    radii = np.empty(n_probes)
    ref = spec.make(0)
    for p, s in enumerate(seeds):
        batch = generate(ref, cells, np.full(cells.shape[0], s, dtype=np.uint64))
        pts = batch.x[window.contains(batch.x)]
        radii[p] = stabilization_radius_of(pts, np.zeros(spec.dimension), r_grid, width, spacing)
    tail = (radii[:, None] > t_grid[None, :]).mean(axis=0)
    se = np.sqrt(tail * (1 - tail) / n_probes)
    try:
        fit = fit_exponential(t_grid, tail, se)
    except InsufficientDataError:
        fit = None
    return StabilizationResult(radii, cap, t_grid, tail, se, fit)


__all__ = [
    "ScalingFit",
    "StabilizationResult",
    "WeightedPointMeasure",
    "adversarial_grid",
    "nearest_neighbours",
    "nn_edges",
    "nn_measure",
    "nn_raw_measures",
    "nn_rescaled_family",
    "nn_rescaled_sample",
    "nn_weights",
    "nn_weights_infinite",
    "poisson_points",
    "stabilization_radius",
    "stabilization_radius_of",
    "stabilizes",
    "total_edge_length_bruteforce",
]
