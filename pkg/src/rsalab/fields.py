"""Reproducible Poisson space-time input, generated lazily per spatial cell."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from rsalab import rng

UNBOUNDED = math.inf

CONTINUUM = "continuum"
LATTICE = "lattice"

_LATTICE_DOMAIN = 0x1A77


@dataclass(frozen=True)
class SpaceTimePoint:
    """A point ``w = (x, t)`` of space-time, optionally marked."""

    x: tuple[float, ...]
    t: float
    mark: Optional[int] = None
    lifetime: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        if not all(math.isfinite(v) for v in self.x):
            raise ValueError(f"non-finite coordinate in {self.x}")
        if not (self.t >= 0 and math.isfinite(self.t)):
            raise ValueError(f"arrival time must be finite and >= 0, got {self.t}")
        if self.lifetime is not None and not self.lifetime > 0:
            raise ValueError("lifetime must be positive")
        if self.mark is not None and self.mark < 0:
            raise ValueError("mark must be nonnegative")

    @property
    def dimension(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class Region:
    """Finite union of half-open axis-aligned boxes ``[lo, hi)``."""

    boxes: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...] = ()

    def __post_init__(self):
        clean = []
        for lo, hi in self.boxes:
            lo = tuple(float(v) for v in np.atleast_1d(lo))
            hi = tuple(float(v) for v in np.atleast_1d(hi))
            if len(lo) != len(hi):
                raise ValueError("box corners differ in dimension")
            if not all(h > l for l, h in zip(lo, hi)):
                raise ValueError(f"box [{lo}, {hi}) has a non-positive side")
            clean.append((lo, hi))
        if len({len(lo) for lo, _ in clean}) > 1:
            raise ValueError("boxes of mixed dimension")
        object.__setattr__(self, "boxes", tuple(clean))

    @classmethod
    def box(cls, lo, hi) -> "Region":
        return cls(((lo, hi),))

    @classmethod
    def cube(cls, dimension: int, side: float, lower: float = 0.0) -> "Region":
        return cls.box([lower] * dimension, [lower + side] * dimension)

    @classmethod
    def centered_cube(cls, dimension: int, halfwidth: float) -> "Region":
        return cls.box([-halfwidth] * dimension, [halfwidth] * dimension)

    @property
    def is_empty(self) -> bool:
        return not self.boxes

    @property
    def dimension(self) -> int:
        if self.is_empty:
            raise ValueError("empty region has no dimension")
        return len(self.boxes[0][0])

    def _arrays(self):
        lo = np.array([b[0] for b in self.boxes], dtype=float)
        hi = np.array([b[1] for b in self.boxes], dtype=float)
        return lo, hi

    @property
    def volume(self) -> float:
        """Exact union volume by inclusion-exclusion over the box list."""
        if self.is_empty:
            return 0.0
        lo, hi = self._arrays()
        total = 0.0
        n = len(self.boxes)
        for k in range(1, n + 1):
            sign = 1.0 if k % 2 else -1.0
            for idx in itertools.combinations(range(n), k):
                side = hi[list(idx)].min(axis=0) - lo[list(idx)].max(axis=0)
                if np.all(side > 0):
                    total += sign * float(np.prod(side))
        return total

    def intersection_volume(self, other: "Region") -> float:
        if self.is_empty or other.is_empty:
            return 0.0
        pieces = []
        for a_lo, a_hi in self.boxes:
            for b_lo, b_hi in other.boxes:
                lo = np.maximum(a_lo, b_lo)
                hi = np.minimum(a_hi, b_hi)
                if np.all(hi > lo):
                    pieces.append((lo, hi))
        return Region(tuple(pieces)).volume if pieces else 0.0

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.is_empty or self.dimension == 1 else x[None, :]
        inside = np.zeros(x.shape[0], dtype=bool)
        for lo, hi in self.boxes:
            inside |= np.all((x >= lo) & (x < hi), axis=1)
        return inside

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self._arrays()
        return lo.min(axis=0), hi.max(axis=0)

    def scaled(self, factor: float) -> "Region":
        return Region(tuple((tuple(np.multiply(lo, factor)), tuple(np.multiply(hi, factor)))
                            for lo, hi in self.boxes))

    def translated(self, offset) -> "Region":
        offset = np.asarray(offset, dtype=float)
        return Region(tuple((tuple(np.add(lo, offset)), tuple(np.add(hi, offset)))
                            for lo, hi in self.boxes))

    def eroded_box(self, margin: float) -> "Region":
        """Single-box region shrunk by ``margin`` on every side (empty if nothing is left)."""
        lo, hi = self._single_box()
        lo, hi = lo + margin, hi - margin
        if np.any(hi <= lo):
            return Region()
        return Region.box(lo, hi)

    def _single_box(self):
        if len(self.boxes) != 1:
            raise ValueError("operation requires a single-box region")
        lo, hi = self._arrays()
        return lo[0], hi[0]

    def distance_to_boundary(self, x) -> np.ndarray:
        """Euclidean distance from interior points of a single box to its boundary."""
        lo, hi = self._single_box()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != lo.size:
            x = x.reshape(-1, lo.size)
        inside = np.minimum(x - lo, hi - x).min(axis=1)
        outside = np.sqrt((np.maximum(lo - x, 0) ** 2 + np.maximum(x - hi, 0) ** 2).sum(axis=1))
        return np.where(inside >= 0, inside, outside)

    def cells(self, cell_size: float, pad: int = 0) -> np.ndarray:
        """Integer indices of cells of side ``cell_size`` meeting the region (plus ``pad`` shells)."""
        if self.is_empty:
            return np.zeros((0, 0), dtype=np.int64)
        blocks = []
        for lo, hi in self.boxes:
            c_lo = np.floor(np.asarray(lo) / cell_size).astype(np.int64) - pad
            c_hi = np.floor(np.asarray(hi) / cell_size).astype(np.int64) + pad
            blocks.append(box_cells(c_lo, c_hi))
        cells = np.concatenate(blocks)
        if len(self.boxes) > 1:
            cells = np.unique(cells, axis=0)
        return cells


def box_cells(c_lo: np.ndarray, c_hi: np.ndarray) -> np.ndarray:
    """All integer vectors in the inclusive range ``[c_lo, c_hi]``."""
    axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(c_lo, c_hi)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


@dataclass
class PointBatch:
    """Columnar block of space-time points with provenance for substreams."""

    x: np.ndarray
    t: np.ndarray
    key: np.ndarray  # per-point cell (or site) key
    index: np.ndarray  # in-cell draw index
    uid: np.ndarray
    mark: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, dimension: int, marked: bool = False) -> "PointBatch":
        return cls(
            x=np.zeros((0, dimension)),
            t=np.zeros(0),
            key=np.zeros(0, dtype=np.uint64),
            index=np.zeros(0, dtype=np.int64),
            uid=np.zeros(0, dtype=np.uint64),
            mark=np.zeros(0, dtype=np.int64) if marked else None,
        )

    def __len__(self) -> int:
        return self.t.size

    def take(self, idx) -> "PointBatch":
        return PointBatch(
            self.x[idx], self.t[idx], self.key[idx], self.index[idx], self.uid[idx],
            None if self.mark is None else self.mark[idx],
        )

    @staticmethod
    def concat(batches: Sequence["PointBatch"]) -> "PointBatch":
        marked = batches[0].mark is not None
        return PointBatch(
            np.concatenate([b.x for b in batches]),
            np.concatenate([b.t for b in batches]),
            np.concatenate([b.key for b in batches]),
            np.concatenate([b.index for b in batches]),
            np.concatenate([b.uid for b in batches]),
            np.concatenate([b.mark for b in batches]) if marked else None,
        )

    def time_order(self) -> np.ndarray:
        return time_order(self.x, self.t)

    def to_points(self) -> list[SpaceTimePoint]:
        marks = self.mark if self.mark is not None else [None] * len(self)
        return [SpaceTimePoint(tuple(x), float(t), None if m is None else int(m))
                for x, t, m in zip(self.x, self.t, marks)]


def time_order(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Indices sorting by arrival time, ties broken lexicographically by coordinates."""
    keys = [x[:, j] for j in range(x.shape[1] - 1, -1, -1)] + [t]
    return np.lexsort(keys)


@dataclass(frozen=True)
class CellField:
    """Deterministic infinite Poisson input keyed by ``(master_seed, cell)``."""

    master_seed: int
    dimension: int
    mode: str = CONTINUUM
    tau: float = 1.0
    cell_size: float = 2.0
    n_marks: int = 0

    @property
    def mean_per_cell(self) -> float:
        return self.cell_size ** self.dimension * self.tau

    def points_in_cells(self, cells: np.ndarray) -> PointBatch:
        """Points of every cell in ``cells`` (rows), each cell's block sorted by time."""
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.dimension)
        return generate(self, cells, self.cell_seeds(cells))

    def cell_seeds(self, cells: np.ndarray) -> np.ndarray:
        return np.full(cells.shape[0], self.master_seed, dtype=np.uint64)

    @property
    def params(self) -> tuple:
        return (self.dimension, self.mode, self.tau, self.cell_size, self.n_marks)

    def lifetimes(self, batch: PointBatch, rate: float) -> np.ndarray:
        """Exponential lifetimes from each point's own substream (``inf`` when rate is 0)."""
        if rate == 0:
            return np.full(len(batch), np.inf)
        return -np.log(rng.uniform(batch.key, rng.LIFETIME, batch.index)) / rate

    def probe_uniforms(self, n: int, stream_index: int = 0) -> np.ndarray:
        keys = rng.cell_keys(self.master_seed, np.array([[stream_index]]), domain=rng.PROBE)
        return rng.uniform(np.repeat(keys, n), rng.PROBE, np.arange(n))


def generate(fld, cells: np.ndarray, seeds: np.ndarray, return_owner: bool = False):
    """Points of ``cells`` where row ``i`` is drawn from the field with seed ``seeds[i]``.

    ``fld`` only supplies the shared parameters; the output keeps the row order of
    ``cells`` and sorts each cell's block by time. With ``return_owner`` the row
    index of every point is returned as well.
    """
    if fld.mode == LATTICE:
        batch, owner = _lattice_sites(fld, cells, seeds)
    else:
        batch, owner = _continuum(fld, cells, seeds)
    return (batch, owner) if return_owner else batch


def _continuum(fld, cells: np.ndarray, seeds: np.ndarray) -> PointBatch:
    d = fld.dimension
    if cells.shape[0] == 0:
        return PointBatch.empty(d, fld.n_marks > 0), np.zeros(0, dtype=np.int64)
    keys = rng.cell_keys(seeds, cells)
    u = rng.uniform(keys, rng.COUNT, 0)
    counts = stats.poisson.ppf(u, fld.mean_per_cell).astype(np.int64)
    total = int(counts.sum())
    owner = np.repeat(np.arange(cells.shape[0]), counts)
    starts = np.cumsum(counts) - counts
    k = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    pkey = keys[owner]
    comp = k[:, None] * d + np.arange(d)[None, :]
    ux = rng.uniform(pkey[:, None], rng.COORD, comp)
    x = (cells[owner] + ux) * fld.cell_size
    t = rng.uniform(pkey, rng.TIME, k) * fld.tau
    uid = rng.raw(pkey, rng.UID, k)
    mark = None
    if fld.n_marks > 0:
        mark = np.floor(rng.uniform(pkey, rng.MARK, k) * fld.n_marks).astype(np.int64)
    batch = PointBatch(x, t, pkey, k, uid, mark)
    order = np.lexsort([x[:, j] for j in range(d - 1, -1, -1)] + [t, owner])
    return batch.take(order), owner[order]


def _lattice_sites(fld, cells: np.ndarray, seeds: np.ndarray) -> PointBatch:
    d = fld.dimension
    h = fld.cell_size
    if cells.shape[0] == 0:
        return PointBatch.empty(d, fld.n_marks > 0), np.zeros(0, dtype=np.int64)
    span = int(math.ceil(h)) + 1
    offsets = box_cells(np.zeros(d, np.int64), np.full(d, span - 1, np.int64))
    first = np.ceil(cells * h).astype(np.int64)
    stop = np.ceil((cells + 1) * h).astype(np.int64)
    sites = first[:, None, :] + offsets[None, :, :]
    valid = np.all(sites < stop[:, None, :], axis=2)
    owner = np.repeat(np.arange(cells.shape[0]), valid.sum(axis=1))
    sites = sites[valid]
    keys = rng.cell_keys(seeds[owner], sites, domain=_LATTICE_DOMAIN)
    t = -np.log(rng.uniform(keys, rng.ARRIVAL, 0))
    k = np.zeros(sites.shape[0], dtype=np.int64)
    uid = rng.raw(keys, rng.UID, 0)
    mark = None
    if fld.n_marks > 0:
        mark = np.floor(rng.uniform(keys, rng.MARK, 0) * fld.n_marks).astype(np.int64)
    batch = PointBatch(sites.astype(float), t, keys, k, uid, mark)
    order = np.lexsort([sites[:, j] for j in range(d - 1, -1, -1)] + [t, owner])
    return batch.take(order), owner[order]


@dataclass(frozen=True)
class SplitField:
    """Cells with axis-0 index below ``cut`` come from ``left``, the rest from ``right``.

    Used to build coupled copies of a field that share one half-space.
    """

    left: CellField
    right: CellField
    cut: int

    @property
    def dimension(self) -> int:
        return self.left.dimension

    @property
    def cell_size(self) -> float:
        return self.left.cell_size

    @property
    def tau(self) -> float:
        return self.left.tau

    @property
    def mode(self) -> str:
        return self.left.mode

    @property
    def params(self) -> tuple:
        return self.left.params

    @property
    def n_marks(self) -> int:
        return self.left.n_marks

    @property
    def mean_per_cell(self) -> float:
        return self.left.mean_per_cell

    def cell_seeds(self, cells: np.ndarray) -> np.ndarray:
        return np.where(cells[:, 0] < self.cut, np.uint64(self.left.master_seed),
                        np.uint64(self.right.master_seed)).astype(np.uint64)

    def points_in_cells(self, cells: np.ndarray) -> PointBatch:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.dimension)
        return generate(self, cells, self.cell_seeds(cells))


def make_field(
    master_seed: int,
    dimension: int,
    mode: str = CONTINUUM,
    tau: float = 1.0,
    cell_size: float = 2.0,
    n_marks: int = 0,
) -> CellField:
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if cell_size < 2:
        raise ValueError("cell_size must be at least the interaction diameter 2")
    if mode == CONTINUUM:
        if not math.isfinite(tau) or tau <= 0:
            raise ValueError("continuum mode needs a finite positive time cutoff")
    elif mode == LATTICE:
        if tau != UNBOUNDED:
            raise ValueError("lattice mode only admits unbounded input")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if n_marks < 0:
        raise ValueError("n_marks must be >= 0")
    return CellField(int(master_seed) & 0xFFFFFFFFFFFFFFFF, dimension, mode, float(tau),
                     float(cell_size), int(n_marks))


def _require_continuum(fld) -> None:
    if fld.mode != CONTINUUM:
        raise ValueError("operation requires a continuum field")


def cell_batch(fld: CellField, cell_index: Iterable[int]) -> PointBatch:
    _require_continuum(fld)
    return fld.points_in_cells(np.asarray(list(cell_index), dtype=np.int64)[None, :])


def cell_points(fld: CellField, cell_index: Iterable[int]) -> list[SpaceTimePoint]:
    return cell_batch(fld, cell_index).to_points()


def window_batch(fld, region: Region) -> PointBatch:
    """Field points with ``x`` in ``region``, globally time-sorted."""
    if region.is_empty:
        return PointBatch.empty(fld.dimension, getattr(fld, "n_marks", 0) > 0)
    batch = fld.points_in_cells(region.cells(fld.cell_size))
    batch = batch.take(region.contains(batch.x))
    return batch.take(batch.time_order())


def sample_window(fld: CellField, region: Region) -> list[SpaceTimePoint]:
    _require_continuum(fld)
    return window_batch(fld, region).to_points()


def lattice_arrivals(fld: CellField, site: Iterable[int], horizon: float) -> np.ndarray:
    """Arrival times of a unit-rate Poisson clock at ``site`` on ``[0, horizon]``."""
    if fld.mode != LATTICE:
        raise ValueError("lattice_arrivals requires a lattice field")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    key = rng.cell_keys(fld.master_seed, np.asarray(list(site), dtype=np.int64)[None, :],
                        domain=_LATTICE_DOMAIN)
    times: list[np.ndarray] = []
    start, total, chunk = 0, 0.0, 64
    while True:
        gaps = -np.log(rng.uniform(np.repeat(key, chunk), rng.ARRIVAL,
                                   np.arange(start, start + chunk)))
        arr = total + np.cumsum(gaps)
        times.append(arr[arr <= horizon])
        if arr[-1] > horizon:
            break
        total, start = arr[-1], start + chunk
    return np.concatenate(times)


@dataclass(frozen=True)
class FieldSpec:
    """Field parameters without a seed; ``make(seed)`` builds one realization."""

    dimension: int = 1
    mode: str = CONTINUUM
    tau: float = 1.0
    cell_size: float = 2.0
    n_marks: int = 0

    def make(self, seed: int) -> CellField:
        return make_field(int(seed), self.dimension, self.mode, self.tau, self.cell_size,
                          self.n_marks)

    def fields(self, master_seed: int, n: int, *path: int) -> list[CellField]:
        seeds = rng.derive_seeds(master_seed, n, *path)
        return [self.make(int(s)) for s in seeds]
