"""Acceptance dynamics, causal cones and exact infinite-volume packing on windows.

Overlap between balls is strict (``|x - y| < 2``, open unit balls) while the
causal graph joins points with ``|x - y| <= 2``; the graph is therefore a
superset of every blocking relation and safe for locality arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from rsalab import _kernels as K
from rsalab.fields import (
    LATTICE,
    CellField,
    PointBatch,
    Region,
    SpaceTimePoint,
    box_cells,
    generate,
    time_order,
    window_batch,
)

DIAMETER = 2.0
_SAMPLE_SPACING = 10.0 * DIAMETER


class ConeCapError(RuntimeError):
    """Lazy exploration reached the hard radius cap without closing the cone."""


@dataclass
class PackedSample:
    """Input points with their acceptance flags."""

    x: np.ndarray
    t: np.ndarray
    accepted: np.ndarray
    mark: Optional[np.ndarray] = None
    uid: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.size

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    @property
    def points(self) -> list[SpaceTimePoint]:
        marks = self.mark if self.mark is not None else [None] * len(self)
        return [SpaceTimePoint(tuple(x), float(t), None if m is None else int(m))
                for x, t, m in zip(self.x, self.t, marks)]

    @property
    def accepted_x(self) -> np.ndarray:
        return self.x[self.accepted]

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())

    def subset(self, mask) -> "PackedSample":
        return PackedSample(
            self.x[mask], self.t[mask], self.accepted[mask],
            None if self.mark is None else self.mark[mask],
            None if self.uid is None else self.uid[mask],
            dict(self.provenance),
        )

    def is_hard_core(self) -> bool:
        return min_pair_distance(self.accepted_x) >= DIAMETER

    def replays(self) -> bool:
        """True iff re-running the sequential rule on these points gives the same flags."""
        order = time_order(self.x, self.t)
        return bool(np.array_equal(_pack_in_order(self.x, order), self.accepted))


def min_pair_distance(x: np.ndarray) -> float:
    if x.shape[0] < 2:
        return math.inf
    d, _ = cKDTree(x).query(x, k=2)
    return float(d[:, 1].min())


def _as_arrays(points) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    if isinstance(points, PointBatch):
        return points.x, points.t, points.mark, None
    points = list(points)
    if not points:
        return np.zeros((0, 1)), np.zeros(0), None, None
    x = np.array([p.x for p in points], dtype=float)
    t = np.array([p.t for p in points], dtype=float)
    marks = [p.mark for p in points]
    mark = None if any(m is None for m in marks) else np.array(marks, dtype=np.int64)
    lifetimes = [p.lifetime for p in points]
    # a point without a lifetime never leaves
    life = None if all(v is None for v in lifetimes) else np.array(
        [np.inf if v is None else v for v in lifetimes], dtype=float)
    return x, t, mark, life


def overlaps(x1, x2) -> int:
    a = np.atleast_1d(np.asarray(x1, dtype=float))
    b = np.atleast_1d(np.asarray(x2, dtype=float))
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return int(np.sqrt(((a - b) ** 2).sum()) < DIAMETER)


def _pack_in_order(x: np.ndarray, order: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    i, j = K.pairs_within(x, DIAMETER, strict=True)
    indptr, indices = K.csr(n, i, j)
    return K.pack_kernel(order.astype(np.int64), indptr, indices)


def _check_sorted(x: np.ndarray, t: np.ndarray) -> None:
    if t.size > 1 and not np.array_equal(time_order(x, t), np.arange(t.size)):
        if np.any(np.diff(t) < 0):
            raise ValueError("points must be sorted by arrival time")
        raise ValueError("equal arrival times must be ordered lexicographically by coordinates")


def pack_sequential(points, provenance: Optional[dict] = None) -> PackedSample:
    """Accept each arrival iff it overlaps no previously accepted ball."""
    x, t, mark, _ = _as_arrays(points)
    _check_sorted(x, t)
    accepted = _pack_in_order(x, np.arange(t.size))
    uid = points.uid if isinstance(points, PointBatch) else None
    return PackedSample(x, t, accepted, mark, uid, provenance or {})


# -- causal graph -----------------------------------------------------------


@dataclass
class CausalGraph:
    """Oriented graph with an edge ``i -> j`` when ``|x_i - x_j| <= 2`` and ``t_i <= t_j``."""

    n: int
    edges: np.ndarray  # (m, 2) directed

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def successors(self, i: int) -> list[int]:
        return sorted(int(b) for a, b in self.edges if a == i)

    def predecessors(self, i: int) -> list[int]:
        return sorted(int(a) for a, b in self.edges if b == i)


def build_causal_graph(points) -> CausalGraph:
    x, t, _, _ = _as_arrays(points)
    i, j = K.pairs_within(x, DIAMETER)
    fwd = np.stack([i, j], axis=1)[t[i] <= t[j]]
    bwd = np.stack([j, i], axis=1)[t[j] <= t[i]]
    edges = np.concatenate([fwd, bwd]) if i.size else np.zeros((0, 2), dtype=np.int64)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return CausalGraph(t.size, edges)


@dataclass
class CausalCone:
    root: SpaceTimePoint
    members: list[SpaceTimePoint]
    direction: str
    spatial_radius: float
    time_extent: float


def _reach(x, t, sources, direction: str) -> np.ndarray:
    i, j = K.pairs_within(x, DIAMETER)
    indptr, indices = K.csr(t.size, i, j)
    return K.reach_kernel(indptr, indices, t, np.asarray(sources, dtype=np.int64),
                          direction in ("backward", "both"), direction in ("forward", "both"))


def _cone(w: SpaceTimePoint, points, direction: str) -> CausalCone:
    points = list(points)
    if w not in points:
        points = points + [w]
    x, t, _, _ = _as_arrays(points)
    root = points.index(w)
    member = _reach(x, t, [root], direction)
    xs = x[member]
    radius = float(np.sqrt(((xs - x[root]) ** 2).sum(axis=1)).max())
    extent = float(np.abs(t[member] - t[root]).max())
    return CausalCone(w, [points[k] for k in np.flatnonzero(member)], direction, radius, extent)


def backward_cone(w: SpaceTimePoint, points) -> CausalCone:
    return _cone(w, points, "backward")


def forward_cone(w: SpaceTimePoint, points) -> CausalCone:
    return _cone(w, points, "forward")


def causal_cone(w: SpaceTimePoint, points) -> CausalCone:
    return _cone(w, points, "both")


# -- lazy exact exploration -------------------------------------------------


@dataclass
class Exploration:
    """Concatenated outcome of exploring many independent samples.

    Per point: owning sample ``sid``, whether it was inserted (index into that
    sample's inserted list, else -1), whether it is a target, whether it lies in
    the resolved closure, and its acceptance flag (closure members only).
    """

    sid: np.ndarray
    x: np.ndarray
    t: np.ndarray
    uid: np.ndarray
    inserted: np.ndarray
    target: np.ndarray
    member: np.ndarray
    accepted: np.ndarray
    mark: Optional[np.ndarray]
    margin: np.ndarray  # final margin (cells) per sample
    n_samples: int

    def inserted_flags(self, k: int) -> np.ndarray:
        """Acceptance of inserted points as a ``(n_samples, k)`` array."""
        out = np.zeros((self.n_samples, k), dtype=bool)
        sel = self.inserted >= 0
        out[self.sid[sel], self.inserted[sel]] = self.accepted[sel]
        return out

    def of(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.sid == s)


def default_cap(fld) -> int:
    tau = fld.tau if math.isfinite(fld.tau) else 1.0
    return int(200 * max(1.0, tau))


def explore(
    sources: Sequence,
    lo: np.ndarray,
    hi: np.ndarray,
    inserted: Optional[Sequence[Optional[tuple[np.ndarray, np.ndarray]]]] = None,
    regions: Optional[Sequence[Optional[Region]]] = None,
    direction: str = "backward",
    pack: bool = True,
    margin0: int = 2,
    cap: Optional[int] = None,
) -> Exploration:
    """Exact closure of the targets of every sample over its infinite field.

    Sample ``s`` explores the cells of ``sources[s]`` covering ``[lo[s], hi[s]]``
    plus a margin of cells. Targets are the inserted points and, when a region is
    given, every field point inside it. The closure (backward, forward or both)
    of the targets is recomputed with a geometrically growing margin until no
    closure member can have a neighbour in unexplored cells. With ``pack`` the
    backward closure is then packed sequentially, which decides every target
    exactly.
    """
    n_samples = len(sources)
    ref = sources[0]
    if any(s.params != ref.params for s in sources):
        raise ValueError("all sources of a batch must share parameters")
    if pack and direction != "backward":
        raise ValueError("packing needs the backward closure")
    d, h = ref.dimension, ref.cell_size
    lo = np.asarray(lo, dtype=float).reshape(n_samples, d)
    hi = np.asarray(hi, dtype=float).reshape(n_samples, d)
    c_lo = np.floor(lo / h).astype(np.int64)
    c_hi = np.floor(hi / h).astype(np.int64)
    if inserted is None:
        inserted = [None] * n_samples
    if regions is None:
        regions = [None] * n_samples
    cap = default_cap(ref) if cap is None else cap
    seeds = _SeedTable.of(sources)
    ins = _InsertedTable.of(inserted, d)
    margin = np.full(n_samples, max(1, margin0), dtype=np.int64)
    pending = np.arange(n_samples)
    done: list[dict] = []
    while pending.size:
        part = _explore_round(ref, seeds, pending, c_lo, c_hi, margin, ins, regions,
                              direction, pack, d, h)
        done.append(part["resolved"])
        bad = part["unresolved"]
        if bad.size:
            margin[bad] *= 2
            if np.any(margin[bad] > cap):
                raise ConeCapError(
                    f"cone exploration exceeded {cap} cells for {bad.size} sample(s)")
        pending = bad
    merged = {k: np.concatenate([p[k] for p in done]) for k in done[0] if k != "mark"}
    marks = [p["mark"] for p in done]
    order = np.argsort(merged["sid"], kind="stable")
    return Exploration(
        sid=merged["sid"][order], x=merged["x"][order], t=merged["t"][order],
        uid=merged["uid"][order], inserted=merged["inserted"][order],
        target=merged["target"][order], member=merged["member"][order],
        accepted=merged["accepted"][order],
        mark=None if marks[0] is None else np.concatenate(marks)[order],
        margin=margin, n_samples=n_samples,
    )


_NO_CUT = np.iinfo(np.int64).max


@dataclass
class _SeedTable:
    """Per-source seeds: cells with axis-0 index below ``cut`` use ``left``, others ``right``."""

    left: np.ndarray
    right: np.ndarray
    cut: np.ndarray

    @classmethod
    def of(cls, sources) -> "_SeedTable":
        left, right, cut = [], [], []
        for src in sources:
            if hasattr(src, "cut"):
                left.append(src.left.master_seed)
                right.append(src.right.master_seed)
                cut.append(src.cut)
            else:
                left.append(src.master_seed)
                right.append(src.master_seed)
                cut.append(_NO_CUT)
        return cls(np.array(left, dtype=np.uint64), np.array(right, dtype=np.uint64),
                   np.array(cut, dtype=np.int64))

    def seeds(self, owner: np.ndarray, cells: np.ndarray) -> np.ndarray:
        return np.where(cells[:, 0] < self.cut[owner], self.left[owner], self.right[owner])


@dataclass
class _InsertedTable:
    x: np.ndarray
    t: np.ndarray
    sid: np.ndarray
    idx: np.ndarray

    @classmethod
    def of(cls, inserted, d: int) -> "_InsertedTable":
        xs, ts, sids, idxs = [np.zeros((0, d))], [np.zeros(0)], [], []
        for s, item in enumerate(inserted):
            if item is None or not len(item[1]):
                continue
            x = np.asarray(item[0], dtype=float).reshape(-1, d)
            xs.append(x)
            ts.append(np.asarray(item[1], dtype=float))
            sids.append(np.full(x.shape[0], s, dtype=np.int64))
            idxs.append(np.arange(x.shape[0], dtype=np.int64))
        empty = np.zeros(0, dtype=np.int64)
        return cls(np.concatenate(xs), np.concatenate(ts),
                   np.concatenate(sids) if sids else empty,
                   np.concatenate(idxs) if idxs else empty)


def _round_cells(pending, c_lo, c_hi, margin):
    """Cells of every pending sample's explored box and the owning sample of each row."""
    lo = c_lo[pending] - margin[pending][:, None]
    hi = c_hi[pending] + margin[pending][:, None]
    span = hi - lo
    blocks, owners = [], []
    # samples with a common box shape share one offset grid
    shapes, inverse = np.unique(span, axis=0, return_inverse=True)
    for g, shape in enumerate(shapes):
        members = np.flatnonzero(inverse.ravel() == g)
        offsets = box_cells(np.zeros_like(shape), shape)
        cells = (lo[members][:, None, :] + offsets[None, :, :]).reshape(-1, shape.size)
        blocks.append(cells)
        owners.append(np.repeat(pending[members], offsets.shape[0]))
    return np.concatenate(blocks), np.concatenate(owners)


def _explore_round(ref, seeds, pending, c_lo, c_hi, margin, ins, regions, direction, pack, d, h):
    cells, owner = _round_cells(pending, c_lo, c_hi, margin)
    batch, row = generate(ref, cells, seeds.seeds(owner, cells), return_owner=True)
    sid = owner[row]
    take = np.isin(ins.sid, pending)
    n_field = len(batch)
    n_ins = int(take.sum())
    x = np.concatenate([batch.x, ins.x[take]])
    t = np.concatenate([batch.t, ins.t[take]])
    sid = np.concatenate([sid, ins.sid[take]])
    inserted_idx = np.concatenate([np.full(n_field, -1, dtype=np.int64), ins.idx[take]])
    uid = np.concatenate([batch.uid, np.zeros(n_ins, dtype=np.uint64)])
    mark = None
    if batch.mark is not None:
        mark = np.concatenate([batch.mark, np.zeros(n_ins, dtype=np.int64)])

    target = inserted_idx >= 0
    field_rows = np.flatnonzero(inserted_idx < 0)
    groups: dict[int, tuple[Region, list[int]]] = {}
    for s in pending:
        if regions[s] is not None:
            groups.setdefault(id(regions[s]), (regions[s], []))[1].append(s)
    for region, members in groups.values():
        idx = field_rows[np.isin(sid[field_rows], members)]
        target[idx[region.contains(x[idx])]] = True

    aug = np.concatenate([x, (sid * _SAMPLE_SPACING)[:, None]], axis=1)
    i, j = K.pairs_within(aug, DIAMETER)
    indptr, indices = K.csr(x.shape[0], i, j)
    member = K.reach_kernel(indptr, indices, t, np.flatnonzero(target),
                            direction in ("backward", "both"), direction in ("forward", "both"))

    box_lo = (c_lo[sid] - margin[sid][:, None]) * h
    box_hi = (c_hi[sid] + margin[sid][:, None] + 1) * h
    unsafe = member & (np.any(x - DIAMETER < box_lo, axis=1) | np.any(x + DIAMETER >= box_hi, axis=1))
    unresolved = np.unique(sid[unsafe])
    keep = ~np.isin(sid, unresolved)

    accepted = np.zeros(x.shape[0], dtype=bool)
    if pack:
        live = keep & member
        if i.size:
            strict = np.sqrt(((x[i] - x[j]) ** 2).sum(axis=1)) < DIAMETER
            sel = strict & live[i] & live[j]
            p_ptr, p_idx = K.csr(x.shape[0], i[sel], j[sel])
        else:
            p_ptr, p_idx = K.csr(x.shape[0], i, j)
        idx = np.flatnonzero(live)
        order = idx[time_order(x[idx], t[idx])]
        accepted = K.pack_kernel(order.astype(np.int64), p_ptr, p_idx) & live

    resolved = {
        "sid": sid[keep], "x": x[keep], "t": t[keep], "uid": uid[keep],
        "inserted": inserted_idx[keep], "target": target[keep], "member": member[keep],
        "accepted": accepted[keep], "mark": None if mark is None else mark[keep],
    }
    return {"resolved": resolved, "unresolved": unresolved}


def _point_box(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xs = np.atleast_2d(xs)
    return xs.min(axis=0), xs.max(axis=0)


def sigma_infinite(w: SpaceTimePoint, fld, *, cap: Optional[int] = None) -> int:
    """Acceptance of ``w`` against the whole infinite field (``w`` inserted)."""
    return int(sigma_infinite_many([w], fld, cap=cap)[0])


def sigma_infinite_many(test_points: Sequence[SpaceTimePoint], fld, *, joint: bool = True,
                        cap: Optional[int] = None) -> np.ndarray:
    """Flags of several test points; jointly inserted, or each one on its own."""
    xs = np.array([p.x for p in test_points], dtype=float)
    ts = np.array([p.t for p in test_points], dtype=float)
    if joint:
        lo, hi = _point_box(xs)
        ex = explore([fld], lo[None], hi[None], inserted=[(xs, ts)], cap=cap)
        return ex.inserted_flags(len(ts))[0]
    n = len(ts)
    ex = explore([fld] * n, xs, xs, inserted=[(xs[k:k + 1], ts[k:k + 1]) for k in range(n)],
                 cap=cap)
    return ex.inserted_flags(1)[:, 0]


def pack_window_infinite(fld, region: Region, *, cap: Optional[int] = None) -> PackedSample:
    """Field points in ``region`` flagged as in the infinite-volume packing."""
    prov = {"seed": getattr(fld, "master_seed", None), "region": region.boxes,
            "mode": fld.mode, "volume": "infinite"}
    if region.is_empty:
        return PackedSample(np.zeros((0, fld.dimension)), np.zeros(0), np.zeros(0, bool),
                            provenance=prov)
    lo, hi = region.bounds
    ex = explore([fld], lo[None], hi[None], regions=[region], cap=cap)
    sel = ex.target
    x, t = ex.x[sel], ex.t[sel]
    order = time_order(x, t)
    prov.update(closure_size=int(ex.member.sum()), margin_cells=int(ex.margin[0]))
    return PackedSample(x[order], t[order], ex.accepted[sel][order],
                        None if ex.mark is None else ex.mark[sel][order],
                        ex.uid[sel][order], prov)


def pack_windows_infinite(fields: Sequence, region: Region, *, cap: Optional[int] = None,
                          chunk: int = 256) -> list[PackedSample]:
    """``pack_window_infinite`` for many fields sharing parameters, batched."""
    out: list[PackedSample] = []
    if region.is_empty:
        return [pack_window_infinite(f, region) for f in fields]
    lo, hi = region.bounds
    for start in range(0, len(fields), chunk):
        part = list(fields[start:start + chunk])
        n = len(part)
        ex = explore(part, np.repeat(lo[None], n, 0), np.repeat(hi[None], n, 0),
                     regions=[region] * n, cap=cap)
        bounds = np.searchsorted(ex.sid, np.arange(n + 1))
        for s, f in enumerate(part):
            sl = slice(bounds[s], bounds[s + 1])
            sel = ex.target[sl]
            x, t = ex.x[sl][sel], ex.t[sl][sel]
            order = time_order(x, t)
            prov = {"seed": getattr(f, "master_seed", None), "region": region.boxes,
                    "mode": f.mode, "volume": "infinite",
                    "closure_size": int(ex.member[sl].sum()), "margin_cells": int(ex.margin[s])}
            out.append(PackedSample(
                x[order], t[order], ex.accepted[sl][sel][order],
                None if ex.mark is None else ex.mark[sl][sel][order],
                ex.uid[sl][sel][order], prov))
    return out


def pack_windows_finite(fields: Sequence, region: Region, chunk: int = 512) -> list[PackedSample]:
    """Sequential packing of each field restricted to ``region`` (finite-volume input)."""
    out: list[PackedSample] = []
    if region.is_empty:
        return [pack_sequential([]) for _ in fields]
    base = region.cells(fields[0].cell_size)
    seeds = _SeedTable.of(fields)
    for start in range(0, len(fields), chunk):
        part = np.arange(start, min(start + chunk, len(fields)))
        cells = np.tile(base, (part.size, 1))
        owner = np.repeat(part, base.shape[0])
        batch, row = generate(fields[0], cells, seeds.seeds(owner, cells), return_owner=True)
        sid = owner[row]
        keep = region.contains(batch.x)
        batch, sid = batch.take(keep), sid[keep]
        aug = np.concatenate([batch.x, (sid * _SAMPLE_SPACING)[:, None]], axis=1)
        i, j = K.pairs_within(aug, DIAMETER, strict=True)
        indptr, indices = K.csr(len(batch), i, j)
        order = time_order(batch.x, batch.t)
        acc = K.pack_kernel(order.astype(np.int64), indptr, indices)
        bounds = np.searchsorted(sid, part, side="left"), np.searchsorted(sid, part, side="right")
        # generate keeps row order, so each sample's points are contiguous
        for k, s in enumerate(part):
            sl = slice(bounds[0][k], bounds[1][k])
            o = time_order(batch.x[sl], batch.t[sl])
            f = fields[s]
            prov = {"seed": getattr(f, "master_seed", None), "region": region.boxes,
                    "mode": f.mode, "volume": "finite"}
            out.append(PackedSample(batch.x[sl][o], batch.t[sl][o], acc[sl][o],
                                    None if batch.mark is None else batch.mark[sl][o],
                                    batch.uid[sl][o], prov))
    return out


def brute_force_sigma(w: SpaceTimePoint, fld, box_halfwidth: float, margin: float) -> int:
    """Flag of ``w`` when the whole padded box around it is packed directly."""
    reach = box_halfwidth + margin
    xw = np.asarray(w.x, dtype=float)
    box = Region.box(xw - reach, xw + reach)
    batch = window_batch(fld, box)
    x = np.concatenate([batch.x, xw[None]])
    t = np.concatenate([batch.t, [w.t]])
    flags = _pack_in_order(x, time_order(x, t))
    return int(flags[-1])


# -- lattice ----------------------------------------------------------------


def lattice_window_sample(fld: CellField, window: Region, *, cap: Optional[int] = None) -> PackedSample:
    if fld.mode != LATTICE:
        raise ValueError("lattice jamming needs a lattice field")
    return pack_window_infinite(fld, window, cap=cap)


def jam_lattice_window(fld: CellField, window: Region, *, cap: Optional[int] = None) -> set[tuple[int, ...]]:
    """Sites of ``window`` occupied in the jammed infinite-input lattice packing."""
    sample = lattice_window_sample(fld, window, cap=cap)
    return {tuple(int(round(v)) for v in x) for x in sample.accepted_x}


def jam_priority(sites, priorities) -> set[tuple[int, ...]]:
    """Random-priority rule on a finite site set: a site is occupied iff every
    lower-priority neighbour (``|y - z| < 2``) is empty. Evaluated recursively."""
    sites = [tuple(int(v) for v in np.atleast_1d(s)) for s in sites]
    prio = dict(zip(sites, (float(p) for p in priorities)))
    arr = np.array(sites, dtype=float)
    nbrs: dict[tuple, list[tuple]] = {s: [] for s in sites}
    i, j = K.pairs_within(arr, DIAMETER, strict=True)
    for a, b in zip(i, j):
        nbrs[sites[a]].append(sites[b])
        nbrs[sites[b]].append(sites[a])
    state: dict[tuple, bool] = {}
    for start in sorted(sites, key=prio.get):
        stack = [start]
        while stack:
            z = stack[-1]
            if z in state:
                stack.pop()
                continue
            lower = [y for y in nbrs[z] if prio[y] < prio[z]]
            todo = [y for y in lower if y not in state]
            if todo:
                stack.extend(todo)
                continue
            state[z] = not any(state[y] for y in lower)
            stack.pop()
    return {z for z, on in state.items() if on}


def is_jammed(sample: PackedSample, interior: Region) -> bool:
    """No rejected interior site has all of its ``< 2`` neighbours empty."""
    occ = sample.accepted_x
    inside = interior.contains(sample.x) & ~sample.accepted
    if not inside.any():
        return True
    if occ.shape[0] == 0:
        return False
    d, _ = cKDTree(occ).query(sample.x[inside], k=1)
    return bool(np.all(d < DIAMETER))


# -- time-dependent variants ------------------------------------------------


def desorption_sweep(points, tau: float, lifetimes: Optional[np.ndarray] = None) -> PackedSample:
    """Arrivals in time order; accepted iff no present ball overlaps.

    ``accepted`` in the result marks balls still adsorbed at ``tau``; the
    provenance carries the full acceptance history and departure times.
    """
    x, t, mark, life = _as_arrays(points)
    if lifetimes is not None:
        life = np.asarray(lifetimes, dtype=float)
    if life is None:
        life = np.full(t.size, np.inf)
    order = time_order(x, t)
    depart = t + life
    i, j = K.pairs_within(x, DIAMETER, strict=True)
    indptr, indices = K.csr(t.size, i, j)
    ever = K.desorption_kernel(order.astype(np.int64), indptr, indices, t, depart)
    present = ever & (depart > tau)
    return PackedSample(x, t, present, mark, None,
                        {"ever_accepted": ever, "depart": depart, "tau": tau})


def desorption_history_ok(sample: PackedSample) -> bool:
    """Hard-core check of the present set at every arrival event."""
    ever = sample.provenance["ever_accepted"]
    depart = sample.provenance["depart"]
    for te in np.unique(sample.t):
        present = ever & (sample.t <= te) & (depart > te)
        if min_pair_distance(sample.x[present]) < DIAMETER:
            return False
    return True


def simulate_desorption(fld: CellField, region: Region, lifetime_rate: float) -> PackedSample:
    if lifetime_rate < 0:
        raise ValueError("lifetime_rate must be >= 0")
    batch = window_batch(fld, region)
    out = desorption_sweep(batch, fld.tau, fld.lifetimes(batch, lifetime_rate))
    out.uid = batch.uid
    out.provenance.update(seed=fld.master_seed, region=region.boxes, rate=lifetime_rate)
    return out


def birth_growth_sweep(points, speed: float, initial_radius: float, rule: str = "seed") -> PackedSample:
    """Seeds in time order; ``rule='seed'`` keeps a seed lying outside every earlier
    cell (``|x_i - x_j| > r0 + v dt``); ``rule='ball'`` keeps it when its own
    ball of radius ``r0`` misses them (``|x_i - x_j| >= 2 r0 + v dt``)."""
    if speed < 0 or initial_radius < 0:
        raise ValueError("speed and initial_radius must be nonnegative")
    x, t, mark, _ = _as_arrays(points)
    n = t.size
    if rule == "seed":
        reach0, inclusive = initial_radius, True
    elif rule == "ball":
        reach0, inclusive = 2.0 * initial_radius, False
    else:
        raise ValueError(f"unknown rule {rule!r}")
    span = float(t.max() - t.min()) if n else 0.0
    rmax = reach0 + speed * span
    if n > 1 and rmax > 0:
        p = cKDTree(x).query_pairs(rmax * (1 + 1e-12) + 1e-12, output_type="ndarray")
        i, j = p[:, 0].astype(np.int64), p[:, 1].astype(np.int64)
    else:
        i = j = np.zeros(0, dtype=np.int64)
    indptr, indices = K.csr(n, i, j)
    src = np.repeat(np.arange(n), np.diff(indptr))
    dist = np.sqrt(((x[src] - x[indices]) ** 2).sum(axis=1))
    if not inclusive:
        # strict rule: blocked iff dist < reach; nudge so the kernel's <= matches
        dist = np.nextafter(dist, np.inf)
    acc = K.growth_kernel(time_order(x, t).astype(np.int64), indptr, indices, dist, t,
                          reach0, speed)
    return PackedSample(x, t, acc, mark, None, {"speed": speed, "initial_radius": initial_radius,
                                                "rule": rule})


def simulate_birth_growth(fld: CellField, region: Region, speed: float, initial_radius: float,
                          rule: str = "seed") -> PackedSample:
    if speed <= 0:
        raise ValueError("speed must be positive")
    batch = window_batch(fld, region)
    out = birth_growth_sweep(batch, speed, initial_radius, rule)
    out.uid = batch.uid
    out.provenance.update(seed=fld.master_seed, region=region.boxes)
    return out


def filter_by_mark(sample: PackedSample, mark: int) -> PackedSample:
    if sample.mark is None:
        raise ValueError("sample carries no marks")
    return sample.subset(sample.mark == mark)
