"""Compiled inner loops over CSR neighbour lists."""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.spatial import cKDTree


def csr(n: int, i: np.ndarray, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric CSR adjacency from an undirected pair list."""
    return _csr_fill(n, np.ascontiguousarray(i, dtype=np.int64),
                     np.ascontiguousarray(j, dtype=np.int64))


@njit(cache=True)
def _csr_fill(n, i, j):
    indptr = np.zeros(n + 1, dtype=np.int64)
    for k in range(i.size):
        indptr[i[k] + 1] += 1
        indptr[j[k] + 1] += 1
    for v in range(n):
        indptr[v + 1] += indptr[v]
    fill = indptr[:-1].copy()
    indices = np.empty(2 * i.size, dtype=np.int64)
    for k in range(i.size):
        a, b = i[k], j[k]
        indices[fill[a]] = b
        fill[a] += 1
        indices[fill[b]] = a
        fill[b] += 1
    return indptr, indices


def pairs_within(x: np.ndarray, r: float, strict: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``i < j`` with ``|x_i - x_j| <= r`` (``< r`` if strict)."""
    if x.shape[0] < 2:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    p = cKDTree(x).query_pairs(r, output_type="ndarray")
    i, j = p[:, 0].astype(np.int64), p[:, 1].astype(np.int64)
    if strict and i.size:
        keep = np.sqrt(((x[i] - x[j]) ** 2).sum(axis=1)) < r
        i, j = i[keep], j[keep]
    return i, j


@njit(cache=True)
def pack_kernel(order, indptr, indices):
    """Sequential acceptance: a point is kept iff no kept neighbour precedes it."""
    n = order.size
    acc = np.zeros(indptr.size - 1, dtype=np.bool_)
    for k in range(n):
        i = order[k]
        ok = True
        for p in range(indptr[i], indptr[i + 1]):
            if acc[indices[p]]:
                ok = False
                break
        acc[i] = ok
    return acc


@njit(cache=True)
def desorption_kernel(order, indptr, indices, t, depart):
    """Acceptance against neighbours that are present (kept and not yet departed)."""
    acc = np.zeros(indptr.size - 1, dtype=np.bool_)
    for k in range(order.size):
        i = order[k]
        ok = True
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if acc[j] and depart[j] > t[i]:
                ok = False
                break
        acc[i] = ok
    return acc


@njit(cache=True)
def growth_kernel(order, indptr, indices, dist, t, reach0, speed):
    """Seed kept iff every kept earlier seed is farther than ``reach0 + speed * dt``."""
    acc = np.zeros(indptr.size - 1, dtype=np.bool_)
    for k in range(order.size):
        i = order[k]
        ok = True
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if acc[j] and dist[p] <= reach0 + speed * (t[i] - t[j]):
                ok = False
                break
        acc[i] = ok
    return acc


@njit(cache=True)
def reach_kernel(indptr, indices, t, sources, backward, forward):
    """Points joined to any source by a time-monotone path (edges ``t_u <= t_v``)."""
    n = indptr.size - 1
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    for direction in range(2):
        if direction == 0 and not backward:
            continue
        if direction == 1 and not forward:
            continue
        visited = np.zeros(n, dtype=np.bool_)
        top = 0
        for s in sources:
            if not visited[s]:
                visited[s] = True
                stack[top] = s
                top += 1
        while top > 0:
            top -= 1
            v = stack[top]
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if visited[u]:
                    continue
                if direction == 0 and t[u] <= t[v]:
                    visited[u] = True
                    stack[top] = u
                    top += 1
                elif direction == 1 and t[u] >= t[v]:
                    visited[u] = True
                    stack[top] = u
                    top += 1
        seen |= visited
    return seen
