"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba versions are used when numba imports cleanly and the environment
variable ``MOLFIELDS_NUMBA`` is not set to ``0``. Both paths return identical
results; ``tests/test_kernels.py`` checks this and ``benchmarks/`` times them.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MOLFIELDS_NUMBA", "1") != "0"


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------


def nearest_np(points, atoms):
    """Index and distance of the nearest atom for every point.

    Ties go to the lowest atom index.
    """
    diff = points[:, None, :] - atoms[None, :, :]
    d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(points)), idx])


def pairwise_np(points):
    diff = points[:, None, :] - points[None, :, :]
    d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    return np.sqrt(d2)


def greedy_cluster_np(points, radius):
    """Greedy radius clustering; see :func:`greedy_cluster`."""
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    r2 = radius * radius
    adj = np.empty((n, n), dtype=bool)
    for start in range(0, n, 1024):
        diff = points[start:start + 1024, None, :] - points[None, :, :]
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        adj[start:start + 1024] = d2 <= r2
    counts = adj.sum(axis=1).astype(np.int64)
    free = np.ones(n, dtype=bool)
    cluster = 0
    while free.any():
        masked = np.where(free, counts, -1)
        seed = int(np.argmax(masked))
        members = adj[seed] & free
        labels[members] = cluster
        free &= ~members
        counts -= adj[:, members].sum(axis=1)
        cluster += 1
    return labels


def segment_mean_np(values, index, n_segments):
    sums = np.zeros((n_segments, values.shape[1]))
    counts = np.zeros(n_segments)
    np.add.at(sums, index, values)
    np.add.at(counts, index, 1.0)
    out = np.zeros_like(sums)
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz, None]
    return out


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def nearest_nb(points, atoms):
        n = points.shape[0]
        m = atoms.shape[0]
        idx = np.empty(n, dtype=np.int64)
        dist = np.empty(n)
        for i in range(n):
            best = np.inf
            bj = 0
            for j in range(m):
                dx = points[i, 0] - atoms[j, 0]
                dy = points[i, 1] - atoms[j, 1]
                dz = points[i, 2] - atoms[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
                    bj = j
            idx[i] = bj
            dist[i] = np.sqrt(best)
        return idx, dist

    @njit(cache=True)
    def pairwise_nb(points):
        n = points.shape[0]
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                dx = points[i, 0] - points[j, 0]
                dy = points[i, 1] - points[j, 1]
                dz = points[i, 2] - points[j, 2]
                out[i, j] = np.sqrt(dx * dx + dy * dy + dz * dz)
        return out

    @njit(cache=True)
    def greedy_cluster_nb(points, radius):
        n = points.shape[0]
        labels = np.full(n, -1, dtype=np.int64)
        r2 = radius * radius
        adj = np.zeros((n, n), dtype=np.bool_)
        for i in range(n):
            for j in range(n):
                dx = points[i, 0] - points[j, 0]
                dy = points[i, 1] - points[j, 1]
                dz = points[i, 2] - points[j, 2]
                adj[i, j] = dx * dx + dy * dy + dz * dz <= r2
        counts = np.zeros(n, dtype=np.int64)
        for i in range(n):
            for j in range(n):
                if adj[i, j]:
                    counts[i] += 1
        free = np.ones(n, dtype=np.bool_)
        remaining = n
        cluster = 0
        while remaining > 0:
            best = -1
            seed = 0
            for i in range(n):
                if free[i] and counts[i] > best:
                    best = counts[i]
                    seed = i
            for j in range(n):
                if free[j] and adj[seed, j]:
                    labels[j] = cluster
                    free[j] = False
                    remaining -= 1
                    for i in range(n):
                        if adj[i, j]:
                            counts[i] -= 1
            cluster += 1
        return labels

    @njit(cache=True)
    def segment_mean_nb(values, index, n_segments):
        d = values.shape[1]
        sums = np.zeros((n_segments, d))
        counts = np.zeros(n_segments)
        for i in range(values.shape[0]):
            s = index[i]
            counts[s] += 1.0
            for j in range(d):
                sums[s, j] += values[i, j]
        out = np.zeros((n_segments, d))
        for s in range(n_segments):
            if counts[s] > 0:
                for j in range(d):
                    out[s, j] = sums[s, j] / counts[s]
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _as_points(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 3)


def nearest(points, atoms):
    """Nearest atom index and Euclidean distance for each query point.

    Args:
        points: (N, 3) query coordinates.
        atoms: (M, 3) atom coordinates, M >= 1.

    Returns:
        ``(idx, dist)`` with shapes (N,) and (N,). Ties resolve to the
        lowest atom index.
    """
    points, atoms = _as_points(points), _as_points(atoms)
    if USE_NUMBA:
        return nearest_nb(points, atoms)
    return nearest_np(points, atoms)


def pairwise(points):
    points = _as_points(points)
    if USE_NUMBA:
        return pairwise_nb(points)
    return pairwise_np(points)


def greedy_cluster(points, radius):
    """Label points by greedy radius clustering.

    Each round picks the unassigned point with the most unassigned neighbours
    within ``radius`` (lowest index on ties) and absorbs those neighbours into
    a new cluster. Clusters therefore come out in non-increasing size order.
    """
    points = _as_points(points)
    if USE_NUMBA:
        return greedy_cluster_nb(points, float(radius))
    return greedy_cluster_np(points, float(radius))


def segment_mean(values, index, n_segments):
    """Row means of ``values`` grouped by ``index``; empty segments are zero."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if USE_NUMBA:
        return segment_mean_nb(values, index, int(n_segments))
    return segment_mean_np(values, index, int(n_segments))
