"""Ground-truth direction and distance fields of a conformer.

Channel ``k`` of a field refers to element ``vocab.symbols[k]``. For elements
that occur in the molecule the field points at the nearest atom of that
element. Absent elements get a filler channel whose virtual nearest point is
the closest point on the bounding sphere, so direction and distance stay
consistent (``|F| = f``) and ``F = -f * grad f`` holds on every channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import kernels, store
from .molio import AtomTypeVocab, Conformer, Element, bounding_radius, centroid

BRUTE_FORCE_MAX_ATOMS = 64
BIN_NAMES = ("very_close", "close", "medium", "far", "very_far")
BIN_EDGES_PERCENT = (2.0, 33.0, 66.0, 98.0)


@dataclass(frozen=True)
class GridSpec:
    """``cells**3`` cubic cells tiling the box around a bounding sphere."""

    cells: int
    per_cell: int
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.cells < 1 or self.per_cell < 1:
            raise ValueError("cells and per_cell must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def around(cls, conformer: Conformer, cells: int = 3, per_cell: int = 8, margin: float = 2.0) -> "GridSpec":
        return cls(cells, per_cell, tuple(centroid(conformer)), bounding_radius(conformer, margin))

    @property
    def n_cells(self) -> int:
        return self.cells ** 3

    @property
    def n_points(self) -> int:
        return self.per_cell * self.n_cells

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    @property
    def cell_width(self) -> float:
        return 2.0 * self.radius / self.cells

    def cell_bounds(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        c = self.cells
        ijk = np.array([index // (c * c), (index // c) % c, index % c])
        lo = self.bbox[0] + ijk * self.cell_width
        return lo, lo + self.cell_width

    def to_dict(self) -> dict:
        return {"cells": self.cells, "per_cell": self.per_cell, "center": list(self.center), "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["cells"]), int(d["per_cell"]), tuple(d["center"]), float(d["radius"]))


@dataclass(frozen=True, eq=False)
class QuerySet:
    points: np.ndarray
    cell_index: np.ndarray
    grid: GridSpec
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.points)

    def permuted(self, perm) -> "QuerySet":
        return QuerySet(self.points[perm], self.cell_index[perm], self.grid, self.seed)


@dataclass(frozen=True, eq=False)
class DirectionSample:
    values: np.ndarray  # (N, K, 3)
    present: np.ndarray  # (K,) bool


@dataclass(frozen=True, eq=False)
class DistanceSample:
    values: np.ndarray  # (N, K)
    present: np.ndarray


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_query_points(grid: GridSpec, seed=None) -> QuerySet:
    """Draw ``grid.per_cell`` uniform points in each grid cell.

    Points are ordered by cell (C order over the three axes) and then by draw.
    """
    rng = _rng(seed)
    c, m = grid.cells, grid.per_cell
    ijk = np.stack(np.meshgrid(np.arange(c), np.arange(c), np.arange(c), indexing="ij"), axis=-1).reshape(-1, 3)
    u = rng.random((grid.n_cells, m, 3))
    lo = grid.bbox[0]
    points = lo + (ijk[:, None, :] + u) * grid.cell_width
    cell_index = np.repeat(np.arange(grid.n_cells), m)
    return QuerySet(points.reshape(-1, 3), cell_index, grid, seed if isinstance(seed, (int, np.integer)) else None)


def _nearest(points: np.ndarray, atoms: np.ndarray):
    """Nearest-atom index and distance; brute force for small sets, k-d tree otherwise."""
    if len(atoms) <= BRUTE_FORCE_MAX_ATOMS:
        return kernels.nearest(points, atoms)
    tree = cKDTree(atoms)
    _, cand = tree.query(points, k=2)
    d2 = ((points[:, None, :] - atoms[cand]) ** 2)
    d2 = d2[..., 0] + d2[..., 1] + d2[..., 2]
    pick = np.where((d2[:, 1] < d2[:, 0]) | ((d2[:, 1] == d2[:, 0]) & (cand[:, 1] < cand[:, 0])), 1, 0)
    rows = np.arange(len(points))
    return cand[rows, pick], np.sqrt(d2[rows, pick])


def nearest_atom(q, conformer: Conformer, element: Element | str):
    """Nearest atom of one element to ``q`` as ``(position, distance)``, or None."""
    symbol = element.symbol if isinstance(element, Element) else element
    atoms = conformer.select(symbol)
    if len(atoms) == 0:
        return None
    idx, dist = _nearest(np.asarray(q, dtype=float).reshape(1, 3), atoms)
    return atoms[idx[0]].copy(), float(dist[0])


def filler_values(q, center, radius: float):
    """Filler direction and distance: offset to the closest bounding-sphere point.

    Works on a single point or an (N, 3) array. At the sphere center the
    outward direction is fixed to +x. Outside the sphere the vector points
    back onto the sphere and the distance is ``r - R``.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q = q.reshape(-1, 3)
    rel = q - np.asarray(center, dtype=float)
    r = np.sqrt(rel[:, 0] ** 2 + rel[:, 1] ** 2 + rel[:, 2] ** 2)
    u = np.zeros_like(rel)
    u[:, 0] = 1.0
    nz = r > 0
    u[nz] = rel[nz] / r[nz, None]
    direction = (radius - r)[:, None] * u
    distance = np.abs(radius - r)
    if single:
        return direction[0], float(distance[0])
    return direction, distance


def field_samples(points: np.ndarray, conformer: Conformer | None, vocab: AtomTypeVocab, center, radius):
    """Direction (N, K, 3) and distance (N, K) fields plus presence flags.

    ``conformer=None`` gives the all-filler field. Atoms whose element is not
    in ``vocab`` raise ``ValueError`` rather than being dropped.
    """
    if conformer is not None:
        missing = sorted(set(conformer.symbols) - set(vocab.symbols))
        if missing:
            raise ValueError(f"elements {missing} are not in the vocabulary {list(vocab.symbols)}")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n, K = len(points), vocab.K
    direction = np.empty((n, K, 3))
    distance = np.empty((n, K))
    present = np.zeros(K, dtype=bool)
    fill_dir = fill_dist = None
    for k, sym in enumerate(vocab.symbols):
        atoms = conformer.select(sym) if conformer is not None else np.empty((0, 3))
        if len(atoms):
            idx, dist = _nearest(points, atoms)
            direction[:, k] = atoms[idx] - points
            distance[:, k] = dist
            present[k] = True
        else:
            if fill_dir is None:
                fill_dir, fill_dist = filler_values(points, center, radius)
            direction[:, k] = fill_dir
            distance[:, k] = fill_dist
    return direction, distance, present


def direction_sample(Q: QuerySet, conformer: Conformer | None, vocab: AtomTypeVocab) -> DirectionSample:
    d, _, present = field_samples(Q.points, conformer, vocab, Q.grid.center, Q.grid.radius)
    return DirectionSample(d, present)


def distance_sample(Q: QuerySet, conformer: Conformer | None, vocab: AtomTypeVocab) -> DistanceSample:
    _, f, present = field_samples(Q.points, conformer, vocab, Q.grid.center, Q.grid.radius)
    return DistanceSample(f, present)


def assign_distance_bins(sample: DistanceSample | np.ndarray) -> np.ndarray:
    """Label each point 0..4 (see ``BIN_NAMES``) by percentile rank.

    The rank of a point is the number of points with a strictly smaller
    minimum-over-channels distance, so ties share the lowest rank. Bin b
    collects ranks with ``edge[b-1] <= 100 * rank / N < edge[b]``.
    """
    values = sample.values if isinstance(sample, DistanceSample) else np.asarray(sample)
    dmin = values.min(axis=1) if values.ndim == 2 else values
    n = len(dmin)
    if n < 5:
        raise ValueError("need at least 5 points to bin")
    rank = np.searchsorted(np.sort(dmin), dmin, side="left")
    pct = 100.0 * rank / n
    return np.searchsorted(np.array(BIN_EDGES_PERCENT), pct, side="right")


class AnalyticField:
    """Exact distance field of a conformer, usable wherever a neural field is.

    ``evaluate`` mirrors :meth:`molfields.mnf.NeuralField.evaluate`.
    """

    def __init__(self, conformer: Conformer | None, vocab: AtomTypeVocab, center, radius: float):
        self.conformer = conformer
        self.vocab = vocab
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    @property
    def K(self) -> int:
        return self.vocab.K

    def evaluate(self, points, channel: int | None = None):
        """Return ``(f, F)``: distances and directions ``F = -f grad f``."""
        direction, distance, _ = field_samples(points, self.conformer, self.vocab, self.center, self.radius)
        if channel is None:
            return distance, direction
        return distance[:, channel], direction[:, channel]


def save_field(path, Q: QuerySet, direction: DirectionSample, distance: DistanceSample, vocab: AtomTypeVocab, meta=None):
    header = {
        "N": len(Q),
        "K": vocab.K,
        "vocab": list(vocab.symbols),
        "grid": Q.grid.to_dict(),
        "seed": Q.seed,
        **(meta or {}),
    }
    store.save(
        path,
        "field",
        {
            "points": Q.points,
            "cell_index": Q.cell_index,
            "direction": direction.values,
            "distance": distance.values,
            "present": direction.present.astype(np.int64),
        },
        header,
    )


def load_field(path):
    _, arrays, meta = store.load(path, "field")
    grid = GridSpec.from_dict(meta["grid"])
    Q = QuerySet(arrays["points"], arrays["cell_index"], grid, meta.get("seed"))
    present = arrays["present"].astype(bool)
    return (
        Q,
        DirectionSample(arrays["direction"], present),
        DistanceSample(arrays["distance"], present),
        AtomTypeVocab(tuple(meta["vocab"])),
        meta,
    )
