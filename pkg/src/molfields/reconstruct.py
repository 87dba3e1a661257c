"""Recover discrete molecules from fields, perceive bonds and score them."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .fieldgen import AnalyticField
from .mnf import NeuralField, SirenParams
from .molio import AtomTypeVocab, Conformer, write_xyz

COVALENT_RADIUS = {"C": 0.76, "H": 0.31, "O": 0.66, "N": 0.71, "F": 0.57, "S": 1.05, "Cl": 1.02, "Br": 1.20}
BOND_TOLERANCE = 1.2
# typical single / double / triple bond lengths (Angstrom)
BOND_LENGTHS = {
    ("C", "C"): (1.54, 1.34, 1.20),
    ("C", "N"): (1.47, 1.29, 1.16),
    ("C", "O"): (1.43, 1.20, 1.13),
    ("N", "N"): (1.45, 1.25, 1.10),
    ("N", "O"): (1.40, 1.21),
    ("O", "O"): (1.48, 1.21),
}
VALENCE = {"H": (1,), "C": (4,), "N": (3,), "O": (2,), "F": (1,), "Cl": (1,), "Br": (1,), "S": (2, 4, 6)}
MIN_DISTANCE = 0.5


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReconstructParams:
    n_seeds: int = 4096
    step: float = 0.5
    tol: float = 1e-3
    max_iter: int = 500
    exist_threshold: float = 0.5
    cluster_radius: float = 0.3
    min_cluster_size: int = 3
    interior: float = 0.9

    def __post_init__(self):
        if self.n_seeds < 1 or self.max_iter < 1 or self.min_cluster_size < 1:
            raise ValueError("counts must be positive")
        if not 0 < self.step <= 1:
            raise ValueError("step factor must lie in (0, 1]")
        if min(self.tol, self.exist_threshold, self.cluster_radius) <= 0:
            raise ValueError("tolerances and radii must be positive")
        if not 0 < self.interior < 1:
            raise ValueError("interior fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Minima:
    points: np.ndarray
    values: np.ndarray
    dropped: int
    iterations: np.ndarray  # iterations each kept seed needed


def as_field(source):
    """Wrap SIREN parameters as a field; pass field objects through."""
    return NeuralField(source) if isinstance(source, SirenParams) else source


def field_domain(source, center=None, radius=None):
    """Sphere that bounds the field: explicit values, field attributes, or θ metadata."""
    if center is not None and radius is not None:
        return np.asarray(center, dtype=float), float(radius)
    if isinstance(source, AnalyticField):
        return source.center, source.radius
    theta = source.theta if isinstance(source, NeuralField) else source
    grid = getattr(theta, "meta", {}).get("grid")
    if grid:
        return np.asarray(grid["center"], dtype=float), float(grid["radius"])
    return np.asarray(theta.arch.center, dtype=float), float(theta.arch.scale)


def uniform_in_sphere(rng, n, center, radius):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return center + v * r[:, None]


def descend_to_minima(source, channel: int, params: ReconstructParams = ReconstructParams(), seed=0, center=None, radius=None) -> Minima:
    """Follow ``q <- q + step * F(q)`` from random seeds until ``|F| < tol``.

    Seeds that have not converged after ``max_iter`` iterations are dropped.
    """
    field = as_field(source)
    center, radius = field_domain(source, center, radius)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q = uniform_in_sphere(rng, params.n_seeds, center, radius)
    done = np.zeros(len(q), dtype=bool)
    iters = np.zeros(len(q), dtype=np.int64)
    fval = np.zeros(len(q))
    active = np.arange(len(q))
    for it in range(params.max_iter + 1):
        if active.size == 0:
            break
        f, F = field.evaluate(q[active], channel)
        conv = np.linalg.norm(F, axis=1) < params.tol
        idx = active[conv]
        done[idx] = True
        fval[idx] = f[conv]
        iters[idx] = it
        active = active[~conv]
        if it < params.max_iter:
            q[active] += params.step * F[~conv]
    return Minima(q[done], fval[done], int((~done).sum()), iters[done])


def cluster_points(minima: Minima, params: ReconstructParams = ReconstructParams()) -> np.ndarray:
    """Deduplicate converged points into atom candidate positions."""
    if len(minima.points) == 0:
        return np.zeros((0, 3))
    labels = kernels.greedy_cluster(minima.points, params.cluster_radius)
    out = []
    for c in range(labels.max() + 1):
        members = labels == c
        if members.sum() < params.min_cluster_size:
            continue
        if minima.values[members].mean() > params.exist_threshold:
            continue
        out.append(minima.points[members].mean(axis=0))
    return np.array(out).reshape(-1, 3)


def field_to_conformer(source, vocab: AtomTypeVocab | None = None, params: ReconstructParams = ReconstructParams(), seed=0, center=None, radius=None, name="") -> Conformer:
    """Per channel: descend, drop minima outside the interior sphere, cluster, emit atoms."""
    if vocab is None:
        vocab = getattr(source, "vocab", None) or AtomTypeVocab(tuple(source.meta["vocab"]))
    center, radius = field_domain(source, center, radius)
    rng = np.random.default_rng(seed)
    symbols, positions = [], []
    for k, sym in enumerate(vocab.symbols):
        m = descend_to_minima(source, k, params, rng, center, radius)
        inside = np.linalg.norm(m.points - center, axis=1) < params.interior * radius
        kept = Minima(m.points[inside], m.values[inside], m.dropped, m.iterations[inside])
        for p in cluster_points(kept, params):
            symbols.append(sym)
            positions.append(p)
    if not symbols:
        raise ReconstructionError("no atoms recovered from the field")
    return Conformer(tuple(symbols), np.array(positions), name)


# ---------------------------------------------------------------------------
# bonds and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MoleculeGraph:
    conformer: Conformer
    bonds: tuple  # ((i, j, order), ...)

    def __post_init__(self):
        n = len(self.conformer)
        seen = set()
        for i, j, order in self.bonds:
            if not (0 <= i < j < n) or order not in (1, 2, 3) or (i, j) in seen:
                raise ValueError(f"bad bond {(i, j, order)}")
            seen.add((i, j))

    def valences(self) -> np.ndarray:
        v = np.zeros(len(self.conformer), dtype=np.int64)
        for i, j, order in self.bonds:
            v[i] += order
            v[j] += order
        return v

    def is_connected(self) -> bool:
        n = len(self.conformer)
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j, _ in self.bonds:
            parent[find(i)] = find(j)
        return len({find(i) for i in range(n)}) == 1


def bond_order(a: str, b: str, distance: float) -> int:
    lengths = BOND_LENGTHS.get((a, b)) or BOND_LENGTHS.get((b, a))
    if lengths is None:
        return 1
    order = 1
    for k in range(1, len(lengths)):
        if distance < 0.5 * (lengths[k - 1] + lengths[k]):
            order = k + 1
    return order


def infer_bonds(conformer: Conformer, tolerance: float = BOND_TOLERANCE) -> MoleculeGraph:
    d = kernels.pairwise(conformer.positions)
    sym = conformer.symbols
    bonds = []
    for i in range(len(sym)):
        for j in range(i + 1, len(sym)):
            if d[i, j] <= tolerance * (COVALENT_RADIUS[sym[i]] + COVALENT_RADIUS[sym[j]]):
                bonds.append((i, j, bond_order(sym[i], sym[j], d[i, j])))
    return MoleculeGraph(conformer, tuple(bonds))


def _atom_ok(symbol, valence):
    return valence in VALENCE[symbol]


def _is_valid(graph: MoleculeGraph) -> bool:
    val = graph.valences()
    if any(v > max(VALENCE[s]) for s, v in zip(graph.conformer.symbols, val)):
        return False
    if len(graph.conformer) > 1:
        d = kernels.pairwise(graph.conformer.positions)
        if d[np.triu_indices(len(d), 1)].min() < MIN_DISTANCE:
            return False
    return graph.is_connected()


def stability_metrics(graphs) -> dict:
    """Percent of stable atoms (pooled), stable molecules and valid molecules."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("need at least one molecule")
    atoms_ok = atoms = mols_ok = valid = 0
    for g in graphs:
        flags = [_atom_ok(s, v) for s, v in zip(g.conformer.symbols, g.valences())]
        atoms_ok += sum(flags)
        atoms += len(flags)
        mols_ok += all(flags)
        valid += _is_valid(g)
    return {
        "atom_stable": 100.0 * atoms_ok / atoms,
        "mol_stable": 100.0 * mols_ok / len(graphs),
        "valid": 100.0 * valid / len(graphs),
        "n_molecules": len(graphs),
        "n_atoms": atoms,
    }


def _proper(U, Vt):
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


def kabsch_rmsd(P: np.ndarray, Q: np.ndarray) -> float:
    """RMSD between paired point sets after optimal rotation and translation."""
    P = P - P.mean(0)
    Q = Q - Q.mean(0)
    U, _, Vt = np.linalg.svd(P.T @ Q)
    R = _proper(U, Vt)
    return float(np.sqrt(((P @ R - Q) ** 2).sum(axis=1).mean()))


def _start_rotations(P, Q, n_random=24):
    """Identity, principal-axis alignments and fixed random rotations."""
    starts = [np.eye(3)]
    _, _, Va = np.linalg.svd(P, full_matrices=True)
    _, _, Vb = np.linalg.svd(Q, full_matrices=True)
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        R = Va.T @ np.diag(signs) @ Vb
        starts.append(R if np.linalg.det(R) > 0 else R @ np.diag([1.0, 1.0, -1.0]))
    rng = np.random.default_rng(0)
    for _ in range(n_random):
        A, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        starts.append(A * np.sign(np.linalg.det(A)))
    return starts


def aligned_rmsd(a: Conformer, b: Conformer, iterations: int = 5) -> float:
    """RMSD after matching atoms per element and aligning.

    Atom correspondence (Hungarian, within each element) and the rigid fit are
    alternated from several starting orientations; the best result is kept.
    Raises ``ValueError`` when the element multisets differ.
    """
    if sorted(a.symbols) != sorted(b.symbols):
        raise ValueError("element multisets differ")
    P = a.positions - a.positions.mean(0)
    Q = b.positions - b.positions.mean(0)
    sa, sb = np.array(a.symbols), np.array(b.symbols)
    groups = [(np.flatnonzero(sa == s), np.flatnonzero(sb == s)) for s in sorted(set(a.symbols))]
    best = np.inf
    for R in _start_rotations(P, Q):
        moved = P @ R
        for _ in range(iterations):
            order = np.empty(len(P), dtype=np.int64)
            for ia, ib in groups:
                cost = ((moved[ia, None, :] - Q[None, ib, :]) ** 2).sum(-1)
                r, c = linear_sum_assignment(cost)
                order[ia[r]] = ib[c]
            best = min(best, kabsch_rmsd(P, Q[order]))
            U, _, Vt = np.linalg.svd(P.T @ Q[order])
            moved = P @ _proper(U, Vt)
    return best


def write_outputs(stem, graph: MoleculeGraph):
    """Write ``stem.xyz`` and the ``stem.bonds.csv`` sidecar."""
    with open(f"{stem}.xyz", "w") as fh:
        fh.write(write_xyz(graph.conformer))
    with open(f"{stem}.bonds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "order"])
        w.writerows(graph.bonds)


def write_metrics(path, metrics: dict, extra: dict | None = None):
    with open(path, "w") as fh:
        json.dump({**metrics, **(extra or {})}, fh, indent=2, sort_keys=True)
        fh.write("\n")
