"""Small synthetic molecules and alpha-carbon traces for tests and demos.

Geometries are idealised: tetrahedral carbons, standard bond lengths, an
all-trans carbon backbone. They are chemically sensible enough that the
covalent-radius bond rules recover the intended graph.
"""

from __future__ import annotations

import numpy as np

from .molio import Conformer

BOND_LENGTH = {
    ("C", "C"): 1.54,
    ("C", "H"): 1.09,
    ("C", "F"): 1.35,
    ("C", "Cl"): 1.77,
    ("C", "Br"): 1.94,
    ("C", "O"): 1.43,
    ("O", "H"): 0.96,
    ("N", "H"): 1.01,
    ("C", "N"): 1.47,
    ("S", "H"): 1.34,
}
TETRA = np.degrees(np.arccos(-1.0 / 3.0))


def _unit(v):
    return v / np.linalg.norm(v)


def _blen(a, b):
    return BOND_LENGTH.get((a, b)) or BOND_LENGTH[(b, a)]


def _tetrahedral(n):
    """Four tetrahedral unit vectors; the first is ``n``."""
    n = _unit(np.asarray(n, dtype=float))
    perp = _unit(np.cross(n, [0.0, 0.0, 1.0] if abs(n[2]) < 0.9 else [1.0, 0.0, 0.0]))
    other = np.cross(n, perp)
    c, s = np.cos(np.radians(TETRA)), np.sin(np.radians(TETRA))
    dirs = [n]
    for k in range(3):
        phi = 2 * np.pi * k / 3
        dirs.append(c * n + s * (np.cos(phi) * perp + np.sin(phi) * other))
    return dirs


def _free_directions(bonds):
    """Unit directions completing a tetrahedron around existing bond vectors."""
    bonds = [_unit(b) for b in bonds]
    if len(bonds) == 1:
        return _tetrahedral(bonds[0])[1:]
    if len(bonds) == 2:
        u1, u2 = bonds
        bis = -_unit(u1 + u2)
        nrm = _unit(np.cross(u1, u2))
        half = np.radians(TETRA) / 2
        return [np.cos(half) * bis + np.sin(half) * nrm, np.cos(half) * bis - np.sin(half) * nrm]
    if len(bonds) == 3:
        return [-_unit(sum(bonds))]
    raise ValueError("too many bonds")


def methane() -> Conformer:
    d = 1.09 / np.sqrt(3.0)
    pos = [[0, 0, 0], [d, d, d], [d, -d, -d], [-d, d, -d], [-d, -d, d]]
    return Conformer(("C", "H", "H", "H", "H"), pos, "methane")


def water() -> Conformer:
    a = np.radians(104.5) / 2
    return Conformer(("O", "H", "H"), [[0, 0, 0], [0.96 * np.sin(a), 0.96 * np.cos(a), 0], [-0.96 * np.sin(a), 0.96 * np.cos(a), 0]], "water")


def ammonia() -> Conformer:
    dirs = _tetrahedral([0, 0, 1])[1:]
    pos = [[0, 0, 0]] + [1.01 * d for d in dirs]
    return Conformer(("N", "H", "H", "H"), pos, "ammonia")


def alkane(n_carbons: int, substituents: dict[int, str] | None = None, name: str = "") -> Conformer:
    """All-trans alkane C_n H_{2n+2}.

    ``substituents`` maps a hydrogen ordinal (in output order) to a halogen
    symbol (F, Cl, Br) that replaces it at the appropriate bond length.
    """
    if n_carbons < 1:
        raise ValueError("need at least one carbon")
    if n_carbons == 1:
        base = methane()
        symbols, pos = list(base.symbols), [p.copy() for p in base.positions]
    else:
        half = np.radians(TETRA) / 2
        dx, dy = 1.54 * np.sin(half), 1.54 * np.cos(half)
        carbons = [np.array([i * dx, (i % 2) * dy, 0.0]) for i in range(n_carbons)]
        symbols, pos = [], []
        for c in carbons:
            symbols.append("C")
            pos.append(c)
        for i, c in enumerate(carbons):
            bonds = []
            if i > 0:
                bonds.append(carbons[i - 1] - c)
            if i < n_carbons - 1:
                bonds.append(carbons[i + 1] - c)
            for d in _free_directions(bonds):
                symbols.append("H")
                pos.append(c + 1.09 * d)
    h_slots = [i for i, s in enumerate(symbols) if s == "H"]
    for ordinal, sym in (substituents or {}).items():
        i = h_slots[ordinal]
        carbon = pos[_nearest_carbon(symbols, pos, i)]
        pos[i] = carbon + _blen("C", sym) * _unit(pos[i] - carbon)
        symbols[i] = sym
    return Conformer(tuple(symbols), np.array(pos), name or f"C{n_carbons}")


def _nearest_carbon(symbols, pos, i):
    best, bj = np.inf, -1
    for j, s in enumerate(symbols):
        if s == "C":
            d = np.linalg.norm(pos[j] - pos[i])
            if d < best:
                best, bj = d, j
    return bj


def methanol() -> Conformer:
    base = methane()
    c = base.positions[0]
    o_dir = _unit(base.positions[1] - c)
    o = c + 1.43 * o_dir
    # hydrogen on oxygen, anti to one C-H
    h_dir = _tetrahedral(-o_dir)[1]
    symbols = ("C", "O", "H", "H", "H", "H")
    pos = [c, o, base.positions[2], base.positions[3], base.positions[4], o + 0.96 * h_dir]
    return Conformer(symbols, pos, "methanol")


def fixture_molecules() -> list[Conformer]:
    """Ten small molecules with 3 to 20 atoms covering all eight elements."""
    return [
        water(),
        ammonia(),
        methane(),
        alkane(1, {0: "Cl"}, "chloromethane"),
        alkane(1, {0: "F", 1: "Br"}, "bromofluoromethane"),
        methanol(),
        alkane(2, name="ethane"),
        alkane(3, {2: "Cl"}, "chloropropane"),
        alkane(4, name="butane"),
        alkane(6, {0: "F", 5: "Br", 12: "Cl"}, "trihalohexane"),
    ]


def random_toy_molecule(rng: np.random.Generator, max_carbons: int = 6) -> Conformer:
    """Random alkane with a few halogen substitutions, randomly rotated."""
    n = int(rng.integers(1, max_carbons + 1))
    n_h = 2 * n + 2
    n_sub = int(rng.integers(0, min(3, n_h) + 1))
    slots = rng.choice(n_h, size=n_sub, replace=False)
    subs = {int(s): str(rng.choice(["F", "Cl", "Br"])) for s in slots}
    mol = alkane(n, subs)
    rot = random_rotation(rng)
    pos = (mol.positions - mol.positions.mean(0)) @ rot.T
    return Conformer(mol.symbols, pos, mol.name)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def ca_trace(n: int = 30, seed: int = 0, spacing: float = 3.8, min_sep: float = 4.0) -> Conformer:
    """Compact self-avoiding chain of ``n`` alpha carbons, all labelled C.

    Consecutive points sit ``spacing`` apart; non-adjacent points keep at
    least ``min_sep``. A weak pull toward the origin keeps the chain globular.
    """
    rng = np.random.default_rng(seed)
    pts = [np.zeros(3)]
    while len(pts) < n:
        for _ in range(2000):
            d = _unit(rng.normal(size=3) - 0.08 * pts[-1])
            cand = pts[-1] + spacing * d
            if all(np.linalg.norm(cand - p) >= min_sep for p in pts[:-1]):
                pts.append(cand)
                break
        else:  # restart from scratch on a dead end
            pts = [np.zeros(3)]
    pos = np.array(pts)
    return Conformer(("C",) * n, pos - pos.mean(0), f"ca_trace_{n}")
