"""Molecule ingestion, element vocabulary and basic geometry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ELEMENTS = ("C", "H", "O", "N", "F", "S", "Cl", "Br")


class XYZError(ValueError):
    """Malformed XYZ input; the message carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Element:
    symbol: str
    index: int


@dataclass(frozen=True)
class AtomTypeVocab:
    """Ordered element vocabulary; channel k of every field is ``elements[k]``."""

    symbols: tuple[str, ...] = ELEMENTS

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if not symbols:
            raise ValueError("vocabulary needs at least one element")
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"duplicate elements in vocabulary {symbols}")
        unknown = [s for s in symbols if s not in ELEMENTS]
        if unknown:
            raise ValueError(f"unsupported elements {unknown}; allowed: {ELEMENTS}")

    @property
    def K(self) -> int:
        return len(self.symbols)

    @property
    def elements(self) -> list[Element]:
        return [Element(s, i) for i, s in enumerate(self.symbols)]

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise KeyError(f"element {symbol!r} not in vocabulary {self.symbols}") from None

    def element(self, symbol: str) -> Element:
        return Element(symbol, self.index(symbol))

    @classmethod
    def from_conformers(cls, conformers: Iterable["Conformer"]) -> "AtomTypeVocab":
        """Smallest vocabulary covering ``conformers``, in canonical order."""
        seen = set()
        for conf in conformers:
            seen.update(conf.symbols)
        return cls(tuple(s for s in ELEMENTS if s in seen))

    @classmethod
    def ca_trace(cls) -> "AtomTypeVocab":
        return cls(("C",))


@dataclass(frozen=True, eq=False)
class Conformer:
    """Atoms with element symbols and Cartesian positions in Angstrom."""

    symbols: tuple[str, ...]
    positions: np.ndarray
    name: str = ""

    def __post_init__(self):
        symbols = tuple(self.symbols)
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(symbols) != len(pos):
            raise ValueError(f"{len(symbols)} symbols but {len(pos)} positions")
        if len(symbols) == 0:
            raise ValueError("a conformer needs at least one atom")
        for s in symbols:
            if s not in ELEMENTS:
                raise ValueError(f"unknown element {s!r}")
        if not np.isfinite(pos).all():
            raise ValueError("non-finite coordinates")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("two atoms share identical coordinates")
        pos.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other):
        if not isinstance(other, Conformer):
            return NotImplemented
        return self.symbols == other.symbols and np.array_equal(self.positions, other.positions)

    @property
    def atoms(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.symbols, self.positions))

    def select(self, symbol: str) -> np.ndarray:
        """Positions of all atoms with element ``symbol`` (possibly empty)."""
        mask = np.array([s == symbol for s in self.symbols])
        return self.positions[mask]

    def subset(self, indices: Sequence[int]) -> "Conformer | None":
        """Conformer restricted to ``indices``; ``None`` when empty."""
        indices = sorted(set(int(i) for i in indices))
        if not indices:
            return None
        return Conformer(tuple(self.symbols[i] for i in indices), self.positions[indices], self.name)

    def translated(self, shift) -> "Conformer":
        return Conformer(self.symbols, self.positions + np.asarray(shift, dtype=float), self.name)

    def centered(self) -> "Conformer":
        return self.translated(-centroid(self))

    def heavy_atom_count(self) -> int:
        return sum(1 for s in self.symbols if s != "H")


def parse_xyz(text: str, name: str = "") -> Conformer:
    """Parse one XYZ block (count line, comment line, ``Symbol x y z`` rows)."""
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    if not lines or not lines[0].strip():
        raise XYZError(1, "missing atom count")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise XYZError(1, f"atom count is not an integer: {lines[0].strip()!r}") from None
    if count < 1:
        raise XYZError(1, f"atom count must be positive, got {count}")
    comment = lines[1].strip() if len(lines) > 1 else ""
    rows = [(i + 1, ln) for i, ln in enumerate(lines[2:], start=2) if ln.strip()]
    if len(rows) != count:
        last = rows[-1][0] if rows else 2
        raise XYZError(last, f"declared {count} atoms but found {len(rows)} atom rows")

    symbols, coords = [], []
    for lineno, ln in rows:
        parts = ln.split()
        if len(parts) < 4:
            raise XYZError(lineno, f"expected 'Symbol x y z', got {ln.strip()!r}")
        sym = parts[0]
        if sym not in ELEMENTS:
            raise XYZError(lineno, f"unknown element symbol {sym!r}")
        try:
            xyz = [float(v) for v in parts[1:4]]
        except ValueError:
            raise XYZError(lineno, f"non-numeric coordinate in {ln.strip()!r}") from None
        if not all(np.isfinite(xyz)):
            raise XYZError(lineno, "non-finite coordinate")
        symbols.append(sym)
        coords.append(xyz)
    return Conformer(tuple(symbols), np.array(coords), name or comment)


def write_xyz(conformer: Conformer) -> str:
    rows = [f"{len(conformer)}", conformer.name]
    for sym, (x, y, z) in conformer.atoms:
        rows.append(f"{sym} {x:.6f} {y:.6f} {z:.6f}")
    return "\n".join(rows) + "\n"


def read_xyz_file(path) -> Conformer:
    with open(path, encoding="utf-8") as fh:
        return parse_xyz(fh.read())


def read_xyz_frames(path) -> list[Conformer]:
    """Read a multi-frame XYZ file (frames concatenated back to back)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().replace("\r\n", "\n").split("\n")
    frames, i = [], 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = int(lines[i].strip())
        except ValueError:
            raise XYZError(i + 1, f"atom count is not an integer: {lines[i].strip()!r}") from None
        block = lines[i:i + 2 + n]
        try:
            frames.append(parse_xyz("\n".join(block)))
        except XYZError as err:
            raise XYZError(err.line + i, str(err).split(": ", 1)[1]) from None
        i += 2 + n
    return frames


def centroid(conformer: Conformer) -> np.ndarray:
    """Unweighted mean of the atom positions."""
    return conformer.positions.mean(axis=0)


def bounding_radius(conformer: Conformer, margin: float = 2.0) -> float:
    if margin < 0:
        raise ValueError("margin must be non-negative")
    c = centroid(conformer)
    return float(np.max(np.linalg.norm(conformer.positions - c, axis=1)) + margin)
