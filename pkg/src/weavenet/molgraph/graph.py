"""Core molecular graph containers."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

ELEMENT_CLASSES = ("H", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")
ATOM_CLASSES = ELEMENT_CLASSES + ("metal",)

ATOMIC_NUMBERS = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9,
    "Ne": 10, "Na": 11, "Mg": 12, "Al": 13, "Si": 14, "P": 15, "S": 16,
    "Cl": 17, "Ar": 18, "K": 19, "Ca": 20, "Sc": 21, "Ti": 22, "V": 23,
    "Cr": 24, "Mn": 25, "Fe": 26, "Co": 27, "Ni": 28, "Cu": 29, "Zn": 30,
    "Ga": 31, "Ge": 32, "As": 33, "Se": 34, "Br": 35, "Kr": 36, "Rb": 37,
    "Sr": 38, "Y": 39, "Zr": 40, "Nb": 41, "Mo": 42, "Tc": 43, "Ru": 44,
    "Rh": 45, "Pd": 46, "Ag": 47, "Cd": 48, "In": 49, "Sn": 50, "Sb": 51,
    "Te": 52, "I": 53, "Xe": 54, "Cs": 55, "Ba": 56, "La": 57, "Ce": 58,
    "Pr": 59, "Nd": 60, "Sm": 62, "Eu": 63, "Gd": 64, "Tb": 65, "Dy": 66,
    "Ho": 67, "Er": 68, "Tm": 69, "Yb": 70, "Lu": 71, "Hf": 72, "Ta": 73,
    "W": 74, "Re": 75, "Os": 76, "Ir": 77, "Pt": 78, "Au": 79, "Hg": 80,
    "Tl": 81, "Pb": 82, "Bi": 83, "Po": 84, "At": 85, "Rn": 86, "Fr": 87,
    "Ra": 88, "Ac": 89, "Th": 90, "Pa": 91, "U": 92, "Np": 93, "Pu": 94,
}


class BondType(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"

    @property
    def valence(self) -> float:
        return {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}[self.value]


BOND_TYPES = (BondType.SINGLE, BondType.DOUBLE, BondType.TRIPLE, BondType.AROMATIC)


@dataclass
class Atom:
    """A heavy atom.

    ``chirality`` holds the raw SMILES tag ("@" is counterclockwise, "@@"
    clockwise) and ``chiral_refs`` the neighbor order the tag refers to, with
    ``-1`` standing for the implicit hydrogen.
    """

    element: str
    formal_charge: int = 0
    aromatic: bool = False
    implicit_h: int = 0
    chirality: Optional[str] = None
    chiral_refs: Optional[tuple] = None

    @property
    def atom_class(self) -> str:
        return self.element if self.element in ELEMENT_CLASSES else "metal"

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBERS.get(self.element, 0)

    @property
    def chirality_parity(self) -> str:
        return {"@": "counterclockwise", "@@": "clockwise"}.get(self.chirality, "none")


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondType
    # Kekule order for aromatic bonds (1 or 2); equals the nominal order otherwise.
    kekule: int = 1

    def __post_init__(self):
        if self.begin == self.end:
            raise ValueError("self-loop bond on atom %d" % self.begin)
        if self.begin > self.end:
            b, e = self.end, self.begin
            object.__setattr__(self, "begin", b)
            object.__setattr__(self, "end", e)

    def other(self, idx: int) -> int:
        return self.end if idx == self.begin else self.begin


@dataclass
class PerceptionResult:
    ring_membership: np.ndarray      # [n_atoms, 6] counts for ring sizes 3..8
    same_ring: np.ndarray            # [n_atoms, n_atoms] bool
    graph_distance: np.ndarray       # [n_atoms, n_atoms] float, inf if disconnected
    rings: list                      # SSSR rings as atom-index tuples
    hybridization: list              # "sp" | "sp2" | "sp3" | "none"
    partial_charge: np.ndarray       # [n_atoms]
    hbond_donor: np.ndarray          # [n_atoms] bool
    hbond_acceptor: np.ndarray       # [n_atoms] bool
    chirality_rs: list               # "R" | "S" | "none"
    warnings: list = field(default_factory=list)


class MolecularGraph:
    """Undirected heavy-atom graph with optional perceived properties."""

    def __init__(self, atoms, bonds, smiles=None):
        self.atoms = list(atoms)
        self.bonds = []
        self._bond_index = {}
        self.adjacency = [[] for _ in self.atoms]
        self.perceived: Optional[PerceptionResult] = None
        self.smiles = smiles
        for bond in bonds:
            self._add_bond(bond)

    def _add_bond(self, bond: Bond):
        n = len(self.atoms)
        if not (0 <= bond.begin < n and 0 <= bond.end < n):
            raise ValueError("bond endpoints out of range: %r" % (bond,))
        key = (bond.begin, bond.end)
        if key in self._bond_index:
            raise ValueError("duplicate bond between %d and %d" % key)
        self._bond_index[key] = len(self.bonds)
        self.bonds.append(bond)
        self.adjacency[bond.begin].append(bond.end)
        self.adjacency[bond.end].append(bond.begin)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def bond(self, i: int, j: int) -> Optional[Bond]:
        key = (i, j) if i < j else (j, i)
        idx = self._bond_index.get(key)
        return None if idx is None else self.bonds[idx]

    def neighbors(self, i: int) -> list:
        return self.adjacency[i]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def num_components(self) -> int:
        seen = [False] * self.num_atoms
        count = 0
        for start in range(self.num_atoms):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                a = stack.pop()
                for b in self.adjacency[a]:
                    if not seen[b]:
                        seen[b] = True
                        stack.append(b)
        return count

    def permute(self, order) -> "MolecularGraph":
        """Return a copy whose atom ``k`` is atom ``order[k]`` of this graph.

        Perceived properties are dropped; re-run perception on the result.
        """
        order = list(order)
        if sorted(order) != list(range(self.num_atoms)):
            raise ValueError("order must be a permutation of atom indices")
        new_index = {old: new for new, old in enumerate(order)}
        atoms = []
        for old in order:
            atom = self.atoms[old]
            refs = atom.chiral_refs
            if refs is not None:
                refs = tuple(-1 if r < 0 else new_index[r] for r in refs)
            atoms.append(replace(atom, chiral_refs=refs))
        bonds = [
            Bond(new_index[b.begin], new_index[b.end], b.order, b.kekule)
            for b in self.bonds
        ]
        bonds.sort(key=lambda b: (b.begin, b.end))
        return MolecularGraph(atoms, bonds)

    def __repr__(self):
        label = self.smiles if self.smiles is not None else "%d atoms" % self.num_atoms
        return "MolecularGraph(%s)" % label
