"""Initial atom and pair layers for perceived molecular graphs.

Atom columns (full mode, 27): atom type one-hot (H C N O F P S Cl Br I metal),
chirality (R, S), formal charge, partial charge, ring-size counts 3..8,
hybridization (sp, sp2, sp3), H-bond donor, H-bond acceptor, aromatic.
Simple mode keeps the 11 atom-type columns only.

Pair columns (full mode, 12): bond type one-hot (single, double, triple,
aromatic), graph distance bits for 1..7 (bit d set iff distance <= d), same
ring. Simple mode drops the same-ring column.

"One-hot or null" features are all zeros when null.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .molgraph import ATOM_CLASSES, BOND_TYPES, MolecularGraph, from_smiles, perceive
from .molgraph.rings import RING_SIZES

MAX_DISTANCE_BITS = 7

ATOM_FEATURE_NAMES = (
    tuple("type_%s" % c for c in ATOM_CLASSES)
    + ("chiral_R", "chiral_S", "formal_charge", "partial_charge")
    + tuple("ring_size_%d" % k for k in RING_SIZES)
    + ("hyb_sp", "hyb_sp2", "hyb_sp3", "hbond_donor", "hbond_acceptor", "aromatic")
)
PAIR_FEATURE_NAMES = (
    tuple("bond_%s" % b.value for b in BOND_TYPES)
    + tuple("distance_le_%d" % d for d in range(1, MAX_DISTANCE_BITS + 1))
    + ("same_ring",)
)
SIMPLE_ATOM_DEPTH = len(ATOM_CLASSES)
SIMPLE_PAIR_DEPTH = len(BOND_TYPES) + MAX_DISTANCE_BITS


@dataclass(frozen=True)
class FeatureConfig:
    mode: str = "full"
    max_atoms: int = 60
    max_pair_distance: float = 2

    def __post_init__(self):
        if self.mode not in ("full", "simple"):
            raise ValueError("mode must be 'full' or 'simple', got %r" % (self.mode,))
        if self.max_atoms < 1:
            raise ValueError("max_atoms must be >= 1")
        if self.max_pair_distance is None:
            object.__setattr__(self, "max_pair_distance", math.inf)
        if not self.max_pair_distance >= 1:
            raise ValueError("max_pair_distance must be >= 1 or inf")

    @property
    def atom_depth(self) -> int:
        return len(ATOM_FEATURE_NAMES) if self.mode == "full" else SIMPLE_ATOM_DEPTH

    @property
    def pair_depth(self) -> int:
        return len(PAIR_FEATURE_NAMES) if self.mode == "full" else SIMPLE_PAIR_DEPTH

    @property
    def atom_feature_names(self):
        return ATOM_FEATURE_NAMES[:self.atom_depth]

    @property
    def pair_feature_names(self):
        return PAIR_FEATURE_NAMES[:self.pair_depth]


@dataclass
class AtomLayer:
    values: np.ndarray      # [max_atoms, depth]
    atom_mask: np.ndarray   # [max_atoms] bool


@dataclass
class PairLayer:
    values: np.ndarray      # [max_atoms, max_atoms, depth]
    pair_mask: np.ndarray   # [max_atoms, max_atoms] bool


@dataclass
class EncodedMolecule:
    """Compact features: only real atoms and unmasked ordered pairs."""

    atom_features: np.ndarray   # [n, atom_depth]
    pair_index: np.ndarray      # [p, 2] ordered pairs (a, b) and (b, a), sorted
    pair_features: np.ndarray   # [p, pair_depth]
    truncated: bool = False

    @property
    def num_atoms(self) -> int:
        return self.atom_features.shape[0]


def _require_perceived(g):
    if g.perceived is None:
        raise ValueError("graph must be perceived before featurization")
    return g.perceived


def atom_feature_matrix(g: MolecularGraph, mode: str = "full") -> np.ndarray:
    """Atom features for every atom of ``g`` (no truncation)."""
    p = _require_perceived(g)
    n = g.num_atoms
    full = np.zeros((n, len(ATOM_FEATURE_NAMES)))
    for i, atom in enumerate(g.atoms):
        full[i, ATOM_CLASSES.index(atom.atom_class)] = 1.0
        rs = p.chirality_rs[i]
        if rs == "R":
            full[i, 11] = 1.0
        elif rs == "S":
            full[i, 12] = 1.0
        full[i, 13] = atom.formal_charge
        full[i, 14] = p.partial_charge[i]
        full[i, 15:21] = p.ring_membership[i]
        hyb = p.hybridization[i]
        if hyb in ("sp", "sp2", "sp3"):
            full[i, 21 + ("sp", "sp2", "sp3").index(hyb)] = 1.0
        full[i, 24] = float(p.hbond_donor[i])
        full[i, 25] = float(p.hbond_acceptor[i])
        full[i, 26] = float(atom.aromatic)
    depth = len(ATOM_FEATURE_NAMES) if mode == "full" else SIMPLE_ATOM_DEPTH
    return full[:, :depth]


def pair_feature_vector(g: MolecularGraph, a: int, b: int, mode: str = "full") -> np.ndarray:
    p = _require_perceived(g)
    vec = np.zeros(len(PAIR_FEATURE_NAMES))
    bond = g.bond(a, b)
    if bond is not None:
        vec[BOND_TYPES.index(bond.order)] = 1.0
    dist = p.graph_distance[a, b]
    for d in range(1, MAX_DISTANCE_BITS + 1):
        if dist <= d:
            vec[len(BOND_TYPES) + d - 1] = 1.0
    vec[-1] = float(p.same_ring[a, b])
    depth = len(PAIR_FEATURE_NAMES) if mode == "full" else SIMPLE_PAIR_DEPTH
    return vec[:depth]


def encode_molecule(g: MolecularGraph, cfg: FeatureConfig = FeatureConfig()) -> EncodedMolecule:
    """Features of the first ``cfg.max_atoms`` atoms and their in-range pairs."""
    p = _require_perceived(g)
    n = min(g.num_atoms, cfg.max_atoms)
    atoms = atom_feature_matrix(g, cfg.mode)[:n]
    dist = p.graph_distance[:n, :n]
    keep = dist <= cfg.max_pair_distance
    np.fill_diagonal(keep, False)
    rows, cols = np.nonzero(keep)
    pair_index = np.stack([rows, cols], axis=1).astype(np.int64)
    pair_features = np.zeros((len(rows), cfg.pair_depth))
    cache = {}
    for k, (a, b) in enumerate(zip(rows.tolist(), cols.tolist())):
        key = (a, b) if a < b else (b, a)
        vec = cache.get(key)
        if vec is None:
            vec = cache[key] = pair_feature_vector(g, key[0], key[1], cfg.mode)
        pair_features[k] = vec
    return EncodedMolecule(atoms, pair_index, pair_features, truncated=g.num_atoms > cfg.max_atoms)


def featurize_atoms(g: MolecularGraph, cfg: FeatureConfig = FeatureConfig()) -> AtomLayer:
    enc = encode_molecule(g, cfg)
    values = np.zeros((cfg.max_atoms, cfg.atom_depth))
    values[:enc.num_atoms] = enc.atom_features
    mask = np.zeros(cfg.max_atoms, dtype=bool)
    mask[:enc.num_atoms] = True
    return AtomLayer(values, mask)


def featurize_pairs(g: MolecularGraph, cfg: FeatureConfig = FeatureConfig()) -> PairLayer:
    enc = encode_molecule(g, cfg)
    return _pair_layer(enc, cfg)


def _pair_layer(enc, cfg):
    values = np.zeros((cfg.max_atoms, cfg.max_atoms, cfg.pair_depth))
    mask = np.zeros((cfg.max_atoms, cfg.max_atoms), dtype=bool)
    a, b = enc.pair_index[:, 0], enc.pair_index[:, 1]
    values[a, b] = enc.pair_features
    mask[a, b] = True
    return PairLayer(values, mask)


@dataclass
class FeaturizedBatch:
    atoms: np.ndarray        # [B, max_atoms, atom_depth]
    atom_mask: np.ndarray    # [B, max_atoms]
    pairs: np.ndarray        # [B, max_atoms, max_atoms, pair_depth]
    pair_mask: np.ndarray    # [B, max_atoms, max_atoms]
    molecule_index: np.ndarray
    n_truncated: int = 0


def featurize_batch(mols, cfg: FeatureConfig = FeatureConfig()) -> FeaturizedBatch:
    """Padded layers for a list of perceived graphs, in input order."""
    mols = list(mols)
    if not mols:
        raise ValueError("featurize_batch needs at least one molecule")
    encoded = [encode_molecule(g, cfg) for g in mols]
    n_truncated = sum(e.truncated for e in encoded)
    if n_truncated:
        warnings.warn("%d molecule(s) truncated to %d atoms" % (n_truncated, cfg.max_atoms),
                      RuntimeWarning, stacklevel=2)
    B, M = len(mols), cfg.max_atoms
    atoms = np.zeros((B, M, cfg.atom_depth))
    atom_mask = np.zeros((B, M), dtype=bool)
    pairs = np.zeros((B, M, M, cfg.pair_depth))
    pair_mask = np.zeros((B, M, M), dtype=bool)
    for k, enc in enumerate(encoded):
        atoms[k, :enc.num_atoms] = enc.atom_features
        atom_mask[k, :enc.num_atoms] = True
        a, b = enc.pair_index[:, 0], enc.pair_index[:, 1]
        pairs[k, a, b] = enc.pair_features
        pair_mask[k, a, b] = True
    return FeaturizedBatch(atoms, atom_mask, pairs, pair_mask, np.arange(B), n_truncated)


@dataclass
class GraphBatch:
    """Packed batch: real atoms and unmasked ordered pairs of many molecules.

    ``pair_atoms[k] = (a, b)`` in batch-global atom indices and
    ``pair_swap[k]`` is the row holding ``(b, a)``.
    """

    atom_features: np.ndarray
    pair_features: np.ndarray
    pair_atoms: np.ndarray
    pair_swap: np.ndarray
    atom_molecule: np.ndarray
    n_molecules: int

    @property
    def n_atoms(self) -> int:
        return self.atom_features.shape[0]

    @classmethod
    def from_encoded(cls, encoded) -> "GraphBatch":
        encoded = list(encoded)
        atom_blocks, pair_blocks, index_blocks, mol_blocks = [], [], [], []
        offset = 0
        for m, enc in enumerate(encoded):
            atom_blocks.append(enc.atom_features)
            pair_blocks.append(enc.pair_features)
            index_blocks.append(enc.pair_index + offset)
            mol_blocks.append(np.full(enc.num_atoms, m, dtype=np.int64))
            offset += enc.num_atoms
        atom_depth = encoded[0].atom_features.shape[1]
        pair_depth = encoded[0].pair_features.shape[1]
        pair_atoms = (np.concatenate(index_blocks) if index_blocks else np.zeros((0, 2), np.int64))
        return cls(
            atom_features=np.concatenate(atom_blocks) if atom_blocks else np.zeros((0, atom_depth)),
            pair_features=np.concatenate(pair_blocks) if pair_blocks else np.zeros((0, pair_depth)),
            pair_atoms=pair_atoms.astype(np.int64).reshape(-1, 2),
            pair_swap=_swap_index(pair_atoms.reshape(-1, 2), offset),
            atom_molecule=np.concatenate(mol_blocks) if mol_blocks else np.zeros(0, np.int64),
            n_molecules=len(encoded),
        )

    @classmethod
    def from_layers(cls, atoms, atom_mask, pairs, pair_mask) -> "GraphBatch":
        """Pack padded [B, M, ...] layers, ignoring everything masked out.

        Pairs touching a masked atom are dropped even if their own mask is set.
        """
        atoms = np.asarray(atoms)
        atom_mask = np.asarray(atom_mask, dtype=bool)
        pair_mask = np.asarray(pair_mask, dtype=bool) & atom_mask[:, :, None] & atom_mask[:, None, :]
        B, M = atom_mask.shape
        eye = np.eye(M, dtype=bool)[None]
        pair_mask = pair_mask & ~eye
        global_index = np.cumsum(atom_mask.ravel()) - 1
        bm, am = np.nonzero(atom_mask)
        pb, pa, pc = np.nonzero(pair_mask)
        ga = global_index[pb * M + pa]
        gb = global_index[pb * M + pc]
        pair_atoms = np.stack([ga, gb], axis=1).astype(np.int64)
        n_atoms = int(atom_mask.sum())
        return cls(
            atom_features=atoms[bm, am],
            pair_features=np.asarray(pairs)[pb, pa, pc],
            pair_atoms=pair_atoms,
            pair_swap=_swap_index(pair_atoms, n_atoms),
            atom_molecule=bm.astype(np.int64),
            n_molecules=B,
        )

    def astype(self, dtype) -> "GraphBatch":
        return GraphBatch(self.atom_features.astype(dtype), self.pair_features.astype(dtype),
                          self.pair_atoms, self.pair_swap, self.atom_molecule, self.n_molecules)


def _swap_index(pair_atoms, n_atoms):
    if len(pair_atoms) == 0:
        return np.zeros(0, dtype=np.int64)
    n = max(int(n_atoms), 1)
    key = pair_atoms[:, 0] * n + pair_atoms[:, 1]
    order = np.argsort(key, kind="stable")
    rev = pair_atoms[:, 1] * n + pair_atoms[:, 0]
    pos = np.searchsorted(key[order], rev)
    if np.any(pos >= len(key)) or np.any(key[order][np.minimum(pos, len(key) - 1)] != rev):
        raise ValueError("pair set is not symmetric")
    return order[pos].astype(np.int64)


def write_feature_dump(g: MolecularGraph, cfg: FeatureConfig, atom_path, pair_path):
    """Atom rows and unique (a < b) unmasked pair rows as named-column CSVs."""
    enc = encode_molecule(g, cfg)
    with open(atom_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("atom", "element") + cfg.atom_feature_names)
        for i in range(enc.num_atoms):
            w.writerow([i, g.atoms[i].element] + [repr(float(v)) for v in enc.atom_features[i]])
    with open(pair_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("atom_a", "atom_b") + cfg.pair_feature_names)
        for (a, b), vec in zip(enc.pair_index.tolist(), enc.pair_features):
            if a < b:
                w.writerow([a, b] + [repr(float(v)) for v in vec])


def _to_graph(item):
    if isinstance(item, MolecularGraph):
        return item if item.perceived is not None else perceive(item)
    return from_smiles(item)


class WeaveFeaturizer(TransformerMixin, BaseEstimator):
    """Turn SMILES strings (or graphs) into :class:`EncodedMolecule` objects.

    Parameters
    ----------
    mode : {"full", "simple"}
    max_atoms : int
    max_pair_distance : int or float('inf')
    """

    def __init__(self, mode="full", max_atoms=60, max_pair_distance=2):
        self.mode = mode
        self.max_atoms = max_atoms
        self.max_pair_distance = max_pair_distance

    @property
    def config(self) -> FeatureConfig:
        return FeatureConfig(self.mode, self.max_atoms, self.max_pair_distance)

    def fit(self, X, y=None):
        self.config  # validates parameters
        return self

    def transform(self, X):
        cfg = self.config
        return [encode_molecule(_to_graph(x), cfg) for x in X]


def as_graph(item) -> Optional[MolecularGraph]:
    """Perceived graph for a SMILES string or graph."""
    return _to_graph(item)
