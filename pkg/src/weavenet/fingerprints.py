"""Circular (Morgan) fingerprints, Tanimoto similarity and the MaxSim score.

Identifiers are 32-bit FNV-1a hashes over little-endian 32-bit two's
complement encodings.

* radius 0: ``(atom class index, heavy degree, implicit H, formal charge,
  aromatic, in ring)``
* radius r: ``(r, own previous id, b1, n1, b2, n2, ...)`` with the
  ``(bond code, neighbor previous id)`` pairs sorted; bond codes are
  single 1, double 2, triple 3, aromatic 4.

An environment is dropped when an identical atom set was already emitted
at the same or a lower radius; within one radius the lowest identifier
wins. The emitted set is the union of surviving identifiers.
"""
from __future__ import annotations

import base64
import csv
import struct

import numpy as np

from .molgraph import ATOM_CLASSES, BondType, MolecularGraph

FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193
_BOND_CODES = {BondType.SINGLE: 1, BondType.DOUBLE: 2, BondType.TRIPLE: 3, BondType.AROMATIC: 4}


def fnv1a_32(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFF
    return h


def _hash_ints(values):
    return fnv1a_32(struct.pack("<%dI" % len(values), *(v & 0xFFFFFFFF for v in values)))


def _initial_ids(g: MolecularGraph):
    if g.perceived is not None:
        in_ring = g.perceived.ring_membership.sum(axis=1) > 0
    else:
        from .molgraph.rings import perceive_rings
        in_ring = perceive_rings(g)[1].sum(axis=1) > 0
    ids = []
    for i, atom in enumerate(g.atoms):
        ids.append(_hash_ints((ATOM_CLASSES.index(atom.atom_class), g.degree(i), atom.implicit_h,
                               atom.formal_charge, int(atom.aromatic), int(in_ring[i]))))
    return ids


def morgan_identifiers(g: MolecularGraph, radius=2):
    """Sorted unique identifiers after environment deduplication."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    n = g.num_atoms
    current = _initial_ids(g)
    covered = [frozenset([i]) for i in range(n)]
    seen_sets = set()
    kept = set()

    def emit(ids, sets):
        best = {}
        for ident, atoms in zip(ids, sets):
            if atoms in seen_sets:
                continue
            if atoms not in best or ident < best[atoms]:
                best[atoms] = ident
        for atoms, ident in best.items():
            seen_sets.add(atoms)
            kept.add(ident)

    emit(current, covered)
    for r in range(1, radius + 1):
        nxt, nxt_cov = [], []
        for i in range(n):
            pairs = sorted((_BOND_CODES[g.bond(i, j).order], current[j]) for j in g.neighbors(i))
            flat = [r, current[i]] + [v for pair in pairs for v in pair]
            nxt.append(_hash_ints(flat))
            cov = set(covered[i])
            for j in g.neighbors(i):
                cov |= covered[j]
            nxt_cov.append(frozenset(cov))
        current, covered = nxt, nxt_cov
        emit(current, covered)
    return sorted(kept)


def fold(identifiers, length=2048):
    """Bit vector with bit ``id % length`` set for every identifier."""
    if length < 1 or length & (length - 1):
        raise ValueError("fold length must be a power of two")
    bits = np.zeros(length, dtype=bool)
    bits[np.asarray(list(identifiers), dtype=np.int64) % length] = True
    return bits


def morgan_fingerprint(g: MolecularGraph, radius=2, fold_length=2048):
    """Folded bit vector, or the sparse identifier set when ``fold_length`` is None."""
    ids = morgan_identifiers(g, radius)
    if fold_length is None:
        return frozenset(ids)
    return fold(ids, fold_length)


def tanimoto(a, b):
    """|a & b| / |a | b| for sets or boolean vectors; 0 when both are empty."""
    if isinstance(a, (set, frozenset)) or isinstance(b, (set, frozenset)):
        a, b = set(a), set(b)
        union = len(a | b)
        return len(a & b) / union if union else 0.0
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("fingerprints differ in length")
    union = np.count_nonzero(a | b)
    return float(np.count_nonzero(a & b) / union) if union else 0.0


def tanimoto_matrix(X, Y):
    """Pairwise Tanimoto between the rows of two boolean matrices."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    inter = X @ Y.T
    union = X.sum(axis=1)[:, None] + Y.sum(axis=1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def maxsim_score(query, actives):
    """Largest Tanimoto similarity between ``query`` and any active."""
    actives = list(actives)
    if not actives:
        raise ValueError("maxsim_score needs at least one active")
    return max(tanimoto(query, a) for a in actives)


def format_fingerprint(fp):
    """Sorted 8-digit hex identifiers for sparse sets, base64 packed bits for vectors."""
    if isinstance(fp, (set, frozenset)):
        return " ".join("%08x" % i for i in sorted(fp))
    bits = np.asarray(fp, dtype=bool)
    return base64.b64encode(np.packbits(bits, bitorder="little").tobytes()).decode("ascii")


def parse_fingerprint(text, length=None):
    """Inverse of :func:`format_fingerprint`; ``length`` selects the folded form."""
    if length is None:
        return frozenset(int(tok, 16) for tok in text.split())
    raw = np.frombuffer(base64.b64decode(text), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:length].astype(bool)


def export_fingerprints(path, smiles, fingerprints):
    """CSV with ``smiles`` and ``fingerprint`` columns, one row per molecule."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "fingerprint"])
        for s, fp in zip(smiles, fingerprints):
            w.writerow([s, format_fingerprint(fp)])
