"""Seeded generator of small molecules labeled by a carboxylic-acid detector.

Molecules are built from a short backbone of chain carbons and rings, with
substituents attached at random positions. Half of the molecules get an acid
group on purpose. Negatives are deliberately rich in look-alike groups
(esters, amides, aldehydes, ketones, alcohols, ethers). The label always
comes from :func:`has_carboxylic_acid` on the parsed graph, never from the
construction recipe.
"""
from __future__ import annotations

import csv

import numpy as np

from .molgraph import BondType, from_smiles

BACKBONE_UNITS = ("C", "C", "C", "CC", "C(C)", "c1ccc(*)cc1", "C1CCC(*)CC1", "c1ccc(*)nc1", "N", "O")
DECOY_GROUPS = ("C(=O)OC", "C(=O)N", "C=O", "O", "C(=O)C", "OC", "C(=O)OCC", "C(N)=O", "CO",
                "C#N", "Cl", "F", "N", "S", "C(=O)Nc1ccccc1", "OC(=O)C")
ACID_GROUPS = ("C(=O)O", "CC(=O)O", "C(O)=O")


def has_carboxylic_acid(g):
    """True when some carbon has a double-bonded O and a single-bonded O carrying H."""
    for i, atom in enumerate(g.atoms):
        if atom.element != "C" or atom.aromatic:
            continue
        carbonyl = hydroxyl = False
        for j in g.neighbors(i):
            other = g.atoms[j]
            if other.element != "O" or other.formal_charge != 0:
                continue
            order = g.bond(i, j).order
            if order is BondType.DOUBLE and g.degree(j) == 1:
                carbonyl = True
            elif order is BondType.SINGLE and g.degree(j) == 1 and other.implicit_h >= 1:
                hydroxyl = True
        if carbonyl and hydroxyl:
            return True
    return False


def _molecule(rng, with_acid):
    n_units = int(rng.integers(1, 5))
    units = [BACKBONE_UNITS[k] for k in rng.integers(0, len(BACKBONE_UNITS), size=n_units)]
    # heteroatom links only between two other units
    units = [u if u not in ("N", "O") or 0 < k < n_units - 1 else "C" for k, u in enumerate(units)]
    groups = [DECOY_GROUPS[k] for k in rng.integers(0, len(DECOY_GROUPS), size=int(rng.integers(0, 3)))]
    if with_acid:
        groups.append(ACID_GROUPS[int(rng.integers(0, len(ACID_GROUPS)))])
    slots = [k for k, u in enumerate(units) if "*" in u or u in ("C", "CC", "C(C)")]
    parts = list(units)
    tail = []
    for group in groups:
        if slots and rng.random() < 0.6:
            k = slots[int(rng.integers(0, len(slots)))]
            if "*" in parts[k]:
                parts[k] = parts[k].replace("*", group, 1)
                slots.remove(k)
            else:
                parts[k] = parts[k] + "(" + group + ")"
                slots.remove(k)
        else:
            tail.append(group)
    parts = [p.replace("(*)", "") for p in parts]
    smiles = "".join(parts)
    for group in tail:
        smiles = smiles + group if not smiles.endswith(("=O", "#N", "Cl", "F")) else smiles + "C" + group
    return smiles


def generate_acid_dataset(n=2000, seed=0, active_fraction=0.5):
    """``(smiles, labels)`` with labels from the acid detector.

    Molecules that fail to parse, and repeated SMILES strings, are regenerated.
    """
    rng = np.random.default_rng(seed)
    smiles, labels, seen = [], [], set()
    while len(smiles) < n:
        s = _molecule(rng, rng.random() < active_fraction)
        if s in seen:
            continue
        seen.add(s)
        try:
            g = from_smiles(s)
        except ValueError:
            continue
        smiles.append(s)
        labels.append(int(has_carboxylic_acid(g)))
    return smiles, np.asarray(labels, dtype=np.int64)


def write_dataset_csv(path, smiles, labels, task="acid"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", task])
        for s, y in zip(smiles, labels):
            w.writerow([s, int(y)])
