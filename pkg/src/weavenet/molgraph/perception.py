"""Chemical perception feeding the atom and pair features."""
from __future__ import annotations

import warnings
from dataclasses import replace

import numpy as np

from .graph import Bond, BondType, PerceptionResult
from .rings import graph_distances, perceive_rings
from .smiles import parse_smiles

# Gasteiger-Marsili electronegativity coefficients (a, b, c) in
# chi(q) = a + b*q + c*q**2, keyed by (element, hybridization).
GASTEIGER_PARAMS = {
    ("H", "none"): (7.17, 6.24, -0.56),
    ("C", "sp3"): (7.98, 9.18, 1.88),
    ("C", "sp2"): (8.79, 9.32, 1.51),
    ("C", "sp"): (10.39, 9.45, 0.73),
    ("N", "sp3"): (11.54, 10.82, 1.36),
    ("N", "sp2"): (12.87, 11.15, 0.85),
    ("N", "sp"): (15.68, 11.70, -0.27),
    ("O", "sp3"): (14.18, 12.92, 1.39),
    ("O", "sp2"): (17.07, 13.79, 0.47),
    ("O", "sp"): (17.07, 13.79, 0.47),
    ("F", "none"): (14.66, 13.85, 2.31),
    ("Cl", "none"): (11.00, 9.69, 1.35),
    ("Br", "none"): (10.08, 8.47, 1.16),
    ("I", "none"): (9.90, 7.96, 0.96),
    ("S", "sp3"): (10.14, 9.13, 1.38),
    ("S", "sp2"): (10.88, 9.485, 1.325),
    ("S", "sp"): (10.88, 9.485, 1.325),
    ("P", "sp3"): (8.90, 8.24, 0.96),
    ("P", "sp2"): (8.90, 8.24, 0.96),
    ("P", "sp"): (8.90, 8.24, 0.96),
}
# cation electronegativity of hydrogen (a + b + c would give 12.85)
HYDROGEN_CHI_PLUS = 20.02
PEOE_ITERATIONS = 8
PEOE_DAMPING = 0.5

CIP_DEPTH = 8


def perceive_aromaticity(g, rings):
    """Flag Hueckel-aromatic SSSR rings of size 5-7 on top of input annotations.

    pi-electron contributions per ring atom (Kekule form):
      endocyclic double bond                          1
      exocyclic double bond to an aromatic atom       1
      exocyclic double bond to N, O or S              0
      neutral N/P with three connections, O/S with two, no double bond  2
      carbanion 2, carbocation 0
    anything else (sp3 carbon, exocyclic C=C, triple bond) disqualifies the ring.
    Rings are revisited until no new ring qualifies so fused Kekule systems
    are picked up ring by ring. Returns (atom_flags, bond_flags).
    """
    aromatic_atoms = [a.aromatic for a in g.atoms]
    candidates = [r for r in rings if 5 <= len(r) <= 7]
    flagged = set()
    changed = True
    while changed:
        changed = False
        for ring in candidates:
            if ring in flagged:
                continue
            if all(aromatic_atoms[a] for a in ring) and all(
                g.bond(a, b).order is BondType.AROMATIC for a, b in zip(ring, ring[1:] + ring[:1])
            ):
                flagged.add(ring)
                continue
            electrons = _ring_pi_electrons(g, ring, aromatic_atoms)
            if electrons is not None and electrons % 4 == 2:
                flagged.add(ring)
                for a in ring:
                    aromatic_atoms[a] = True
                changed = True
    bond_flags = [b.order is BondType.AROMATIC for b in g.bonds]
    for ring in flagged:
        for a, b in zip(ring, ring[1:] + ring[:1]):
            bond_flags[g._bond_index[(min(a, b), max(a, b))]] = True
    return aromatic_atoms, bond_flags


def _ring_pi_electrons(g, ring, aromatic_atoms):
    members = set(ring)
    total = 0
    for a in ring:
        atom = g.atoms[a]
        in_ring_double = False
        exo_partner = None
        for b in g.neighbors(a):
            bond = g.bond(a, b)
            if bond.kekule == 3:
                return None
            if bond.kekule == 2:
                if b in members:
                    in_ring_double = True
                else:
                    exo_partner = b
        if in_ring_double:
            total += 1
            continue
        if exo_partner is not None:
            partner = g.atoms[exo_partner]
            if aromatic_atoms[exo_partner]:
                total += 1
            elif partner.element in ("N", "O", "S"):
                pass
            else:
                return None
            continue
        connections = g.degree(a) + atom.implicit_h
        q = atom.formal_charge
        if atom.element in ("N", "P") and q == 0 and connections == 3:
            total += 2
        elif atom.element in ("O", "S") and q == 0 and connections == 2:
            total += 2
        elif atom.element == "C" and q == -1:
            total += 2
        elif atom.element == "C" and q == 1:
            pass
        else:
            return None
    return total


def perceive_hybridization(g):
    """sp / sp2 / sp3 / none from bond orders and aromaticity."""
    result = []
    for i, atom in enumerate(g.atoms):
        doubles = triples = 0
        for j in g.neighbors(i):
            order = g.bond(i, j).order
            if order is BondType.DOUBLE:
                doubles += 1
            elif order is BondType.TRIPLE:
                triples += 1
        if triples or doubles >= 2:
            hyb = "sp"
        elif doubles == 1 or atom.aromatic:
            hyb = "sp2"
        elif atom.element in ("C", "N", "O", "P", "S"):
            hyb = "sp3"
        else:
            hyb = "none"
        if atom.element in ("F", "Cl", "Br", "I", "H"):
            hyb = "none"
        result.append(hyb)
    return result


def _gasteiger_key(element, hyb):
    if element in ("F", "Cl", "Br", "I", "H"):
        return (element, "none")
    return (element, hyb)


def compute_partial_charges(g, hybridization):
    """Gasteiger-Marsili PEOE charges with implicit hydrogens folded in.

    Returns ``(charges, unsupported)`` where ``unsupported`` lists atom indices
    without parameters; those keep their formal charge and exchange nothing.
    """
    n = g.num_atoms
    elements = [a.element for a in g.atoms]
    params = []
    owner = []
    unsupported = []
    for i, atom in enumerate(g.atoms):
        key = _gasteiger_key(atom.element, hybridization[i])
        p = GASTEIGER_PARAMS.get(key)
        if p is None:
            unsupported.append(i)
        params.append(p)
        owner.append(i)
    q0 = [float(a.formal_charge) for a in g.atoms]
    bi, bj = [], []
    for bond in g.bonds:
        bi.append(bond.begin)
        bj.append(bond.end)
    for i, atom in enumerate(g.atoms):
        for _ in range(atom.implicit_h):
            params.append(GASTEIGER_PARAMS[("H", "none")])
            owner.append(i)
            q0.append(0.0)
            bi.append(i)
            bj.append(len(params) - 1)
    supported = np.array([p is not None for p in params])
    coef = np.array([p if p is not None else (0.0, 0.0, 0.0) for p in params])
    a, b, c = coef[:, 0], coef[:, 1], coef[:, 2]
    chi_plus = a + b + c
    chi_plus[n:] = HYDROGEN_CHI_PLUS
    bi = np.asarray(bi, dtype=np.int64)
    bj = np.asarray(bj, dtype=np.int64)
    active = supported[bi] & supported[bj] if len(bi) else np.zeros(0, dtype=bool)
    bi, bj = bi[active], bj[active]
    q = np.asarray(q0, dtype=np.float64)
    damp = 1.0
    for _ in range(PEOE_ITERATIONS):
        damp *= PEOE_DAMPING
        chi = a + b * q + c * q * q
        diff = chi[bj] - chi[bi]
        denom = np.where(diff > 0, chi_plus[bi], chi_plus[bj])
        transfer = damp * diff / denom
        dq = np.zeros_like(q)
        np.add.at(dq, bi, transfer)
        np.add.at(dq, bj, -transfer)
        q = q + dq
    charges = np.zeros(n)
    np.add.at(charges, np.asarray(owner, dtype=np.int64), q)
    if unsupported:
        warnings.warn(
            "no Gasteiger parameters for %s; charge left at formal value"
            % sorted({elements[i] for i in unsupported}),
            RuntimeWarning, stacklevel=2,
        )
    return charges, unsupported


def _contributes_lone_pair(g, i):
    """Aromatic N whose lone pair sits in the pi system (pyrrole type)."""
    atom = g.atoms[i]
    if not atom.aromatic:
        return False
    return all(g.bond(i, j).kekule != 2 for j in g.neighbors(i)) and \
        (g.degree(i) + atom.implicit_h) == 3


def perceive_hbond(g):
    """Donor: N/O carrying H. Acceptor: any O; N unless cationic or pyrrole-type."""
    n = g.num_atoms
    donor = np.zeros(n, dtype=bool)
    acceptor = np.zeros(n, dtype=bool)
    for i, atom in enumerate(g.atoms):
        if atom.element not in ("N", "O"):
            continue
        donor[i] = atom.implicit_h >= 1
        if atom.element == "O":
            acceptor[i] = True
        else:
            acceptor[i] = atom.formal_charge <= 0 and not _contributes_lone_pair(g, i)
    return donor, acceptor


def _cip_children(g, node):
    """Expand one node of the hierarchical digraph.

    Nodes are (atomic_number, atom_index, parent_index, path). Hydrogens,
    duplicate atoms and phantoms have index None; duplicates of heavy atoms
    expand to three phantoms (atomic number 0).
    """
    z, idx, parent, path = node
    if idx is None:
        return [(0, None, None, ())] * 3 if z > 1 else []
    kids = []
    for j in g.neighbors(idx):
        zj = g.atoms[j].atomic_number
        if j != parent:
            if j in path:
                kids.append((zj, None, None, ()))
            else:
                kids.append((zj, j, idx, path + (idx,)))
        kids.extend([(zj, None, None, ())] * (g.bond(idx, j).kekule - 1))
    kids.extend([(1, None, None, ())] * g.atoms[idx].implicit_h)
    return kids


def _cip_key(g, center, start):
    if start < 0:
        return ((1,),)
    frontier = [(g.atoms[start].atomic_number, start, center, (center,))]
    spheres = [(frontier[0][0],)]
    for _ in range(CIP_DEPTH - 1):
        nxt = []
        for node in frontier:
            nxt.extend(_cip_children(g, node))
        if not nxt:
            break
        spheres.append(tuple(sorted((k[0] for k in nxt), reverse=True)))
        frontier = nxt
    return tuple(spheres)


def assign_chirality_rs(g):
    """Map @/@@ tags to R/S with a simplified CIP ranking.

    Substituents are compared sphere by sphere on descending atomic-number
    multisets (duplicate atoms for multiple bonds), up to ``CIP_DEPTH``
    spheres. Unresolved ties and centers without four substituents give
    ``"none"``.
    """
    result = []
    for i, atom in enumerate(g.atoms):
        refs = atom.chiral_refs
        if atom.chirality is None or refs is None or len(refs) != 4:
            result.append("none")
            continue
        keys = {r: _cip_key(g, i, r) for r in refs}
        if len(set(keys.values())) != 4:
            result.append("none")
            continue
        by_priority = sorted(refs, key=lambda r: keys[r], reverse=True)
        target = [by_priority[3]] + by_priority[:3]
        tag = atom.chirality
        if _parity(list(refs), target):
            tag = "@@" if tag == "@" else "@"
        # viewed from the lowest-priority substituent, "@" lists the rest
        # anticlockwise, i.e. clockwise with that substituent pointing away
        result.append("R" if tag == "@" else "S")
    return result


def _parity(src, dst):
    pos = {v: k for k, v in enumerate(src)}
    perm = [pos[v] for v in dst]
    swaps = 0
    perm = list(perm)
    for k in range(len(perm)):
        while perm[k] != k:
            j = perm[k]
            perm[k], perm[j] = perm[j], perm[k]
            swaps += 1
    return swaps & 1


def perceive(g):
    """Run every perception step on ``g`` and attach the result; returns ``g``."""
    rings, counts, same_ring = perceive_rings(g)
    atom_flags, bond_flags = perceive_aromaticity(g, rings)
    for i, flag in enumerate(atom_flags):
        if flag and not g.atoms[i].aromatic:
            g.atoms[i] = replace(g.atoms[i], aromatic=True)
    for k, flag in enumerate(bond_flags):
        bond = g.bonds[k]
        if flag and bond.order is not BondType.AROMATIC:
            g.bonds[k] = Bond(bond.begin, bond.end, BondType.AROMATIC, bond.kekule)
    hyb = perceive_hybridization(g)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        charges, unsupported = compute_partial_charges(g, hyb)
    notes = [str(w.message) for w in caught]
    donor, acceptor = perceive_hbond(g)
    g.perceived = PerceptionResult(
        ring_membership=counts,
        same_ring=same_ring,
        graph_distance=graph_distances(g),
        rings=rings,
        hybridization=hyb,
        partial_charge=charges,
        hbond_donor=donor,
        hbond_acceptor=acceptor,
        chirality_rs=assign_chirality_rs(g),
        warnings=notes,
    )
    return g


def from_smiles(text):
    """Parse and perceive in one step."""
    return perceive(parse_smiles(text))
