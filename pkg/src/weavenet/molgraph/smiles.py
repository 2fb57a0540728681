"""SMILES reading and writing for the subset the featurizer needs.

Supported: organic-subset and bracket atoms (isotope, ``@``/``@@``, H count,
charge, atom class), bonds ``- = # : / \\``, branches, ring closures
(``0-9`` and ``%nn``), lowercase aromatic atoms and ``.`` separated
components. Isotopes, atom classes and bond directions are parsed and dropped.
"""
from __future__ import annotations

import random
import sys

import networkx as nx

from .graph import ATOMIC_NUMBERS, Atom, Bond, BondType, MolecularGraph


class SmilesError(ValueError):
    """Raised for malformed or chemically invalid SMILES."""

    def __init__(self, message, position=None, smiles=None):
        self.message = message
        self.position = position
        self.smiles = smiles
        where = "" if position is None else " at position %d" % position
        super().__init__(message + where)


class KekulizationError(SmilesError):
    pass


ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_SUBSET = ("b", "c", "n", "o", "p", "s")
BRACKET_AROMATIC = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "F": (1,),
    "Al": (3,), "Si": (4,), "P": (3, 5), "S": (2, 4, 6), "Cl": (1,),
    "Br": (1,), "I": (1,),
}
_ISOELECTRONIC_ROWS = (("B", "C", "N", "O", "F"), ("Al", "Si", "P", "S", "Cl"))

_BOND_SYMBOLS = {
    "-": BondType.SINGLE, "=": BondType.DOUBLE, "#": BondType.TRIPLE,
    ":": BondType.AROMATIC, "/": BondType.SINGLE, "\\": BondType.SINGLE,
}
_KEKULE_ORDER = {BondType.SINGLE: 1, BondType.DOUBLE: 2, BondType.TRIPLE: 3}


def allowed_valences(element, charge=0):
    """Permitted total valences for ``element`` carrying ``charge``.

    Charged second/third-row atoms take the valences of their isoelectronic
    neutral neighbor (N+ behaves like C, O- like F). ``None`` means the
    element is not valence-checked.
    """
    if charge == 0:
        return VALENCES.get(element)
    for row in _ISOELECTRONIC_ROWS:
        if element in row:
            idx = row.index(element) - charge
            if 0 <= idx < len(row):
                return VALENCES[row[idx]]
            return None
    return None


class _Builder:
    def __init__(self, text):
        self.text = text
        self.atoms = []      # dicts
        self.bonds = {}      # (i, j) -> BondType or None (implicit)
        self.refs = []       # per-atom neighbor order for chirality

    def error(self, message, pos):
        raise SmilesError(message, pos, self.text)

    def add_atom(self, spec):
        self.atoms.append(spec)
        self.refs.append([])
        return len(self.atoms) - 1

    def add_bond(self, i, j, symbol, pos):
        if i == j:
            self.error("ring closure bonds an atom to itself", pos)
        key = (min(i, j), max(i, j))
        if key in self.bonds:
            self.error("duplicate bond between atoms %d and %d" % key, pos)
        self.bonds[key] = symbol


def _parse_bracket(text, pos):
    """Parse a bracket atom starting after '['; returns (spec, new_pos)."""
    end = text.find("]", pos)
    if end < 0:
        raise SmilesError("unclosed bracket atom", pos - 1, text)
    body = text[pos:end]
    i = 0
    while i < len(body) and body[i].isdigit():
        i += 1
    rest = body[i:]
    symbol = None
    aromatic = False
    for cand in BRACKET_AROMATIC:
        if rest.startswith(cand):
            symbol, aromatic = cand[0].upper() + cand[1:], True
            break
    if symbol is None:
        if len(rest) >= 2 and rest[:2] in ATOMIC_NUMBERS:
            symbol = rest[:2]
        elif rest[:1] in ATOMIC_NUMBERS:
            symbol = rest[:1]
        else:
            raise SmilesError("unknown element in bracket atom '[%s]'" % body, pos, text)
    i += len(symbol)
    chirality = None
    if body[i:i + 2] == "@@":
        chirality, i = "@@", i + 2
    elif body[i:i + 1] == "@":
        chirality, i = "@", i + 1
        if body[i:i + 1].isalpha() and body[i:i + 1] != "H":
            raise SmilesError("unsupported chirality class in '[%s]'" % body, pos + i, text)
    hcount = 0
    if body[i:i + 1] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        hcount = int(body[i:j]) if j > i else 1
        i = j
    charge = 0
    if body[i:i + 1] in ("+", "-"):
        sign = 1 if body[i] == "+" else -1
        j = i + 1
        while j < len(body) and body[j] == body[i]:
            j += 1
        if j - i > 1:
            charge = sign * (j - i)
            i = j
        else:
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * (int(body[j:k]) if k > j else 1)
            i = k
    if body[i:i + 1] == ":":
        j = i + 1
        while j < len(body) and body[j].isdigit():
            j += 1
        if j == i + 1:
            raise SmilesError("empty atom class in '[%s]'" % body, pos + i, text)
        i = j
    if i != len(body):
        raise SmilesError("unexpected character in bracket atom '[%s]'" % body, pos + i, text)
    spec = dict(element=symbol, aromatic=aromatic, charge=charge, hcount=hcount,
                chirality=chirality, bracket=True)
    return spec, end + 1


def _tokenize_into(builder):
    text = builder.text
    pos = 0
    prev = None
    pending = None
    pending_pos = None
    branches = []
    rings = {}
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch.isspace():
            break
        if ch == "(":
            if prev is None:
                builder.error("branch opened before any atom", pos)
            if pending is not None:
                builder.error("bond symbol before branch", pos)
            branches.append(prev)
            pos += 1
            continue
        if ch == ")":
            if not branches:
                builder.error("unbalanced ')'", pos)
            if pending is not None:
                builder.error("bond symbol without a following atom", pending_pos)
            prev = branches.pop()
            pos += 1
            continue
        if ch in _BOND_SYMBOLS or ch == "$":
            if ch == "$":
                builder.error("quadruple bonds are not supported", pos)
            if pending is not None:
                builder.error("consecutive bond symbols", pos)
            if prev is None:
                builder.error("bond symbol before any atom", pos)
            pending, pending_pos = ch, pos
            pos += 1
            continue
        if ch == ".":
            if pending is not None:
                builder.error("bond symbol before '.'", pos)
            if branches:
                builder.error("'.' inside a branch", pos)
            prev = None
            pos += 1
            continue
        if ch.isdigit() or ch == "%":
            if prev is None:
                builder.error("ring closure before any atom", pos)
            if ch == "%":
                digits = text[pos + 1:pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    builder.error("malformed '%nn' ring closure", pos)
                number, width = int(digits), 3
            else:
                number, width = int(ch), 1
            if number in rings:
                other, symbol, slot, opened_at = rings.pop(number)
                if symbol is not None and pending is not None and symbol != pending:
                    builder.error("conflicting ring closure bond symbols", pos)
                builder.add_bond(other, prev, symbol if pending is None else pending, pos)
                builder.refs[other][slot] = prev
                builder.refs[prev].append(other)
            else:
                rings[number] = (prev, pending, len(builder.refs[prev]), pos)
                builder.refs[prev].append(None)
            pending = None
            pos += width
            continue
        if ch == "[":
            spec, new_pos = _parse_bracket(text, pos + 1)
        else:
            symbol = None
            for cand in ORGANIC_SUBSET:
                if text.startswith(cand, pos):
                    symbol = cand
                    break
            aromatic = False
            if symbol is None and ch in AROMATIC_SUBSET:
                symbol, aromatic = ch.upper(), True
            if symbol is None:
                builder.error("unexpected character %r" % ch, pos)
            spec = dict(element=symbol, aromatic=aromatic, charge=0, hcount=None,
                        chirality=None, bracket=False)
            new_pos = pos + (len(symbol) if not aromatic else 1)
        spec["pos"] = pos
        idx = builder.add_atom(spec)
        if prev is not None:
            builder.add_bond(prev, idx, pending, pos)
            builder.refs[prev].append(idx)
            builder.refs[idx].append(prev)
        if spec["hcount"]:
            builder.refs[idx].append(-1)
        pending = None
        prev = idx
        pos = new_pos
    if pending is not None:
        builder.error("bond symbol without a following atom", pending_pos)
    if branches:
        builder.error("unclosed branch", len(text))
    if rings:
        number, (_, _, _, opened_at) = sorted(rings.items())[0]
        builder.error("unclosed ring bond %d" % number, opened_at)
    if not builder.atoms:
        builder.error("empty SMILES", 0)


def _fold_explicit_hydrogens(builder):
    """Turn bracket [H] atoms hanging off heavy atoms into implicit counts."""
    atoms, bonds = builder.atoms, builder.bonds
    neighbors = {i: [] for i in range(len(atoms))}
    for (i, j) in bonds:
        neighbors[i].append(j)
        neighbors[j].append(i)
    drop = set()
    for i, spec in enumerate(atoms):
        if spec["element"] != "H" or spec["charge"] != 0 or spec["hcount"]:
            continue
        if len(neighbors[i]) != 1:
            continue
        heavy = neighbors[i][0]
        if atoms[heavy]["element"] == "H" or bonds[(min(i, heavy), max(i, heavy))] not in (None, "-"):
            continue
        drop.add(i)
        target = atoms[heavy]
        if not target["bracket"]:
            target["hcount_from_h"] = target.get("hcount_from_h", 0) + 1
        else:
            target["hcount"] = (target["hcount"] or 0) + 1
        builder.refs[heavy] = [-1 if r == i else r for r in builder.refs[heavy]]
    if not drop:
        return
    keep = [i for i in range(len(atoms)) if i not in drop]
    remap = {old: new for new, old in enumerate(keep)}
    builder.atoms = [atoms[i] for i in keep]
    builder.refs = [[-1 if r == -1 or r in drop else remap[r] for r in builder.refs[i]] for i in keep]
    builder.bonds = {
        (remap[i], remap[j]): sym for (i, j), sym in bonds.items()
        if i not in drop and j not in drop
    }


def _resolve_bond_types(builder):
    types = {}
    for (i, j), sym in builder.bonds.items():
        if sym is None:
            both = builder.atoms[i]["aromatic"] and builder.atoms[j]["aromatic"]
            types[(i, j)] = BondType.AROMATIC if both else BondType.SINGLE
        else:
            types[(i, j)] = _BOND_SYMBOLS[sym]
    # aromatic bonds outside rings (biphenyl-style links) are plain single bonds
    aromatic = [k for k, t in types.items() if t is BondType.AROMATIC]
    if aromatic:
        g = nx.Graph()
        g.add_nodes_from(range(len(builder.atoms)))
        g.add_edges_from(types)
        for i, j in nx.bridges(g):
            key = (min(i, j), max(i, j))
            if types[key] is BondType.AROMATIC:
                types[key] = BondType.SINGLE
    return types


def _kekulize(builder, types):
    atoms = builder.atoms
    n = len(atoms)
    base = [0] * n
    for (i, j), t in types.items():
        order = 1 if t is BondType.AROMATIC else _KEKULE_ORDER[t]
        base[i] += order
        base[j] += order
    needs = []
    for i, spec in enumerate(atoms):
        if not spec["aromatic"]:
            continue
        if not any(t is BondType.AROMATIC and i in key for key, t in types.items()):
            continue
        h = spec["hcount"] if spec["bracket"] else spec.get("hcount_from_h", 0)
        vals = allowed_valences(spec["element"], spec["charge"])
        if vals is None:
            continue
        used = base[i] + h
        fits = [v for v in vals if v >= used]
        if fits and fits[0] - used >= 1:
            needs.append(i)
    kekule = {key: (1 if t is BondType.AROMATIC else _KEKULE_ORDER[t]) for key, t in types.items()}
    if not needs:
        return kekule
    need_set = set(needs)
    g = nx.Graph()
    g.add_nodes_from(needs)
    for (i, j), t in sorted(types.items()):
        if t is BondType.AROMATIC and i in need_set and j in need_set:
            g.add_edge(i, j)
    matching = nx.max_weight_matching(g, maxcardinality=True)
    if 2 * len(matching) != len(needs):
        raise KekulizationError("cannot kekulize aromatic system", None, builder.text)
    for i, j in matching:
        kekule[(min(i, j), max(i, j))] = 2
    return kekule


def parse_smiles(text):
    """Parse ``text`` into a :class:`MolecularGraph` of heavy atoms.

    Implicit hydrogens are counted with standard valence rules and stored on
    the atoms; they never become graph nodes.
    """
    if not isinstance(text, str):
        raise SmilesError("SMILES must be a string", None, repr(text))
    builder = _Builder(text.strip())
    _tokenize_into(builder)
    _fold_explicit_hydrogens(builder)
    types = _resolve_bond_types(builder)
    kekule = _kekulize(builder, types)

    n = len(builder.atoms)
    valence = [0] * n
    for (i, j), k in kekule.items():
        valence[i] += k
        valence[j] += k
    atoms = []
    for i, spec in enumerate(builder.atoms):
        vals = allowed_valences(spec["element"], spec["charge"])
        if spec["bracket"]:
            h = spec["hcount"] or 0
            if vals is not None and valence[i] + h > max(vals):
                raise SmilesError("valence violation on %s" % spec["element"], spec["pos"], text)
        else:
            used = valence[i] + spec.get("hcount_from_h", 0)
            fits = [v for v in vals if v >= used]
            if not fits:
                raise SmilesError("valence violation on %s" % spec["element"], spec["pos"], text)
            h = fits[0] - valence[i]
        refs = None
        if spec["chirality"] is not None:
            refs = tuple(builder.refs[i])
        atoms.append(Atom(
            element=spec["element"], formal_charge=spec["charge"], aromatic=spec["aromatic"],
            implicit_h=h, chirality=spec["chirality"], chiral_refs=refs,
        ))
    bonds = [Bond(i, j, types[(i, j)], kekule[(i, j)]) for (i, j) in sorted(types)]
    return MolecularGraph(atoms, bonds, smiles=text.strip())


def _permutation_parity(src, dst):
    """Parity (0 even, 1 odd) of the permutation taking ``src`` to ``dst``."""
    pos = {v: k for k, v in enumerate(src)}
    perm = [pos[v] for v in dst]
    parity = 0
    seen = [False] * len(perm)
    for k in range(len(perm)):
        if seen[k]:
            continue
        length = 0
        j = k
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        parity ^= (length - 1) & 1
    return parity


def _default_h(g, i):
    atom = g.atoms[i]
    vals = VALENCES.get(atom.element)
    if vals is None:
        return None
    used = sum(g.bond(i, j).kekule for j in g.neighbors(i))
    fits = [v for v in vals if v >= used]
    return fits[0] - used if fits else None


def _bond_symbol(g, bond):
    a, b = g.atoms[bond.begin], g.atoms[bond.end]
    if bond.order is BondType.AROMATIC:
        return "" if a.aromatic and b.aromatic else ":"
    if bond.order is BondType.SINGLE:
        return "-" if a.aromatic and b.aromatic else ""
    return "=" if bond.order is BondType.DOUBLE else "#"


def write_smiles(g, rng=None):
    """Write ``g`` as SMILES.

    With ``rng`` (a :class:`random.Random`) the traversal root and neighbor
    order are randomized, producing alternative renderings of the same
    molecule. Chirality tags are re-derived for the written neighbor order.
    """
    n = g.num_atoms
    visited = [False] * n
    parent = [-1] * n
    children = [[] for _ in range(n)]
    closures = [[] for _ in range(n)]
    order = []

    def neighbor_order(i):
        nbrs = list(g.neighbors(i))
        if rng is not None:
            rng.shuffle(nbrs)
        else:
            nbrs.sort()
        return nbrs

    roots = list(range(n))
    if rng is not None:
        rng.shuffle(roots)
    components = []
    for root in roots:
        if visited[root]:
            continue
        components.append(root)
        visited[root] = True
        stack = [(root, iter(neighbor_order(root)))]
        order.append(root)
        while stack:
            atom, it = stack[-1]
            advanced = False
            for nb in it:
                if nb == parent[atom]:
                    continue
                if visited[nb]:
                    if nb not in closures[atom]:
                        closures[atom].append(nb)
                        closures[nb].append(atom)
                    continue
                visited[nb] = True
                parent[nb] = atom
                children[atom].append(nb)
                order.append(nb)
                stack.append((nb, iter(neighbor_order(nb))))
                advanced = True
                break
            if not advanced:
                stack.pop()

    open_digits = {}
    free = list(range(1, 100))
    pieces = []

    def emit(atom_idx):
        atom = g.atoms[atom_idx]
        ring_tokens = []
        ring_partners = []
        for other in closures[atom_idx]:
            key = (min(atom_idx, other), max(atom_idx, other))
            if key in open_digits:
                digit = open_digits.pop(key)
                free.append(digit)
                free.sort()
                sym = ""
            else:
                digit = free.pop(0)
                open_digits[key] = digit
                sym = _bond_symbol(g, g.bond(atom_idx, other))
            ring_tokens.append(sym + (str(digit) if digit < 10 else "%%%02d" % digit))
            ring_partners.append(other)
        refs = []
        if parent[atom_idx] >= 0:
            refs.append(parent[atom_idx])
        symbol = atom.element.lower() if atom.aromatic else atom.element
        need_bracket = (
            atom.aromatic or atom.formal_charge != 0 or atom.chirality is not None
            or atom.element not in VALENCES or atom.element in ("Al", "Si")
            or _default_h(g, atom_idx) != atom.implicit_h
        )
        if need_bracket and atom.implicit_h:
            refs.append(-1)
        refs.extend(ring_partners)
        refs.extend(children[atom_idx])
        if need_bracket:
            tag = ""
            if atom.chirality is not None and atom.chiral_refs is not None \
                    and sorted(atom.chiral_refs) == sorted(refs):
                flip = _permutation_parity(atom.chiral_refs, refs)
                tag = atom.chirality if not flip else ("@@" if atom.chirality == "@" else "@")
            h = "" if not atom.implicit_h else ("H" if atom.implicit_h == 1 else "H%d" % atom.implicit_h)
            q = atom.formal_charge
            charge = "" if q == 0 else ("+" if q == 1 else "-" if q == -1 else "%+d" % q)
            text = "[%s%s%s%s]" % (symbol, tag, h, charge)
        else:
            text = symbol
        pieces.append(text + "".join(ring_tokens))
        kids = children[atom_idx]
        for k, child in enumerate(kids):
            sym = _bond_symbol(g, g.bond(atom_idx, child))
            if k < len(kids) - 1:
                pieces.append("(" + sym)
                emit(child)
                pieces.append(")")
            else:
                pieces.append(sym)
                emit(child)

    if n + 100 > sys.getrecursionlimit():
        sys.setrecursionlimit(n + 100)
    for k, root in enumerate(components):
        if k:
            pieces.append(".")
        emit(root)
    return "".join(pieces)


def random_smiles(g, seed=None):
    """Random rendering of ``g``; convenience wrapper over :func:`write_smiles`."""
    return write_smiles(g, random.Random(seed))
