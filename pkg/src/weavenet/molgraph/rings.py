"""Graph distances and smallest-set-of-smallest-rings perception."""
from __future__ import annotations

from collections import deque

import numpy as np

RING_SIZES = (3, 4, 5, 6, 7, 8)


def graph_distances(g):
    """All-pairs shortest path lengths in bonds (BFS); ``inf`` if disconnected."""
    n = g.num_atoms
    dist = np.full((n, n), np.inf)
    for src in range(n):
        dist[src, src] = 0.0
        queue = deque([src])
        while queue:
            a = queue.popleft()
            d = dist[src, a] + 1.0
            for b in g.neighbors(a):
                if dist[src, b] == np.inf:
                    dist[src, b] = d
                    queue.append(b)
    return dist


def _bfs_tree(g, root):
    parent = {root: None}
    queue = deque([root])
    while queue:
        a = queue.popleft()
        for b in sorted(g.neighbors(a)):
            if b not in parent:
                parent[b] = a
                queue.append(b)
    return parent


def _path_to_root(parent, node):
    path = [node]
    while parent[node] is not None:
        node = parent[node]
        path.append(node)
    return path


def _canonical_cycle(cycle):
    """Rotate/reflect an atom cycle so it starts at its smallest index."""
    k = cycle.index(min(cycle))
    rotated = cycle[k:] + cycle[:k]
    reverse = [rotated[0]] + rotated[:0:-1]
    return tuple(min(rotated, reverse))


def sssr(g):
    """Smallest set of smallest rings as canonical atom-index tuples.

    Horton candidate cycles (shortest path to each edge from each root) are
    taken shortest first, ties broken by the sorted atom tuple, and kept when
    independent over GF(2) of the cycles already chosen. The result has
    ``|bonds| - |atoms| + |components|`` rings.
    """
    n = g.num_atoms
    target = g.num_bonds - n + g.num_components()
    if target <= 0:
        return []
    edge_bit = {}
    for k, bond in enumerate(g.bonds):
        edge_bit[(bond.begin, bond.end)] = 1 << k

    def edge_mask(cycle):
        mask = 0
        for a, b in zip(cycle, cycle[1:] + cycle[:1]):
            mask |= edge_bit[(a, b) if a < b else (b, a)]
        return mask

    candidates = {}
    for root in range(n):
        parent = _bfs_tree(g, root)
        for bond in g.bonds:
            x, y = bond.begin, bond.end
            if x not in parent or y not in parent:
                continue
            if parent[x] == y or parent[y] == x:
                continue
            px = _path_to_root(parent, x)
            py = _path_to_root(parent, y)
            if set(px) & set(py) != {root}:
                continue
            # px reversed runs root..x, py[:-1] runs y..(child of root)
            cycle = list(reversed(px)) + py[:-1]
            canon = _canonical_cycle(cycle)
            if len(canon) < 3:
                continue
            mask = edge_mask(list(canon))
            if mask not in candidates:
                candidates[mask] = canon
    ordered = sorted(candidates.items(), key=lambda kv: (len(kv[1]), tuple(sorted(kv[1])), kv[1]))

    basis = {}   # pivot bit -> reduced mask
    rings = []
    for mask, cycle in ordered:
        reduced = mask
        while reduced:
            pivot = reduced.bit_length() - 1
            if pivot in basis:
                reduced ^= basis[pivot]
            else:
                basis[pivot] = reduced
                rings.append(cycle)
                break
        if len(rings) == target:
            break
    return rings


def perceive_rings(g):
    """SSSR plus per-atom ring-size counts (3-8) and the same-ring pair flag.

    Returns ``(rings, counts, same_ring)``.
    """
    rings = sssr(g)
    n = g.num_atoms
    counts = np.zeros((n, len(RING_SIZES)), dtype=np.int64)
    same_ring = np.zeros((n, n), dtype=bool)
    for ring in rings:
        idx = np.asarray(ring)
        if 3 <= len(ring) <= 8:
            counts[idx, len(ring) - 3] += 1
        same_ring[np.ix_(idx, idx)] = True
    np.fill_diagonal(same_ring, False)
    return rings, counts, same_ring
