"""Weave operations, the weave module, and order-invariant molecule reductions.

Layers are kept packed rather than padded. An atom layer holds one row per
real atom of the batch. A pair layer holds one row per unordered pair
``a < b`` inside the distance cutoff. Both orientations of a pair share that
row, so symmetry holds bit for bit by construction. Padded
``[B, M, M, depth]`` views are produced only for dumps and tests.

Every learned transform is ``dense -> batch norm -> ReLU`` unless noted.
Dense layers that feed batch norm carry no bias because the normalization
shift makes it redundant.
"""
from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import asdict, dataclass

import numpy as np

from .featurizer import GraphBatch
from .tensor import BatchNormState, Parameter, Tensor, ops

REDUCTIONS = ("sum", "rms", "gaussian_histogram")
_REDUCTION_ALIASES = {"histogram": "gaussian_histogram", "gaussian": "gaussian_histogram"}


@dataclass(frozen=True)
class GaussianBins:
    """Means and variances of the fuzzy histogram membership functions."""

    means: tuple
    variances: tuple

    def __post_init__(self):
        if len(self.means) != len(self.variances):
            raise ValueError("bin means and variances differ in length")
        if any(v <= 0 for v in self.variances):
            raise ValueError("bin variances must be positive")

    def __len__(self):
        return len(self.means)


GAUSSIAN_BINS = GaussianBins(
    means=(-1.645, -1.080, -0.739, -0.468, -0.228, 0.0, 0.228, 0.468, 0.739, 1.080, 1.645),
    variances=(0.080, 0.029, 0.018, 0.014, 0.013, 0.013, 0.013, 0.014, 0.018, 0.029, 0.080),
)


def normalize_reduction(name):
    name = _REDUCTION_ALIASES.get(name, name)
    if name not in REDUCTIONS:
        raise ValueError("unknown reduction %r; expected one of %s" % (name, REDUCTIONS))
    return name


@dataclass
class WeaveConfig:
    """Shape of the weave stack.

    Parameters
    ----------
    num_modules : int
        Number of stacked weave modules.
    max_pair_distance : int or float
        Pairs farther apart than this many bonds are dropped; ``inf`` keeps all.
    atom_atom_0, atom_pair_0, pair_pair_0, pair_atom_0 : int
        Widths of the four first-stage operations.
    atom_atom_1, pair_pair_1 : int
        Widths of the combining layers that produce the next atom and pair layers.
    final_atom_depth : int
        Width of the last, linear atom convolution.
    reduction : {"sum", "rms", "gaussian_histogram"}
    skip_last_pair : bool
        Skip the pair branch of the final module, whose output nothing reads.
    """

    num_modules: int = 1
    max_pair_distance: float = 2
    atom_atom_0: int = 50
    atom_pair_0: int = 50
    pair_pair_0: int = 50
    pair_atom_0: int = 50
    atom_atom_1: int = 50
    pair_pair_1: int = 50
    final_atom_depth: int = 128
    reduction: str = "gaussian_histogram"
    skip_last_pair: bool = True

    def __post_init__(self):
        if self.max_pair_distance is None or self.max_pair_distance == "inf":
            self.max_pair_distance = math.inf
        self.reduction = normalize_reduction(self.reduction)
        if int(self.num_modules) < 1:
            raise ValueError("num_modules must be >= 1")
        for key in ("atom_atom_0", "atom_pair_0", "pair_pair_0", "pair_atom_0",
                    "atom_atom_1", "pair_pair_1", "final_atom_depth"):
            if int(getattr(self, key)) < 1:
                raise ValueError("%s must be >= 1" % key)
        if not (self.max_pair_distance >= 1):
            raise ValueError("max_pair_distance must be >= 1 or inf")

    @property
    def molecule_width(self):
        """Length of the molecule-level feature vector."""
        if self.reduction == "gaussian_histogram":
            return self.final_atom_depth * len(GAUSSIAN_BINS)
        return self.final_atom_depth

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["max_pair_distance"]):
            d["max_pair_distance"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_notation(cls, code, **overrides):
        """Config from ``"W<modules>N<distance>"``, e.g. ``"W2N2"`` or ``"W1Ninf"``."""
        m = re.fullmatch(r"[Ww](\d+)[Nn](\d+|inf|\u221e)", code.strip())
        if m is None:
            raise ValueError("architecture must look like W2N2 or W1Ninf, got %r" % (code,))
        distance = math.inf if m.group(2) in ("inf", "\u221e") else int(m.group(2))
        return cls(num_modules=int(m.group(1)), max_pair_distance=distance, **overrides)

    @property
    def notation(self):
        n = "inf" if math.isinf(self.max_pair_distance) else "%g" % self.max_pair_distance
        return "W%dN%s" % (self.num_modules, n)


class ParameterSet:
    """Named parameters and batch-norm states for one network.

    Parameters are created on first request in a fixed order so a seed
    fully determines the initial values.
    """

    def __init__(self, rng, init="he_uniform"):
        self.rng = rng
        self.init = init
        self.params = {}
        self.bn = {}
        self.cast = None

    def _init_weight(self, fan_in, fan_out):
        if self.init == "he_uniform":
            limit = math.sqrt(6.0 / fan_in)
            return self.rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if self.init == "glorot_uniform":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return self.rng.uniform(-limit, limit, size=(fan_in, fan_out))
        raise ValueError("unknown init scheme %r" % self.init)

    def add(self, name, value):
        if name in self.params:
            raise KeyError("parameter %r already exists" % name)
        self.params[name] = Parameter(np.asarray(value, dtype=np.float64), name=name)
        return self.params[name]

    def dense(self, name, fan_in, fan_out, bias=True, weight=None, bias_value=0.0):
        self.add(name + "/W", self._init_weight(fan_in, fan_out) if weight is None else weight)
        if bias:
            self.add(name + "/b", np.full(fan_out, bias_value))

    def batch_norm(self, name, width):
        self.add(name + "/gamma", np.ones(width))
        self.add(name + "/beta", np.zeros(width))
        self.bn[name] = BatchNormState.create(width)

    def conv(self, name, fan_in, fan_out):
        """Dense without bias followed by batch norm."""
        self.dense(name, fan_in, fan_out, bias=False)
        self.batch_norm(name + "/bn", fan_out)

    def get(self, name):
        p = self.params.get(name)
        if p is None:
            return None
        if self.cast is not None and p.dtype != self.cast:
            return Tensor(p.data.astype(self.cast))
        return p

    def ordered(self):
        return [self.params[k] for k in self.params]

    def count(self):
        return int(sum(p.size for p in self.params.values()))

    def state_arrays(self):
        out = {}
        for name, p in self.params.items():
            out["param/" + name] = p.data
            out["accum/" + name] = p.accumulator
        for name, st in self.bn.items():
            out["bn/%s/running_mean" % name] = st.running_mean
            out["bn/%s/running_var" % name] = st.running_var
            out["bn/%s/skipped" % name] = np.asarray([st.skipped_batches], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays):
        for name, p in self.params.items():
            if "param/" + name not in arrays:
                raise KeyError("checkpoint lacks parameter %r" % name)
            value = np.asarray(arrays["param/" + name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError("shape mismatch for %r: %s vs %s" % (name, value.shape, p.shape))
            p.data = value.copy()
            p.accumulator = np.asarray(arrays.get("accum/" + name, np.zeros_like(value)),
                                       dtype=np.float64).copy()
        for name, st in self.bn.items():
            st.running_mean = np.asarray(arrays["bn/%s/running_mean" % name], dtype=np.float64).copy()
            st.running_var = np.asarray(arrays["bn/%s/running_var" % name], dtype=np.float64).copy()
            st.skipped_batches = int(np.asarray(arrays["bn/%s/skipped" % name]).reshape(-1)[0])

    def skipped_bn_batches(self):
        return sum(st.skipped_batches for st in self.bn.values())


def apply_conv(ps, name, x, training, activation=True):
    """``relu(bn(x @ W))`` with the named parameters; no ReLU when ``activation`` is False."""
    y = ops.dense(x, ps.get(name + "/W"), ps.get(name + "/b"))
    y = ops.batch_norm(y, ps.get(name + "/bn/gamma"), ps.get(name + "/bn/beta"),
                       ps.bn[name + "/bn"], training)
    return ops.relu(y) if activation else y


@dataclass
class PackedPairs:
    """Unordered pair topology of a packed batch: rows ``(first[k], second[k])``, first < second."""

    first: np.ndarray
    second: np.ndarray
    n_atoms: int

    @classmethod
    def from_batch(cls, batch: GraphBatch):
        keep = batch.pair_atoms[:, 0] < batch.pair_atoms[:, 1]
        return cls(batch.pair_atoms[keep, 0], batch.pair_atoms[keep, 1], batch.n_atoms), keep

    def __len__(self):
        return len(self.first)


def atom_to_atom(ps, name, A, training):
    """Same per-atom transform applied to every atom row."""
    return apply_conv(ps, name, A, training)


def pair_to_pair(ps, name, P, training):
    """Same per-pair transform applied to every pair row."""
    return apply_conv(ps, name, P, training)


def pair_to_atom(ps, name, P, pairs: PackedPairs, training):
    """For each atom, sum the transformed rows of every pair it belongs to.

    Each unordered pair feeds both of its atoms. Atoms without pairs get zeros.
    """
    f = apply_conv(ps, name, P, training)
    both = ops.concat([f, f], axis=0)
    ids = np.concatenate([pairs.first, pairs.second])
    return ops.segment_sum(both, ids, pairs.n_atoms)


def atom_to_pair(ps, name, A, pairs: PackedPairs, training):
    """``f(A_a ++ A_b) + f(A_b ++ A_a)`` for every pair with one shared ``f``."""
    a = ops.gather(A, pairs.first)
    b = ops.gather(A, pairs.second)
    stacked = ops.concat([ops.concat([a, b], axis=1), ops.concat([b, a], axis=1)], axis=0)
    y = apply_conv(ps, name, stacked, training)
    n = len(pairs)
    forward_rows = ops.gather(y, np.arange(n))
    backward_rows = ops.gather(y, np.arange(n, 2 * n))
    return ops.add(forward_rows, backward_rows)


def build_weave_parameters(ps, cfg: WeaveConfig, atom_depth, pair_depth, prefix="weave"):
    """Create parameters for the whole stack and the final atom convolution."""
    a_in, p_in = atom_depth, pair_depth
    for k in range(cfg.num_modules):
        base = "%s/module_%d" % (prefix, k)
        last = k == cfg.num_modules - 1
        ps.conv(base + "/atom_atom_0", a_in, cfg.atom_atom_0)
        ps.conv(base + "/pair_atom_0", p_in, cfg.pair_atom_0)
        ps.conv(base + "/atom_atom_1", cfg.atom_atom_0 + cfg.pair_atom_0, cfg.atom_atom_1)
        if not (last and cfg.skip_last_pair):
            ps.conv(base + "/pair_pair_0", p_in, cfg.pair_pair_0)
            ps.conv(base + "/atom_pair_0", 2 * a_in, cfg.atom_pair_0)
            ps.conv(base + "/pair_pair_1", cfg.pair_pair_0 + cfg.atom_pair_0, cfg.pair_pair_1)
        a_in, p_in = cfg.atom_atom_1, cfg.pair_pair_1
    ps.conv(prefix + "/final_atom", a_in, cfg.final_atom_depth)


def weave_module(ps, base, A, P, pairs, training, compute_pairs=True):
    """One weave module.

    New atoms come from ``[atom_to_atom(A), pair_to_atom(P)]`` and new pairs
    from ``[pair_to_pair(P), atom_to_pair(A)]``, each concatenation followed by
    a combining transform. Returns ``(A', P')`` with ``P' = None`` when the
    pair branch is skipped.
    """
    a_self = atom_to_atom(ps, base + "/atom_atom_0", A, training)
    a_cross = pair_to_atom(ps, base + "/pair_atom_0", P, pairs, training)
    A_next = apply_conv(ps, base + "/atom_atom_1", ops.concat([a_self, a_cross], axis=1), training)
    if not compute_pairs:
        return A_next, None
    p_self = pair_to_pair(ps, base + "/pair_pair_0", P, training)
    p_cross = atom_to_pair(ps, base + "/atom_pair_0", A, pairs, training)
    P_next = apply_conv(ps, base + "/pair_pair_1", ops.concat([p_self, p_cross], axis=1), training)
    return A_next, P_next


def final_atom_convolution(ps, A, training, prefix="weave"):
    """Linear widening of the atom layer: dense then batch norm, no ReLU."""
    return apply_conv(ps, prefix + "/final_atom", A, training, activation=False)


def reduce_sum(A, atom_molecule, n_molecules):
    return ops.segment_sum(A, atom_molecule, n_molecules)


def reduce_rms(A, atom_molecule, n_molecules):
    return ops.segment_rms(A, atom_molecule, n_molecules)


def reduce_gaussian_histogram(A, atom_molecule, n_molecules, bins: GaussianBins = GAUSSIAN_BINS):
    """Per-molecule sums of normalized bin memberships, feature-major layout."""
    return ops.gaussian_histogram(A, atom_molecule, n_molecules, bins.means, bins.variances)


def reduce_atoms(A, atom_molecule, n_molecules, reduction):
    reduction = normalize_reduction(reduction)
    if reduction == "sum":
        return reduce_sum(A, atom_molecule, n_molecules)
    if reduction == "rms":
        return reduce_rms(A, atom_molecule, n_molecules)
    return reduce_gaussian_histogram(A, atom_molecule, n_molecules)


def weave_forward(ps, cfg: WeaveConfig, batch: GraphBatch, training, trace=None, prefix="weave"):
    """Run the stack and the final convolution; returns molecule features.

    When ``trace`` is a list, ``(atom_layer, pair_layer)`` arrays are appended
    for the input and after every module (pair layer in unordered-row form).
    """
    pairs, keep = PackedPairs.from_batch(batch)
    A = Tensor(batch.atom_features)
    P = Tensor(batch.pair_features[keep])
    if trace is not None:
        trace.append((A.data.copy(), P.data.copy()))
    for k in range(cfg.num_modules):
        last = k == cfg.num_modules - 1
        compute_pairs = not (last and cfg.skip_last_pair)
        A, P_next = weave_module(ps, "%s/module_%d" % (prefix, k), A, P, pairs, training,
                                 compute_pairs=compute_pairs)
        P = P_next if P_next is not None else P
        if trace is not None:
            trace.append((A.data.copy(), None if P_next is None else P_next.data.copy()))
    A = final_atom_convolution(ps, A, training, prefix=prefix)
    if trace is not None:
        trace.append((A.data.copy(), None))
    return reduce_atoms(A, batch.atom_molecule, batch.n_molecules, cfg.reduction)


def unpack_pairs(values, pairs: PackedPairs, offset=0, n=None):
    """Dense symmetric ``[n, n, depth]`` matrix from unordered pair rows of one molecule."""
    n = pairs.n_atoms if n is None else n
    out = np.zeros((n, n, values.shape[1]))
    a = pairs.first - offset
    b = pairs.second - offset
    sel = (a >= 0) & (a < n) & (b >= 0) & (b < n)
    out[a[sel], b[sel]] = values[sel]
    out[b[sel], a[sel]] = values[sel]
    return out


def write_feature_evolution(trace, batch: GraphBatch, out_dir, molecule=0):
    """Write per-stage atom and pair CSV matrices for one molecule of a traced batch.

    Files are ``atoms_<stage>.csv`` (one row per atom) and ``pairs_<stage>.csv``
    (one row per unordered pair ``a < b``). Stage 0 is the input layer.
    """
    os.makedirs(out_dir, exist_ok=True)
    pairs, _ = PackedPairs.from_batch(batch)
    atom_rows = np.nonzero(batch.atom_molecule == molecule)[0]
    lo, hi = atom_rows.min(), atom_rows.max() + 1
    pair_rows = np.nonzero((pairs.first >= lo) & (pairs.first < hi))[0]
    written = []
    for stage, (atoms, pair_values) in enumerate(trace):
        path = os.path.join(out_dir, "atoms_%d.csv" % stage)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["atom"] + ["f%d" % j for j in range(atoms.shape[1])])
            for i in atom_rows:
                w.writerow([int(i - lo)] + [repr(float(v)) for v in atoms[i]])
        written.append(path)
        if pair_values is None:
            continue
        path = os.path.join(out_dir, "pairs_%d.csv" % stage)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["atom_a", "atom_b"] + ["f%d" % j for j in range(pair_values.shape[1])])
            for k in pair_rows:
                w.writerow([int(pairs.first[k] - lo), int(pairs.second[k] - lo)]
                           + [repr(float(v)) for v in pair_values[k]])
        written.append(path)
    return written
