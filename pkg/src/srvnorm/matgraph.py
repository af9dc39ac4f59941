"""Coefficient matrices and the graph of their off-diagonal support."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels import UNREACHABLE


class BudgetExceededError(RuntimeError):
    pass


class NotSymmetricError(ValueError):
    pass


def Log(x):
    """ln(x v e): the logarithm clamped below at 1."""
    return math.log(max(float(x), math.e))


@dataclass(frozen=True)
class CoeffMatrix:
    entries: np.ndarray
    symmetric: bool = field(init=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"coefficient matrix must be square and non-empty, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficient matrix has non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        scale = float(np.max(np.abs(a))) if a.size else 0.0
        object.__setattr__(self, "symmetric", bool(np.max(np.abs(a - a.T)) <= 1e-12 * scale))

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def a(self):
        return self.entries

    def abs(self):
        return CoeffMatrix(np.abs(self.entries))


def as_coeff(A):
    return A if isinstance(A, CoeffMatrix) else CoeffMatrix(A)


@dataclass(frozen=True)
class GraphView:
    """Undirected simple graph in CSR form (sorted neighbour lists)."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    zero_threshold: float = 0.0

    @classmethod
    def from_edges(cls, n, edges, zero_threshold=0.0):
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if i != j:
                adj[i, j] = adj[j, i] = True
        return cls.from_adjacency(adj, zero_threshold)

    @classmethod
    def from_adjacency(cls, adj, zero_threshold=0.0):
        adj = np.array(adj, dtype=bool)
        np.fill_diagonal(adj, False)
        n = adj.shape[0]
        rows, cols = np.nonzero(adj)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols.astype(np.int64), zero_threshold)

    @property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def max_degree(self):
        return int(self.degrees.max()) if self.n else 0

    d_A = max_degree

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def adjacency(self):
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i in range(self.n):
            adj[i, self.neighbors(i)] = True
        return adj

    def edges(self):
        return [(i, int(j)) for i in range(self.n) for j in self.neighbors(i) if i < j]


def build_graph(A, zero_threshold=0.0, require_symmetric=True):
    """Edge (i, j) iff i != j and |a_ij| > zero_threshold."""
    if zero_threshold < 0:
        raise ValueError("zero_threshold must be >= 0")
    A = as_coeff(A)
    if require_symmetric and not A.symmetric:
        raise NotSymmetricError("graph semantics need a symmetric coefficient matrix")
    adj = np.abs(A.a) > zero_threshold
    if not require_symmetric:
        adj = adj | adj.T
    return GraphView.from_adjacency(adj, zero_threshold)


def distances(G):
    """All-pairs hop distances; UNREACHABLE between components."""
    return kernels.bfs_distances(G.indptr, G.indices, G.n)


def power_graph(G, r):
    if r < 1:
        raise ValueError("r must be >= 1")
    if r == 1:
        return G
    dist = distances(G)
    return GraphView.from_adjacency(dist <= r, G.zero_threshold)


def neighborhood(G, I, order=1):
    """Neighbours of I (order 1) or vertices sharing a neighbour with I (order 2)."""
    I = sorted(set(int(i) for i in I))
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    first = set()
    for i in I:
        first.update(int(j) for j in G.neighbors(i))
    if order == 1:
        out = first
    else:
        out = set()
        for j in first:
            out.update(int(k) for k in G.neighbors(j))
    d = G.max_degree
    assert len(out) <= d**order * len(I)
    return out


def subset_count_bound(G, k):
    return G.n * (4 * G.max_degree) ** (k - 1) if k >= 1 else 0


def enumerate_connected_subsets(G, k, budget=10**7):
    """All connected vertex sets of size k, one row each, in lexicographic row order."""
    if k < 1 or k > G.n:
        return np.zeros((0, max(k, 0)), dtype=np.int64)
    bound = subset_count_bound(G, k)
    if bound > budget:
        raise BudgetExceededError(f"count bound {bound} exceeds budget {budget}")
    subs = kernels.connected_subsets(G.indptr, G.indices, G.n, k, min(max(bound, 1), 1 << 62))
    order = np.lexsort(subs.T[::-1])
    subs = subs[order]
    assert subs.shape[0] <= bound
    return subs


def symmetrize(A):
    """[[0, A], [A^T, 0]]."""
    a = as_coeff(A).a
    n = a.shape[0]
    out = np.zeros((2 * n, 2 * n))
    out[:n, n:] = a
    out[n:, :n] = a.T
    return CoeffMatrix(out)


def row_norms(a):
    return np.sqrt(np.sum(np.asarray(a, dtype=float) ** 2, axis=1))


def col_norms(a):
    return row_norms(np.asarray(a).T)


def m_value(a):
    a = np.asarray(a, dtype=float)
    return float(row_norms(a).max() + col_norms(a).max())


def truncation_split(A, M=None, r=1.0):
    """Split A into entries with |a_ij| <= M / Log^r(n) and the rest.

    With M = M(A) the large part has max degree at most Log^(2r) n.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    A = as_coeff(A)
    a = A.a
    from_m = M is None
    if from_m:
        M = m_value(a)
    thr = M / Log(A.n) ** r
    big = np.abs(a) > thr
    low = np.where(big, 0.0, a)
    hat = np.where(big, a, 0.0)
    if from_m:
        # row l2 <= M forces fewer than Log^(2r) n entries above the threshold per row
        G = build_graph(np.abs(hat) + np.abs(hat).T, require_symmetric=False)
        assert G.max_degree <= Log(A.n) ** (2 * r) * (1 + 1e-12)
    return CoeffMatrix(low), CoeffMatrix(hat), thr


# generators -----------------------------------------------------------------

def gen_identity(n):
    return np.eye(n)


def gen_ones(n):
    return np.ones((n, n))


def gen_band(n, width=1, diag=True):
    i, j = np.indices((n, n))
    a = (np.abs(i - j) <= width).astype(float)
    if not diag:
        np.fill_diagonal(a, 0.0)
    return a


def gen_sparse_bernoulli(n, prob=None, seed=0):
    """Symmetric 0/1 pattern with P(a_ij = 1) = prob (default 3/n), diagonal included."""
    if prob is None:
        prob = min(1.0, 3.0 / n)
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < prob)
    a = (upper | upper.T).astype(float)
    return a


def gen_circulant(n, width=1):
    """Symmetric circulant 0/1 pattern: |i - j| mod n within ``width`` of 0."""
    i, j = np.indices((n, n))
    d = np.minimum((i - j) % n, (j - i) % n)
    return (d <= width).astype(float)


GENERATORS = {
    "identity": gen_identity,
    "ones": gen_ones,
    "band": gen_band,
    "sparse_bernoulli": gen_sparse_bernoulli,
    "circulant": gen_circulant,
}

ENSEMBLES = ("identity", "ones", "band", "sparse_bernoulli", "circulant")


def generate(spec):
    """Matrix from a generator spec such as {"gen": "band", "n": 16, "width": 2}."""
    spec = dict(spec)
    name = spec.pop("gen")
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    n = int(spec.pop("n"))
    if n < 1:
        raise ValueError("n must be >= 1")
    return CoeffMatrix(GENERATORS[name](n, **spec))


def load_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: rows have differing lengths {sorted(widths)}")
    return CoeffMatrix(np.array(rows))


def load_matrix(path):
    if str(path).endswith(".json"):
        with open(path) as fh:
            obj = json.load(fh)
        if isinstance(obj, dict):
            return generate(obj)
        return CoeffMatrix(np.array(obj, dtype=float))
    return load_csv(path)
