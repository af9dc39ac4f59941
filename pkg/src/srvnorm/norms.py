"""Spectral norms, Monte Carlo estimators and exhaustive oracles for A o X."""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .dist import DistSpec, moment_p, sample
from .matgraph import BudgetExceededError, CoeffMatrix, Log, as_coeff

_LOG_FMAX = math.log(np.finfo(float).max)


# ensembles ------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """Coefficient matrix plus the law of every entry.

    ``laws`` lists the distinct entry laws and ``labels[i, j]`` indexes into it;
    a uniform ensemble has a single law and all-zero labels.
    """

    A: CoeffMatrix
    laws: tuple
    labels: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "A", as_coeff(self.A))
        laws = (self.laws,) if isinstance(self.laws, DistSpec) else tuple(self.laws)
        object.__setattr__(self, "laws", laws)
        n = self.A.n
        lab = np.zeros((n, n), dtype=np.int64) if self.labels is None else np.asarray(self.labels, dtype=np.int64)
        if lab.shape != (n, n):
            raise ValueError(f"label grid shape {lab.shape} does not match n={n}")
        if lab.min() < 0 or lab.max() >= len(laws):
            raise ValueError("label out of range")
        lab = lab.copy()
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def uniform(cls, A, law):
        return cls(as_coeff(A), (law,))

    @classmethod
    def from_grid(cls, A, grid):
        """Build from an n x n nested list of DistSpec."""
        laws, labels = [], []
        index = {}
        for row in grid:
            lab_row = []
            for d in row:
                if d not in index:
                    index[d] = len(laws)
                    laws.append(d)
                lab_row.append(index[d])
            labels.append(lab_row)
        return cls(as_coeff(A), tuple(laws), np.array(labels))

    @property
    def n(self):
        return self.A.n

    @property
    def is_uniform(self):
        return len(self.laws) == 1

    def law(self, i, j):
        return self.laws[self.labels[i, j]]

    def with_matrix(self, a):
        return EnsembleSpec(as_coeff(a), self.laws, self.labels)

    def submatrix(self, keep):
        keep = np.asarray(keep, dtype=np.int64)
        return EnsembleSpec(CoeffMatrix(self.A.a[np.ix_(keep, keep)]), self.laws, self.labels[np.ix_(keep, keep)])

    def normalized(self, target):
        from .dist import normalize

        return EnsembleSpec(self.A, tuple(normalize(d, target) for d in self.laws), self.labels)

    def moment_grid(self, p):
        """Matrix of ||X_ij||_p."""
        vals = np.array([moment_p(d, p) for d in self.laws])
        return vals[self.labels]

    def describe(self):
        if self.is_uniform:
            return self.laws[0].to_dict()
        return {"laws": [d.to_dict() for d in self.laws], "labels": self.labels.tolist()}


def sample_entries(grid, rng, size=()):
    """Draws X with shape size + (n, n), independent entries."""
    n = grid.n
    shape = tuple(size) + (n, n)
    if grid.is_uniform:
        return np.asarray(sample(grid.laws[0], rng, shape), dtype=float)
    out = np.empty(shape)
    for k, d in enumerate(grid.laws):
        mask = grid.labels == k
        cnt = int(mask.sum())
        vals = np.asarray(sample(d, rng, tuple(size) + (cnt,)), dtype=float)
        out[..., mask] = vals
    return out


def sample_hadamard(A, grid, rng, size=()):
    """(a_ij X_ij) with fresh independent draws."""
    a = as_coeff(A).a
    if a.shape != (grid.n, grid.n):
        raise ValueError("matrix and grid dimensions differ")
    return a * sample_entries(grid, rng, size)


# spectral norm -------------------------------------------------------------

def spectral_norm(M, tol=1e-10, method="auto", max_iter=10_000, seed=0):
    """Largest singular value.

    Dense SVD when max dimension <= 64 (or ``method="dense"``); otherwise power
    iteration on M^T M. The returned value is ||M v|| for a unit v, so it never
    exceeds the true norm; it is at least (1 - tol) times the converged estimate.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    if method == "dense" or (method == "auto" and max(M.shape) <= 64):
        return float(np.linalg.norm(M, 2))
    if not np.any(M):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    prev = 0.0
    streak = 0
    est = 0.0
    for _ in range(max_iter):
        u = M @ v
        est = float(np.linalg.norm(u))
        g = M.T @ u
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        v = g / gn
        if prev > 0 and abs(est - prev) <= tol * est:
            streak += 1
            if streak >= 3:
                break
        else:
            streak = 0
        prev = est
    else:
        if max(M.shape) <= 512:
            return float(np.linalg.norm(M, 2))
    final = float(np.linalg.norm(M @ v))
    assert final >= (1 - tol) * est - 1e-300
    return final


def batch_opnorm(Y):
    """Exact spectral norms of a stack of matrices."""
    if Y.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.norm(Y, 2, axis=(-2, -1))


# Monte Carlo estimation ----------------------------------------------------------

@dataclass
class EstimateResult:
    mean: float
    stderr: float
    n_samples: int
    seed: int
    p: float | None = None
    elapsed: float = 0.0

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def substream(seed, *key):
    """Generator for task ``key`` under root ``seed``; independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def chunk_size(n):
    return max(1, min(256, (1 << 21) // (n * n)))


def _chunks(n_samples, size):
    return [(s, min(size, n_samples - s)) for s in range(0, n_samples, size)]


# substream tags keep the different estimators on disjoint streams
_TAG_OPNORM = 1
_TAG_BILINEAR = 2
_TAG_CRN = 3
_TAG_EVAL = 4
_TAG_START = 5
_TAG_VAL = 6


def sample_opnorms(A, grid, n_samples, seed, threads=1):
    """Array of ||A o X||_op over ``n_samples`` draws, in sample order.

    Samples are grouped in fixed-size chunks; chunk c uses substream
    (seed, c), so the result is independent of ``threads``.
    """
    a = as_coeff(A).a
    size = chunk_size(a.shape[0])
    jobs = _chunks(n_samples, size)

    def run(job_idx):
        _, cnt = jobs[job_idx]
        rng = substream(seed, _TAG_OPNORM, job_idx)
        return batch_opnorm(sample_hadamard(a, grid, rng, (cnt,)))

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(jobs))))
    else:
        parts = [run(i) for i in range(len(jobs))]
    return np.concatenate(parts) if parts else np.zeros(0)


def _pairwise_sum(x):
    # fixed-shape summation tree keyed by index
    x = np.asarray(x, dtype=float)
    while x.size > 1:
        if x.size % 2:
            x = np.append(x, 0.0)
        x = x[0::2] + x[1::2]
    return float(x[0]) if x.size else 0.0


def estimate_op_mean(A, grid, n_samples, seed, threads=1, p=None):
    """Sample mean (or p-th moment ``(E||.||^p)^(1/p)``) of ||A o X||_op."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    t0 = time.perf_counter()
    norms = sample_opnorms(A, grid, n_samples, seed, threads)
    n = norms.size
    if p is None:
        mean = _pairwise_sum(norms) / n
        var = _pairwise_sum((norms - mean) ** 2) / (n - 1)
        stderr = math.sqrt(var / n)
    else:
        top = float(norms.max())
        if top == 0:
            mean, stderr = 0.0, 0.0
        else:
            z = (norms / top) ** p
            mz = _pairwise_sum(z) / n
            vz = _pairwise_sum((z - mz) ** 2) / (n - 1)
            mean = top * mz ** (1.0 / p)
            # delta method for m^(1/p)
            stderr = top * mz ** (1.0 / p - 1.0) / p * math.sqrt(vz / n)
    return EstimateResult(float(mean), float(stderr), int(n_samples), int(seed), p, time.perf_counter() - t0)


# bilinear forms -------------------------------------------------------------

def _scaled_moment(s, p, axis=0):
    """(mean |s|^p)^(1/p) computed with max-scaling."""
    s = np.abs(s)
    m = s.max(axis=axis, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    val = np.mean((s / safe) ** p, axis=axis, keepdims=True) ** (1.0 / p) * m
    return np.squeeze(val, axis=axis)


def _pattern(a):
    rows, cols = np.nonzero(a)
    return rows, cols


def sample_on_pattern(grid, rows, cols, rng, size):
    """X_ij at the listed positions, shape (size, len(rows))."""
    if grid.is_uniform:
        return np.asarray(sample(grid.laws[0], rng, (size, rows.size)), dtype=float)
    lab = grid.labels[rows, cols]
    out = np.empty((size, rows.size))
    for k, d in enumerate(grid.laws):
        mask = lab == k
        cnt = int(mask.sum())
        if cnt:
            out[:, mask] = np.asarray(sample(d, rng, (size, cnt)), dtype=float)
    return out


def _bilinear_samples(a, grid, coef_fn, n_samples, seed, tag):
    rows, cols = _pattern(a)
    vals = a[rows, cols]
    size = max(1, min(4096, (1 << 22) // max(rows.size, 1)))
    parts = []
    for c, (_, cnt) in enumerate(_chunks(n_samples, size)):
        rng = substream(seed, tag, c)
        X = sample_on_pattern(grid, rows, cols, rng, cnt)
        parts.append(X @ coef_fn(rows, cols, vals))
    return np.concatenate(parts, axis=0)


def bilinear_moment(A, grid, v, w, p, n_samples, seed):
    """Empirical ||sum_ij a_ij v_i w_j X_ij||_p over ``n_samples`` draws.

    Entries with a_ij = 0 are never sampled.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.linalg.norm(v) > 1 + 1e-12 or np.linalg.norm(w) > 1 + 1e-12:
        raise ValueError("v and w must lie in the unit ball")
    if p < 1:
        raise ValueError("p must be >= 1")
    a = as_coeff(A).a
    if not np.any(a):
        return 0.0
    s = _bilinear_samples(a, grid, lambda r, c, x: x * v[r] * w[c], n_samples, seed, _TAG_BILINEAR)
    top = float(np.max(np.abs(s))) if s.size else 0.0
    if top > 0 and p * math.log(top) > _LOG_FMAX:
        raise OverflowError(f"E|S|^p overflows: p*log(max|S|) = {p * math.log(top):.1f}")
    return float(_scaled_moment(s, p))


@dataclass
class AscentConfig:
    """Search settings for the sup over B2 x B2.

    ``batch`` samples are frozen for the ascent (common random numbers),
    ``val_samples`` fresh ones pick the best iterate of each start, and
    ``eval_samples`` further fresh ones give the reported value.
    """

    n_starts: int = 16
    max_iters: int = 100
    step0: float = 1e6
    shrink: float = 0.5
    max_backtracks: int = 20
    batch: int = 2048
    val_samples: int = 2048
    eval_samples: int = 8192
    check_every: int = 5
    tol: float = 1e-6
    n_top_entries: int = 4
    max_batch_bytes: int = 1 << 27

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class AscentResult:
    value: float
    v: np.ndarray
    w: np.ndarray
    crn_value: float
    p: float
    n_eval: int = 0

    def __iter__(self):
        return iter((self.value, self.v, self.w))


class _Frozen:
    """Frozen samples a_ij X_ij restricted to the nonzero pattern of A."""

    def __init__(self, a, grid, n_samples, seed, tag, max_bytes=None):
        self.rows, self.cols = _pattern(a)
        self.n, self.m = a.shape
        nnz = max(self.rows.size, 1)
        if max_bytes is not None:
            n_samples = int(max(64, min(n_samples, max_bytes // (8 * nnz))))
        rng = substream(seed, tag)
        self.Y = sample_on_pattern(grid, self.rows, self.cols, rng, n_samples) * a[self.rows, self.cols]
        from scipy import sparse

        k = np.arange(self.rows.size)
        ones = np.ones(self.rows.size)
        self.R = sparse.csr_matrix((ones, (self.rows, k)), shape=(self.n, self.rows.size))
        self.C = sparse.csr_matrix((ones, (self.cols, k)), shape=(self.m, self.rows.size))

    @property
    def size(self):
        return self.Y.shape[0]

    def sums(self, V, W):
        """s[b, k] = v_k^T Y_b w_k for S pairs; shape (B, S)."""
        return self.Y @ (V[:, self.rows] * W[:, self.cols]).T

    def values(self, V, W, p):
        return _scaled_moment(self.sums(V, W), p, axis=0)

    def objective(self, V, W, p):
        """Value and gradients of f = (mean |s|^p)^(1/p) for every start."""
        s = self.sums(V, W)
        m = np.abs(s).max(axis=0, keepdims=True)
        m = np.where(m > 0, m, 1.0)
        z = s / m
        az = np.abs(z)
        mean_p = np.mean(az**p, axis=0)
        f = m[0] * mean_p ** (1.0 / p)
        # df/ds_b is proportional to |s_b|^(p-1) sign(s_b); sign(0) = 0
        wgt = np.sign(z) * az ** (p - 1)
        denom = np.where(mean_p > 0, mean_p, 1.0) ** (1.0 - 1.0 / p) * s.shape[0]
        c = (wgt / denom).T @ self.Y  # (S, nnz)
        gv = (self.R @ (c * W[:, self.cols]).T).T
        gw = (self.C @ (c * V[:, self.rows]).T).T
        return f, gv, gw


def _unit_rows(X):
    nrm = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(nrm > 0, nrm, 1.0)


def _starts(a, grid, cfg, seed):
    """Singular-vector start of |a_ij| E|X_ij|, its top entries, then random."""
    n, m = a.shape
    E = np.abs(a) * grid.moment_grid(1.0)
    V, W = [], []
    if np.any(E):
        u, _, vt = np.linalg.svd(E)
        V.append(np.abs(u[:, 0]))
        W.append(np.abs(vt[0]))
        flat = np.argsort(-E, axis=None, kind="stable")[: cfg.n_top_entries]
        for idx in flat:
            i, j = divmod(int(idx), m)
            if E[i, j] > 0:
                V.append(np.eye(n)[i])
                W.append(np.eye(m)[j])
    rng = substream(seed, _TAG_START)
    while len(V) < cfg.n_starts:
        V.append(rng.standard_normal(n))
        W.append(rng.standard_normal(m))
    return _unit_rows(np.array(V[: cfg.n_starts])), _unit_rows(np.array(W[: cfg.n_starts]))


def ascend(frozen, V, W, p, cfg, validate=None):
    """Projected gradient ascent on B2 x B2 with backtracking, all starts at once.

    Steps are v <- proj(v + t grad_v), w <- proj(w + t grad_w), with t shrunk
    until the frozen-batch objective does not decrease. If ``validate`` is
    given, each start keeps the iterate with the best validation value.
    """
    S = V.shape[0]
    f, gv, gw = frozen.objective(V, W, p)
    step = np.full(S, cfg.step0)
    active = np.ones(S, dtype=bool)
    if validate is not None:
        best_val = validate(V, W)
        best_V, best_W = V.copy(), W.copy()
    for it in range(1, cfg.max_iters + 1):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        t = step[idx][:, None]
        Vn = V[idx].copy()
        Wn = W[idx].copy()
        fn = np.full(idx.size, -np.inf)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(cfg.max_backtracks):
            cand_v = _unit_rows(V[idx] + t * gv[idx])
            cand_w = _unit_rows(W[idx] + t * gw[idx])
            fc = frozen.values(cand_v, cand_w, p)
            ok = pending & (fc >= f[idx])
            Vn[ok] = cand_v[ok]
            Wn[ok] = cand_w[ok]
            fn[ok] = fc[ok]
            pending &= ~ok
            if not pending.any():
                break
            t = np.where(pending[:, None], t * cfg.shrink, t)
        moved = ~pending
        gain = np.where(moved, fn - f[idx], 0.0)
        done = ~moved | (gain <= cfg.tol * np.maximum(f[idx], 1e-300))
        upd = idx[moved]
        V[upd] = Vn[moved]
        W[upd] = Wn[moved]
        step[idx] = np.where(moved, np.minimum(t[:, 0] / cfg.shrink, cfg.step0), step[idx])
        if upd.size:
            f[upd], gv[upd], gw[upd] = frozen.objective(V[upd], W[upd], p)
        active[idx[done]] = False
        if validate is not None and (it % cfg.check_every == 0 or not active.any()):
            val = validate(V, W)
            better = val > best_val
            best_val[better] = val[better]
            best_V[better] = V[better]
            best_W[better] = W[better]
    if validate is None:
        return f, V, W
    return best_val, best_V, best_W


def sup_bilinear_moment(A, grid, p, cfg=None, seed=0):
    """Lower estimate of sup_{v,w in B2} ||sum a_ij v_i w_j X_ij||_p.

    The ascent runs on a frozen batch (common random numbers). Each start
    keeps its best iterate on a second, independent batch, and the winning
    pair is re-evaluated on a third batch; that value is returned.
    """
    cfg = cfg or AscentConfig()
    if p < 1:
        raise ValueError("p must be >= 1")
    a = as_coeff(A).a
    n = a.shape[0]
    if not np.any(a):
        e = np.zeros(n)
        e[0] = 1.0
        return AscentResult(0.0, e, e.copy(), 0.0, p)
    crn = _Frozen(a, grid, cfg.batch, seed, _TAG_CRN, cfg.max_batch_bytes)
    val = _Frozen(a, grid, cfg.val_samples, seed, _TAG_VAL, cfg.max_batch_bytes)
    V, W = _starts(a, grid, cfg, seed)
    fval, V, W = ascend(crn, V, W, p, cfg, validate=lambda V, W: val.values(V, W, p))
    best = int(np.argmax(fval))
    v, w = V[best], W[best]
    value = evaluate_pair(a, grid, v, w, p, cfg.eval_samples, seed)
    return AscentResult(value, v, w, float(fval[best]), p, cfg.eval_samples)


def evaluate_pair(A, grid, v, w, p, n_samples, seed):
    """Independent-batch evaluation of a fixed (v, w)."""
    a = as_coeff(A).a
    s = _bilinear_samples(a, grid, lambda r, c, x: x * v[r] * w[c], n_samples, seed, _TAG_EVAL)
    return float(_scaled_moment(s, p))


# exhaustive oracles -----------------------------------------------------------

def _pattern_space(values_list, budget):
    total = 1
    for vals in values_list:
        total *= len(vals)
        if total > budget:
            raise BudgetExceededError(f"pattern count exceeds {budget}")
    return total


def _iter_patterns(values_list, probs_list, chunk=1 << 14):
    """Yield (values (c, m), probs (c,)) over the mixed-radix pattern space."""
    radices = np.array([len(v) for v in values_list], dtype=np.int64)
    m = radices.size
    total = int(np.prod(radices)) if m else 1
    vals = [np.asarray(v, dtype=float) for v in values_list]
    prb = [np.asarray(q, dtype=float) for q in probs_list]
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        X = np.empty((idx.size, m))
        P = np.ones(idx.size)
        rem = idx.copy()
        for k in range(m):
            digit = rem % radices[k]
            rem //= radices[k]
            X[:, k] = vals[k][digit]
            P *= prb[k][digit]
        yield X, P


def exact_mean_discrete(A, grid, budget=1 << 20):
    """Exact E||A o X||_op for finite-support entry laws, by enumeration.

    Entries with a_ij = 0 are skipped since they do not affect the matrix.
    """
    a = as_coeff(A).a
    n = a.shape[0]
    nz = np.argwhere(a != 0)
    if nz.shape[0] == 0:
        return 0.0
    values_list, probs_list = [], []
    for i, j in nz:
        d = grid.law(i, j)
        if not d.is_discrete:
            raise TypeError("exact enumeration needs finite-support laws")
        vals, probs = d.atoms()
        values_list.append(vals * a[i, j])
        probs_list.append(probs)
    _pattern_space(values_list, budget)
    terms = []
    for X, P in _iter_patterns(values_list, probs_list):
        Y = np.zeros((X.shape[0], n, n))
        Y[:, nz[:, 0], nz[:, 1]] = X
        terms.extend((P * batch_opnorm(Y)).tolist())
    return math.fsum(terms)


def exact_linear_moment(coeffs, laws, p, budget=1 << 22):
    """Exact ||sum_i c_i X_i||_p for finite-support laws."""
    c = np.asarray(coeffs, dtype=float)
    if isinstance(laws, DistSpec):
        laws = [laws] * c.size
    keep = c != 0
    c = c[keep]
    laws = [d for d, k in zip(laws, keep) if k]
    if c.size == 0:
        return 0.0
    if all(d.kind == "rademacher" for d in laws):
        if c.size > 62:
            raise BudgetExceededError("too many terms")
        scale = np.array([d.scale for d in laws])
        _pattern_space([[0, 1]] * c.size, budget)
        return kernels.sign_moment(c * scale, p) ** (1.0 / p)
    values_list, probs_list = [], []
    for ci, d in zip(c, laws):
        vals, probs = d.atoms()
        values_list.append(vals * ci)
        probs_list.append(probs)
    _pattern_space(values_list, budget)
    total = 0.0
    for X, P in _iter_patterns(values_list, probs_list):
        total += float(np.dot(P, np.abs(X.sum(axis=1)) ** p))
    return total ** (1.0 / p)


def max_entry_moment(A, grid, p):
    """max_ij |a_ij| ||X_ij||_p."""
    a = np.abs(as_coeff(A).a)
    if not np.any(a):
        return 0.0
    return float(np.max(a * grid.moment_grid(p)))


def default_p(n):
    return Log(n)
