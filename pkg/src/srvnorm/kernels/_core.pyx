# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: graph traversal, connected-subset enumeration and
exhaustive sign-pattern averages."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow
from libc.stdint cimport int64_t

cnp.import_array()

UNREACHABLE = np.iinfo(np.int64).max


def bfs_distances(const int64_t[:] indptr, const int64_t[:] indices, Py_ssize_t n):
    cdef int64_t INF = np.iinfo(np.int64).max
    dist_arr = np.full((n, n), INF, dtype=np.int64)
    cdef int64_t[:, :] dist = dist_arr
    cdef int64_t[:] queue = np.empty(max(n, 1), dtype=np.int64)
    cdef Py_ssize_t s, head, tail, u, e, w
    for s in range(n):
        dist[s, s] = 0
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            for e in range(indptr[u], indptr[u + 1]):
                w = indices[e]
                if dist[s, w] == INF:
                    dist[s, w] = dist[s, u] + 1
                    queue[tail] = w
                    tail += 1
    return dist_arr


cdef class _ESU:
    cdef const int64_t[:] indptr
    cdef const int64_t[:] indices
    cdef Py_ssize_t n, k, max_count, count
    cdef bint record
    cdef unsigned char[:] in_sub
    cdef int64_t[:] nbr_cnt
    cdef int64_t[:] sub
    cdef int64_t[:, :] ext
    cdef int64_t[:, :] out
    cdef Py_ssize_t depth

    def __init__(self, indptr, indices, Py_ssize_t n, Py_ssize_t k,
                 Py_ssize_t max_count, bint record):
        self.indptr = indptr
        self.indices = indices
        self.n = n
        self.k = k
        self.max_count = max_count
        self.record = record
        self.count = 0
        self.in_sub = np.zeros(n, dtype=np.uint8)
        self.nbr_cnt = np.zeros(n, dtype=np.int64)
        self.sub = np.zeros(k, dtype=np.int64)
        self.ext = np.zeros((k + 1, n + 1), dtype=np.int64)
        self.depth = 0
        if record:
            self.out = np.zeros((16, k), dtype=np.int64)

    cdef void _add(self, Py_ssize_t w):
        cdef Py_ssize_t e
        self.in_sub[w] = 1
        self.sub[self.depth] = w
        self.depth += 1
        for e in range(self.indptr[w], self.indptr[w + 1]):
            self.nbr_cnt[self.indices[e]] += 1

    cdef void _remove(self, Py_ssize_t w):
        cdef Py_ssize_t e
        self.in_sub[w] = 0
        self.depth -= 1
        for e in range(self.indptr[w], self.indptr[w + 1]):
            self.nbr_cnt[self.indices[e]] -= 1

    cdef int _emit(self) except -1:
        cdef Py_ssize_t i
        if self.count >= self.max_count:
            raise OverflowError("connected subset count exceeds max_count")
        if self.record:
            if self.count >= self.out.shape[0]:
                bigger = np.zeros((2 * self.out.shape[0], self.k), dtype=np.int64)
                bigger[:self.count] = np.asarray(self.out)[:self.count]
                self.out = bigger
            for i in range(self.k):
                self.out[self.count, i] = self.sub[i]
        self.count += 1
        return 0

    cdef int _extend(self, Py_ssize_t level, Py_ssize_t ext_len,
                     Py_ssize_t root) except -1:
        cdef Py_ssize_t w, e, u, new_len, i
        if self.depth == self.k:
            return self._emit()
        while ext_len > 0:
            ext_len -= 1
            w = self.ext[level, ext_len]
            for i in range(ext_len):
                self.ext[level + 1, i] = self.ext[level, i]
            new_len = ext_len
            for e in range(self.indptr[w], self.indptr[w + 1]):
                u = self.indices[e]
                if u > root and self.in_sub[u] == 0 and self.nbr_cnt[u] == 0:
                    self.ext[level + 1, new_len] = u
                    new_len += 1
            self._add(w)
            self._extend(level + 1, new_len, root)
            self._remove(w)
        return 0

    def run(self):
        cdef Py_ssize_t root, e, u, ext_len
        for root in range(self.n):
            self._add(root)
            ext_len = 0
            for e in range(self.indptr[root], self.indptr[root + 1]):
                u = self.indices[e]
                if u > root:
                    self.ext[0, ext_len] = u
                    ext_len += 1
            self._extend(0, ext_len, root)
            self._remove(root)
        return self.count

    def result(self):
        arr = np.asarray(self.out)[:self.count].copy()
        arr.sort(axis=1)
        return arr


def connected_subsets(indptr, indices, Py_ssize_t n, Py_ssize_t k, Py_ssize_t max_count):
    if k < 1 or k > n:
        return np.zeros((0, max(k, 0)), dtype=np.int64)
    esu = _ESU(np.ascontiguousarray(indptr, dtype=np.int64),
               np.ascontiguousarray(indices, dtype=np.int64), n, k, max_count, True)
    esu.run()
    return esu.result()


def count_connected_subsets(indptr, indices, Py_ssize_t n, Py_ssize_t k):
    if k < 1 or k > n:
        return 0
    esu = _ESU(np.ascontiguousarray(indptr, dtype=np.int64),
               np.ascontiguousarray(indices, dtype=np.int64), n, k,
               np.iinfo(np.int64).max, False)
    return esu.run()


cdef inline int _ctz(unsigned long long x) nogil:
    cdef int r = 0
    while (x & 1) == 0:
        x >>= 1
        r += 1
    return r


def sign_moment(c_in, double p):
    """Exact E|sum_i c_i eps_i|^p over all 2^m sign patterns (Gray-code walk)."""
    cdef double[:] c = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0]
    if m == 0:
        return 0.0
    cdef unsigned long long count = 1ULL << m
    cdef unsigned long long g
    cdef double s = 0.0, total = 0.0
    cdef int j
    cdef unsigned long long state = 0
    cdef Py_ssize_t i
    for i in range(m):
        s -= c[i]
    with nogil:
        total = pow(fabs(s), p)
        for g in range(1, count):
            j = _ctz(g)
            if (state >> j) & 1:
                s -= 2.0 * c[j]
            else:
                s += 2.0 * c[j]
            state ^= (1ULL << j)
            total += pow(fabs(s), p)
    return total / <double>count


def sign_sup_mean(c_in, T_in):
    """Exact E max_{t in T} sum_i t_i c_i eps_i over all 2^m sign patterns."""
    cdef double[:] c = np.ascontiguousarray(c_in, dtype=np.float64)
    W_arr = np.ascontiguousarray(np.asarray(T_in, dtype=np.float64) * np.asarray(c)[None, :])
    cdef double[:, :] W = W_arr
    cdef Py_ssize_t m = c.shape[0]
    cdef Py_ssize_t nt = W.shape[0]
    cdef double[:] s = -W_arr.sum(axis=1)
    cdef unsigned long long count = 1ULL << m
    cdef unsigned long long g, state = 0
    cdef double total = 0.0, best, sign
    cdef Py_ssize_t a
    cdef int j
    with nogil:
        best = s[0]
        for a in range(1, nt):
            if s[a] > best:
                best = s[a]
        total = best
        for g in range(1, count):
            j = _ctz(g)
            sign = -2.0 if (state >> j) & 1 else 2.0
            state ^= (1ULL << j)
            best = -1e308
            for a in range(nt):
                s[a] += sign * W[a, j]
                if s[a] > best:
                    best = s[a]
            total += best
    return total / <double>count
