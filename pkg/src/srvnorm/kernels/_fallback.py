"""Pure-Python versions of the hot kernels.

Same algorithms, same output order as the compiled ``_core`` module; used when
the extension is not built or when ``SRVNORM_PURE=1`` is set.
"""
import numpy as np

UNREACHABLE = np.iinfo(np.int64).max


def bfs_distances(indptr, indices, n):
    dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for s in range(n):
        row = dist[s]
        row[s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for w in indices[indptr[u]:indptr[u + 1]]:
                    if row[w] == UNREACHABLE:
                        row[w] = d
                        nxt.append(int(w))
            frontier = nxt
    return dist


def _esu(indptr, indices, n, k, emit):
    adj = [indices[indptr[u]:indptr[u + 1]].tolist() for u in range(n)]
    in_sub = [False] * n
    nbr_cnt = [0] * n
    sub = []

    def add(w):
        in_sub[w] = True
        sub.append(w)
        for u in adj[w]:
            nbr_cnt[u] += 1

    def remove(w):
        in_sub[w] = False
        sub.pop()
        for u in adj[w]:
            nbr_cnt[u] -= 1

    def extend(ext, root):
        if len(sub) == k:
            emit(sub)
            return
        ext = list(ext)
        while ext:
            w = ext.pop()
            new_ext = list(ext)
            for u in adj[w]:
                if u > root and not in_sub[u] and nbr_cnt[u] == 0:
                    new_ext.append(u)
            add(w)
            extend(new_ext, root)
            remove(w)

    for root in range(n):
        add(root)
        extend([u for u in adj[root] if u > root], root)
        remove(root)


def connected_subsets(indptr, indices, n, k, max_count):
    if k < 1 or k > n:
        return np.zeros((0, max(k, 0)), dtype=np.int64)
    out = []

    def emit(sub):
        if len(out) >= max_count:
            raise OverflowError("connected subset count exceeds max_count")
        out.append(sorted(sub))

    _esu(indptr, indices, n, k, emit)
    return np.asarray(out, dtype=np.int64).reshape(len(out), k)


def count_connected_subsets(indptr, indices, n, k):
    if k < 1 or k > n:
        return 0
    total = [0]

    def emit(sub):
        total[0] += 1

    _esu(indptr, indices, n, k, emit)
    return total[0]


def _sign_patterns(m, start, stop):
    idx = np.arange(start, stop, dtype=np.int64)[:, None]
    bits = (idx >> np.arange(m, dtype=np.int64)[None, :]) & 1
    return 2.0 * bits - 1.0


def sign_moment(c, p):
    """Exact E|sum_i c_i eps_i|^p over all 2^m sign patterns."""
    c = np.asarray(c, dtype=np.float64)
    m = c.shape[0]
    if m == 0:
        return 0.0
    total = 0.0
    count = 1 << m
    step = 1 << 16
    for start in range(0, count, step):
        signs = _sign_patterns(m, start, min(count, start + step))
        total += float(np.sum(np.abs(signs @ c) ** p))
    return total / count


def sign_sup_mean(c, T):
    """Exact E max_{t in T} sum_i t_i c_i eps_i over all 2^m sign patterns."""
    c = np.asarray(c, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    m = c.shape[0]
    W = T * c[None, :]
    total = 0.0
    count = 1 << m
    step = 1 << 14
    for start in range(0, count, step):
        signs = _sign_patterns(m, start, min(count, start + step))
        total += float(np.sum(np.max(signs @ W.T, axis=1)))
    return total / count
