"""Optimization over the budget ball {t : sum_ij hatN_ij(t_ij) <= p}.

Everything runs on |a_ij|: the ball is invariant under sign changes of t, so
the optimal t has the sign pattern of A, which is restored on the witness.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
from scipy.optimize import minimize_scalar

from .dist import TailProfile, tail_profile
from .matgraph import Log, as_coeff
from .norms import batch_opnorm, substream


class UnboundedError(ArithmeticError):
    pass


@dataclass(frozen=True)
class OrliczBudget:
    """Budget level p and the bracketed tail exponent of every entry.

    ``profiles[labels[i, j]]`` is the TailProfile of entry (i, j).
    """

    p: float
    profiles: tuple
    labels: np.ndarray

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("budget level p must be >= 1")

    @classmethod
    def from_grid(cls, grid, p):
        return cls(float(p), tuple(tail_profile(d) for d in grid.laws), grid.labels)

    @classmethod
    def uniform(cls, profile, p, n):
        return cls(float(p), (profile,), np.zeros((n, n), dtype=np.int64))

    @classmethod
    def quadratic(cls, p, n):
        """hatN(t) = t^2 everywhere, no caps."""
        return cls.uniform(TailProfile.quadratic(), p, n)

    def with_p(self, p):
        return OrliczBudget(float(p), self.profiles, self.labels)

    def profile(self, i, j):
        return self.profiles[self.labels[i, j]]

    def cost(self, t):
        """sum_ij hatN_ij(t_ij)."""
        t = np.abs(np.asarray(t, dtype=float))
        total = 0.0
        for k, prof in enumerate(self.profiles):
            mask = (self.labels == k) & (t > 0)
            if mask.any():
                total += float(np.sum(prof.hatN(t[mask])))
        return total

    def in_box(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        caps = np.array([prof.cap for prof in self.profiles])[self.labels]
        return bool(np.all(t <= caps * (1 + 1e-12)))


@dataclass
class OrliczSolution:
    t_star: np.ndarray
    lam: float
    budget_used: float
    objective: float
    feasible: bool
    dual: float = math.inf
    p: float = 0.0

    @property
    def gap(self):
        if not math.isfinite(self.dual) or self.dual == 0:
            return 0.0 if self.dual == 0 else math.inf
        return (self.dual - self.objective) / self.dual

    def to_dict(self):
        nz = np.argwhere(self.t_star != 0)
        return {
            "objective": self.objective,
            "lambda": self.lam,
            "budget_used": self.budget_used,
            "p": self.p,
            "feasible": self.feasible,
            "dual": self.dual,
            "gap": self.gap,
            "n": int(self.t_star.shape[0]),
            "witness": [[int(i), int(j), float(self.t_star[i, j])] for i, j in nz],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        n = d["n"]
        t = np.zeros((n, n))
        for i, j, v in d["witness"]:
            t[i, j] = v
        return cls(t, d["lambda"], d["budget_used"], d["objective"], d["feasible"], d["dual"], d["p"])


# max_linear ---------------------------------------------------------------------

_GRID = 4000


class _Law:
    """Per-law tables used by the Lagrangian separation."""

    def __init__(self, prof, p):
        self.prof = prof
        self.quadratic_only = prof.quadratic_only
        try:
            T = prof.hatN_inverse(p)
        except ArithmeticError:
            raise UnboundedError("hatN is bounded above; the linear maximum is infinite") from None
        self.T = min(T, prof.cap)
        if self.quadratic_only or self.T <= 1.0:
            self.tg = np.zeros(0)
            self.Ng = np.zeros(0)
            self.Nlow = np.zeros(0)
        else:
            # geometric near the breakpoint, uniform near the top
            u = np.concatenate([np.geomspace(1e-9, 1.0, _GRID // 2), np.linspace(0.0, 1.0, _GRID // 2)[1:]])
            tg = 1.0 + (self.T - 1.0) * np.unique(u)
            self.tg = tg
            self.Ng = prof.N(tg)
            # N at the left end of each cell lower-bounds N on the whole cell
            left = np.concatenate([[1.0], tg[:-1]])
            self.Nlow = prof.N(left)

    def best(self, c, lam):
        """Maximizer of c t - lam hatN(t) over [0, T] on the candidate set.

        Returns (t, cost, on_quadratic_branch) per entry of c.
        """
        c = np.asarray(c, dtype=float)
        qcap = self.T if self.quadratic_only else 1.0
        if lam <= 0:
            t = np.full(c.shape, self.T)
            return t, self.prof.hatN(t), t <= qcap
        tq = np.minimum(c / (2 * lam), qcap)
        vq = c * tq - lam * tq**2
        if self.tg.size == 0:
            return tq, tq**2, np.ones(c.shape, dtype=bool)
        vals = c[:, None] * self.tg[None, :] - lam * self.Ng[None, :]
        g = np.argmax(vals, axis=1)
        vt = vals[np.arange(c.size), g]
        use_tail = vt > vq
        t = np.where(use_tail, self.tg[g], tq)
        cost = np.where(use_tail, self.Ng[g], tq**2)
        return t, cost, ~use_tail

    @property
    def qcap(self):
        return self.T if self.quadratic_only else 1.0

    def t_of_u(self, u, upper=False):
        """sup{t : hatN(t) <= u} from the tables: a feasible value, or with
        ``upper`` a value no smaller than the true one."""
        u = np.asarray(u, dtype=float)
        t = np.minimum(np.sqrt(np.maximum(u, 0.0)), self.qcap)
        if self.tg.size == 0:
            return t
        idx = np.searchsorted(self.Ng, u, side="right") - 1
        if upper:
            nxt = np.minimum(idx + 1, self.tg.size - 1)
            tail = np.where(u >= self.Nlow[0], self.tg[nxt], 0.0)
        else:
            tail = np.where(idx >= 0, self.tg[np.maximum(idx, 0)], 0.0)
        return np.maximum(t, tail)

    def psi_upper(self, c, lam):
        """Upper bound on max_t c t - lam hatN(t), rigorous for nondecreasing N on cells."""
        c = np.asarray(c, dtype=float)
        if lam <= 0:
            return c * self.T
        qcap = self.T if self.quadratic_only else 1.0
        tq = np.minimum(c / (2 * lam), qcap)
        vq = c * tq - lam * tq**2
        if self.tg.size == 0:
            return vq
        vt = np.max(c[:, None] * self.tg[None, :] - lam * self.Nlow[None, :], axis=1)
        return np.maximum(vq, vt)


def _solve_at(laws, groups, c, lam):
    t = np.zeros(c.size)
    cost = np.zeros(c.size)
    quad = np.zeros(c.size, dtype=bool)
    for law, idx in zip(laws, groups):
        if idx.size:
            t[idx], cost[idx], quad[idx] = law.best(c[idx], lam)
    return t, cost, quad


def _dual(laws, groups, c, lam, p):
    total = lam * p
    for law, idx in zip(laws, groups):
        if idx.size:
            total += float(np.sum(law.psi_upper(c[idx], lam)))
    return total


def _waterfill(c, caps, level):
    """max sum c t s.t. sum t^2 <= level, 0 <= t <= caps (t_k = min(cap, c/(2 mu)))."""
    if level <= 0:
        return np.zeros_like(c)
    if np.sum(caps**2) <= level:
        return caps.copy()
    lo, hi = 0.0, float(np.max(c / (2 * caps))) + 1.0
    while np.sum(np.minimum(caps, c / (2 * hi)) ** 2) > level:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum(np.minimum(caps, c / (2 * mid)) ** 2) > level:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return np.minimum(caps, c / (2 * hi))


def max_linear(A, budget, lam_tol=1e-10, refine=True, refine_tol=1e-3):
    """max sum_ij a_ij t_ij over the budget ball, by Lagrangian separation.

    For each multiplier the problem splits into 1-D problems solved on the
    quadratic branch, the breakpoint t = 1 and a tail grid. The multiplier is
    bisected to the budget; at the crossing the two neighbouring solutions are
    mixed greedily and the leftover budget is water-filled. The returned point
    is feasible; ``dual`` is a Lagrangian upper bound.

    Tails lighter than the quadratic branch make the problem non-concave and
    the multiplier crossing can miss solutions that spend most of the budget
    on one entry. With ``refine`` such solutions are searched directly (single
    tail placement and re-splitting against the quadratic pool) and the upper
    bound is tightened by treating the largest entries exactly. This runs
    when the relative gap exceeds ``refine_tol``. Problems with at most 16
    nonzero entries are always refined, adding a budget-grid knapsack and
    pairwise re-splitting.
    """
    a = as_coeff(A).a
    p = budget.p
    absa = np.abs(a)
    nz = np.flatnonzero(absa)
    n = a.shape[0]
    if nz.size == 0:
        return OrliczSolution(np.zeros_like(a), 0.0, 0.0, 0.0, True, 0.0, p)
    c = absa.ravel()[nz]
    lab = budget.labels.ravel()[nz]
    laws = [_Law(prof, p) for prof in budget.profiles]
    groups = [np.flatnonzero(lab == k) for k in range(len(laws))]
    for law, idx in zip(laws, groups):
        if idx.size and not math.isfinite(law.T):
            raise UnboundedError("entry without a finite cap or growing tail")
    T = np.zeros(c.size)
    for law, idx in zip(laws, groups):
        T[idx] = law.T

    def cost_of(t):
        out = np.zeros(c.size)
        for law, idx in zip(laws, groups):
            if idx.size:
                tt = t[idx]
                pos = tt > 0
                out[idx[pos]] = law.prof.hatN(tt[pos])
        return out

    t0, cost0, _ = _solve_at(laws, groups, c, 0.0)
    if cost0.sum() <= p:
        t, lam = t0, 0.0
    else:
        lo, hi = 0.0, float(c.max())
        while _solve_at(laws, groups, c, hi)[1].sum() > p:
            lo, hi = hi, hi * 2
        for _ in range(300):
            mid = 0.5 * (lo + hi)
            if _solve_at(laws, groups, c, mid)[1].sum() > p:
                lo = mid
            else:
                hi = mid
            if hi - lo <= lam_tol * hi:
                break
        lam = hi
        t_hi, cost_hi, _ = _solve_at(laws, groups, c, hi)
        t_lo, cost_lo, _ = _solve_at(laws, groups, c, lo)
        # greedy mixture of the two sides of the crossing
        t = t_hi.copy()
        cost = cost_hi.copy()
        diff = np.flatnonzero(t_lo != t_hi)
        d_obj = c[diff] * (t_lo[diff] - t_hi[diff])
        d_cost = cost_lo[diff] - cost_hi[diff]
        ratio = np.where(d_cost > 0, d_obj / np.where(d_cost > 0, d_cost, 1.0), np.inf)
        for k in np.argsort(-ratio, kind="stable"):
            if d_obj[k] <= 0:
                continue
            if cost.sum() + d_cost[k] <= p:
                e = diff[k]
                t[e], cost[e] = t_lo[e], cost_lo[e]
    t = _polish(t, c, T, laws, groups, cost_of, p)
    # dual bound: convex in lambda, minimise around the crossing
    hi_lam = max(4 * lam, float(c.max()), 1e-12)
    res = minimize_scalar(lambda x: _dual(laws, groups, c, x, p), bounds=(0.0, hi_lam), method="bounded",
                          options={"xatol": 1e-12 * hi_lam})
    dual = min(float(res.fun), _dual(laws, groups, c, lam, p), _dual(laws, groups, c, 0.0, p))
    # small problems are cheap to refine fully
    small = c.size <= 16
    tol = 1e-9 if small else refine_tol
    if refine and dual - float(np.sum(c * t)) > tol * dual:
        # non-concave tails: concentrate budget on one entry, bound likewise
        t2 = _one_tail_primal(c, T, laws, groups, p, cost_of)
        if t2 is not None and np.sum(c * t2) > np.sum(c * t):
            t = t2
        if small:
            t3 = _dp_primal(c, T, laws, groups, p, cost_of)
            if t3 is not None and np.sum(c * t3) > np.sum(c * t):
                t = t3
            t = _pair_exchange(t, c, T, laws, groups, cost_of, p)
        t = _rebalance_tails(t, c, T, laws, groups, cost_of, p)
        dual = min(dual, _special_entry_upper(c, laws, groups, p, hi_lam))
    cost = cost_of(t)
    budget_used = float(cost.sum())
    if budget_used > p * (1 + 1e-9):
        raise AssertionError(f"infeasible point: budget {budget_used} > {p}")
    t_full = np.zeros(n * n)
    t_full[nz] = t * np.sign(a.ravel()[nz])
    t_full = t_full.reshape(n, n)
    objective = float(np.sum(c * t))
    return OrliczSolution(t_full, float(lam), budget_used, objective, True, max(dual, objective), p)


def _qcaps(c, laws, groups):
    qcap = np.ones(c.size)
    for law, idx in zip(laws, groups):
        qcap[idx] = law.qcap
    return qcap


def _best_single_tail(c, qcap, tu, U, mu, free, left):
    """Best (entry, share) among ``free`` entries when the other free entries are
    water-filled on the quadratic branch with budget ``left`` minus the share."""
    tk = np.minimum(qcap[free][:, None], c[free][:, None] / (2 * mu[None, :]))
    b_all = np.sum(tk**2, axis=0)
    v_all = np.sum(c[free][:, None] * tk, axis=0)
    target = left - U
    inside = target >= 0
    best_val, best = -np.inf, None
    for r, k in enumerate(np.flatnonzero(free)):
        b_rest = b_all - tk[r] ** 2
        v_rest = v_all - c[k] * tk[r]
        # first grid mu whose rest budget fits (b_rest decreases with mu)
        pos = np.searchsorted(-b_rest, -target, side="left")
        ok = inside & (pos < mu.size)
        vals = np.where(ok, c[k] * tu[k] + v_rest[np.minimum(pos, mu.size - 1)], -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = vals[i], (int(k), U[i])
    return best_val, best


def _one_tail_primal(c, T, laws, groups, p, cost_of, max_tails=None):
    """Greedy tail placement: repeatedly give the best single entry a share of the
    remaining budget, water-filling the others, while the objective improves."""
    qcap = _qcaps(c, laws, groups)
    K = c.size
    U = np.unique(np.concatenate([np.linspace(0.0, p, 801), np.geomspace(1e-4 * p, p, 400)]))
    mu = np.geomspace(c.min() / (2 * qcap.max()) * 0.5, c.max() / 2 * 1e4, 3000)
    tu = np.zeros((K, U.size))
    law_of = np.empty(K, dtype=np.int64)
    for g, (law, idx) in enumerate(zip(laws, groups)):
        if idx.size:
            tu[idx] = law.t_of_u(U)[None, :]
            law_of[idx] = g
    free = np.ones(K, dtype=bool)
    t_fixed = np.zeros(K)
    left = p
    best_t, best_obj = None, -np.inf
    for _ in range(max_tails or K):
        if not free.any():
            break
        val, pick = _best_single_tail(c, qcap, tu, U, mu, free, left)
        if pick is None:
            break
        k, u = pick
        law = laws[law_of[k]]
        tk = min(law.prof.hatN_inverse(u), law.T) if u > 0 else 0.0
        t = t_fixed.copy()
        t[k] = tk
        spent = float(law.prof.hatN(np.array([tk]))[0]) if tk > 0 else 0.0
        rest = free.copy()
        rest[k] = False
        if rest.any():
            t[rest] = _waterfill(c[rest], np.minimum(qcap[rest], T[rest]), max(left - spent, 0.0))
        t = _polish(t, c, T, laws, groups, cost_of, p)
        if cost_of(t).sum() > p * (1 + 1e-12):
            break
        obj = float(np.sum(c * t))
        if obj <= best_obj * (1 + 1e-12):
            break
        best_t, best_obj = t, obj
        if tk <= qcap[k]:
            break  # the pick stayed on the quadratic branch; nothing left to place
        free[k] = False
        t_fixed[k] = tk
        left -= spent
    return best_t


def _dp_primal(c, T, laws, groups, p, cost_of, max_cells=4 * 10**7):
    """Knapsack over a uniform budget grid: entry k with grid share u may take
    the largest t with hatN(t) <= u, so every grid solution is feasible.

    Picks which entries go to the tail branch globally; the grid rounding is
    repaired afterwards by polishing.
    """
    K = c.size
    G = int(min(2000, math.sqrt(max_cells / K)))
    if G < 100:
        return None
    budgets = np.linspace(0.0, p, G + 1)
    law_of = np.empty(K, dtype=np.int64)
    for g, idx in enumerate(groups):
        law_of[idx] = g
    tables = [law.t_of_u(budgets) for law in laws]
    # cand[i, j] = F[i] + g[j - i] for i <= j
    I, J = np.indices((G + 1, G + 1))
    lag = np.where(J >= I, J - I, 0)
    upper = J >= I
    F = c[0] * tables[law_of[0]]
    args = np.zeros((K, G + 1), dtype=np.int32)
    for k in range(1, K):
        g = c[k] * tables[law_of[k]]
        cand = np.where(upper, F[:, None] + g[lag], -np.inf)
        arg = np.argmax(cand, axis=0)
        F = cand[arg, np.arange(G + 1)]
        args[k] = arg
    share = np.zeros(K, dtype=np.int64)
    j = G
    for k in range(K - 1, 0, -1):
        i = int(args[k, j])
        share[k] = j - i
        j = i
    share[0] = j
    t = np.array([tables[law_of[k]][share[k]] for k in range(K)])
    if cost_of(t).sum() > p:
        return None
    return _polish(t, c, T, laws, groups, cost_of, p)


def _pair_exchange(t, c, T, laws, groups, cost_of, p, max_entries=48, n_split=2001, sweeps=10):
    """Local search: re-split the joint budget of every pair of entries optimally.

    Each pair's budget B is divided as (u, B - u) over a fine grid of u and
    both entries take the largest t their share allows. Only the
    ``max_entries`` entries with the largest c take part.
    """
    law_of = np.empty(c.size, dtype=np.int64)
    for g, idx in enumerate(groups):
        law_of[idx] = g
    pool = np.argsort(-c, kind="stable")[:max_entries]
    frac = np.linspace(0.0, 1.0, n_split)
    t = t.copy()
    cost = cost_of(t)
    for _ in range(sweeps):
        improved = False
        for a_, b_ in combinations(pool, 2):
            B = cost[a_] + cost[b_]
            if B <= 0:
                continue
            la, lb = laws[law_of[a_]], laws[law_of[b_]]
            u = B * frac
            vals = c[a_] * la.t_of_u(u) + c[b_] * lb.t_of_u(B - u)
            i = int(np.argmax(vals))
            cur = c[a_] * t[a_] + c[b_] * t[b_]
            if vals[i] <= cur * (1 + 1e-12):
                continue

            def split(x):
                ta = min(la.prof.hatN_inverse(x), la.T)
                tb = min(lb.prof.hatN_inverse(B - x), lb.T)
                return ta, tb

            # polish the split with exact inverses inside the neighbouring cells
            res = minimize_scalar(lambda x: -float(np.dot((c[a_], c[b_]), split(x))),
                                  bounds=(u[max(i - 1, 0)], u[min(i + 1, u.size - 1)]),
                                  method="bounded", options={"xatol": 1e-13 * B})
            ta, tb = split(u[i])
            if -res.fun > c[a_] * ta + c[b_] * tb:
                ta, tb = split(res.x)
            trial = t.copy()
            trial[a_], trial[b_] = ta, tb
            tc = cost_of(trial)
            if tc.sum() <= p and c[a_] * ta + c[b_] * tb > cur:
                t, cost = trial, tc
                improved = True
        if not improved:
            break
    return _polish(t, c, T, laws, groups, cost_of, p)


def _rebalance_tails(t, c, T, laws, groups, cost_of, p, rounds=3):
    """Exact 1-D re-splits: each tail-branch entry against the water-filled
    quadratic entries, then each pair of tail-branch entries."""
    qcap = _qcaps(c, laws, groups)
    law_of = np.empty(c.size, dtype=np.int64)
    for g, idx in enumerate(groups):
        law_of[idx] = g
    t = t.copy()
    for _ in range(rounds):
        tails = np.flatnonzero(t > qcap)
        quad = t <= qcap
        if not tails.size or not quad.any():
            break
        caps = np.minimum(qcap[quad], T[quad])
        improved = False
        for k in tails:
            cost = cost_of(t)
            pool = p - (cost[tails].sum() - cost[k])
            law = laws[law_of[k]]

            def trial(u, k=k, law=law, pool=pool):
                out = t.copy()
                out[k] = min(law.prof.hatN_inverse(u), law.T)
                out[quad] = _waterfill(c[quad], caps, max(pool - u, 0.0))
                return out

            res = minimize_scalar(lambda u: -float(np.dot(c, trial(u))), bounds=(0.0, pool),
                                  method="bounded", options={"xatol": 1e-12 * pool})
            cand = trial(res.x)
            if np.dot(c, cand) > np.dot(c, t) * (1 + 1e-14) and cost_of(cand).sum() <= p:
                t = cand
                improved = True
        for k, l in combinations(tails, 2):
            cost = cost_of(t)
            B = cost[k] + cost[l]
            lk, ll = laws[law_of[k]], laws[law_of[l]]

            def pair(u, k=k, l=l, lk=lk, ll=ll, B=B):
                out = t.copy()
                out[k] = min(lk.prof.hatN_inverse(u), lk.T)
                out[l] = min(ll.prof.hatN_inverse(B - u), ll.T)
                return out

            res = minimize_scalar(lambda u: -float(np.dot(c, pair(u))), bounds=(0.0, B),
                                  method="bounded", options={"xatol": 1e-12 * B})
            cand = pair(res.x)
            if np.dot(c, cand) > np.dot(c, t) * (1 + 1e-14) and cost_of(cand).sum() <= p:
                t = cand
                improved = True
        if not improved:
            break
    return t


def _special_entry_upper(c, laws, groups, p, lam_max, max_exact=8, n_grid=800, n_lams=160):
    """Upper bound treating the largest entries exactly and the rest by duality.

    On the budget grid u_j = j p / n_grid an entry whose cost lies in
    [u_i, u_(i+1)) is credited c t(u_(i+1)) and charged u_i, so max-plus
    convolution of these entries with the dual bound of the others is an upper
    bound. In that dual every entry is limited to points whose own cost fits
    in the remaining budget. The minimum over 1..max_exact exact entries is
    returned.
    """
    K = c.size
    lams = np.concatenate([[0.0], np.geomspace(1e-8 * lam_max, 10 * lam_max, n_lams)])
    budgets = np.linspace(0.0, p, n_grid + 1)
    special = np.argsort(-c, kind="stable")[:min(max_exact, K)]
    sp_pos = {int(k): i for i, k in enumerate(special)}
    sp_rows = []
    for idx in groups:
        r = [(m, sp_pos[int(e)]) for m, e in enumerate(idx) if int(e) in sp_pos]
        sp_rows.append((np.array([x for x, _ in r], dtype=np.int64), np.array([y for _, y in r], dtype=np.int64)))
    law_of = np.empty(K, dtype=np.int64)
    for g, idx in enumerate(groups):
        law_of[idx] = g
    # merged cells: right end t, left end N, so the bound stays rigorous
    coarse = []
    for law in laws:
        if not law.tg.size:
            coarse.append(None)
            continue
        sel = np.unique(np.linspace(0, law.tg.size - 1, min(law.tg.size, 400)).round().astype(np.int64))
        nlow = np.concatenate([[law.Nlow[0]], law.Ng[sel[:-1]]])
        coarse.append((law.tg[sel], nlow))
    cells = [np.searchsorted(cg[1], budgets, side="right") - 1 if cg is not None else None for cg in coarse]
    psi_tot = np.zeros((budgets.size, lams.size))
    psi_sp = np.zeros((special.size, budgets.size, lams.size))
    qmax_all = [np.minimum(law.qcap, np.sqrt(budgets)) for law in laws]
    for j, lam in enumerate(lams):
        for g, (law, idx) in enumerate(zip(laws, groups)):
            if not idx.size:
                continue
            cq = c[idx]
            qmax = qmax_all[g]
            if lam > 0:
                tq = np.minimum(cq[:, None] / (2 * lam), qmax[None, :])
            else:
                tq = np.broadcast_to(qmax[None, :], (cq.size, budgets.size))
            val = cq[:, None] * tq - lam * tq**2
            if cells[g] is not None:
                tg, nlow = coarse[g]
                pm = np.maximum.accumulate(cq[:, None] * tg[None, :] - lam * nlow[None, :], axis=1)
                ci = cells[g]
                val = np.maximum(val, np.where(ci[None, :] >= 0, pm[:, np.maximum(ci, 0)], -np.inf))
            psi_tot[:, j] += val.sum(axis=0)
            rows = sp_rows[g]
            if rows[0].size:
                psi_sp[rows[1], :, j] = val[rows[0]]
    best = np.inf
    psi_rest = psi_tot.copy()
    F_exact = None  # max-plus convolution of the exact entries so far
    for i, k in enumerate(special):
        psi_rest -= psi_sp[i]
        g_up = c[k] * laws[law_of[k]].t_of_u(budgets[1:], upper=True)
        g_up = np.append(g_up, g_up[-1])
        if F_exact is None:
            F_exact = g_up
        else:
            F_exact = _maxplus(F_exact, g_up)
        d_rest = np.min(lams[None, :] * budgets[:, None] + psi_rest, axis=1)
        best = min(best, float(np.max(F_exact + d_rest[::-1])))
    return best


def _maxplus(f, g):
    """h[j] = max_(i <= j) f[i] + g[j - i]."""
    h = np.full(f.size, -np.inf)
    for i in range(f.size):
        np.maximum(h[i:], f[i] + g[:f.size - i], out=h[i:])
    return h


def _polish(t, c, T, laws, groups, cost_of, p):
    """Spend leftover budget: water-fill the quadratic-branch entries, then the tails."""
    t = t.copy()
    cost = cost_of(t)
    qcap = np.ones(c.size)
    for law, idx in zip(laws, groups):
        if law.quadratic_only:
            qcap[idx] = law.T
    quad = t <= qcap
    left = p - cost.sum()
    if left > 1e-15 and quad.any():
        caps = np.minimum(qcap[quad], T[quad])
        newq = _waterfill(c[quad], caps, float(np.sum(t[quad] ** 2) + left))
        trial = t.copy()
        trial[quad] = np.maximum(newq, t[quad])
        if cost_of(trial).sum() <= p:
            t = trial
    cost = cost_of(t)
    left = p - cost.sum()
    if left > 1e-12:
        # raise the single entry that gains most from the remaining budget
        best_gain, best = 0.0, None
        for law, idx in zip(laws, groups):
            for e in idx:
                try:
                    tn = min(law.prof.hatN_inverse(cost[e] + left), law.T)
                except ArithmeticError:
                    continue
                gain = c[e] * (tn - t[e])
                if gain > best_gain:
                    best_gain, best = gain, (e, tn)
        if best is not None:
            trial = t.copy()
            trial[best[0]] = best[1]
            if cost_of(trial).sum() <= p:
                t = trial
    return t


# masks ------------------------------------------------------------------------------

def masked_norms(rows, cols, vals):
    """Operator norms of K sparse matrices with q entries each, on their compact support.

    rows, cols, vals: arrays of shape (K, q); entries within a row of the
    batch must be at distinct positions.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    vals = np.asarray(vals, dtype=float)
    K, q = vals.shape
    if q == 0:
        return np.zeros(K)
    pr = np.argmax(rows[:, :, None] == rows[:, None, :], axis=2)
    pc = np.argmax(cols[:, :, None] == cols[:, None, :], axis=2)
    M = np.zeros((K, q, q))
    M[np.arange(K)[:, None], pr, pc] = vals
    return batch_opnorm(M)


def _mask_value(w, rows, cols, sel):
    sel = np.asarray(sel)[None, :]
    return float(masked_norms(rows[sel], cols[sel], w[sel])[0])


def _local_search(w, rows, cols, cur, pool, max_passes=100):
    """Best-improvement 1-for-1 swaps between the mask and a candidate pool."""
    cur = list(cur)
    best = _mask_value(w, rows, cols, cur)
    q = len(cur)
    for _ in range(max_passes):
        inside = set(cur)
        outs = np.array([e for e in pool if e not in inside], dtype=np.int64)
        if outs.size == 0:
            break
        base = np.array(cur, dtype=np.int64)
        # candidate k replaces position k // len(outs) with outs[k % len(outs)]
        cand = np.repeat(base[None, :], q * outs.size, axis=0)
        cand[np.arange(q * outs.size), np.repeat(np.arange(q), outs.size)] = np.tile(outs, q)
        vals = masked_norms(rows[cand], cols[cand], w[cand])
        k = int(np.argmax(vals))
        if vals[k] <= best * (1 + 1e-12):
            break
        best = float(vals[k])
        cur = cand[k].tolist()
    return best, cur


@dataclass
class MaskSearch:
    exhaustive_limit: int = 100_000
    restarts: int = 50
    pool_size: int = 512
    seed: int = 0


def _subset_sup_weights(w_mat, q, search):
    """sup over masks of size q of ||(w_ij)_I||_op; returns (value, entries, exact)."""
    n = w_mat.shape[0]
    flat = np.flatnonzero(w_mat)
    if flat.size == 0:
        return 0.0, [], True
    q = min(q, flat.size)
    rows, cols = np.divmod(flat, n)
    w = w_mat.ravel()[flat]
    if comb(flat.size, q) <= search.exhaustive_limit:
        best, best_sel = -1.0, None
        it = combinations(range(flat.size), q)
        while True:
            chunk = np.array([s for _, s in zip(range(4096), it)], dtype=np.int64)
            if chunk.size == 0:
                break
            vals = masked_norms(rows[chunk], cols[chunk], w[chunk])
            k = int(np.argmax(vals))
            if vals[k] > best:
                best, best_sel = float(vals[k]), chunk[k]
        return best, [(int(rows[e]), int(cols[e])) for e in best_sel], True
    order = np.argsort(-np.abs(w), kind="stable")
    pool = order[: max(search.pool_size, q)]
    best, sel = _local_search(w, rows, cols, order[:q], pool)
    rng = substream(search.seed, 7, q)
    for _ in range(search.restarts - 1):
        start = np.array(sel, dtype=np.int64)
        k = max(1, q // 2)
        swap = rng.choice(q, size=k, replace=False)
        fresh = rng.choice(pool, size=k, replace=False)
        start[swap] = fresh
        if len(set(start.tolist())) < q:
            continue
        val, cand = _local_search(w, rows, cols, start, pool)
        if val > best:
            best, sel = val, cand
    return best, [(int(rows[e]), int(cols[e])) for e in sel], False


def subset_opnorm_sup(A, p, search=None):
    """sup over |I| = p of ||(a_ij)_{(i,j) in I}||_op, with the achieving mask.

    The mask ball is sign-symmetric, so this works on |a_ij|: the sup over
    sign patterns of a masked norm is the norm of the masked |a|.

    Exact by enumeration when C(nnz, p) <= search.exhaustive_limit; otherwise
    greedy start plus swap local search (a lower bound).
    """
    search = search or MaskSearch()
    a = as_coeff(A).a
    if p < 1:
        raise ValueError("p must be >= 1")
    val, mask, _ = _subset_sup_weights(np.abs(a), int(p), search)
    return val, mask


@dataclass
class MaskedResult:
    lower: float
    upper: float
    witness: np.ndarray
    exact_masks: bool
    parts: dict

    def __iter__(self):
        return iter((self.lower, self.upper))


def _frobenius_top(w, q):
    v = np.sort((w**2).ravel())[::-1][:q]
    return float(math.sqrt(v.sum()))


def _big_part_upper(absa, budget):
    """Upper bound on sup ||(a_ij t_ij 1{t_ij > 1})||_op over the budget ball.

    Bounds the norm by the Frobenius norm and the squared Frobenius norm by the
    Lagrangian dual of max sum a^2 s subject to sum hatN(sqrt s) <= p, where
    each s is either 0 or above 1.
    """
    p = budget.p
    terms = []
    for k, prof in enumerate(budget.profiles):
        mask = (budget.labels == k) & (absa > 0)
        if not mask.any() or prof.quadratic_only:
            if mask.any():
                return math.inf
            continue
        law = _Law(prof, p)
        if law.tg.size == 0:
            continue
        terms.append((absa[mask] ** 2, law))
    if not terms:
        return 0.0

    def dual(lam):
        total = lam * p
        for c2, law in terms:
            s = law.tg**2
            total += float(np.sum(np.maximum(0.0, np.max(c2[:, None] * s[None, :] - lam * law.Nlow[None, :], axis=1))))
        return total


    hi = max(float(max(c2.max() * law.T**2 for c2, law in terms)), 1e-12)
    res = minimize_scalar(dual, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-12 * hi})
    return math.sqrt(min(float(res.fun), dual(hi), dual(0.0)))


def masked_opnorm_sup(A, budget, p=None, search=None, factor=None):
    """Sandwich for sup_{|I|=p} sup_{t in ball} ||(a_ij t_ij)_I||_op.

    lower: best explicit witness (mask of q <= p entries, each with
    t = hatN^{-1}(p'/q) for some p' <= p), validated by recomputing its norm.
    upper: ``factor`` (default sqrt(Log p)) times the sum of a bound on the
    part with t <= 1 and a bound on the part with t > 1.
    """
    search = search or MaskSearch()
    a = as_coeff(A).a
    n = a.shape[0]
    p = int(round(budget.p if p is None else p))
    if p < 1:
        raise ValueError("p must be >= 1")
    budget = budget.with_p(p)
    absa = np.abs(a)
    if factor is None:
        factor = math.sqrt(Log(p))
    if not np.any(absa):
        return MaskedResult(0.0, 0.0, np.zeros_like(a), True, {})
    inv = {}

    def tau(k, y):
        key = (k, round(y, 12))
        if key not in inv:
            prof = budget.profiles[k]
            inv[key] = min(prof.hatN_inverse(y), prof.cap)
        return inv[key]

    uniform = len(budget.profiles) == 1
    cache = {}
    best = (0.0, None)
    exact = True
    for pp in range(1, p + 1):
        for q in range(1, pp + 1):
            y = pp / q
            tmat = np.zeros_like(absa)
            for k in range(len(budget.profiles)):
                tmat[budget.labels == k] = tau(k, y)
            if uniform:
                if q not in cache:
                    cache[q] = _subset_sup_weights(absa, q, search)
                _, mask, ex = cache[q]
            else:
                _, mask, ex = _subset_sup_weights(absa * tmat, q, search)
            exact &= ex
            if not mask:
                continue
            r = np.array([m[0] for m in mask])
            cc = np.array([m[1] for m in mask])
            val = float(masked_norms(r[None], cc[None], (absa * tmat)[r, cc][None])[0])
            if val > best[0]:
                wit = np.zeros_like(a)
                wit[r, cc] = tmat[r, cc] * np.sign(a[r, cc])
                best = (val, wit)
    lower, witness = best
    # validate the witness independently
    assert budget.cost(witness) <= p * (1 + 1e-9) and budget.in_box(witness)
    check = float(np.linalg.norm(np.abs(a) * np.abs(witness), 2))
    assert abs(check - lower) <= 1e-9 * max(1.0, lower)
    if p in cache and cache[p][2]:
        small = cache[p][0]
    else:
        val, _, ex = _subset_sup_weights(absa, p, search) if p not in cache else cache[p]
        small = val if ex else min(_frobenius_top(absa, p), float(np.linalg.norm(absa, 2)))
    big = _big_part_upper(absa, budget)
    upper = factor * (small + big)
    upper = max(upper, lower)
    return MaskedResult(lower, upper, witness, exact, {"small_upper": small, "big_upper": big, "factor": factor})


def r_analytic(A, grid, search=None):
    """Analytic sandwich for R_X(A) = R_X(A, Log n) from the entry tails.

    Uses the masked sup at p = round(Log n) with upper factor sqrt(Log Log n).
    The grid should be normalised to E|X_ij| = 1/e.
    """
    A = as_coeff(A)
    n = A.n
    p = max(1, int(round(Log(n))))
    budget = OrliczBudget.from_grid(grid, p)
    return masked_opnorm_sup(A, budget, p, search, factor=math.sqrt(Log(Log(n))))
