"""Property suites run by ``srvnorm verify`` and the acceptance tests.

Each suite returns a SuiteResult listing named properties with the measured
quantities behind the pass/fail decision. ``quick`` shrinks sample counts and
sizes for smoke runs; the full settings are the reference ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import kernels
from .bounds import DConfig, d_of, gaussian_formula, m_of
from .dist import (DistSpec, moment_growth_constant, normalize, product_decompose, sample, subexp_integral,
                   subexp_recipe, tail_profile)
from .matgraph import (BudgetExceededError, GraphView, Log, enumerate_connected_subsets, generate,
                       subset_count_bound)
from .norms import AscentConfig, EnsembleSpec, estimate_op_mean, exact_mean_discrete, substream, sup_bilinear_moment
from .orlicz import OrliczBudget, max_linear, r_analytic

ENSEMBLES = ("identity", "ones", "band", "sparse_bernoulli", "circulant")


@dataclass
class PropertyResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "measured": self.measured}


@dataclass
class SuiteResult:
    name: str
    properties: list

    @property
    def passed(self):
        return all(p.passed for p in self.properties)

    def to_dict(self):
        return {"suite": self.name, "passed": self.passed, "properties": [p.to_dict() for p in self.properties]}

    def summary(self):
        bad = [p.name for p in self.properties if not p.passed]
        return f"{self.name}: {'PASS' if not bad else 'FAIL'} ({len(self.properties) - len(bad)}/{len(self.properties)})" + (
            f" failing: {', '.join(bad[:5])}" if bad else "")


def _f(x):
    return float(x)


# exhaustive oracle ------------------------------------------------------------

def oracle_catalog(seed=0):
    """Small coefficient matrices with finite-support entries: (name, A, law)."""
    rad = DistSpec.rademacher()
    rng = substream(seed, 11)
    cat = []
    for n in (2, 3):
        cat.append((f"ones{n}", np.ones((n, n)), rad))
        cat.append((f"identity{n}", np.eye(n), rad))
        row = np.zeros((n, n))
        row[0] = np.arange(1, n + 1)
        cat.append((f"row{n}", row, rad))
        for r in range(3):
            cat.append((f"signs{n}_{r}", rng.choice([-1.0, 1.0], size=(n, n)), rad))
    cat.append(("three_point2", np.array([[1.0, 2.0], [0.5, -1.0]]), DistSpec.discrete([(-2.0, 0.25), (0.0, 0.5), (2.0, 0.25)])))
    return cat


def suite_oracle(quick=False, seed=0):
    samples = 10**4 if quick else 10**5
    props = []
    for name, a, law in oracle_catalog(seed):
        grid = EnsembleSpec.uniform(a, law)
        exact = exact_mean_discrete(a, grid)
        est = estimate_op_mean(a, grid, samples, seed)
        diff = abs(est.mean - exact)
        ok = diff <= 3 * est.stderr + 1e-12
        props.append(PropertyResult(f"mc_matches_exact[{name}]", ok,
                                    {"exact": exact, "mean": est.mean, "stderr": est.stderr, "samples": samples}))
    exact = exact_mean_discrete(np.ones((2, 2)), EnsembleSpec.uniform(np.ones((2, 2)), DistSpec.rademacher()))
    props.append(PropertyResult("ones2_exact_value", abs(exact - (1 + math.sqrt(2) / 2)) <= 1e-12,
                                {"exact": exact, "closed_form": 1 + math.sqrt(2) / 2}))
    return SuiteResult("oracle", props)


# Gaussian formula two-sidedness ----------------------------------------------------

def suite_gaussian_formula(quick=False, seed=0):
    ns = (8, 16, 32) if quick else (8, 16, 32, 64, 128, 256)
    samples = 500 if quick else 2000
    props = []
    g = DistSpec.gaussian()
    for gen in ENSEMBLES:
        ratios = {}
        for n in ns:
            A = generate({"gen": gen, "n": n})
            est = estimate_op_mean(A, EnsembleSpec.uniform(A, g), samples, seed)
            ratios[n] = est.mean / gaussian_formula(A)
        vals = np.array(list(ratios.values()))
        in_window = bool(np.all((vals >= 0.05) & (vals <= 5)))
        spread = float(vals.max() / vals.min())
        props.append(PropertyResult(f"ratio_in_window[{gen}]", in_window, {"ratios": {str(k): v for k, v in ratios.items()}}))
        props.append(PropertyResult(f"ratio_spread[{gen}]", spread <= 4, {"spread": spread}))
    return SuiteResult("gaussian-formula", props)


# connected subsets ----------------------------------------------------------------

def brute_connected_count(adj, k):
    """Connected k-subsets by checking every k-subset."""
    n = adj.shape[0]
    count = 0
    for sub in combinations(range(n), k):
        s = set(sub)
        seen = {sub[0]}
        stack = [sub[0]]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u]):
                v = int(v)
                if v in s and v not in seen:
                    seen.add(v)
                    stack.append(v)
        count += len(seen) == k
    return count


def random_graph(rng, m_max=12):
    m = int(rng.integers(1, m_max + 1))
    prob = float(rng.uniform(0.05, 0.9))
    upper = np.triu(rng.random((m, m)) < prob, 1)
    return GraphView.from_adjacency(upper | upper.T)


def suite_subset_count(quick=False, seed=0):
    n_graphs = 50 if quick else 200
    rng = substream(seed, 12)
    worst = 0.0
    checked = 0
    mismatches = []
    over = []
    for gi in range(n_graphs):
        G = random_graph(rng)
        adj = G.adjacency()
        for k in range(1, G.n + 1):
            try:
                subs = enumerate_connected_subsets(G, k)
            except BudgetExceededError:
                continue
            cnt = subs.shape[0]
            ref = brute_connected_count(adj, k)
            bound = subset_count_bound(G, k)
            checked += 1
            if cnt != ref:
                mismatches.append((gi, k, cnt, ref))
            if cnt > bound:
                over.append((gi, k, cnt, bound))
            if bound > 0:
                worst = max(worst, cnt / bound)
    return SuiteResult("subset-count", [
        PropertyResult("count_below_bound", not over, {"pairs_checked": checked, "max_count_over_bound": worst,
                                                       "violations": over[:5]}),
        PropertyResult("enumeration_matches_brute_force", not mismatches, {"mismatches": mismatches[:5]}),
    ])


# subexponential moments -------------------------------------------------------------

def suite_subexp(quick=False, seed=0):
    props = []
    for r_w in (0.5, 1.0, 2.0):
        d = DistSpec.weibull(r_w)
        rho = 1.0 / r_w  # ||X||_p grows like p^(1/r_w)
        C1 = moment_growth_constant(d, rho)
        eta, bound = subexp_recipe(C1, rho)
        val = subexp_integral(d, eta, rho)
        props.append(PropertyResult(f"exp_moment_below_bound[weibull({r_w})]", val <= bound,
                                    {"C1": C1, "eta": eta, "value": val, "bound": bound, "growth_exponent": rho}))
    return SuiteResult("subexp-moment", props)


# linear maximization ----------------------------------------------------------------

def suite_linear_sandwich(quick=False, seed=0):
    n_mat = 20 if quick else 100
    rng = substream(seed, 13)
    prof = tail_profile(normalize(DistSpec.gaussian(), 1.0))
    lo, hi = math.inf, 0.0
    for _ in range(n_mat):
        a = rng.standard_normal((8, 8))
        fro = float(np.linalg.norm(a))
        for p in (1, 2, 4, 8):
            sol = max_linear(a, OrliczBudget.uniform(prof, p, 8))
            ratio = sol.objective / (math.sqrt(p) * fro)
            lo, hi = min(lo, ratio), max(hi, ratio)
    return SuiteResult("linear-sandwich", [
        PropertyResult("ratio_within_half_and_two", lo >= 0.5 and hi <= 2.0, {"min_ratio": lo, "max_ratio": hi,
                                                                              "matrices": n_mat})])


def builtin_laws():
    """One representative of every built-in kind, normalised to E|X| = 1."""
    laws = {
        "rademacher": DistSpec.rademacher(),
        "gaussian": DistSpec.gaussian(),
        "weibull(0.5)": DistSpec.weibull(0.5),
        "weibull(1)": DistSpec.weibull(1.0),
        "weibull(2)": DistSpec.weibull(2.0),
        "exp_power(0.7)": DistSpec.exp_power(0.7),
        "exp_power(3)": DistSpec.exp_power(3.0),
        "discrete": DistSpec.discrete([(-2.0, 0.25), (0.0, 0.5), (2.0, 0.25)]),
        "root(gaussian,2)": DistSpec.root(DistSpec.gaussian(), 2),
    }
    return {k: normalize(v, 1.0) for k, v in laws.items()}


def suite_duality_gap(quick=False, seed=0):
    n_mat = 10 if quick else 100
    ps = (1, 4) if quick else (1, 2, 4, 8)
    props = []
    for name, law in builtin_laws().items():
        prof = tail_profile(law)
        rng = substream(seed, 14)
        worst = 0.0
        for _ in range(n_mat):
            a = rng.standard_normal((8, 8))
            for p in ps:
                sol = max_linear(a, OrliczBudget.uniform(prof, p, 8))
                worst = max(worst, sol.gap)
        props.append(PropertyResult(f"gap_at_most_2pct[{name}]", worst <= 0.02, {"max_gap": worst, "matrices": n_mat}))
    return SuiteResult("duality-gap", props)


# analytic R sandwich ------------------------------------------------------------------

def r_catalog(seed=0, n=8):
    rng = substream(seed, 15)
    cat = [(gen, generate({"gen": gen, "n": n}).a) for gen in ENSEMBLES]
    cat.append(("random", np.abs(rng.standard_normal((n, n)))))
    return cat


def suite_analytic_r(quick=False, seed=0):
    n = 8
    laws = {"gaussian": DistSpec.gaussian(), "weibull(0.5)": DistSpec.weibull(0.5), "weibull(1)": DistSpec.weibull(1.0)}
    cfg = AscentConfig(batch=1024, val_samples=1024, eval_samples=4096) if quick else AscentConfig()
    factor = math.sqrt(Log(Log(n)))
    rows = []
    C = 0.0
    for lname, law in laws.items():
        law = normalize(law, 1.0 / math.e)
        for aname, a in r_catalog(seed, n):
            grid = EnsembleSpec.uniform(a, law)
            res = r_analytic(a, grid)
            mc = sup_bilinear_moment(a, grid, Log(n), cfg, seed).value
            c1 = res.lower / mc
            c2 = mc / (factor * res.lower)
            C = max(C, c1, c2)
            rows.append({"law": lname, "matrix": aname, "lower": res.lower, "upper": res.upper, "mc": mc})
    return SuiteResult("analytic-r", [PropertyResult("fitted_constant_at_most_1e3", C <= 1e3, {"C": C, "rows": rows})])


# main two-sided bound scaling -------------------------------------------------------

def scaling_config(quick=False):
    asc = AscentConfig(n_starts=4, max_iters=60, batch=512, val_samples=512, eval_samples=2048)
    return DConfig(asc, exhaustive_limit=16, seed=0)


def scaling_table(quick=False, seed=0, ensembles=ENSEMBLES):
    ns = (16, 32, 64) if quick else (16, 32, 64, 128, 256)
    samples = 200 if quick else 500
    laws = {"rademacher": DistSpec.rademacher(), "gaussian": DistSpec.gaussian(), "weibull(1)": DistSpec.weibull(1.0)}
    dcfg = scaling_config(quick)
    dcfg.seed = seed
    rows = []
    for gen in ensembles:
        for lname, law in laws.items():
            law = normalize(law, 1.0)
            for n in ns:
                A = generate({"gen": gen, "n": n})
                grid = EnsembleSpec.uniform(A, law)
                emp = estimate_op_mean(A, grid, samples, seed).mean
                D = d_of(A, grid, dcfg).value
                R = sup_bilinear_moment(A, grid, Log(n), dcfg.ascent, seed).value
                M = m_of(A)
                rows.append({"ensemble": gen, "law": lname, "n": n, "empirical": emp, "M": M, "D": D, "R": R})
    return rows


def _slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(x, y, 1)[0])


def suite_main_scaling(quick=False, seed=0, rows=None):
    rows = rows if rows is not None else scaling_table(quick, seed)
    props = []
    keys = sorted({(r["ensemble"], r["law"]) for r in rows})
    fitted = 0.0
    for ens, law in keys:
        sel = sorted((r for r in rows if r["ensemble"] == ens and r["law"] == law), key=lambda r: r["n"])
        ns = np.array([r["n"] for r in sel], dtype=float)
        lower_ratio = np.array([(r["M"] + r["D"]) / r["empirical"] for r in sel])
        fitted = max(fitted, float(lower_ratio.max()))
        grow = float(lower_ratio[-1] / lower_ratio[0])
        props.append(PropertyResult(f"lower_ratio_not_growing[{ens},{law}]", grow <= 2.0,
                                    {"ratio_first": lower_ratio[0], "ratio_last": lower_ratio[-1], "growth": grow}))
        upper_ratio = np.array([r["empirical"] / (r["M"] + r["R"]) for r in sel])
        s_log = _slope(np.log(ns), upper_ratio)
        s_loglog = _slope(np.log(np.log(ns)), upper_ratio)
        props.append(PropertyResult(f"upper_ratio_sublogarithmic[{ens},{law}]", s_log <= 0.2,
                                    {"slope_vs_ln_n": s_log, "slope_vs_lnln_n": s_loglog,
                                     "ratios": [float(x) for x in upper_ratio]}))
    props.append(PropertyResult("lower_fitted_constant", math.isfinite(fitted), {"C": fitted}))
    return SuiteResult("main-scaling", props)


# product decomposition -----------------------------------------------------------

def tail_domination_constant(x, y, t_grid, c_grid):
    """Smallest c in c_grid with P(|y| >= t) >= P(|x| >= c t) and P(|x| >= t) >= P(|y| >= c t) on t_grid."""
    xs = np.sort(np.abs(x))
    ys = np.sort(np.abs(y))

    def sf(s, t):
        return 1.0 - np.searchsorted(s, t, side="left") / s.size

    sx, sy = sf(xs, t_grid), sf(ys, t_grid)
    for c in c_grid:
        if np.all(sy >= sf(xs, c * t_grid)) and np.all(sx >= sf(ys, c * t_grid)):
            return float(c)
    return math.inf


def sup_comparison_ratio(T, x, y):
    """E max_s <s, x> / E max_s <s, y> for sample rows x, y."""
    return float(np.mean(np.max(x @ T.T, axis=1)) / np.mean(np.max(y @ T.T, axis=1)))


def suite_product_tail(quick=False, seed=0):
    d = normalize(DistSpec.weibull(0.5), 1.0)
    r = 2
    n_tail = 10**5 if quick else 10**6
    # kappa of weibull(1/2) exceeds 2^(r/2); the decomposition is applied anyway
    factor, prod = product_decompose(d, r, check=False)
    x = sample(d, substream(seed, 16, 0), n_tail)
    y = prod(substream(seed, 16, 1), n_tail)
    t_hi = float(np.quantile(np.abs(x), 0.999))
    t_grid = np.geomspace(1.0, t_hi, 200)
    c_grid = np.geomspace(1.0, 1e4, 801)
    C = tail_domination_constant(x, y, t_grid, c_grid)
    props = [PropertyResult("two_sided_tail_domination", C <= 1e3, {"C": C, "samples": n_tail, "t_max": t_hi})]

    n_sets = 10 if quick else 50
    n_mc = 10**4 if quick else 10**5
    rng = substream(seed, 17)
    ratios = []
    for k in range(n_sets):
        a = rng.standard_normal((4, 4)).ravel()
        m = int(rng.integers(2, 9))
        T = a[None, :] * rng.standard_normal((m, 16))
        xs = sample(d, substream(seed, 18, k, 0), (n_mc, 16))
        ys = prod(substream(seed, 18, k, 1), (n_mc, 16))
        ratios.append(sup_comparison_ratio(T, xs, ys))
    worst = float(max(max(ratios), 1.0 / min(ratios)))
    props.append(PropertyResult("sup_comparison_within_8", worst <= 8.0, {"worst_factor": worst, "sets": n_sets}))
    return SuiteResult("product-tail", props)


# kernel backends -------------------------------------------------------------------

def suite_kernels(quick=False, seed=0):
    from .kernels import _fallback

    rng = substream(seed, 19)
    props = []
    agree = True
    for _ in range(10 if quick else 40):
        G = random_graph(rng, 10)
        d1 = kernels.bfs_distances(G.indptr, G.indices, G.n)
        d2 = _fallback.bfs_distances(G.indptr, G.indices, G.n)
        agree &= bool(np.array_equal(d1, d2))
        for k in range(1, G.n + 1):
            s1 = kernels.connected_subsets(G.indptr, G.indices, G.n, k, 1 << 30)
            s2 = _fallback.connected_subsets(G.indptr, G.indices, G.n, k, 1 << 30)
            agree &= bool(np.array_equal(np.unique(s1, axis=0), np.unique(s2, axis=0)))
    c = rng.standard_normal(12)
    m1, m2 = kernels.sign_moment(c, 3.0), _fallback.sign_moment(c, 3.0)
    props.append(PropertyResult("graph_kernels_agree", agree, {"backend": kernels.BACKEND}))
    props.append(PropertyResult("sign_moment_agrees", abs(m1 - m2) <= 1e-12 * abs(m2), {"cython": m1, "python": m2}))
    return SuiteResult("kernels", props)


SUITES = {
    "oracle": suite_oracle,
    "gaussian-formula": suite_gaussian_formula,
    "subset-count": suite_subset_count,
    "subexp-moment": suite_subexp,
    "linear-sandwich": suite_linear_sandwich,
    "duality-gap": suite_duality_gap,
    "analytic-r": suite_analytic_r,
    "main-scaling": suite_main_scaling,
    "product-tail": suite_product_tail,
    "kernels": suite_kernels,
}


def run_suite(name, quick=False, seed=0):
    return SUITES[name](quick=quick, seed=seed)


__all__ = ["PropertyResult", "SuiteResult", "SUITES", "run_suite"]
