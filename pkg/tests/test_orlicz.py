import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import norm

from srvnorm.dist import DistSpec, TailProfile, normalize, tail_profile
from srvnorm.matgraph import Log
from srvnorm.norms import EnsembleSpec
from srvnorm.orlicz import (
    MaskSearch,
    OrliczBudget,
    OrliczSolution,
    UnboundedError,
    masked_norms,
    masked_opnorm_sup,
    max_linear,
    r_analytic,
    subset_opnorm_sup,
)
from srvnorm.suites import builtin_laws

LAWS = {
    "rademacher": DistSpec.rademacher(),
    "gaussian": DistSpec.gaussian(),
    "weibull(0.5)": DistSpec.weibull(0.5),
    "weibull(1)": DistSpec.weibull(1),
    "weibull(2)": DistSpec.weibull(2),
    "exp_power(3)": DistSpec.exp_power(3),
    "three_point": DistSpec.discrete([(2.0, 0.25), (0.0, 0.5), (-2.0, 0.25)]),
}


def unit_budget(name, p, n):
    return OrliczBudget.uniform(tail_profile(normalize(LAWS[name], 1.0)), p, n)


def gaussian_hatN_inverse(y):
    # unit-scale Gaussian, straight from the normal survival function
    N = lambda t: -(math.log(2) + norm.logsf(t))
    if N(1.0) > y:
        return min(1.0, math.sqrt(y))
    return brentq(lambda t: N(t) - y, 1.0, 50.0, xtol=1e-14)


def check_solution(a, budget, sol):
    p = budget.p
    assert sol.feasible
    assert budget.cost(sol.t_star) <= p * (1 + 1e-9)
    assert budget.in_box(sol.t_star)
    recomputed = float(np.sum(a * sol.t_star))
    assert recomputed == pytest.approx(sol.objective, rel=1e-9, abs=1e-12)
    assert sol.budget_used == pytest.approx(budget.cost(sol.t_star), rel=1e-9, abs=1e-12)
    assert sol.objective <= sol.dual * (1 + 1e-12)


# grid search oracle -------------------------------------------------------------------

def entry_table(prof, p, m=1000):
    T = min(prof.cap, prof.hatN_inverse(p))
    t = np.unique(np.concatenate([np.linspace(0, T, m + 1), [min(1.0, T)]]))
    cost = prof.hatN(t)
    ok = cost <= p
    return t[ok], cost[ok]


def grid_opt(a, prof, p, m=1000):
    """Exact maximum over the product grid, by meet in the middle on entry pairs."""
    c = np.abs(np.asarray(a, dtype=float)).ravel()
    t, k = entry_table(prof, p, m)
    if c.size == 1:
        return float(c[0] * t.max())
    o1 = (c[0] * t[:, None] + c[1] * t[None, :]).ravel()
    b1 = (k[:, None] + k[None, :]).ravel()
    o2 = (c[2] * t[:, None] + c[3] * t[None, :]).ravel()
    b2 = (k[:, None] + k[None, :]).ravel()
    order = np.argsort(b2, kind="stable")
    b2s, o2s = b2[order], np.maximum.accumulate(o2[order])
    idx = np.searchsorted(b2s, p - b1 + 1e-12, side="right") - 1
    ok = idx >= 0
    return float(np.max(o1[ok] + o2s[idx[ok]]))


GRID_CASES = [(name, p, seed) for name in ("gaussian", "weibull(0.5)", "weibull(2)", "rademacher", "three_point")
              for p in (1.0, 2.5, 6.0) for seed in (0, 1)]


@pytest.mark.parametrize("name,p,seed", GRID_CASES)
def test_max_linear_matches_grid_search(name, p, seed):
    rng = np.random.default_rng(seed)
    n = 1 if seed == 0 and p == 1.0 else 2
    a = rng.standard_normal((n, n))
    budget = unit_budget(name, p, n)
    sol = max_linear(a, budget)
    check_solution(a, budget, sol)
    best = grid_opt(a, budget.profiles[0], p)
    assert sol.objective >= best * (1 - 1e-6)
    assert sol.dual >= best * (1 - 1e-12)


def test_grid_search_oracle_on_quadratic_case():
    # 1x1 quadratic: optimum sqrt(p) sits on the grid end point
    prof = TailProfile.quadratic()
    assert grid_opt([[2.0]], prof, 4.0) == pytest.approx(4.0)


# max_linear examples ------------------------------------------------------------------

def test_quadratic_budget_diagonal():
    d = np.array([3.0, -4.0, 0.0, 1.0])
    sol = max_linear(np.diag(d), OrliczBudget.quadratic(5.0, 4))
    assert sol.objective == pytest.approx(math.sqrt(5.0) * np.linalg.norm(d), rel=1e-9)


def test_rademacher_ones_inside_box():
    budget = OrliczBudget.uniform(tail_profile(DistSpec.rademacher()), 1.0, 2)
    sol = max_linear(np.ones((2, 2)), budget)
    np.testing.assert_allclose(sol.t_star, 0.5, atol=1e-8)
    assert sol.objective == pytest.approx(2.0, rel=1e-9)


def test_single_entry_exponential_tail():
    budget = OrliczBudget.uniform(tail_profile(DistSpec.weibull(1)), 4.0, 1)
    sol = max_linear([[1.0]], budget)
    assert sol.objective == pytest.approx(4.0, rel=1e-8)
    assert sol.t_star[0, 0] == pytest.approx(4.0, rel=1e-8)


def test_zero_matrix():
    sol = max_linear(np.zeros((3, 3)), unit_budget("gaussian", 2.0, 3))
    assert sol.objective == 0.0 and sol.gap == 0.0


def test_budget_level_below_one_rejected():
    with pytest.raises(ValueError):
        OrliczBudget.quadratic(0.5, 2)


def test_bounded_tail_is_unbounded_error():
    flat = TailProfile(N=lambda t: np.full_like(np.asarray(t, dtype=float), 0.5))
    with pytest.raises(UnboundedError):
        max_linear([[1.0]], OrliczBudget.uniform(flat, 2.0, 1))


def test_signs_follow_coefficients():
    a = np.array([[1.0, -2.0], [0.0, 3.0]])
    sol = max_linear(a, unit_budget("gaussian", 3.0, 2))
    assert np.all(sol.t_star * a >= 0)
    assert sol.t_star[1, 0] == 0.0


def test_solution_json_round_trip():
    a = np.random.default_rng(3).standard_normal((4, 4))
    sol = max_linear(a, unit_budget("weibull(1)", 3.0, 4))
    back = OrliczSolution.from_dict(__import__("json").loads(sol.to_json()))
    np.testing.assert_array_equal(back.t_star, sol.t_star)
    assert back.objective == sol.objective and back.dual == sol.dual and back.p == sol.p


# max_linear properties ----------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(1.0, 20.0), st.integers(0, 10**6))
def test_quadratic_budget_is_cauchy_schwarz(n, p, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    sol = max_linear(a, OrliczBudget.quadratic(p, n))
    assert sol.objective == pytest.approx(math.sqrt(p) * np.linalg.norm(a), rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(LAWS)), st.integers(1, 4), st.floats(1.0, 10.0), st.integers(0, 10**6))
def test_max_linear_feasible_and_consistent(name, n, p, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.7)
    budget = unit_budget(name, p, n)
    check_solution(a, budget, max_linear(a, budget))


@settings(max_examples=8, deadline=None)
@given(st.sampled_from(sorted(LAWS)), st.floats(0.1, 10.0), st.integers(0, 10**6))
def test_max_linear_homogeneous(name, s, seed):
    a = np.random.default_rng(seed).standard_normal((3, 3))
    budget = unit_budget(name, 3.0, 3)
    base = max_linear(a, budget)
    scaled = max_linear(s * a, budget)
    assert scaled.objective == pytest.approx(s * base.objective, rel=1e-6)


@settings(max_examples=8, deadline=None)
@given(st.sampled_from(sorted(LAWS)), st.floats(1.0, 8.0), st.floats(1.0, 3.0), st.integers(0, 10**6))
def test_max_linear_monotone_in_budget(name, p, factor, seed):
    a = np.random.default_rng(seed).standard_normal((3, 3))
    lo = max_linear(a, unit_budget(name, p, 3))
    hi = max_linear(a, unit_budget(name, p * factor, 3))
    assert lo.objective <= hi.dual * (1 + 1e-12)


@pytest.mark.parametrize("name", sorted(builtin_laws()))
def test_duality_gap_small_on_8x8(name):
    prof = tail_profile(normalize(builtin_laws()[name], 1.0))
    rng = np.random.default_rng(11)
    for _ in range(3):
        a = rng.standard_normal((8, 8))
        for p in (1.0, 4.0, 8.0):
            budget = OrliczBudget.uniform(prof, p, 8)
            sol = max_linear(a, budget)
            check_solution(a, budget, sol)
            assert sol.gap <= 0.02


def test_gaussian_value_tracks_frobenius_norm():
    prof = tail_profile(normalize(DistSpec.gaussian(), 1.0))
    rng = np.random.default_rng(5)
    for _ in range(5):
        a = rng.standard_normal((8, 8))
        for p in (1, 3, 10):
            sol = max_linear(a, OrliczBudget.uniform(prof, p, 8))
            ratio = sol.objective / (math.sqrt(p) * np.linalg.norm(a))
            assert 0.5 <= ratio <= 2.0


def test_mixed_laws_budget():
    grid = EnsembleSpec.from_grid(np.ones((2, 2)), [[LAWS["gaussian"], LAWS["rademacher"]],
                                                    [LAWS["rademacher"], LAWS["weibull(1)"]]])
    budget = OrliczBudget.from_grid(grid, 3.0)
    a = np.array([[1.0, 2.0], [-1.0, 0.5]])
    sol = max_linear(a, budget)
    check_solution(a, budget, sol)
    # rademacher entries never leave [0, 1]
    assert abs(sol.t_star[0, 1]) <= 1 and abs(sol.t_star[1, 0]) <= 1


# subset_opnorm_sup --------------------------------------------------------------------

def brute_subset_sup(a, q):
    """Largest masked norm over all masks of q nonzero entries."""
    pos = list(zip(*np.nonzero(a)))
    best = 0.0
    for sel in combinations(pos, min(q, len(pos))):
        m = np.zeros_like(a)
        for i, j in sel:
            m[i, j] = a[i, j]
        best = max(best, np.linalg.norm(m, 2))
    return best


def test_subset_sup_examples():
    a = np.array([[1.0, -5.0], [2.0, 3.0]])
    assert subset_opnorm_sup(a, 1)[0] == pytest.approx(5.0)
    for k in range(1, 6):
        assert subset_opnorm_sup(np.eye(5), k)[0] == pytest.approx(1.0)
    ones = np.ones((2, 2))
    assert subset_opnorm_sup(ones, 4)[0] == pytest.approx(2.0)
    assert subset_opnorm_sup(ones, 2)[0] == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        subset_opnorm_sup(ones, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(1, 5), st.integers(0, 10**6))
def test_subset_sup_matches_brute_force(n, q, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.8)
    val, mask = subset_opnorm_sup(a, q)
    assert val == pytest.approx(brute_subset_sup(np.abs(a), q), rel=1e-10, abs=1e-14)
    if mask:
        m = np.zeros_like(a)
        for i, j in mask:
            m[i, j] = abs(a[i, j])
        assert np.linalg.norm(m, 2) == pytest.approx(val, rel=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_subset_sup_local_search_is_a_lower_bound(seed):
    a = np.random.default_rng(seed).standard_normal((5, 5))
    exact, _ = subset_opnorm_sup(a, 3)
    approx, mask = subset_opnorm_sup(a, 3, MaskSearch(exhaustive_limit=0, restarts=5))
    assert len(mask) == 3 and len(set(mask)) == 3
    assert approx <= exact * (1 + 1e-12)
    assert approx >= 0.8 * exact


def test_masked_norms_batch():
    rows = np.array([[0, 0], [0, 1]])
    cols = np.array([[0, 1], [0, 1]])
    vals = np.array([[1.0, 1.0], [3.0, -4.0]])
    np.testing.assert_allclose(masked_norms(rows, cols, vals), [math.sqrt(2), 4.0])


# masked_opnorm_sup --------------------------------------------------------------------

@pytest.mark.parametrize("p", [1, 2, 3, 5])
def test_masked_rademacher_reduces_to_subset_sup(p):
    a = np.random.default_rng(p).standard_normal((5, 5))
    budget = OrliczBudget.uniform(tail_profile(DistSpec.rademacher()), p, 5)
    res = masked_opnorm_sup(a, budget)
    sub, _ = subset_opnorm_sup(a, p)
    assert res.lower == pytest.approx(sub, rel=1e-12)
    assert res.upper / math.sqrt(Log(p)) == pytest.approx(sub, rel=1e-12)


def test_masked_single_entry_exponential_tail():
    budget = OrliczBudget.uniform(tail_profile(DistSpec.weibull(1)), 4, 1)
    assert masked_opnorm_sup([[1.0]], budget).lower == pytest.approx(4.0, rel=1e-8)


def test_masked_gaussian_identity():
    budget = OrliczBudget.uniform(tail_profile(DistSpec.gaussian()), 2, 4)
    res = masked_opnorm_sup(np.eye(4), budget)
    assert res.lower == pytest.approx(gaussian_hatN_inverse(2.0), rel=1e-8)
    assert res.lower > 1.0


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(LAWS)), st.integers(1, 4), st.integers(0, 10**6))
def test_masked_sandwich_and_witness(name, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.7)
    prof = tail_profile(normalize(LAWS[name], 1 / math.e))
    prev = 0.0
    for p in range(1, 5):
        budget = OrliczBudget.uniform(prof, p, n)
        res = masked_opnorm_sup(a, budget)
        assert res.lower <= res.upper
        assert res.lower >= prev * (1 - 1e-12)
        prev = res.lower
        w = res.witness
        assert budget.cost(w) <= p * (1 + 1e-9) and budget.in_box(w)
        assert np.count_nonzero(w) <= p
        assert np.linalg.norm(a * w, 2) == pytest.approx(res.lower, rel=1e-9, abs=1e-12)


# r_analytic ---------------------------------------------------------------------------

def test_r_analytic_identity():
    rad = r_analytic(np.eye(16), EnsembleSpec.uniform(np.eye(16), DistSpec.rademacher()))
    assert rad.lower == pytest.approx(1.0)
    g = r_analytic(np.eye(16), EnsembleSpec.uniform(np.eye(16), DistSpec.gaussian()))
    p = round(Log(16))
    assert p == 3
    assert g.lower == pytest.approx(gaussian_hatN_inverse(p), rel=1e-8)
    assert g.upper >= g.lower


@pytest.mark.parametrize("law", [DistSpec.rademacher(), DistSpec.gaussian()])
def test_r_analytic_small_n_is_max_entry(law):
    a = np.array([[0.5, -2.0], [1.0, 0.0]])
    res = r_analytic(a, EnsembleSpec.uniform(a, law))
    assert res.lower == pytest.approx(2.0)
    assert res.parts["factor"] == pytest.approx(1.0)
