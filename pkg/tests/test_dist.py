import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import gamma, gammaln

from srvnorm.dist import (
    DistSpec,
    PreconditionError,
    check_N_growth,
    estimate_kappa,
    is_normalized,
    mean_abs,
    moment_growth_constant,
    moment_p,
    normalize,
    product_decompose,
    sample,
    subexp_integral,
    subexp_recipe,
    subgaussian_norm,
    tail_decay_threshold,
    tail_profile,
)

THREE_POINT = DistSpec.discrete([(2.0, 0.25), (0.0, 0.5), (-2.0, 0.25)])

LAWS = {
    "rademacher": DistSpec.rademacher(),
    "gaussian": DistSpec.gaussian(),
    "weibull(0.5)": DistSpec.weibull(0.5),
    "weibull(1)": DistSpec.weibull(1.0),
    "weibull(2)": DistSpec.weibull(2.0),
    "exp_power(1.5)": DistSpec.exp_power(1.5),
    "three_point": THREE_POINT,
}


def gamma_kappa_ratio(p, r):
    # ||X||_2p / ||X||_p for Weibull(r), straight from Gamma functions
    return math.exp(gammaln(2 * p / r + 1) / (2 * p) - gammaln(p / r + 1) / p)


# sampling ---------------------------------------------------------------------

def test_rademacher_values_and_balance():
    x = sample(DistSpec.rademacher(), np.random.default_rng(0), 200_000)
    assert set(np.unique(x)) == {-1.0, 1.0}
    frac = np.mean(x > 0)
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / x.size)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_weibull_inverse_survival_draw(r):
    n = 1000
    got = sample(DistSpec.weibull(r), np.random.default_rng(5), n)
    rng = np.random.default_rng(5)
    u = 1.0 - rng.random(n)
    sign = 2.0 * rng.integers(0, 2, n) - 1.0
    np.testing.assert_array_equal(got, sign * (-np.log(u)) ** (1.0 / r))


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_weibull_magnitude_ks(r):
    x = np.abs(sample(DistSpec.weibull(r), np.random.default_rng(1), 20_000))
    res = stats.kstest(x, lambda t: 1.0 - np.exp(-np.power(t, r)))
    assert res.pvalue > 1e-3


def test_gaussian_mean_abs_monte_carlo():
    x = np.abs(sample(DistSpec.gaussian(), np.random.default_rng(2), 1_000_000))
    sigma = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - math.sqrt(2 / math.pi)) <= 3 * sigma


@pytest.mark.parametrize("name", sorted(LAWS))
def test_sampler_symmetric(name):
    x = sample(LAWS[name], np.random.default_rng(3), 40_000)
    half = x.size // 2
    res = stats.ks_2samp(x[:half], -x[half:])
    assert res.pvalue > 1e-3


def test_sample_deterministic_given_stream():
    d = DistSpec.weibull(0.7, 2.0)
    a = sample(d, np.random.default_rng(11), 64)
    b = sample(d, np.random.default_rng(11), 64)
    np.testing.assert_array_equal(a, b)
    assert isinstance(sample(d, np.random.default_rng(11)), float)


# construction and serialisation -----------------------------------------------

def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        DistSpec.gaussian(scale=0.0)
    with pytest.raises(ValueError):
        DistSpec.weibull(-1.0)
    with pytest.raises(ValueError):
        DistSpec.discrete([(1.0, 0.3), (-1.0, 0.3)])
    with pytest.raises(ValueError):
        DistSpec("cauchy")


def test_discrete_mirrored_support():
    d = DistSpec.discrete([(1.0, 0.5), (-1.0, 0.5)])
    vals, probs = d.atoms()
    assert sorted(vals.tolist()) == [-1.0, 1.0]
    assert probs.sum() == pytest.approx(1.0, abs=1e-15)


def test_json_schema_example():
    d = DistSpec.from_dict({"kind": "weibull", "r": 0.5, "scale": 1.0, "normalize_to": 1.0})
    assert d.kind == "weibull" and d.r == 0.5
    assert abs(mean_abs(d) - 1.0) <= 1e-10
    d2 = DistSpec.from_dict({"kind": "discrete", "support": [[1.0, 0.5], [-1.0, 0.5]]})
    assert moment_p(d2, 3) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        DistSpec.from_dict({"kind": "gaussian", "r": 2})


@settings(max_examples=50, deadline=None)
@given(
    kind=st.sampled_from(["rademacher", "gaussian", "weibull", "exp_power"]),
    param=st.floats(0.2, 4.0),
    scale=st.floats(0.01, 100.0),
)
def test_json_round_trip(kind, param, scale):
    if kind == "weibull":
        d = DistSpec.weibull(param, scale)
    elif kind == "exp_power":
        d = DistSpec.exp_power(param, scale)
    else:
        d = DistSpec(kind, scale=scale)
    assert DistSpec.from_dict(d.to_dict()) == d


# moments and kappa ------------------------------------------------------------

def test_moment_examples():
    assert moment_p(DistSpec.rademacher(), 7) == 1.0
    assert moment_p(DistSpec.weibull(1.0), 2) == pytest.approx(math.sqrt(gamma(3)), rel=1e-12)
    assert moment_p(DistSpec.gaussian(), 2) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("p", [1.0, 1.5, 3.0, 8.0])
def test_gaussian_moment_formula(p):
    want = math.sqrt(2) * (gamma((p + 1) / 2) / math.sqrt(math.pi)) ** (1 / p)
    assert moment_p(DistSpec.gaussian(), p) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("name", ["gaussian", "weibull(0.5)", "weibull(2)", "exp_power(1.5)"])
@pytest.mark.parametrize("p", [1.0, 2.5, 6.0])
def test_quadrature_matches_closed_form(name, p):
    d = LAWS[name]
    assert moment_p(d, p, method="quad") == pytest.approx(moment_p(d, p), rel=1e-8)


def test_moment_scales_linearly():
    d = DistSpec.weibull(0.8)
    assert moment_p(DistSpec.weibull(0.8, 3.0), 4) == pytest.approx(3.0 * moment_p(d, 4), rel=1e-12)


def test_moment_rejects_p_below_one():
    with pytest.raises(ValueError):
        moment_p(DistSpec.gaussian(), 0.5)


def test_kappa_examples():
    assert estimate_kappa(DistSpec.rademacher(), 64) == pytest.approx(1.0, abs=1e-12)
    assert 1.25 <= estimate_kappa(DistSpec.gaussian(), 64) <= 1.415
    assert 3.5 <= estimate_kappa(DistSpec.weibull(0.5), 64) <= 4.0


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_kappa_matches_gamma_ratio(r):
    assert estimate_kappa(DistSpec.weibull(r), 64) == pytest.approx(gamma_kappa_ratio(64, r), rel=1e-10)


@pytest.mark.parametrize("name", sorted(LAWS))
def test_kappa_monotone_in_pmax(name):
    d = LAWS[name]
    vals = [estimate_kappa(d, pm) for pm in (4, 16, 64, 128)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("name", sorted(set(LAWS) - {"weibull(0.5)"}))
def test_kappa_converged_between_64_and_128(name):
    d = LAWS[name]
    k64, k128 = estimate_kappa(d, 64), estimate_kappa(d, 128)
    assert k128 / k64 - 1 < 0.01


def test_kappa_heaviest_weibull_tracks_exact_ratio():
    # Weibull(1/2) approaches its limit 4 slowly: the exact ratio itself moves
    # by about 1.04% between p = 64 and 128, so only agreement is asserted.
    d = LAWS["weibull(0.5)"]
    k64, k128 = estimate_kappa(d, 64), estimate_kappa(d, 128)
    exact = gamma_kappa_ratio(128, 0.5) / gamma_kappa_ratio(64, 0.5)
    assert k128 / k64 == pytest.approx(exact, rel=1e-9)


# tails ------------------------------------------------------------------------

def test_tail_examples():
    rad = tail_profile(DistSpec.rademacher())
    assert rad.hatN(0.5) == 0.25
    assert rad.hatN(1.0) == 1.0
    assert rad.hatN(1.5) == math.inf
    for r in (0.5, 1.0, 3.0):
        prof = tail_profile(DistSpec.weibull(r))
        assert prof.hatN(2.0) == pytest.approx(2.0**r, rel=1e-12)
        assert prof.N(np.array([0.3]))[0] == pytest.approx(0.3**r, rel=1e-12)
    want = -math.log(2 * stats.norm.sf(2.0))
    assert tail_profile(DistSpec.gaussian()).hatN(2.0) == pytest.approx(want, rel=1e-10)
    assert want == pytest.approx(3.09, abs=5e-3)


@pytest.mark.parametrize("name", sorted(LAWS))
def test_N_nondecreasing_and_bracketed(name):
    prof = tail_profile(LAWS[name])
    t = np.linspace(0.01, 6.0, 600)
    N = prof.N(t)
    assert np.all(N[1:] >= N[:-1] - 1e-12)
    hat = prof.hatN(t)
    small = t <= 1
    np.testing.assert_array_equal(hat[small], t[small] ** 2)
    np.testing.assert_array_equal(hat[~small], N[~small])


def test_N_infinite_exactly_past_support():
    prof = tail_profile(THREE_POINT)
    assert prof.support_sup == 2.0
    assert np.isfinite(prof.N(np.array([2.0]))[0])
    assert prof.N(np.array([2.0 + 1e-9]))[0] == math.inf
    assert prof.N(np.array([1.5]))[0] == pytest.approx(math.log(2), rel=1e-12)


@pytest.mark.parametrize("name", sorted(LAWS))
def test_hatN_at_least_one_past_one_under_small_mean(name):
    prof = tail_profile(normalize(LAWS[name], 1 / math.e))
    t = np.linspace(1.0 + 1e-9, 20.0, 400)
    assert np.all(prof.hatN(t) >= 1.0 - 1e-12)


@settings(max_examples=60, deadline=None)
@given(
    name=st.sampled_from(["gaussian", "weibull(0.5)", "weibull(1)", "weibull(2)", "exp_power(1.5)"]),
    y=st.floats(1.0, 60.0),
)
def test_hatN_inverse_on_tail_branch(name, y):
    prof = tail_profile(LAWS[name])
    t = prof.hatN_inverse(y)
    assert prof.hatN(t) <= y * (1 + 1e-9)
    assert prof.hatN(t * (1 + 1e-8) + 1e-12) >= y * (1 - 1e-7)


# normalisation ----------------------------------------------------------------

def test_normalize_examples():
    assert normalize(DistSpec.gaussian()).scale == pytest.approx(math.sqrt(math.pi / 2), rel=1e-12)
    assert normalize(DistSpec.rademacher()).scale == 1.0
    assert normalize(DistSpec.weibull(1.0), 1 / math.e).scale == pytest.approx(1 / math.e, rel=1e-12)


@pytest.mark.parametrize("name", sorted(LAWS))
@pytest.mark.parametrize("target", [1.0, 1 / math.e])
def test_normalize_hits_target_and_is_idempotent(name, target):
    d = normalize(LAWS[name], target)
    assert abs(mean_abs(d) - target) <= 1e-10
    assert is_normalized(d, target)
    assert abs(normalize(d, target).scale - d.scale) <= 1e-10 * d.scale


# subgaussian and subexponential -----------------------------------------------

def test_subgaussian_examples():
    assert subgaussian_norm(DistSpec.rademacher()) == pytest.approx(1 / math.sqrt(math.log(2)), rel=1e-6)
    assert subgaussian_norm(DistSpec.gaussian()) == pytest.approx(math.sqrt(8 / 3), rel=1e-6)


@pytest.mark.parametrize("c", [0.1, 3.0, 25.0])
def test_subgaussian_homogeneous(c):
    base = subgaussian_norm(DistSpec.weibull(2.0))
    assert subgaussian_norm(DistSpec.weibull(2.0, c)) == pytest.approx(c * base, rel=1e-6)


def test_heavy_law_not_subgaussian():
    with pytest.raises(ValueError):
        subgaussian_norm(DistSpec.weibull(1.0))


def test_subexp_examples():
    for eta in (0.1, 0.7):
        assert subexp_integral(DistSpec.rademacher(), eta, 2.0) == pytest.approx(math.exp(eta), rel=1e-12)
    assert subexp_integral(DistSpec.weibull(1.0), 0.5, 1.0) == pytest.approx(2.0, rel=1e-6)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_subexp_bound_from_moment_growth(r):
    d = DistSpec.weibull(r)
    rho = 1.0 / r  # ||X||_p = Gamma(p/r + 1)^(1/p) grows like p^(1/r)
    C1 = moment_growth_constant(d, rho)
    eta, bound = subexp_recipe(C1, rho)
    assert subexp_integral(d, eta, rho) <= bound


# growth of N and decay of tails -----------------------------------------------

def test_N_growth_examples():
    w1 = normalize(DistSpec.weibull(1.0))
    grid = [(x, t) for x in (1, 2, 4, 8) for t in (1, 2, 4, 8)]
    assert check_N_growth(w1, grid, kappa=2.0) == 1.0
    assert check_N_growth(normalize(DistSpec.gaussian()), [(1, 1)]) == 1.0
    C = check_N_growth(normalize(DistSpec.gaussian()), grid)
    assert math.isfinite(C) and C <= 10


def test_N_growth_requires_unit_mean():
    with pytest.raises(PreconditionError):
        check_N_growth(DistSpec.gaussian(), [(1, 1)])


@pytest.mark.parametrize("name", sorted(set(LAWS) - {"rademacher"}))
def test_tail_decay_past_threshold(name):
    d = normalize(LAWS[name])
    eta, C, expo = tail_decay_threshold(estimate_kappa(d))
    t = C * 2.0 ** np.arange(6)
    assert np.all(tail_profile(d).N(t) >= eta * t**expo / 2)


# product decomposition --------------------------------------------------------

def test_product_decompose_identity_for_r1():
    d = normalize(DistSpec.gaussian())
    factor, draw = product_decompose(d, 1)
    assert factor == d
    x = draw(np.random.default_rng(0), 20_000)
    y = sample(d, np.random.default_rng(1), 20_000)
    assert stats.ks_2samp(x, y).pvalue > 1e-3


@pytest.mark.parametrize("r", [1, 2, 3, 5])
def test_product_decompose_rademacher(r):
    factor, draw = product_decompose(DistSpec.rademacher(), r)
    assert factor.kind == "rademacher" and factor.scale == 1.0
    x = draw(np.random.default_rng(r), 1000)
    assert set(np.unique(x)) <= {-1.0, 1.0}


def test_product_decompose_weibull_root_is_weibull1():
    d = DistSpec.weibull(0.5)
    factor, _ = product_decompose(d, 2, check=False)
    assert factor.kind == "weibull" and factor.r == pytest.approx(1.0)
    mags = np.abs(sample(d, np.random.default_rng(4), 20_000)) ** 0.5
    assert stats.kstest(mags, lambda t: 1 - np.exp(-t)).pvalue > 1e-3


def test_product_decompose_precondition():
    with pytest.raises(PreconditionError):
        product_decompose(normalize(DistSpec.weibull(0.5)), 2)
    with pytest.raises(PreconditionError):
        product_decompose(DistSpec.gaussian(), 2)
    with pytest.raises(ValueError):
        product_decompose(DistSpec.rademacher(), 0)
