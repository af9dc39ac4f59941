"""Symmetric entry laws with regular moment growth.

A law is described by an immutable :class:`DistSpec`. All analytic quantities
(moments, tails, normalisation) are computed for the unit-scale law and then
rescaled, so ``scale`` never enters the special-function calls.

Built-in kinds
--------------
rademacher   ±1 with probability 1/2
gaussian     standard normal
weibull      P(|X| >= t) = exp(-t**r)
exp_power    density proportional to exp(-|x|**alpha)
discrete     finite sign-symmetric support
root         law of eps * |Y|**(1/order) for a base law Y
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate, special


class DivergentMomentError(ArithmeticError):
    """An expectation requested from a law is infinite."""


class NotSubgaussianError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


KINDS = ("rademacher", "gaussian", "weibull", "exp_power", "discrete", "root")

_LOG2 = math.log(2.0)


def _mirror(support):
    atoms: dict[float, float] = {}
    for x, prob in support:
        x = float(x)
        prob = float(prob)
        if prob < 0:
            raise ValueError("negative probability in discrete support")
        if x == 0.0:
            atoms[0.0] = atoms.get(0.0, 0.0) + prob
        else:
            atoms[x] = atoms.get(x, 0.0) + prob / 2
            atoms[-x] = atoms.get(-x, 0.0) + prob / 2
    return tuple(sorted((x, p) for x, p in atoms.items() if p > 0))


@dataclass(frozen=True)
class DistSpec:
    kind: str
    param: float | None = None
    support: tuple = ()
    scale: float = 1.0
    normalization_target: float | None = None
    base: DistSpec | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale must be positive and finite")
        if self.kind in ("weibull", "exp_power", "root"):
            if self.param is None or not self.param > 0:
                raise ValueError(f"{self.kind} needs a positive parameter")
        if self.kind == "root" and self.base is None:
            raise ValueError("root law needs a base law")
        if self.kind == "discrete":
            sup = _mirror(self.support)
            total = sum(p for _, p in sup)
            if not sup or abs(total - 1.0) > 1e-12:
                raise ValueError(f"discrete probabilities must sum to 1 (got {total!r})")
            object.__setattr__(self, "support", sup)

    # constructors ----------------------------------------------------------
    @classmethod
    def rademacher(cls, scale=1.0):
        return cls("rademacher", scale=scale)

    @classmethod
    def gaussian(cls, scale=1.0):
        return cls("gaussian", scale=scale)

    @classmethod
    def weibull(cls, r, scale=1.0):
        return cls("weibull", param=float(r), scale=scale)

    @classmethod
    def exp_power(cls, alpha, scale=1.0):
        return cls("exp_power", param=float(alpha), scale=scale)

    @classmethod
    def discrete(cls, support, scale=1.0):
        return cls("discrete", support=tuple(tuple(a) for a in support), scale=scale)

    @classmethod
    def root(cls, base, order, scale=1.0):
        return cls("root", param=float(order), base=base, scale=scale)

    @property
    def r(self):
        return self.param

    @property
    def is_discrete(self):
        return self.kind in ("rademacher", "discrete") or (
            self.kind == "root" and self.base.is_discrete
        )

    def atoms(self):
        """(values, probs) of a finite-support law, scale applied."""
        vals, probs = _unit_atoms(self)
        return vals * self.scale, probs

    # serialisation ---------------------------------------------------------
    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "weibull":
            d["r"] = self.param
        elif self.kind == "exp_power":
            d["alpha"] = self.param
        elif self.kind == "discrete":
            d["support"] = [[x, p] for x, p in self.support]
        elif self.kind == "root":
            d["base"] = self.base.to_dict()
            d["order"] = self.param
        d["scale"] = self.scale
        if self.normalization_target is not None:
            d["normalization_target"] = self.normalization_target
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        scale = float(d.pop("scale", 1.0))
        target = d.pop("normalize_to", None)
        stored_target = d.pop("normalization_target", None)
        if kind == "weibull":
            spec = cls.weibull(d.pop("r"), scale)
        elif kind == "exp_power":
            spec = cls.exp_power(d.pop("alpha"), scale)
        elif kind == "discrete":
            spec = cls.discrete(d.pop("support"), scale)
        elif kind == "root":
            spec = cls.root(cls.from_dict(d.pop("base")), d.pop("order"), scale)
        elif kind in ("rademacher", "gaussian"):
            spec = cls(kind, scale=scale)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        if d:
            raise ValueError(f"unexpected keys for {kind}: {sorted(d)}")
        if stored_target is not None:
            spec = replace(spec, normalization_target=float(stored_target))
        if target is not None:
            spec = normalize(spec, float(target))
        return spec


# unit-scale primitives -------------------------------------------------------

def _unit_atoms(d):
    if d.kind == "rademacher":
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    if d.kind == "discrete":
        arr = np.array(d.support, dtype=float)
        return arr[:, 0], arr[:, 1]
    if d.kind == "root" and d.base.is_discrete:
        vals, probs = d.base.atoms()
        return np.sign(vals) * np.abs(vals) ** (1.0 / d.param), probs
    raise TypeError(f"{d.kind} law has no finite support")


def _log_abs_moment_unit(d, p):
    """log E|Z|^p for the unit-scale law."""
    k = d.kind
    if k == "rademacher":
        return 0.0
    if k == "gaussian":
        return p / 2 * _LOG2 + special.gammaln((p + 1) / 2) - 0.5 * math.log(math.pi)
    if k == "weibull":
        return float(special.gammaln(p / d.param + 1))
    if k == "exp_power":
        a = d.param
        return float(special.gammaln((p + 1) / a) - special.gammaln(1 / a))
    if k == "discrete":
        vals, probs = _unit_atoms(d)
        mask = vals != 0
        if p == 0:
            return 0.0
        return float(special.logsumexp(p * np.log(np.abs(vals[mask])), b=probs[mask]))
    if k == "root":
        return _log_abs_moment(d.base, p / d.param)
    raise AssertionError(k)


def _log_abs_moment(d, p):
    """log E|X|^p including scale."""
    return p * math.log(d.scale) + _log_abs_moment_unit(d, p)


def _log_sf_upper_gamma(a, x):
    """log of the regularised upper incomplete gamma Q(a, x), stable for large x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    q = special.gammaincc(a, x)
    ok = q > 1e-280
    out[ok] = np.log(q[ok])
    xs = x[~ok]
    if xs.size:
        # asymptotic series of Gamma(a, x)
        s = 1.0 + (a - 1) / xs + (a - 1) * (a - 2) / xs**2 + (a - 1) * (a - 2) * (a - 3) / xs**3
        out[~ok] = (a - 1) * np.log(xs) - xs + np.log(s) - special.gammaln(a)
    return out


def _log_survival_unit(d, t):
    """log P(|Z| >= t) for the unit-scale law, vectorised over t >= 0."""
    t = np.asarray(t, dtype=float)
    k = d.kind
    if k == "gaussian":
        return _LOG2 + special.log_ndtr(-t)
    if k == "weibull":
        return -(t ** d.param)
    if k == "exp_power":
        a = d.param
        return _log_sf_upper_gamma(1 / a, t ** a)
    if k in ("rademacher", "discrete") or (k == "root" and d.base.is_discrete):
        vals, probs = _unit_atoms(d)
        absv = np.abs(vals)
        order = np.argsort(absv)
        absv = absv[order]
        tail = np.cumsum(probs[order][::-1])[::-1]
        idx = np.searchsorted(absv, t, side="left")
        out = np.full(t.shape, -np.inf)
        inside = idx < absv.size
        with np.errstate(divide="ignore"):
            out[inside] = np.log(np.minimum(tail[idx[inside]], 1.0))
        return out
    if k == "root":
        return log_survival(d.base, t ** d.param)
    raise AssertionError(k)


def log_survival(d, t):
    """log P(|X| >= t), vectorised."""
    t = np.asarray(t, dtype=float)
    return _log_survival_unit(d, np.maximum(t, 0.0) / d.scale)


def support_sup(d):
    if d.is_discrete:
        vals, _ = d.atoms()
        return float(np.max(np.abs(vals)))
    return math.inf


# sampling ----------------------------------------------------------------------

def _sample_abs_unit(d, rng, size):
    k = d.kind
    if k == "rademacher":
        return np.ones(size)
    if k == "gaussian":
        return np.abs(rng.standard_normal(size))
    if k == "weibull":
        u = 1.0 - rng.random(size)  # (0, 1]
        return (-np.log(u)) ** (1.0 / d.param)
    if k == "exp_power":
        a = d.param
        return rng.standard_gamma(1.0 / a, size) ** (1.0 / a)
    if k == "discrete":
        vals, probs = _unit_atoms(d)
        return np.abs(vals)[rng.choice(vals.size, size=size, p=probs)]
    if k == "root":
        return np.abs(sample(d.base, rng, size)) ** (1.0 / d.param)
    raise AssertionError(k)


def sample(d, rng, size=None):
    """Draw from the law with the given ``numpy.random.Generator``.

    The magnitude is drawn first and an independent sign attached, so every
    kind is symmetric by construction. Returns a float when ``size`` is None.
    """
    shape = () if size is None else size
    if d.kind == "gaussian":
        out = rng.standard_normal(shape) * d.scale
    elif d.kind == "discrete":
        vals, probs = _unit_atoms(d)
        out = vals[rng.choice(vals.size, size=shape, p=probs)] * d.scale
    else:
        mag = _sample_abs_unit(d, rng, shape)
        sign = 2.0 * rng.integers(0, 2, size=shape) - 1.0
        out = sign * mag * d.scale
    if size is None:
        return float(out)
    return out


# moments ---------------------------------------------------------------------

def _tail_integral(d, log_weight, divergence_scale, rtol):
    """int_0^inf exp(log_weight(t) + log P(|X| >= t)) dt by adaptive quadrature.

    ``log_weight`` is the log of f'(t) for an expectation E f(|X|) - f(0).
    Raises DivergentMomentError if the integrand does not decay.
    """
    def logh(t):
        return log_weight(t) + log_survival(d, t)

    probe = divergence_scale * np.logspace(-3, 15, 721)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        h = logh(probe)
    h = np.where(np.isnan(h), -np.inf, h)
    if np.isfinite(h[-1]) and (h[-1] > -30.0 or h[-1] >= h[-2]):
        raise DivergentMomentError("integrand does not decay on the probe grid")
    peak = int(np.argmax(h))
    hmax = h[peak]
    if not np.isfinite(hmax):
        return 0.0
    # integrate in the scaled form exp(logh - hmax) to avoid overflow
    above = np.nonzero(h > hmax - 60.0)[0]
    hi = probe[min(above[-1] + 1, probe.size - 1)]
    lo_idx = above[0]
    t_peak = probe[peak]
    pts = [0.0, probe[lo_idx], t_peak, hi]
    pts = sorted(set(float(x) for x in pts))

    def f(t):
        if t <= 0:
            return 0.0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            v = logh(np.array([t]))[0] - hmax
        return math.exp(v) if v > -745 else 0.0

    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=400)
        total += val
    tail, _ = integrate.quad(f, hi, np.inf, epsabs=0.0, epsrel=rtol, limit=400)
    total += tail
    return total * math.exp(hmax) if hmax < 700 else total * math.exp(700) * math.exp(hmax - 700)


def _expect_discrete(d, f):
    vals, probs = d.atoms()
    return float(np.sum(probs * f(np.abs(vals))))


def moment_p(d, p, method="auto"):
    """||X||_p = (E|X|^p)^(1/p).

    Closed forms for every built-in kind; ``method="quad"`` integrates
    p t^(p-1) P(|X| >= t) instead (used as an independent check).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if method == "auto":
        return math.exp(_log_abs_moment(d, p) / p)
    if method != "quad":
        raise ValueError(method)
    if d.is_discrete:
        return _expect_discrete(d, lambda a: a**p) ** (1.0 / p)
    sigma = d.scale
    val = _tail_integral(
        d,
        lambda t: math.log(p) + (p - 1) * np.log(np.maximum(t, 1e-300)),
        sigma,
        1e-10,
    )
    return val ** (1.0 / p)


def mean_abs(d):
    return moment_p(d, 1.0)


def kappa_profile(d, p_max=64.0, points_per_decade=32):
    """Grid and ratios ||X||_{2p} / ||X||_p on a log grid over [1, p_max]."""
    if p_max < 2:
        raise ValueError("p_max must be >= 2")
    npts = max(int(math.ceil(points_per_decade * math.log10(p_max))) + 1, 2)
    grid = np.logspace(0.0, math.log10(p_max), npts)
    lm = np.array([_log_abs_moment_unit(d, q) for q in np.concatenate([grid, 2 * grid])])
    if not np.all(np.isfinite(lm)):
        raise DivergentMomentError("moment diverges on the kappa grid")
    ratios = np.exp(lm[npts:] / (2 * grid) - lm[:npts] / grid)
    return grid, ratios


def estimate_kappa(d, p_max=64.0, points_per_decade=32):
    """Lower estimate of the moment-growth constant kappa (sup of the ratio on the grid)."""
    _, ratios = kappa_profile(d, p_max, points_per_decade)
    return float(max(np.max(ratios), 1.0))


# tails -------------------------------------------------------------------------

@dataclass(frozen=True)
class TailProfile:
    """Tail exponent N(t) = -log P(|X| >= t) and its bracketed version.

    hatN(t) = t^2 on [0, 1] and N(t) beyond; +inf past the support.
    """

    N: Callable
    support_sup: float = math.inf
    quadratic_only: bool = False

    def hatN(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self.quadratic_only:
            return t**2
        out = np.empty_like(t)
        small = t <= 1.0
        out[small] = t[small] ** 2
        out[~small] = self.N(t[~small])
        return out

    def hatN_inverse(self, y, tol=1e-10):
        """sup{t >= 0 : hatN(t) <= y}, by monotone bisection on the tail branch.

        The tail branch is entered whenever N just above 1 is at most ``y``,
        which can happen for ``y < 1`` when N(1+) < 1.
        """
        y = float(y)
        if y < 0:
            return 0.0
        if self.quadratic_only:
            return math.sqrt(y)
        lo = 1.0
        if float(self.N(np.array([lo + 1e-12]))[0]) > y:
            return min(1.0, math.sqrt(y))
        hi = 2.0
        while float(self.N(np.array([hi]))[0]) <= y:
            lo = hi
            hi *= 2.0
            if hi > 1e300:
                raise ArithmeticError("hatN stays below the level; tail is bounded")
        while hi - lo > tol * max(1.0, lo):
            mid = 0.5 * (lo + hi)
            if float(self.N(np.array([mid]))[0]) <= y:
                lo = mid
            else:
                hi = mid
        return lo

    @property
    def cap(self):
        """Point beyond which hatN is infinite."""
        if self.quadratic_only:
            return math.inf
        return max(1.0, self.support_sup)

    @classmethod
    def quadratic(cls):
        return cls(N=lambda t: np.asarray(t, dtype=float) ** 2, quadratic_only=True)


def tail_profile(d):
    def N(t):
        with np.errstate(divide="ignore"):
            return -log_survival(d, t)

    return TailProfile(N=N, support_sup=support_sup(d))


# normalisation -----------------------------------------------------------------

def normalize(d, target=1.0):
    """Rescale so that E|X| equals ``target`` exactly (analytic mean)."""
    if not target > 0:
        raise ValueError("target must be positive")
    unit_mean = math.exp(_log_abs_moment_unit(d, 1.0))
    return replace(d, scale=target / unit_mean, normalization_target=float(target))


def is_normalized(d, target=1.0, tol=1e-10):
    return abs(mean_abs(d) - target) <= tol * max(1.0, target)


# subgaussian / subexponential ---------------------------------------------------

def _exp_square_mean(d, K):
    """E exp((X/K)^2), +inf when divergent."""
    if d.is_discrete:
        return _expect_discrete(d, lambda a: np.exp((a / K) ** 2))
    try:
        val = _tail_integral(
            d,
            lambda t: np.log(2 * np.maximum(t, 1e-300) / K**2) + (t / K) ** 2,
            max(K, d.scale),
            1e-10,
        )
    except DivergentMomentError:
        return math.inf
    return 1.0 + val


def subgaussian_norm(d, rtol=1e-6):
    """Smallest K with E exp((X/K)^2) <= 2."""
    s2 = moment_p(d, 2.0)
    hi = 2.0 * s2
    while _exp_square_mean(d, hi) > 2.0:
        hi *= 2.0
        if hi > 1e6 * s2:
            raise NotSubgaussianError(f"E exp((tX)^2) diverges for every probed t ({d.kind})")
    lo = hi / 2.0
    while _exp_square_mean(d, lo) <= 2.0:
        hi = lo
        lo /= 2.0
    while hi - lo > 0.1 * rtol * hi:
        mid = 0.5 * (lo + hi)
        if _exp_square_mean(d, mid) <= 2.0:
            hi = mid
        else:
            lo = mid
    return hi


def subexp_integral(d, eta, r):
    """E exp(eta |X|^(1/r)).

    Computed as 1 + int_0^inf eta e^(eta u) P(|X| >= u^r) du, which has no
    singularity at the origin for any r.
    """
    if d.is_discrete:
        return _expect_discrete(d, lambda a: np.exp(eta * a ** (1.0 / r)))
    root = DistSpec.root(d, r)
    val = _tail_integral(root, lambda u: math.log(eta) + eta * u, max(1.0 / eta, root.scale), 1e-10)
    return 1.0 + val


def subexp_recipe(C1, r):
    """eta = min(1, r / (2 C1^(1/r) e)) and the bound C1 e + 5/e it guarantees."""
    eta = min(1.0, r / (2.0 * C1 ** (1.0 / r) * math.e))
    return eta, C1 * math.e + 5.0 / math.e


def moment_growth_constant(d, r, p_max=1e4, npts=4000):
    """sup_{p >= 1} ||X||_p / p^r, evaluated on a log grid up to ``p_max``.

    The ratio is checked to be decreasing at the end of the grid so the grid
    supremum is the true one.
    """
    ps = np.logspace(0.0, math.log10(p_max), npts)
    logr = np.array([_log_abs_moment(d, q) / q for q in ps]) - r * np.log(ps)
    if logr[-1] > logr[-2]:
        raise ValueError("moment ratio still increasing at p_max; r too small")
    return float(math.exp(np.max(logr)))


# growth of the tail exponent ----------------------------------------------------

def check_N_growth(d, grid, kappa=None, c_max=1e4, points_per_decade=1000):
    """Smallest C on a log grid in [1, c_max] with N(C t x) >= t^(1/log2 kappa) N(x)
    for every (x, t) in ``grid``; +inf if none works."""
    if not is_normalized(d, 1.0, 1e-8):
        raise PreconditionError("check_N_growth expects E|X| = 1")
    if kappa is None:
        kappa = estimate_kappa(d)
    expo = math.inf if kappa <= 1.0 else 1.0 / math.log2(kappa)
    prof = tail_profile(d)
    pairs = np.asarray(list(grid), dtype=float).reshape(-1, 2)
    x, t = pairs[:, 0], pairs[:, 1]
    if np.any(pairs < 1):
        raise ValueError("grid values must be >= 1")
    Nx = prof.N(x)
    with np.errstate(invalid="ignore", over="ignore"):
        texp = np.where(t == 1.0, 1.0, t**expo)
        rhs = np.where(Nx == 0.0, 0.0, texp * Nx)
    cs = np.logspace(0.0, math.log10(c_max), int(points_per_decade * math.log10(c_max)) + 1)

    def ok(c):
        return bool(np.all(prof.N(c * t * x) >= rhs))

    if not ok(cs[-1]):
        return math.inf
    lo, hi = -1, cs.size - 1  # ok(cs[hi]) holds; condition is monotone in C
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(cs[mid]):
            hi = mid
        else:
            lo = mid
    return float(cs[hi])


def tail_decay_threshold(kappa):
    """(eta, C, exponent) for the tail bound N(t) >= eta/2 t^(1/log2 kappa), t > C."""
    r = math.log2(kappa)
    eta, bound = subexp_recipe(kappa, r)
    C = (2.0 * math.log(bound) / eta) ** r
    return eta, C, 1.0 / r


# product decomposition -----------------------------------------------------------

def root_law(d, r):
    """Law of eps |X|^(1/r), closed form where the family is stable under roots."""
    if r == 1:
        return d
    s = d.scale ** (1.0 / r)
    if d.kind == "rademacher":
        return DistSpec.rademacher(s)
    if d.kind == "weibull":
        return DistSpec.weibull(d.param * r, s)
    if d.kind == "discrete":
        vals, probs = d.atoms()
        return DistSpec.discrete(
            [(np.sign(v) * abs(v) ** (1.0 / r), q) for v, q in zip(vals, probs)]
        )
    return DistSpec.root(d, r)


def product_decompose(d, r, check=True, tol=1e-6):
    """Factor law eps |X|^(1/r) and a sampler for the product of r independent factors.

    With ``check`` the law must satisfy E|X| = 1 and kappa <= 2^(r/2), which
    makes the factors subgaussian.
    """
    r = int(r)
    if r < 1:
        raise ValueError("r must be a positive integer")
    if check:
        if not is_normalized(d, 1.0, 1e-8):
            raise PreconditionError("product decomposition expects E|X| = 1")
        kap = estimate_kappa(d)
        if kap > 2.0 ** (r / 2) * (1 + tol):
            raise PreconditionError(f"kappa {kap:.4f} exceeds 2^(r/2) = {2 ** (r / 2):.4f}")
    factor = root_law(d, r)

    def product_sampler(rng, size=None):
        out = sample(factor, rng, size)
        for _ in range(r - 1):
            out = out * sample(factor, rng, size)
        return out

    return factor, product_sampler
