"""Closed-form and estimated bounds on E||A o X||_op, assembled into a report."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from math import comb

import numpy as np

from .dist import PreconditionError, is_normalized, mean_abs
from .matgraph import CoeffMatrix, Log, as_coeff, build_graph, m_value, row_norms, symmetrize
from .norms import AscentConfig, EnsembleSpec, EstimateResult, estimate_op_mean, sup_bilinear_moment
from .orlicz import MaskSearch, r_analytic

SCHEMA_VERSION = 1
_TAG_D = 7


def _derived_seed(seed, *key):
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(1)[0])


def m_of(A):
    """Max row l2 norm plus max column l2 norm."""
    return m_value(as_coeff(A).a)


def gaussian_formula(A):
    """max_i ||row_i||_2 + max_i rowmax'_i sqrt(Log i), rows sorted by their max entry."""
    A = as_coeff(A)
    if not A.symmetric:
        A = symmetrize(A)
    a = np.abs(A.a)
    if not np.any(a):
        return 0.0
    rowmax = np.sort(a.max(axis=1))[::-1]
    logs = np.sqrt([Log(i) for i in range(1, rowmax.size + 1)])
    return float(row_norms(a).max() + np.max(rowmax * logs))


def seginer_bound(A):
    A = as_coeff(A)
    return Log(A.n) ** 0.25 * m_of(A)


def weibull_bound(A, r):
    """max_i ||row_i||_2 + Log^(1/r)(n) max |a_ij|, for 0 < r <= 2."""
    if not 0 < r <= 2:
        raise ValueError("r must lie in (0, 2]")
    A = as_coeff(A)
    if not A.symmetric:
        A = symmetrize(A)
    a = np.abs(A.a)
    if not np.any(a):
        return 0.0
    return float(row_norms(a).max() + Log(A.n) ** (1.0 / r) * a.max())


# D(A, X) ------------------------------------------------------------------------

@dataclass
class DConfig:
    ascent: AscentConfig = field(default_factory=AscentConfig)
    exhaustive_limit: int = 10**4
    seed: int = 0

    def to_dict(self):
        return {"ascent": self.ascent.to_dict(), "exhaustive_limit": self.exhaustive_limit, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(AscentConfig(**d["ascent"]), d["exhaustive_limit"], d["seed"])


@dataclass
class DResult:
    value: float
    profile: list  # dicts {k, p, value, removed, method}

    def __float__(self):
        return float(self.value)


def dyadic_ks(n):
    ks = []
    k = 1
    while k < n:
        ks.append(k)
        k *= 2
    ks.append(n)
    return ks


def _sup_off(a, grid, removed, p, cfg, seed):
    """Estimated sup over B2 x B2 of the p-th moment with rows/columns in ``removed`` dropped."""
    n = a.shape[0]
    keep = np.setdiff1d(np.arange(n), np.asarray(list(removed), dtype=np.int64))
    if keep.size == 0:
        return 0.0, None
    sub = a[np.ix_(keep, keep)]
    if not np.any(sub):
        return 0.0, None
    res = sup_bilinear_moment(sub, grid.submatrix(keep), p, cfg.ascent, seed)
    return res.value, (keep, res.v, res.w)


def d_of(A, grid, cfg=None):
    """Upper approximation of D(A, X) over dyadic k.

    For each k the min over |I| <= k is taken exhaustively over |I| = k when
    C(n, k) <= exhaustive_limit and otherwise along one greedy removal path:
    the indices carrying most mass (v_i^2 + w_i^2) of the current maximizer
    are removed first. Each inner sup is the ascent estimate at p = Log k.
    """
    cfg = cfg or DConfig()
    a = as_coeff(A).a
    n = a.shape[0]
    if not np.any(a):
        return DResult(0.0, [{"k": k, "p": Log(k), "value": 0.0, "removed": [], "method": "zero"} for k in dyadic_ks(n)])
    path = []
    arg = None  # maximizer of the sup off the current path
    profile = []
    for k in dyadic_ks(n):
        p = Log(k)
        if comb(n, k) <= cfg.exhaustive_limit:
            best, best_I = math.inf, None
            for idx, I in enumerate(combinations(range(n), k)):
                val, _ = _sup_off(a, grid, I, p, cfg, _derived_seed(cfg.seed, _TAG_D, k, idx))
                if val < best:
                    best, best_I = val, list(I)
            profile.append({"k": k, "p": p, "value": best, "removed": best_I, "method": "exhaustive"})
            continue
        if arg is None and len(path) < k:
            # maximizer on the full matrix starts the path
            _, arg = _sup_off(a, grid, path, p, cfg, _derived_seed(cfg.seed, _TAG_D, 0, 1 << 20))
        if len(path) < k and arg is not None:
            keep, v, w = arg
            order = np.argsort(-(v**2 + w**2), kind="stable")
            path.extend(int(keep[i]) for i in order[: k - len(path)])
        val, arg = _sup_off(a, grid, path, p, cfg, _derived_seed(cfg.seed, _TAG_D, k, 1 << 21))
        profile.append({"k": k, "p": p, "value": val, "removed": sorted(path), "method": "greedy"})
    return DResult(max(e["value"] for e in profile), profile)


# assembled bounds -----------------------------------------------------------------

def _check_unit_mean(grid):
    for d in grid.laws:
        if not is_normalized(d, 1.0, tol=1e-8):
            raise PreconditionError(f"entry law {d.kind} must be normalised to E|X| = 1")


def unit_mean_form(A, grid):
    """Same random matrix written with E|X_ij| = 1: a_ij E|X_ij| times X_ij / E|X_ij|."""
    a = as_coeff(A).a
    means = np.array([mean_abs(d) for d in grid.laws])[grid.labels]
    a1 = CoeffMatrix(a * means)
    return a1, EnsembleSpec(a1, grid.normalized(1.0).laws, grid.labels)


def r_estimate(A, grid, method="mc", cfg=None, seed=0, search=None):
    """R_X(A) at p = Log n for a unit-mean grid: ascent lower estimate or the analytic upper end."""
    A = as_coeff(A)
    if method == "mc":
        return sup_bilinear_moment(A, grid, Log(A.n), cfg, seed).value
    if method == "analytic":
        # the analytic sandwich is stated for E|X| = 1/e
        e = math.e
        return r_analytic(CoeffMatrix(A.a * e), grid.normalized(1.0 / e), search).upper
    raise ValueError(f"unknown R method {method!r}")


def main_bounds(A, grid, exponent=1.5, d_cfg=None, r_method="mc", D=None, R=None, seed=0):
    """(M + D, Log^exponent(Log n) (M + R)) for a grid normalised to E|X| = 1."""
    _check_unit_mean(grid)
    A = as_coeff(A)
    if not np.any(A.a):
        return 0.0, 0.0
    M = m_of(A)
    if D is None:
        D = d_of(A, grid, d_cfg).value
    if R is None:
        R = r_estimate(A, grid, r_method, d_cfg.ascent if d_cfg else None, seed)
    return M + float(D), Log(Log(A.n)) ** exponent * (M + float(R))


def dA_bound(A, grid, exponent=1.5, R=None, r_method="mc", cfg=None, seed=0):
    """Log^exponent(d_A) (max row l2 + R) for symmetric A and a unit-mean grid."""
    _check_unit_mean(grid)
    A = as_coeff(A)
    G = build_graph(A)
    if not np.any(A.a):
        return 0.0
    if R is None:
        R = r_estimate(A, grid, r_method, cfg, seed)
    return Log(G.max_degree) ** exponent * (float(row_norms(A.a).max()) + float(R))


# report -------------------------------------------------------------------------------

@dataclass
class BoundConfig:
    n_samples: int = 2000
    seed: int = 0
    exponent: float = 1.5
    threads: int = 1
    weibull_r: float | None = None
    r_method: str = "mc"
    d: DConfig = field(default_factory=DConfig)
    mask_restarts: int = 50

    def to_dict(self):
        out = asdict(self)
        out["d"] = self.d.to_dict()
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "d" in d:
            d["d"] = DConfig.from_dict(d["d"])
        return cls(**d)


@dataclass
class BoundReport:
    n: int
    ensemble: dict
    dist: dict
    M: float
    M_unit: float  # M of the unit-mean form, the one inside the main bounds
    gaussian_formula: float
    seginer: float
    weibull_r: float
    weibull: float
    R_lower: float
    R_upper: float
    D: float
    D_profile: list
    main_lower: float
    main_upper: float
    dA: int
    dA_upper: float
    empirical: EstimateResult
    loglog_exponent_used: float
    config: dict
    schema: int = SCHEMA_VERSION

    def check(self):
        vals = [self.M, self.M_unit, self.gaussian_formula, self.seginer, self.weibull, self.R_lower, self.R_upper,
                self.D, self.main_lower, self.main_upper, self.dA_upper]
        if min(vals) < 0:
            raise AssertionError("negative bound value")
        if self.main_upper < self.M_unit * (1 - 1e-12):
            raise AssertionError("main upper bound below M")
        if self.R_lower > self.R_upper * (1 + 1e-9):
            raise AssertionError(f"R lower {self.R_lower} above R upper {self.R_upper}")

    def to_dict(self):
        out = asdict(self)
        out["empirical"] = self.empirical.to_dict()
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        d["empirical"] = EstimateResult.from_dict(d["empirical"])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    CSV_COLUMNS = ("n", "ensemble", "dist", "M", "M_unit", "gaussian_formula", "seginer", "weibull_r", "weibull",
                   "R_lower", "R_upper", "D", "main_lower", "main_upper", "dA", "dA_upper",
                   "empirical", "stderr", "n_samples", "seed", "loglog_exponent_used", "ratio")

    def csv_row(self):
        ratio = self.empirical.mean / self.main_upper if self.main_upper > 0 else 0.0
        ens = self.ensemble.get("gen", "matrix") if isinstance(self.ensemble, dict) else str(self.ensemble)
        dist = self.dist.get("kind", "mixed") if isinstance(self.dist, dict) else str(self.dist)
        return [self.n, ens, dist, self.M, self.M_unit, self.gaussian_formula, self.seginer, self.weibull_r, self.weibull,
                self.R_lower, self.R_upper, self.D, self.main_lower, self.main_upper, self.dA, self.dA_upper,
                self.empirical.mean, self.empirical.stderr, self.empirical.n_samples, self.empirical.seed,
                self.loglog_exponent_used, ratio]


def _weibull_r_for(grid, cfg):
    if cfg.weibull_r is not None:
        return float(cfg.weibull_r)
    rs = [d.param for d in grid.laws if d.kind == "weibull" and d.param <= 2]
    return float(min(rs)) if rs else 2.0


def bound_report(A, grid, cfg=None, ensemble=None):
    """Every bound quantity for A o X plus the Monte Carlo mean of the norm.

    The closed-form bounds use A as given. D, R and the assembled bounds use
    the unit-mean form of the same matrix.
    """
    cfg = cfg or BoundConfig()
    A = as_coeff(A)
    n = A.n
    a1, g1 = unit_mean_form(A, grid)
    r = _weibull_r_for(grid, cfg)
    search = MaskSearch(restarts=cfg.mask_restarts, seed=cfg.seed)
    symmetric = A.symmetric

    tasks = {
        "empirical": lambda: estimate_op_mean(A, grid, cfg.n_samples, cfg.seed, cfg.threads),
        "D": lambda: d_of(a1, g1, replace(cfg.d, seed=cfg.seed)),
        "R_lower": lambda: r_estimate(a1, g1, "mc", cfg.d.ascent, cfg.seed),
        "R_upper": lambda: r_estimate(a1, g1, "analytic", search=search) if np.any(A.a) else 0.0,
    }
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.threads, len(tasks))) as pool:
            futs = {k: pool.submit(f) for k, f in tasks.items()}
            out = {k: f.result() for k, f in futs.items()}
    else:
        out = {k: f() for k, f in tasks.items()}

    D = out["D"]
    R_main = out["R_lower"] if cfg.r_method == "mc" else out["R_upper"]
    lower, upper = main_bounds(a1, g1, cfg.exponent, D=D.value, R=R_main)
    if symmetric:
        dA = build_graph(A).max_degree
        dA_up = dA_bound(a1, g1, cfg.exponent, R=R_main)
    else:
        # graph bound needs symmetry; use the block form
        S = symmetrize(a1)
        dA = build_graph(S).max_degree
        dA_up = Log(dA) ** cfg.exponent * (float(row_norms(S.a).max()) + R_main) if np.any(A.a) else 0.0
    if ensemble is None:
        ensemble = {"gen": "matrix", "n": n}
    report = BoundReport(
        n=n,
        ensemble=ensemble,
        dist=grid.describe(),
        M=m_of(A),
        M_unit=m_of(a1),
        gaussian_formula=gaussian_formula(A),
        seginer=seginer_bound(A),
        weibull_r=r,
        weibull=weibull_bound(A, r),
        R_lower=float(out["R_lower"]),
        R_upper=float(out["R_upper"]),
        D=float(D.value),
        D_profile=D.profile,
        main_lower=float(lower),
        main_upper=float(upper),
        dA=int(dA),
        dA_upper=float(dA_up),
        empirical=out["empirical"],
        loglog_exponent_used=float(cfg.exponent),
        config=cfg.to_dict(),
    )
    report.check()
    return report


__all__ = [
    "BoundConfig", "BoundReport", "DConfig", "DResult", "SCHEMA_VERSION", "bound_report", "d_of", "dA_bound",
    "dyadic_ks", "gaussian_formula", "m_of", "main_bounds", "r_estimate", "seginer_bound", "unit_mean_form",
    "weibull_bound",
]
