"""Acceptance criteria, one test each, at the reference settings.

Set SRVNORM_ACCEPTANCE_QUICK=1 for reduced sizes; runtime limits are only
enforced at the reference settings.
"""
import json
import os
import re
import time

from srvnorm import suites
from srvnorm.cli import main

from conftest import ACCEPTANCE_LINES

QUICK = bool(os.environ.get("SRVNORM_ACCEPTANCE_QUICK"))


def report(number, title, passed, detail, elapsed, limit=None):
    status = "PASS" if passed else "FAIL"
    budget = f" (limit {limit:.0f}s)" if limit else ""
    line = f"criterion {number} {status}: {title}; {detail}; {elapsed:.1f}s{budget}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def run_suite(number, title, name, limit, detail_fn):
    t0 = time.perf_counter()
    result = suites.run_suite(name, quick=QUICK, seed=0)
    elapsed = time.perf_counter() - t0
    in_time = QUICK or limit is None or elapsed < limit
    report(number, title, result.passed and in_time, detail_fn(result), elapsed, limit)
    failing = [p.to_dict() for p in result.properties if not p.passed]
    assert result.passed, json.dumps(failing, default=str)[:2000]
    assert in_time, f"took {elapsed:.1f}s, limit {limit}s"
    return result


def measured(result, prefix):
    return [p.measured for p in result.properties if p.name.startswith(prefix)]


def test_exhaustive_oracle_agreement():
    def detail(r):
        z = [abs(m["mean"] - m["exact"]) / m["stderr"] if m["stderr"] > 0 else 0.0
             for m in measured(r, "mc_matches_exact")]
        exact = measured(r, "ones2_exact_value")[0]["exact"]
        return f"{len(z)} matrices, max |z| = {max(z):.2f}, ones2 exact = {exact:.15f}"

    run_suite(1, "Monte Carlo matches exhaustive enumeration", "oracle", 60, detail)


def test_gaussian_formula_two_sided():
    def detail(r):
        ratios = [v for m in measured(r, "ratio_in_window") for v in m["ratios"].values()]
        spread = max(m["spread"] for m in measured(r, "ratio_spread"))
        return f"ratio range [{min(ratios):.3f}, {max(ratios):.3f}], max spread {spread:.2f}"

    run_suite(2, "empirical / Gaussian formula in [0.05, 5], spread <= 4", "gaussian-formula", 600, detail)


def test_connected_subset_counting():
    def detail(r):
        m = measured(r, "count_below_bound")[0]
        return f"{m['pairs_checked']} (graph, k) pairs, max count/bound = {m['max_count_over_bound']:.3f}"

    run_suite(3, "connected subset count <= m (4d)^(k-1)", "subset-count", 60, detail)


def test_subexponential_moment():
    def detail(r):
        return ", ".join(f"{p.name.split('[')[1][:-1]}: {p.measured['value']:.3f} <= {p.measured['bound']:.3f}"
                         for p in r.properties)

    run_suite(4, "E exp(eta |X|^(1/r)) <= C1 e + 5/e", "subexp-moment", 10, detail)


def test_gaussian_linear_sandwich():
    def detail(r):
        m = r.properties[0].measured
        return f"{m['matrices']} matrices x 4 levels, ratio range [{m['min_ratio']:.4f}, {m['max_ratio']:.4f}]"

    run_suite(5, "max_linear / (sqrt(p) ||a||_2) in [0.5, 2]", "linear-sandwich", 60, detail)


def test_analytic_r_sandwich():
    def detail(r):
        m = r.properties[0].measured
        return f"{len(m['rows'])} (law, matrix) pairs, fitted C = {m['C']:.3f}"

    run_suite(6, "analytic R sandwich with one fitted C <= 1e3", "analytic-r", 300, detail)


def test_main_bound_scaling():
    def detail(r):
        growth = max(m["growth"] for m in measured(r, "lower_ratio_not_growing"))
        slope = max(m["slope_vs_ln_n"] for m in measured(r, "upper_ratio_sublogarithmic"))
        C = measured(r, "lower_fitted_constant")[0]["C"]
        return f"fitted C = {C:.3f}, max lower-ratio growth {growth:.3f}, max slope vs ln n {slope:.4f}"

    run_suite(7, "two-sided scaling of the main bounds", "main-scaling", 900, detail)


def test_product_decomposition_tails():
    def detail(r):
        C = measured(r, "two_sided_tail_domination")[0]["C"]
        w = measured(r, "sup_comparison_within_8")[0]["worst_factor"]
        return f"tail domination C = {C:.3f}, worst sup ratio {w:.3f}"

    run_suite(8, "product sampler tail domination and sup comparison", "product-tail", 300, detail)


# determinism ------------------------------------------------------------------------------

VOLATILE = re.compile(r'^\s*"(elapsed|threads)": .*$\n?', re.M)


def capture(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    assert code == 0, err
    return out


def strip_elapsed_column(text):
    # only the sweep CSV has one, as its last column
    lines = text.splitlines()
    header = lines[0].split(",")
    if header[-1] != "elapsed":
        return text
    return "\n".join(line.rsplit(",", 1)[0] for line in lines)


COMMANDS = {
    "estimate": ["estimate", "--gen", "band", "--n", "16", "--dist", '{"kind": "weibull", "r": 1}',
                 "--samples", "4000", "--seed", "7"],
    "bounds": ["bounds", "--gen", "sparse_bernoulli", "--n", "10", "--dist", '{"kind": "gaussian"}', "--seed", "3"],
    "sweep": ["sweep", "--ns", "8,12", "--gens", "band,ones", "--dist", '{"kind": "rademacher"}', "--seed", "11"],
    "verify": ["verify", "subset-count", "--quick", "--seed", "2"],
    "oracle": ["oracle", "--gen", "circulant", "--n", "3", "--dist", '{"kind": "rademacher"}'],
    "graph": ["graph", "--gen", "sparse_bernoulli", "--n", "12", "--kmax", "4", "--seed", "5"],
}


def test_cli_determinism(capsys, tmp_path):
    light = tmp_path / "light.json"
    light.write_text(json.dumps({
        "ascent": {"n_starts": 4, "max_iters": 40, "batch": 512, "val_samples": 512, "eval_samples": 2048},
        "d_exhaustive_limit": 16, "samples": 300,
    }))
    t0 = time.perf_counter()
    checked, bad = [], []
    for name, argv in COMMANDS.items():
        base = list(argv)
        if name in ("bounds", "sweep"):
            base += ["--config", str(light)]
        for fmt in ("json", "csv"):
            args = base + ["--format", fmt]
            first = capture(capsys, args + ["--threads", "1"])
            second = capture(capsys, args + ["--threads", "1"])
            threaded = capture(capsys, args + ["--threads", "4"])
            if fmt == "json":
                a, b, c = (VOLATILE.sub("", x) for x in (first, second, threaded))
            else:
                a, b, c = (strip_elapsed_column(x) for x in (first, second, threaded))
            if a != b:
                bad.append(f"{name}/{fmt} rerun")
            if a != c:
                bad.append(f"{name}/{fmt} threads")
            checked.append(f"{name}/{fmt}")
    detail = f"{len(checked)} command/format pairs, compared excluding elapsed and the threads setting"
    if bad:
        detail += f"; differing: {', '.join(bad)}"
    report(9, "CLI output byte-identical across reruns and thread counts", not bad, detail, time.perf_counter() - t0)
    assert not bad
