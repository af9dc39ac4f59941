"""Command-line front end.

Subcommands: estimate, bounds, sweep, verify, oracle, graph. Settings come from
built-in defaults, then an optional JSON file given by --config, then flags.
Every JSON output embeds the resolved configuration.

Exit codes: 0 success, 1 property failure, 2 usage or input error, 3 resource
budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import BoundConfig, BoundReport, DConfig, bound_report
from .dist import DistSpec
from .matgraph import BudgetExceededError, NotSymmetricError, build_graph, enumerate_connected_subsets, generate, load_matrix
from .norms import AscentConfig, EnsembleSpec, estimate_op_mean, exact_mean_discrete

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3

ESTIMATE_COLUMNS = ("n", "ensemble", "dist", "mean", "stderr", "n_samples", "seed")
SWEEP_COLUMNS = BoundReport.CSV_COLUMNS + ("elapsed",)


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    matrix: str | None = None
    gen: str | None = None
    n: int | None = None
    gen_params: dict = field(default_factory=dict)
    dist: dict = field(default_factory=lambda: {"kind": "rademacher"})
    samples: int = 2000
    seed: int = 0
    p: float | None = None
    exponent: float = 1.5
    threads: int = 1
    out: str | None = None
    format: str = "json"
    zero_threshold: float = 0.0
    ns: list | None = None
    gens: list | None = None
    dists: list | None = None
    suite: str | None = None
    quick: bool = False
    budget: int = 1 << 20
    kmax: int = 4
    ascent: dict = field(default_factory=dict)
    d_exhaustive_limit: int = 10**4
    r_method: str = "mc"

    def to_dict(self):
        out = asdict(self)
        out.pop("out")
        return out


_FIELDS = set(RunConfig.__dataclass_fields__)


def _parse_dist(text):
    if isinstance(text, dict):
        return text
    if os.path.exists(text):
        with open(text) as fh:
            text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--dist: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    DistSpec.from_dict(obj)  # validate early
    return obj


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings; flags override it")
    common.add_argument("--matrix", help="coefficient matrix: CSV file or JSON (generator spec or nested list)")
    common.add_argument("--gen", help="generator name: identity, ones, band, sparse_bernoulli, circulant")
    common.add_argument("--n", type=int, help="matrix size for --gen")
    common.add_argument("--dist", help='entry law as JSON, e.g. {"kind": "gaussian", "normalize_to": 1.0}')
    common.add_argument("--samples", type=int, help="Monte Carlo sample count")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--p", type=float, help="moment order (estimate: report the p-th moment of the norm)")
    common.add_argument("--exponent", type=float, help="exponent of the Log Log n and Log d_A factors")
    common.add_argument("--threads", type=int, help="worker threads; outputs do not depend on it")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--format", choices=("json", "csv"), help="output format")
    common.add_argument("--zero-threshold", dest="zero_threshold", type=float, help="|a_ij| above this counts as an edge")

    parser = argparse.ArgumentParser(prog="srvnorm", description="Bounds and estimates for norms of random matrices with independent symmetric entries.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("estimate", parents=[common], help="Monte Carlo mean of the operator norm")
    sub.add_parser("bounds", parents=[common], help="full bound report")
    sp = sub.add_parser("sweep", parents=[common], help="bound reports over sizes, generators and laws")
    sp.add_argument("--ns", help="comma-separated sizes")
    sp.add_argument("--gens", help="comma-separated generator names")
    sp.add_argument("--dists", help="JSON list of entry laws")
    vp = sub.add_parser("verify", parents=[common], help="run a property suite")
    vp.add_argument("suite", nargs="?", help="suite name; 'list' prints the available suites")
    vp.add_argument("--quick", action="store_true", default=None, help="reduced sizes for a fast check")
    op = sub.add_parser("oracle", parents=[common], help="exact mean by enumeration (finite-support laws)")
    op.add_argument("--budget", type=int, help="maximum number of sign/value patterns")
    gp = sub.add_parser("graph", parents=[common], help="degree data and connected-subset counts")
    gp.add_argument("--kmax", type=int, help="largest subset size to count")
    gp.add_argument("--budget", type=int, help="maximum count bound for enumeration")
    return parser


def resolve_config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: top level must be an object")
        unknown = sorted(set(cfg) - _FIELDS)
        if unknown:
            raise UsageError(f"{args.config}: unknown field(s) {', '.join(unknown)}")
    for key, val in vars(args).items():
        if key in ("config",) or val is None:
            continue
        cfg[key] = val
    if "dist" in cfg:
        cfg["dist"] = _parse_dist(cfg["dist"])
    if isinstance(cfg.get("ns"), str):
        cfg["ns"] = _int_list(cfg["ns"])
    if isinstance(cfg.get("gens"), str):
        cfg["gens"] = [g for g in cfg["gens"].split(",") if g]
    if isinstance(cfg.get("dists"), str):
        try:
            cfg["dists"] = json.loads(cfg["dists"])
        except json.JSONDecodeError as exc:
            raise UsageError(f"--dists: invalid JSON: {exc.msg}") from None
    try:
        rc = RunConfig(**cfg)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if rc.samples is not None and rc.samples < 2:
        raise UsageError("--samples must be >= 2")
    if rc.threads < 1:
        raise UsageError("--threads must be >= 1")
    return rc


def _matrix(rc, gen=None, n=None):
    gen = gen or rc.gen
    n = n or rc.n
    if rc.matrix and gen is None:
        return load_matrix(rc.matrix), {"file": rc.matrix}
    if gen is None:
        raise UsageError("give --matrix FILE or --gen NAME --n N")
    if n is None:
        raise UsageError("--gen needs --n")
    spec = {"gen": gen, "n": int(n), **rc.gen_params}
    return generate(spec), spec


def _grid(A, dist):
    return EnsembleSpec.uniform(A, DistSpec.from_dict(dist))


def _bound_config(rc):
    asc = AscentConfig(**rc.ascent) if rc.ascent else AscentConfig()
    return BoundConfig(
        n_samples=rc.samples,
        seed=rc.seed,
        exponent=rc.exponent,
        threads=rc.threads,
        r_method=rc.r_method,
        d=DConfig(asc, rc.d_exhaustive_limit, rc.seed),
    )


def _dump_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _dump_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def _dist_name(dist):
    name = dist.get("kind", "?")
    if "r" in dist:
        name += f"({dist['r']})"
    elif "alpha" in dist:
        name += f"({dist['alpha']})"
    return name


def cmd_estimate(rc):
    A, ens = _matrix(rc)
    res = estimate_op_mean(A, _grid(A, rc.dist), rc.samples, rc.seed, rc.threads, rc.p)
    if rc.format == "csv":
        row = [A.n, ens.get("gen", ens.get("file")), _dist_name(rc.dist), res.mean, res.stderr, res.n_samples, res.seed]
        return _dump_csv(ESTIMATE_COLUMNS, [row]), EXIT_OK
    return _dump_json({"command": "estimate", "config": rc.to_dict(), "result": res.to_dict()}), EXIT_OK


def cmd_bounds(rc):
    A, ens = _matrix(rc)
    rep = bound_report(A, _grid(A, rc.dist), _bound_config(rc), ensemble=ens)
    if rc.format == "csv":
        return _dump_csv(BoundReport.CSV_COLUMNS, [rep.csv_row()]), EXIT_OK
    return _dump_json({"command": "bounds", "config": rc.to_dict(), "report": rep.to_dict()}), EXIT_OK


def cmd_sweep(rc):
    ns = rc.ns or ([rc.n] if rc.n else None)
    if not ns:
        raise UsageError("sweep needs --ns (or --n)")
    gens = rc.gens or ([rc.gen] if rc.gen else None)
    if not gens:
        raise UsageError("sweep needs --gens (or --gen)")
    dists = rc.dists or [rc.dist]
    bc = _bound_config(rc)
    reports = []
    rows = []
    # fixed order: generator, law, size
    for gen in gens:
        for dist in dists:
            for n in ns:
                A, ens = _matrix(rc, gen, n)
                rep = bound_report(A, _grid(A, dist), bc, ensemble=ens)
                row = rep.csv_row()
                row[2] = _dist_name(dist)
                rows.append(row + [rep.empirical.elapsed])
                reports.append(rep.to_dict())
    if rc.format == "csv":
        return _dump_csv(SWEEP_COLUMNS, rows), EXIT_OK
    return _dump_json({"command": "sweep", "config": rc.to_dict(), "reports": reports}), EXIT_OK


def cmd_verify(rc):
    from . import suites

    if rc.suite in (None, "list"):
        return "\n".join(sorted(suites.SUITES)) + "\n", EXIT_OK
    if rc.suite not in suites.SUITES:
        raise UsageError(f"unknown suite {rc.suite!r}; available: {', '.join(sorted(suites.SUITES))}")
    result = suites.run_suite(rc.suite, quick=rc.quick, seed=rc.seed)
    code = EXIT_OK if result.passed else EXIT_FAIL
    if rc.format == "csv":
        rows = [[p.name, p.passed, json.dumps(p.measured, sort_keys=True)] for p in result.properties]
        return _dump_csv(("property", "passed", "measured"), rows), code
    return _dump_json({"command": "verify", "config": rc.to_dict(), "result": result.to_dict()}), code


def cmd_oracle(rc):
    A, ens = _matrix(rc)
    value = exact_mean_discrete(A, _grid(A, rc.dist), rc.budget)
    if rc.format == "csv":
        return _dump_csv(("n", "ensemble", "dist", "exact_mean"), [[A.n, ens.get("gen", ens.get("file")), _dist_name(rc.dist), value]]), EXIT_OK
    return _dump_json({"command": "oracle", "config": rc.to_dict(), "value": value}), EXIT_OK


def cmd_graph(rc):
    A, _ = _matrix(rc)
    G = build_graph(A, rc.zero_threshold)
    deg = G.degrees
    hist = {str(int(d)): int(c) for d, c in zip(*np.unique(deg, return_counts=True))}
    counts = []
    stopped = None
    for k in range(1, rc.kmax + 1):
        try:
            subs = enumerate_connected_subsets(G, k, budget=rc.budget)
        except BudgetExceededError:
            stopped = k
            break
        counts.append({"k": k, "count": int(subs.shape[0]), "bound": int(G.n * (4 * G.max_degree) ** (k - 1))})
    out = {"n": G.n, "d_A": G.max_degree, "edges": len(G.edges()), "degree_histogram": hist,
           "connected_subsets": counts, "budget_exceeded_at": stopped}
    if rc.format == "csv":
        return _dump_csv(("k", "count", "bound"), [[c["k"], c["count"], c["bound"]] for c in counts]), EXIT_OK
    return _dump_json({"command": "graph", "config": rc.to_dict(), "result": out}), EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "oracle": cmd_oracle,
    "graph": cmd_graph,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        rc = resolve_config(args)
        text, code = COMMANDS[rc.command](rc)
    except BudgetExceededError as exc:
        print(f"srvnorm: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (UsageError, NotSymmetricError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"srvnorm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if rc.out:
        with open(rc.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
