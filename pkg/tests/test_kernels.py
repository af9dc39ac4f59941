import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srvnorm import kernels
from srvnorm.kernels import _fallback
from srvnorm.matgraph import GraphView

try:
    from srvnorm.kernels import _core
except ImportError:  # extension not built
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled kernels not built")


def random_graph(seed, m, prob):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((m, m)) < prob, 1)
    return GraphView.from_adjacency(upper | upper.T)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    if _core is not None:
        assert kernels.BACKEND == "cython" or os.environ.get("SRVNORM_PURE")


def test_pure_flag_forces_fallback():
    code = "import srvnorm.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, SRVNORM_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_fallback_sign_moment_closed_forms():
    assert _fallback.sign_moment([], 2.0) == 0.0
    # E|e1 + e2|^2 = 2
    assert _fallback.sign_moment([1.0, 1.0], 2.0) == 2.0
    assert _fallback.sign_moment([3.0], 1.5) == pytest.approx(3.0**1.5)
    # E max(e1, -e1) = 1
    assert _fallback.sign_sup_mean([1.0], [[1.0], [-1.0]]) == 1.0


def test_fallback_subsets_on_path():
    G = GraphView.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    got = _fallback.connected_subsets(G.indptr, G.indices, G.n, 2, 100)
    assert sorted(map(tuple, got.tolist())) == [(0, 1), (1, 2), (2, 3)]
    assert _fallback.count_connected_subsets(G.indptr, G.indices, G.n, 3) == 2
    with pytest.raises(OverflowError):
        _fallback.connected_subsets(G.indptr, G.indices, G.n, 2, 2)


@needs_core
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 0.7), st.integers(0, 10**6))
def test_graph_kernels_agree(m, prob, seed):
    G = random_graph(seed, m, prob)
    args = (G.indptr, G.indices, G.n)
    np.testing.assert_array_equal(_core.bfs_distances(*args), _fallback.bfs_distances(*args))
    for k in range(1, min(m, 6) + 1):
        a = _core.connected_subsets(*args, k, 10**6)
        b = _fallback.connected_subsets(*args, k, 10**6)
        np.testing.assert_array_equal(a, b)
        assert _core.count_connected_subsets(*args, k) == _fallback.count_connected_subsets(*args, k) == len(a)


@needs_core
def test_core_overflow_guard():
    G = GraphView.from_adjacency(~np.eye(6, dtype=bool))
    with pytest.raises(OverflowError):
        _core.connected_subsets(G.indptr, G.indices, G.n, 3, 5)


@needs_core
@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=0, max_size=14), st.floats(0.5, 8.0))
def test_sign_moment_agrees(c, p):
    a = _core.sign_moment(np.array(c), p)
    b = _fallback.sign_moment(np.array(c), p)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


@needs_core
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 10**6))
def test_sign_sup_mean_agrees(m, k, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(m)
    T = rng.standard_normal((k, m))
    # a single row has mean exactly 0, so compare against the size of the sums
    scale = float(np.abs(T * c).sum(axis=1).max())
    assert _core.sign_sup_mean(c, T) == pytest.approx(_fallback.sign_sup_mean(c, T), rel=1e-12, abs=1e-13 * scale)
