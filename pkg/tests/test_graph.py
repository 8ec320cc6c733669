import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etc_sim.graph import (ConnectivityError, GraphError, build_graph, directed_cycle,
                           generate, graph_from_json, is_connected, is_strongly_connected,
                           is_weight_balanced, laplacian, spectral_summary, sym_laplacian)


def test_k2_adjacency_and_laplacian():
    g = build_graph(2, [(1, 2, 1)], undirected=True)
    assert np.array_equal(g.adjacency, [[0, 1], [1, 0]])
    assert np.array_equal(laplacian(g), [[1, -1], [-1, 1]])


def test_p3_laplacian():
    g = build_graph(3, [(1, 2, 1), (2, 3, 1)])
    assert np.array_equal(laplacian(g), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_directed_cycle_laplacian_and_balance():
    g = build_graph(3, [(1, 2, 1), (2, 3, 1), (3, 1, 1)], undirected=False)
    assert np.array_equal(laplacian(g), [[1, -1, 0], [0, 1, -1], [-1, 0, 1]])
    assert np.array_equal(g.out_degree_count, [1, 1, 1])
    assert np.array_equal((g.adjacency > 0).sum(axis=0), [1, 1, 1])
    assert is_weight_balanced(g)
    assert is_strongly_connected(g)


def test_directed_path_not_balanced():
    g = build_graph(3, [(1, 2, 1), (2, 3, 1)], undirected=False)
    assert np.allclose(laplacian(g).sum(axis=0), [1, 0, -1])
    assert not is_weight_balanced(g)
    assert not is_strongly_connected(g)


@pytest.mark.parametrize("n", [2, 3, 4, 7])
def test_path_spectrum_matches_closed_form(n):
    # eigenvalues of the path Laplacian are 2 - 2 cos(k pi / n)
    s = spectral_summary(generate("path", n))
    expected = sorted(2 - 2 * math.cos(k * math.pi / n) for k in range(n))
    assert np.allclose(s.eigenvalues, expected, atol=1e-12)


def test_p3_spectral_values():
    s = spectral_summary(build_graph(3, [(1, 2, 1), (2, 3, 1)]))
    assert s.lambda2 == pytest.approx(1.0, abs=1e-12)
    assert s.lambdaN == pytest.approx(3.0, abs=1e-12)


def test_k2_spectral_values():
    s = spectral_summary(build_graph(2, [(1, 2, 1)]))
    assert s.lambda2 == pytest.approx(2.0) and s.lambdaN == pytest.approx(2.0)
    assert s.laplacian_norm == pytest.approx(2.0)


def test_c5_lambda2():
    s = spectral_summary(generate("cycle", 5))
    assert s.lambda2 == pytest.approx(2 - 2 * math.cos(2 * math.pi / 5), abs=1e-12)
    assert s.lambda2 == pytest.approx(1.38197, abs=1e-5)


def test_disconnected_raises():
    g = build_graph(4, [(1, 2, 1), (3, 4, 1)])
    assert not is_connected(g)
    with pytest.raises(ConnectivityError):
        spectral_summary(g)


def test_directed_spectral_uses_sym_and_norm():
    g = build_graph(3, [(1, 2, 1), (2, 3, 1), (3, 1, 1)], undirected=False)
    s = spectral_summary(g)
    L = laplacian(g)
    assert np.allclose(s.eigenvalues, np.linalg.eigvalsh(0.5 * (L + L.T)))
    assert s.laplacian_norm == pytest.approx(np.linalg.svd(L, compute_uv=False).max())


@pytest.mark.parametrize("edges, undirected, msg", [
    ([(1, 2, 1), (1, 2, 2)], True, "duplicate"),
    ([(1, 2, 0)], True, "nonpositive"),
    ([(1, 2, -1)], False, "nonpositive"),
    ([(1, 1, 1)], True, "self-loop"),
    ([(1, 2, 1), (2, 1, 2)], True, "asymmetric"),
    ([(1, 4, 1)], True, "out of range"),
])
def test_build_graph_errors(edges, undirected, msg):
    with pytest.raises(GraphError, match=msg):
        build_graph(3, edges, undirected=undirected)


def test_generate_families():
    k3 = generate("complete", 3)
    assert np.array_equal(k3.adjacency, np.ones((3, 3)) - np.eye(3))
    c4 = generate("cycle", 4)
    assert c4.undirected and np.array_equal(c4.out_degree_count, [2, 2, 2, 2])
    star = generate("star", 5)
    assert star.max_neighbors == 4
    with pytest.raises(GraphError):
        generate("path", 1)


def test_random_connected_deterministic_and_connected():
    a = generate("random_connected", 10, 42)
    b = generate("random_connected", 10, 42)
    assert a == b and np.array_equal(a.adjacency, b.adjacency)
    assert is_connected(a)


def test_json_round_trip():
    g = build_graph(4, [(1, 2, 0.5), (2, 3, 2.0), (3, 4, 1.0), (4, 1, 3.0)])
    assert np.array_equal(graph_from_json(g.to_json()).adjacency, g.adjacency)
    d = directed_cycle(4, 2.0)
    assert np.array_equal(graph_from_json(d.to_json()).adjacency, d.adjacency)


# -- property tests ----------------------------------------------------------

@st.composite
def undirected_graphs(draw):
    n = draw(st.integers(2, 9))
    # a spanning path keeps it connected; extra random weighted edges on top
    edges = {(i, i + 1): draw(st.floats(0.1, 5)) for i in range(1, n)}
    for i in range(1, n + 1):
        for j in range(i + 2, n + 1):
            if draw(st.booleans()):
                edges[(i, j)] = draw(st.floats(0.1, 5))
    return build_graph(n, [(i, j, w) for (i, j), w in edges.items()], undirected=True)


@st.composite
def balanced_digraphs(draw):
    """Sums of weighted directed cycles are weight-balanced."""
    n = draw(st.integers(3, 8))
    W = np.zeros((n, n))
    perm = draw(st.permutations(range(n)))
    w = draw(st.floats(0.1, 3))
    for k in range(n):  # one Hamiltonian cycle for strong connectivity
        W[perm[k], perm[(k + 1) % n]] += w
    for _ in range(draw(st.integers(0, 3))):
        size = draw(st.integers(2, n))
        cyc = draw(st.permutations(range(n)))[:size]
        w = draw(st.floats(0.1, 3))
        for k in range(size):
            W[cyc[k], cyc[(k + 1) % size]] += w
    edges = [(i + 1, j + 1, W[i, j]) for i, j in zip(*np.nonzero(W))]
    return build_graph(n, edges, undirected=False)


@settings(max_examples=60, deadline=None)
@given(undirected_graphs())
def test_rows_sum_to_zero_and_psd(g):
    L = laplacian(g)
    assert np.allclose(L @ np.ones(g.n), 0, atol=1e-12)
    assert is_weight_balanced(g)
    assert np.linalg.eigvalsh(sym_laplacian(g)).min() >= -1e-10
    s = spectral_summary(g)
    assert s.lambda2 > 0 and s.eigenvalues[0] == pytest.approx(0, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(undirected_graphs(), st.integers(0, 2**31))
def test_quadratic_form_lower_bound(g, seed):
    L = laplacian(g)
    lam2 = spectral_summary(g).lambda2
    x = np.random.default_rng(seed).normal(size=(100, g.n))
    dev = x - x.mean(axis=1, keepdims=True)
    quad = np.einsum("ki,ij,kj->k", x, L, x)
    assert np.all(quad >= lam2 * (dev ** 2).sum(axis=1) - 1e-9)


@settings(max_examples=40, deadline=None)
@given(balanced_digraphs(), st.integers(0, 2**31))
def test_sandwich_on_balanced_digraphs(g, seed):
    assert is_weight_balanced(g)
    L = laplacian(g)
    S = sym_laplacian(g)
    assert np.linalg.eigvalsh(S).min() >= -1e-10
    s = spectral_summary(g)
    x = np.random.default_rng(seed).normal(size=(100, g.n))
    quad = np.einsum("ki,ij,kj->k", x, L, x)
    sq = np.einsum("ki,ij,kj->k", x, S @ S, x)
    assert np.all(s.lambda2 * quad - 1e-9 <= sq)
    assert np.all(sq <= s.lambdaN * quad + 1e-9)
