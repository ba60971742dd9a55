import numpy as np
import pytest
from hypothesis import given, strategies as st

from grulsif.graph import (
    GraphError,
    average_degree,
    build_graph,
    laplacian,
    read_edge_csv,
    sbm_generate,
    write_edge_csv,
)

from conftest import random_edges
from oracles import dense_laplacian


def test_single_edge_degrees():
    g = build_graph([(0, 1, 1.0)], 2)
    np.testing.assert_array_equal(g.degrees, [1.0, 1.0])


def test_empty_graph_laplacian_is_zero():
    g = build_graph([], 3)
    np.testing.assert_array_equal(g.degrees, 0.0)
    assert laplacian(g).nnz == 0 or not laplacian(g).toarray().any()


def test_triangle_laplacian():
    g = build_graph([(0, 1, 1), (1, 2, 1), (0, 2, 1)], 3)
    lap = laplacian(g).toarray()
    np.testing.assert_array_equal(np.diag(lap), [2, 2, 2])
    np.testing.assert_array_equal(lap[~np.eye(3, dtype=bool)], -1)


def test_path_quadratic_form():
    g = build_graph([(0, 1), (1, 2)], 3)
    x = np.array([0.3, -1.2, 2.0])
    assert x @ laplacian(g) @ x == pytest.approx((x[0] - x[1]) ** 2 + (x[1] - x[2]) ** 2)


@pytest.mark.parametrize("bad, match", [
    ([(0, 0, 1.0)], "self-loop"),
    ([(0, 1), (1, 0)], "duplicate"),
    ([(0, 3)], "range"),
    ([(0, 1, 0.0)], "weight"),
    ([(0, 1, -1.0)], "weight"),
])
def test_invalid_edges_rejected(bad, match):
    with pytest.raises(GraphError, match=match):
        build_graph(bad, 3)


def test_edges_stored_once_with_u_less_than_v():
    g = build_graph([(2, 0, 1.5), (1, 0)], 3)
    assert g.edges == ((0, 1, 1.0), (0, 2, 1.5))
    assert g.n_edges == 2


def test_isolated_nodes_allowed():
    g = build_graph([(0, 1)], 4)
    np.testing.assert_array_equal(g.degrees, [1, 1, 0, 0])
    assert len(g.neighbors(3)) == 0


@pytest.mark.parametrize("edges, n, expected", [
    ([(0, 1), (1, 2), (0, 2)], 3, 2.0),
    ([], 3, 0.0),
    ([(0, 1), (0, 2), (0, 3), (0, 4)], 5, 8 / 5),
])
def test_average_degree(edges, n, expected):
    assert average_degree(build_graph(edges, n)) == pytest.approx(expected)


@given(st.integers(1, 30), st.floats(0, 1), st.integers(0, 2 ** 32 - 1))
def test_laplacian_rows_sum_to_zero_and_psd(n, p, seed):
    rng = np.random.default_rng(seed)
    g = build_graph(random_edges(rng, n, p), n)
    lap = laplacian(g).toarray()
    np.testing.assert_allclose(lap, lap.T)
    np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-12)
    assert np.linalg.eigvalsh(lap).min() >= -1e-10
    x = rng.standard_normal(n)
    assert x @ lap @ x >= -1e-10


def test_laplacian_matches_dense_construction(rng):
    for _ in range(20):
        n = int(rng.integers(2, 15))
        edges = random_edges(rng, n, 0.4)
        dense, _ = dense_laplacian(n, edges)
        np.testing.assert_allclose(laplacian(build_graph(edges, n)).toarray(), dense)


def test_kronecker_form_equals_pairwise_sum(rng):
    for _ in range(100):
        n, L = int(rng.integers(2, 12)), int(rng.integers(1, 5))
        edges = random_edges(rng, n, 0.5)
        g = build_graph(edges, n)
        theta = rng.standard_normal((n, L))
        kron = theta.ravel() @ np.kron(laplacian(g).toarray(), np.eye(L)) @ theta.ravel()
        W = g.adjacency().toarray()
        pairs = 0.5 * sum(W[u, v] * np.sum((theta[u] - theta[v]) ** 2)
                          for u in range(n) for v in range(n))
        assert kron == pytest.approx(pairs, rel=1e-10, abs=1e-12)


def test_degrees_are_adjacency_row_sums(rng):
    edges = random_edges(rng, 10, 0.5)
    g = build_graph(edges, 10)
    np.testing.assert_allclose(g.degrees, g.adjacency().toarray().sum(axis=1))
    for v in range(10):
        np.testing.assert_allclose(g.neighbor_weights(v).sum(), g.degrees[v])


def test_sbm_four_blocks_of_twenty():
    g = sbm_generate([20, 20, 20, 20], 0.5, 0.01, seed=0)
    assert g.n_nodes == 80
    assert [len(c) for c in g.clusters()] == [20] * 4


def test_sbm_deterministic_per_seed():
    a = sbm_generate([20, 20, 20, 20], 0.5, 0.01, seed=5)
    b = sbm_generate([20, 20, 20, 20], 0.5, 0.01, seed=5)
    assert a.edges == b.edges
    assert a.edges != sbm_generate([20, 20, 20, 20], 0.5, 0.01, seed=6).edges


def test_sbm_degenerate_probabilities_give_disjoint_cliques():
    g = sbm_generate([3, 4], 1.0, 0.0, seed=1)
    assert g.n_edges == 3 + 6
    labels = g.cluster_of
    assert all(labels[u] == labels[v] for u, v, _ in g.edges)


def test_sbm_intra_cluster_frequency():
    freq = []
    for seed in range(50):
        g = sbm_generate([20] * 4, 0.5, 0.01, seed)
        lab = g.cluster_of
        intra = sum(lab[u] == lab[v] for u, v, _ in g.edges)
        freq.append(intra / (4 * 20 * 19 / 2))
    assert abs(np.mean(freq) - 0.5) <= 0.05


def test_sbm_rejects_bad_probability():
    with pytest.raises(ValueError):
        sbm_generate([5, 5], 1.5, 0.0, 0)


def test_without_edges_keeps_labels():
    g = sbm_generate([4, 4], 0.9, 0.1, 0)
    e = g.without_edges()
    assert e.n_edges == 0 and e.n_nodes == 8
    np.testing.assert_array_equal(e.cluster_of, g.cluster_of)


def test_clusters_without_labels_raises():
    with pytest.raises(GraphError):
        build_graph([], 3).clusters()


def test_edge_csv_round_trip(tmp_path, rng):
    edges = random_edges(rng, 8, 0.5)
    g = build_graph(edges, 8)
    write_edge_csv(g, tmp_path / "g.csv")
    h = read_edge_csv(tmp_path / "g.csv", 8)
    assert h.edges == g.edges


def test_edge_csv_default_weight_and_errors(tmp_path):
    (tmp_path / "a.csv").write_text("u,v\n0,1\n1,2\n")
    g = read_edge_csv(tmp_path / "a.csv")
    assert g.n_nodes == 3 and g.edges == ((0, 1, 1.0), (1, 2, 1.0))
    (tmp_path / "b.csv").write_text("a,b\n0,1\n")
    with pytest.raises(GraphError):
        read_edge_csv(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("u,v,weight\n0,x,1\n")
    with pytest.raises(GraphError, match=":2"):
        read_edge_csv(tmp_path / "c.csv")
