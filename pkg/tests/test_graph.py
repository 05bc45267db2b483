import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import cycle_graph, path_graph, random_graph
from deft.graph import (
    DynamicGraph,
    GraphError,
    GraphSnapshot,
    LambdaMaxWarning,
    SparseMatrix,
    build_laplacian,
    dense_eigenvalues,
    estimate_lambda_max,
    hop_distances,
    neighbors,
    snapshot_from_edges,
)


def test_csr_invariants_rejected():
    with pytest.raises(GraphError):
        SparseMatrix(2, 2, np.array([0, 2, 1]), np.array([0, 1]), np.array([1.0, 1.0]))
    with pytest.raises(GraphError):
        SparseMatrix(1, 2, np.array([0, 2]), np.array([1, 0]), np.array([1.0, 1.0]))
    with pytest.raises(GraphError):
        SparseMatrix(1, 2, np.array([0, 1]), np.array([2]), np.array([1.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
def test_edge_list_roundtrip(n_rows, n_cols, seed):
    rng = np.random.default_rng(seed)
    dense = np.where(rng.random((n_rows, n_cols)) < 0.3, rng.normal(size=(n_rows, n_cols)), 0.0)
    m = SparseMatrix.from_dense(dense)
    assert SparseMatrix.from_edge_list(n_rows, n_cols, m.to_edge_list()) == m
    np.testing.assert_array_equal(m.to_dense(), dense)


def test_snapshot_validation():
    asym = SparseMatrix.from_dense(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(GraphError):
        GraphSnapshot(asym, np.zeros((2, 1)))
    loop = SparseMatrix.from_dense(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(GraphError):
        GraphSnapshot(loop, np.zeros((2, 1)))
    neg = SparseMatrix.from_dense(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(GraphError):
        GraphSnapshot(neg, np.zeros((2, 1)))
    with pytest.raises(GraphError):
        snapshot_from_edges(3, [(0, 1)], features=np.zeros((2, 1)))


def test_dynamic_graph_validation():
    g0, g1 = path_graph(3, t=0), path_graph(3, t=1)
    assert DynamicGraph([g0, g1], 3).split == (1, 2, 2)
    with pytest.raises(GraphError):
        DynamicGraph([g1, g0], 3)
    with pytest.raises(GraphError):
        DynamicGraph([g0, path_graph(4, t=1)], 3)
    with pytest.raises(GraphError):
        DynamicGraph([g0, g1], 3, split=(0, 1, 2))


def test_laplacian_small_cases():
    np.testing.assert_array_equal(build_laplacian(path_graph(2)).to_dense(), [[1, -1], [-1, 1]])
    L = build_laplacian(snapshot_from_edges(3, []))
    assert L.nnz == 3 and not L.to_dense().any()
    weighted = snapshot_from_edges(2, [(0, 1)], [2.5])
    np.testing.assert_array_equal(build_laplacian(weighted).to_dense(), [[2.5, -2.5], [-2.5, 2.5]])
    binar = snapshot_from_edges(2, [(0, 1)], [2.5], binarize=True)
    np.testing.assert_array_equal(build_laplacian(binar).to_dense(), [[1, -1], [-1, 1]])


def test_normalized_laplacian():
    L = build_laplacian(path_graph(3), normalized=True).to_dense()
    np.testing.assert_allclose(np.diag(L), 1.0)
    assert np.max(np.linalg.eigvalsh(L)) <= 2.0 + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.9), st.integers(0, 10_000))
def test_laplacian_annihilates_constants(n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    L = build_laplacian(g)
    assert np.abs(L.matvec(np.ones(n))).max() < 1e-12
    assert L.is_symmetric()


def test_lambda_max_known_spectra():
    # cycle C_n: max eigenvalue 2 - 2 cos(2 pi floor(n/2) / n)
    for n in (4, 5, 8):
        exact = 2 - 2 * np.cos(2 * np.pi * (n // 2) / n)
        assert estimate_lambda_max(build_laplacian(cycle_graph(n)), "exact_small") == pytest.approx(exact, abs=1e-12)
    # complete graph K_n: eigenvalue n with multiplicity n - 1
    k5 = snapshot_from_edges(5, [(i, j) for i in range(5) for j in range(i + 1, 5)])
    assert estimate_lambda_max(k5.laplacian, "power_iteration") == pytest.approx(5.0, rel=1e-6)
    assert estimate_lambda_max(k5.laplacian, "degree_bound") == 8.0
    assert estimate_lambda_max(build_laplacian(snapshot_from_edges(3, [])), "exact_small") == 0.0


def test_power_iteration_bracket():
    rng = np.random.default_rng(1)
    for _ in range(30):
        g = random_graph(rng, int(rng.integers(3, 200)), float(rng.uniform(0.02, 0.5)))
        L = g.laplacian
        exact = estimate_lambda_max(L, "exact_small")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LambdaMaxWarning)
            est = estimate_lambda_max(L, "power_iteration")
        assert exact * (1 - 1e-5) <= est <= estimate_lambda_max(L, "degree_bound") + 1e-12


def test_exact_mode_size_limit():
    L = SparseMatrix.from_scipy(sp.identity(2001, format="csr"))
    with pytest.raises(GraphError):
        estimate_lambda_max(L, "exact_small")
    with pytest.raises(ValueError):
        estimate_lambda_max(L, "bogus")
    assert dense_eigenvalues(build_laplacian(path_graph(2))) == pytest.approx([0.0, 2.0], abs=1e-12)


def test_neighbors_and_hops():
    g = snapshot_from_edges(4, [(0, 1), (0, 2)], [1.0, 3.0])
    assert neighbors(g, 0) == [(1, 1.0), (2, 3.0)]
    assert neighbors(g, 3) == []
    with pytest.raises(IndexError):
        neighbors(g, 4)
    d = hop_distances(path_graph(5), 0)
    assert list(d[:5]) == [0, 1, 2, 3, 4]
