import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_dynamic
from deft.data import (
    ParseError,
    SbmConfig,
    dumps_snapshots,
    generate_dynamic_sbm,
    heterophilic_sbm,
    heterophily_ratio,
    homophilic_sbm,
    load_snapshots,
    loads_snapshots,
    mean_homophily,
    save_snapshots,
    separable_sbm,
)
from deft.graph import DynamicGraph, snapshot_from_edges


def test_config_validation():
    with pytest.raises(ValueError):
        SbmConfig(p_in=1.5)
    with pytest.raises(ValueError):
        SbmConfig(p_in=0.01, p_out=0.1)
    assert SbmConfig(p_in=0.01, p_out=0.1, heterophilic=True).heterophilic
    with pytest.raises(ValueError):
        SbmConfig(n_snapshots=0)
    with pytest.raises(ValueError):
        SbmConfig(n_communities=1)


def test_disjoint_cliques():
    graph = generate_dynamic_sbm(SbmConfig(n_nodes=10, n_communities=2, p_in=1.0, p_out=0.0, drift_fraction=0.0,
                                           n_snapshots=4))
    assert len(graph) == 4
    for g in graph.snapshots:
        y = g.node_labels
        dense = g.adjacency.to_dense()
        want = (y[:, None] == y[None, :]).astype(float)
        np.fill_diagonal(want, 0.0)
        assert np.array_equal(dense, want)
        assert heterophily_ratio(g) == 1.0


def test_edge_count_matches_binomial_oracle():
    counts = []
    for seed in range(50):
        g = generate_dynamic_sbm(SbmConfig(n_snapshots=1, seed=seed))[0]
        counts.append(g.n_edges)
    sizes = np.bincount(np.arange(100) % 3)
    within = sum(s * (s - 1) // 2 for s in sizes)
    between = 100 * 99 // 2 - within
    mean = 0.2 * within + 0.02 * between
    sigma = math.sqrt(within * 0.2 * 0.8 + between * 0.02 * 0.98)
    assert abs(np.mean(counts) - mean) <= 3 * sigma / math.sqrt(50)
    assert sum(abs(c - mean) > 3 * sigma for c in counts) <= 1


@pytest.mark.parametrize("drift", [0.0, 0.05, 0.13, 1.0])
def test_drift_moves_exactly_ceil_fraction(drift):
    graph = generate_dynamic_sbm(SbmConfig(n_nodes=40, n_snapshots=6, drift_fraction=drift, seed=2))
    for a, b in zip(graph.snapshots, graph.snapshots[1:]):
        assert int(np.sum(a.node_labels != b.node_labels)) == math.ceil(drift * 40)


def test_drift_resamples_only_incident_edges():
    graph = generate_dynamic_sbm(SbmConfig(n_nodes=60, n_snapshots=5, seed=3))
    for a, b in zip(graph.snapshots, graph.snapshots[1:]):
        moved = a.node_labels != b.node_labels
        diff = a.adjacency.to_dense() != b.adjacency.to_dense()
        still = ~moved
        assert not diff[np.ix_(still, still)].any()


def test_generated_snapshots_are_valid():
    graph = generate_dynamic_sbm(homophilic_sbm(seed=1, n_snapshots=5))
    assert graph.split == (4, 4, 5)
    assert generate_dynamic_sbm(SbmConfig(n_nodes=10, n_snapshots=20)).split == (14, 16, 20)
    for g in graph.snapshots:
        dense = g.adjacency.to_dense()
        assert np.array_equal(dense, dense.T) and not np.diag(dense).any()
        assert g.features.shape == (100, 3)


def test_random_feature_mode():
    g = generate_dynamic_sbm(SbmConfig(n_snapshots=1, feature_mode="random", feature_dim=5))[0]
    assert g.features.shape == (100, 5)


def test_presets_differ_in_homophily():
    het = mean_homophily(generate_dynamic_sbm(heterophilic_sbm(seed=0, n_snapshots=4)))
    hom = mean_homophily(generate_dynamic_sbm(homophilic_sbm(seed=0, n_snapshots=4)))
    assert het < 0.3 < 0.8 < hom
    sep = generate_dynamic_sbm(separable_sbm(seed=0))
    assert len(sep) == 20 and sep.n_nodes == 100


def test_homophily_examples():
    k3 = snapshot_from_edges(3, [(0, 1), (1, 2), (0, 2)], node_labels=np.array([0, 0, 1]))
    assert heterophily_ratio(k3) == pytest.approx(1 / 3, abs=1e-15)
    bip = snapshot_from_edges(4, [(0, 2), (0, 3), (1, 2), (1, 3)], node_labels=np.array([0, 0, 1, 1]))
    assert heterophily_ratio(bip) == 0.0
    with pytest.raises(ValueError):
        heterophily_ratio(snapshot_from_edges(3, [(0, 1)]))


def assert_graphs_equal(a: DynamicGraph, b: DynamicGraph):
    assert a.n_nodes == b.n_nodes and a.split == b.split and len(a) == len(b)
    for x, y in zip(a.snapshots, b.snapshots):
        assert x.timestep == y.timestep
        assert np.array_equal(x.edges(), y.edges())
        assert np.array_equal(x.edge_weights(), y.edge_weights())
        assert np.array_equal(x.features, y.features)
        assert (x.edge_labels or None) == (y.edge_labels or None)
        if x.node_labels is None:
            assert y.node_labels is None
        else:
            assert np.array_equal(x.node_labels, y.node_labels)


def test_round_trip_sbm(tmp_path):
    graph = generate_dynamic_sbm(SbmConfig(n_nodes=30, n_snapshots=4, seed=5))
    save_snapshots(graph, tmp_path / "g.txt")
    assert_graphs_equal(graph, load_snapshots(tmp_path / "g.txt"))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    graph = random_dynamic(rng, int(rng.integers(1, 12)), int(rng.integers(1, 5)))
    assert_graphs_equal(graph, loads_snapshots(dumps_snapshots(graph)))


def test_round_trip_keeps_labels_and_split():
    snaps = [snapshot_from_edges(3, [(0, 1), (1, 2)], [0.5, 2.0], np.eye(3), t, {(0, 1): 1, (1, 2): 0},
                                 np.array([0, 1, 1])) for t in range(3)]
    graph = DynamicGraph(snaps, 3, (1, 2, 3))
    text = dumps_snapshots(graph)
    assert "SPLIT 1 2 3" in text
    assert_graphs_equal(graph, loads_snapshots(text))


def test_same_seed_byte_identical(tmp_path):
    for name in ("a", "b"):
        save_snapshots(generate_dynamic_sbm(SbmConfig(n_nodes=25, n_snapshots=3, seed=11)), tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


GOOD = """DEFT-SNAPSHOTS v1
T 1 N 2 D 1
SNAPSHOT 0
E 1
0 1 1.0
F 2
0 0.5
1 -0.5
"""


def test_parse_good_file():
    g = loads_snapshots(GOOD)[0]
    assert g.n_edges == 1 and g.features[:, 0].tolist() == [0.5, -0.5]


def test_truncated_edge_block():
    text = GOOD.replace("E 1", "E 3").split("F 2")[0]
    with pytest.raises(ParseError) as err:
        loads_snapshots(text, "trunc.txt")
    assert "trunc.txt" in str(err.value) and err.value.lineno > 0


def test_unknown_directive():
    with pytest.raises(ParseError) as err:
        loads_snapshots(GOOD + "Z 1\n")
    assert err.value.lineno == 9


@pytest.mark.parametrize("bad", [
    GOOD.replace("v1", "v2"),
    GOOD.replace("T 1", "T 2"),
    GOOD.replace("0 1 1.0", "0 1 abc"),
    GOOD.replace("0 1 1.0", "0 5 1.0"),
    GOOD.replace("0 0.5", "0 0.5 0.1"),
])
def test_malformed_files(bad):
    with pytest.raises(ParseError):
        loads_snapshots(bad)
