import numpy as np
import pytest

from deft.graph import DynamicGraph, snapshot_from_edges


def path_graph(n, features=None, t=0):
    return snapshot_from_edges(n, [(i, i + 1) for i in range(n - 1)], features=features, timestep=t)


def cycle_graph(n, features=None, t=0):
    return snapshot_from_edges(n, [(i, (i + 1) % n) for i in range(n)], features=features, timestep=t)


def grid_graph(rows, cols, features=None):
    idx = lambda r, c: r * cols + c
    edges = [(idx(r, c), idx(r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    edges += [(idx(r, c), idx(r + 1, c)) for r in range(rows - 1) for c in range(cols)]
    return snapshot_from_edges(rows * cols, edges, features=features)


def random_graph(rng, n, p=0.3, d=3, weighted=True, t=0):
    src, dst = np.nonzero(np.triu(rng.random((n, n)) < p, 1))
    w = rng.uniform(0.5, 2.0, len(src)) if weighted else None
    return snapshot_from_edges(n, np.stack([src, dst], 1), w, rng.normal(size=(n, d)), t)


def random_dynamic(rng, n, T, p=0.3, d=3):
    return DynamicGraph([random_graph(rng, n, p, d, t=t) for t in range(T)], n)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def six_node_sequence():
    rng = np.random.default_rng(3)
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]
    snaps = [snapshot_from_edges(6, edges[: 6 + t % 2], features=rng.normal(size=(6, 3)), timestep=t) for t in range(3)]
    return DynamicGraph(snaps, 6)


def six_node_task_loss(config=None, seed=3):
    """(loss closure, model) for a one-snapshot link loss on a weighted 6-node graph.

    Zero-initialized tensors are moved off zero so every parameter carries gradient.
    """
    from deft import autograd as ag
    from deft.config import DeftConfig
    from deft.model import DeftModel
    from deft.tasks import TaskSpec, attach_head, pair_features

    rng = np.random.default_rng(seed)
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]
    g = snapshot_from_edges(6, edges, rng.uniform(0.5, 2.0, len(edges)), rng.normal(size=(6, 3)))
    model = DeftModel(config or DeftConfig(), 3, seed=0)
    head = attach_head(model, TaskSpec("lp"))
    for p in model.parameters():
        if not p.value.any():
            p.value = rng.normal(scale=0.3, size=p.shape)
    pairs = np.array([[0, 1], [2, 3], [1, 4], [0, 3], [2, 5], [4, 0]])
    labels = np.array([1, 1, 1, 0, 0, 0])

    def loss():
        return ag.cross_entropy(head(pair_features(model.forward(g).embeddings, pairs)), labels)

    return loss, model
