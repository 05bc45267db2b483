"""Shipped fixtures for the empirical lemma checks, and a table runner over them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chebyshev import fit_chebyshev, snapshot_filter_lambda
from .graph import DynamicGraph, snapshot_from_edges
from .oracle import (
    SpectralOracle,
    heat_kernel,
    lemma1_part1_check,
    lemma1_part2_check,
    lemma2_ratio_check,
    markov_responses,
)


@dataclass(frozen=True)
class CheckRow:
    check: str
    fixture: str
    value: float
    bound: float
    passed: bool

    def csv(self) -> str:
        return f"{self.check},{self.fixture},{self.value:.12g},{self.bound:.12g},{'PASS' if self.passed else 'FAIL'}"


CHECK_HEADER = "check,fixture,value,bound,result"


def random_dynamic_graph(rng: np.random.Generator, n: int, T: int, p: float = 0.3, d: int = 2) -> DynamicGraph:
    snaps = []
    for t in range(T):
        upper = np.triu(rng.random((n, n)) < p, 1)
        src, dst = np.nonzero(upper)
        w = rng.uniform(0.5, 2.0, size=len(src))
        snaps.append(snapshot_from_edges(n, np.stack([src, dst], 1), w, rng.normal(size=(n, d)), t))
    return DynamicGraph(snaps, n)


def fitted_filters(graph: DynamicGraph, responses, order: int):
    return [fit_chebyshev(r, snapshot_filter_lambda(g), order) for g, r in zip(graph.snapshots, responses)]


def lemma1_part2_trial(seed: int):
    """One randomized pair: two random graphs, heat kernels with random rates, low-order fits."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 31))
    graph = random_dynamic_graph(rng, n, 2, p=float(rng.uniform(0.1, 0.6)))
    desired = [heat_kernel(float(rng.uniform(0.1, 2.0))) for _ in range(2)]
    learned = fitted_filters(graph, desired, int(rng.integers(1, 9)))
    return lemma1_part2_check(graph, desired, learned)[0]


# (name, initial response, functional, Lipschitz constant)
MARKOV_FIXTURES: list[tuple[str, Callable, Callable, float]] = [
    ("affine", heat_kernel(1.0), lambda prev, lam: 0.9 * prev(lam) + 0.05, 0.9),
    ("relax_to_heat", lambda lam: 1.0 / (1.0 + lam), lambda prev, lam: 0.5 * (prev(lam) + np.exp(-0.5 * lam)), 0.5),
    ("tanh", lambda lam: np.cos(lam), lambda prev, lam: np.tanh(prev(lam)), 1.0),
]


def markov_fixture(name: str, seed: int = 0, n: int = 20, T: int = 5, order: int = 6):
    """Graphs, initial response, functional, Lipschitz constant and fitted learned filters."""
    for fname, initial, functional, lip in MARKOV_FIXTURES:
        if fname == name:
            break
    else:
        raise KeyError(name)
    rng = np.random.default_rng(seed)
    graph = random_dynamic_graph(rng, n, T, p=0.25)
    learned = fitted_filters(graph, markov_responses(initial, functional, T), order)
    return graph, initial, functional, lip, learned


def _cycle(n: int):
    return snapshot_from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def _path(n: int):
    return snapshot_from_edges(n, [(i, i + 1) for i in range(n - 1)])


def lemma2_fixtures():
    """(name, oracle, response, signal, target eigen-index)."""
    c4 = SpectralOracle.from_snapshot(_cycle(4))
    p2 = SpectralOracle.from_snapshot(_path(2))
    p6 = SpectralOracle.from_snapshot(_path(6))
    rng = np.random.default_rng(7)
    return [
        ("C4_linear", c4, lambda lam: lam + 0.1, np.array([1.0, 0.3, -0.2, 0.7]), 0),
        ("P2_heat", p2, heat_kernel(1.0), np.array([1.0, 0.2]), 1),
        ("P6_highpass", p6, lambda lam: 0.2 + lam, rng.normal(size=6), 0),
        ("P6_lowpass", p6, lambda lam: 1.0 / (1.0 + lam), rng.normal(size=6), 3),
    ]


def run_all(n_part2: int = 100) -> list[CheckRow]:
    rows = []
    for seed in range(n_part2):
        r = lemma1_part2_trial(seed)
        rows.append(CheckRow("lemma1_part2", f"random_{seed}", r.lhs, r.rhs, r.holds))
    for name, *_ in MARKOV_FIXTURES:
        graph, initial, functional, lip, learned = markov_fixture(name)
        reports = lemma1_part1_check(graph, initial, functional, lip, learned)
        worst = max(reports, key=lambda r: r.lhs - r.rhs)
        rows.append(CheckRow("lemma1_part1", name, worst.lhs, worst.rhs, all(r.holds for r in reports)))
    for name, oracle, response, h, idx in lemma2_fixtures():
        res = lemma2_ratio_check(oracle, response, h, target_index=idx)
        rows.append(CheckRow("lemma2", name, res.empirical_ratio, res.predicted, res.agrees))
    return rows
