"""Drifting stochastic block model generator and the DEFT-SNAPSHOTS v1 text format."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import DynamicGraph, GraphSnapshot, default_split, snapshot_from_edges

SNAPSHOT_HEADER = "DEFT-SNAPSHOTS v1"


class ParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class SbmConfig:
    n_nodes: int = 100
    n_communities: int = 3
    p_in: float = 0.2
    p_out: float = 0.02
    n_snapshots: int = 20
    drift_fraction: float = 0.05
    feature_mode: str = "community_onehot_noisy"
    noise_std: float = 0.1
    seed: int = 0
    heterophilic: bool = False
    # random features only; one-hot features always have n_communities columns
    feature_dim: int = 8

    def __post_init__(self):
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("p_in and p_out must lie in [0, 1]")
        if self.p_in < self.p_out and not self.heterophilic:
            raise ValueError("p_in < p_out requires heterophilic = true")
        if not 0.0 <= self.drift_fraction <= 1.0:
            raise ValueError("drift_fraction must lie in [0, 1]")
        if self.n_snapshots < 1:
            raise ValueError("n_snapshots must be >= 1")
        if self.n_communities < 2:
            raise ValueError("n_communities must be >= 2")
        if self.n_nodes < self.n_communities:
            raise ValueError("need at least one node per community")
        if self.feature_mode not in ("community_onehot_noisy", "random"):
            raise ValueError("feature_mode must be community_onehot_noisy or random")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def separable_sbm(seed: int = 0, **overrides) -> SbmConfig:
    """Dense, well separated communities with clean one-hot features (training fixture)."""
    kw = dict(n_nodes=100, n_communities=3, p_in=1.0, p_out=0.005, n_snapshots=20, drift_fraction=0.01,
              noise_std=0.1, seed=seed)
    kw.update(overrides)
    return SbmConfig(**kw)


def heterophilic_sbm(seed: int = 0, **overrides) -> SbmConfig:
    """Edges mostly between communities (low homophily ratio)."""
    kw = dict(p_in=0.02, p_out=0.1, heterophilic=True, seed=seed)
    kw.update(overrides)
    return SbmConfig(**kw)


def homophilic_sbm(seed: int = 0, **overrides) -> SbmConfig:
    kw = dict(p_in=0.25, p_out=0.01, seed=seed)
    kw.update(overrides)
    return SbmConfig(**kw)


def _block_probs(cfg: SbmConfig, comm: np.ndarray) -> np.ndarray:
    same = comm[:, None] == comm[None, :]
    return np.where(same, cfg.p_in, cfg.p_out)


def _features(cfg: SbmConfig, comm: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = cfg.n_nodes
    if cfg.feature_mode == "random":
        return rng.normal(size=(n, cfg.feature_dim))
    x = np.zeros((n, cfg.n_communities))
    x[np.arange(n), comm] = 1.0
    return x + rng.normal(scale=cfg.noise_std, size=x.shape) if cfg.noise_std > 0 else x


def _snapshot(adj: np.ndarray, feats: np.ndarray, comm: np.ndarray, t: int) -> GraphSnapshot:
    src, dst = np.nonzero(np.triu(adj, 1))
    return snapshot_from_edges(len(comm), np.stack([src, dst], axis=1), features=feats, timestep=t,
                               node_labels=comm)


def generate_dynamic_sbm(cfg: SbmConfig) -> DynamicGraph:
    """Snapshot 0 from SBM(p_in, p_out); then each step moves ceil(drift * N) nodes to a new
    community and resamples only the edges incident to moved nodes."""
    rng = np.random.default_rng(cfg.seed)
    n, k = cfg.n_nodes, cfg.n_communities
    comm = rng.permutation(np.arange(n) % k)
    upper = np.triu(rng.random((n, n)) < _block_probs(cfg, comm), 1)
    adj = upper | upper.T
    snaps = [_snapshot(adj, _features(cfg, comm, rng), comm, 0)]
    n_move = math.ceil(cfg.drift_fraction * n)
    for t in range(1, cfg.n_snapshots):
        comm = comm.copy()
        moved = rng.choice(n, size=n_move, replace=False)
        # a new community different from the current one, uniform among the rest
        comm[moved] = (comm[moved] + rng.integers(1, k, size=n_move)) % k
        if n_move:
            draw = rng.random((n, n)) < _block_probs(cfg, comm)
            draw = np.triu(draw, 1)
            draw = draw | draw.T
            touched = np.zeros(n, bool)
            touched[moved] = True
            mask = touched[:, None] | touched[None, :]
            np.fill_diagonal(mask, False)
            adj = np.where(mask, draw, adj)
        snaps.append(_snapshot(adj, _features(cfg, comm, rng), comm, t))
    return DynamicGraph(snaps, n)


def heterophily_ratio(g: GraphSnapshot) -> float:
    """Fraction of edges whose endpoints share a label (the homophily ratio)."""
    if g.node_labels is None:
        raise ValueError("snapshot has no node labels")
    e = g.edges()
    if len(e) == 0:
        raise ValueError("snapshot has no edges")
    y = g.node_labels
    return float(np.mean(y[e[:, 0]] == y[e[:, 1]]))


def mean_homophily(graph: DynamicGraph) -> float:
    return float(np.mean([heterophily_ratio(g) for g in graph.snapshots if g.n_edges]))


# -- file format -----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_snapshots(graph: DynamicGraph) -> str:
    d = graph[0].features.shape[1]
    lines = [SNAPSHOT_HEADER, f"T {len(graph)} N {graph.n_nodes} D {d}"]
    if graph.split != default_split(len(graph)):
        lines.append("SPLIT " + " ".join(str(x) for x in graph.split))
    for g in graph.snapshots:
        if g.features.shape[1] != d:
            raise ValueError("all snapshots must share the feature dimension")
        lines.append(f"SNAPSHOT {g.timestep}")
        labels = g.edge_labels or {}
        edges, w = g.edges(), g.edge_weights()
        lines.append(f"E {len(edges)}")
        for (u, v), wt in zip(edges.tolist(), w):
            lab = labels.get((u, v), labels.get((v, u)))
            lines.append(f"{u} {v} {_fmt(wt)}" + ("" if lab is None else f" {lab}"))
        lines.append(f"F {g.n_nodes}")
        for i, row in enumerate(g.features):
            lines.append(f"{i} " + " ".join(_fmt(x) for x in row))
        if g.node_labels is not None:
            lines.append(f"Y {g.n_nodes}")
            lines.extend(f"{i} {int(y)}" for i, y in enumerate(g.node_labels))
    return "\n".join(lines) + "\n"


def save_snapshots(graph: DynamicGraph, path):
    Path(path).write_text(dumps_snapshots(graph), encoding="utf-8", newline="\n")


class _Lines:
    def __init__(self, text: str, path):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.i = 0
        self.path = path

    def error(self, msg: str, lineno: int | None = None):
        return ParseError(self.path, self.i if lineno is None else lineno, msg)

    def peek(self) -> list[str] | None:
        while self.i < len(self.lines) and not self.lines[self.i].strip():
            self.i += 1
        return self.lines[self.i].split() if self.i < len(self.lines) else None

    def next(self, what: str) -> list[str]:
        tok = self.peek()
        if tok is None:
            raise ParseError(self.path, self.i + 1, f"unexpected end of file, expected {what}")
        self.i += 1
        return tok

    def ints(self, toks, what):
        try:
            return [int(x) for x in toks]
        except ValueError:
            raise self.error(f"non-integer token in {what}") from None

    def floats(self, toks, what):
        try:
            return [float(x) for x in toks]
        except ValueError:
            raise self.error(f"non-numeric token in {what}") from None


def loads_snapshots(text: str, path="<string>") -> DynamicGraph:
    r = _Lines(text, path)
    head = r.next("header")
    if " ".join(head) != SNAPSHOT_HEADER:
        raise r.error(f"expected header {SNAPSHOT_HEADER!r}")
    dims = r.next("dimensions")
    if len(dims) != 6 or dims[0::2] != ["T", "N", "D"]:
        raise r.error("expected 'T <snapshots> N <nodes> D <feature dim>'")
    T, N, D = r.ints(dims[1::2], "dimensions")
    split = None
    if r.peek() and r.peek()[0] == "SPLIT":
        tok = r.next("split")
        if len(tok) != 4:
            raise r.error("expected 'SPLIT <train_end> <val_end> <test_end>'")
        split = tuple(r.ints(tok[1:], "split"))
    snaps = []
    while (tok := r.peek()) is not None:
        tok = r.next("SNAPSHOT")
        if tok[0] != "SNAPSHOT" or len(tok) != 2:
            raise r.error(f"expected 'SNAPSHOT <t>', got directive {tok[0]!r}")
        (t,) = r.ints(tok[1:], "SNAPSHOT")
        tok = r.next("E")
        if tok[0] != "E" or len(tok) != 2:
            raise r.error(f"expected 'E <count>', got {tok[0]!r}")
        (n_e,) = r.ints(tok[1:], "E")
        edges, weights, labels = [], [], {}
        for _ in range(n_e):
            tok = r.next("edge line")
            if len(tok) not in (3, 4):
                raise r.error("edge line needs '<src> <dst> <weight> [<label>]'")
            u, v = r.ints(tok[:2], "edge")
            (w,) = r.floats(tok[2:3], "edge weight")
            if not (0 <= u < N and 0 <= v < N):
                raise r.error(f"edge endpoint out of range [0, {N})")
            edges.append((u, v))
            weights.append(w)
            if len(tok) == 4:
                labels[(u, v)] = r.ints(tok[3:], "edge label")[0]
        feats = np.zeros((N, D))
        node_labels = None
        while (tok := r.peek()) is not None and tok[0] in ("F", "Y"):
            tok = r.next("block")
            if len(tok) != 2:
                raise r.error(f"expected '{tok[0]} <count>'")
            (count,) = r.ints(tok[1:], tok[0])
            if tok[0] == "F":
                for _ in range(count):
                    row = r.next("feature row")
                    if len(row) != D + 1:
                        raise r.error(f"feature row needs a node id and {D} values")
                    (i,) = r.ints(row[:1], "feature row")
                    if not 0 <= i < N:
                        raise r.error("feature row node out of range")
                    feats[i] = r.floats(row[1:], "feature row")
            else:
                node_labels = np.zeros(N, dtype=np.int64)
                for _ in range(count):
                    row = r.next("label row")
                    if len(row) != 2:
                        raise r.error("label row needs '<node_id> <class_id>'")
                    i, y = r.ints(row, "label row")
                    if not 0 <= i < N:
                        raise r.error("label row node out of range")
                    node_labels[i] = y
        try:
            snaps.append(snapshot_from_edges(N, edges, weights, feats, t, labels or None, node_labels))
        except ValueError as exc:
            raise r.error(str(exc)) from None
    if len(snaps) != T:
        raise ParseError(path, r.i, f"header declares {T} snapshots, file has {len(snaps)}")
    try:
        return DynamicGraph(snaps, N, split)
    except ValueError as exc:
        raise ParseError(path, r.i, str(exc)) from None


def load_snapshots(path) -> DynamicGraph:
    return loads_snapshots(Path(path).read_text(encoding="utf-8"), path)
