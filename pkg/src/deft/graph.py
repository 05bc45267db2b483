"""Sparse graph snapshots, Laplacians and spectral-range estimates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

EXACT_SIZE_LIMIT = 2000


class GraphError(ValueError):
    pass


class SizeLimitError(GraphError):
    pass


class LambdaMaxWarning(RuntimeWarning):
    """Power iteration did not converge; the degree bound was used instead."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix of 64-bit reals."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if offsets.shape != (self.n_rows + 1,):
            raise GraphError("row_offsets must have length n_rows + 1")
        if offsets[0] != 0 or offsets[-1] != len(vals) or np.any(np.diff(offsets) < 0):
            raise GraphError("row_offsets must be non-decreasing from 0 to nnz")
        if len(cols) != len(vals):
            raise GraphError("col_indices and values differ in length")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise GraphError("column index out of range")
        # strictly increasing columns inside each row
        steps = np.diff(cols)
        row_starts = offsets[1:-1]
        inside = np.ones(len(steps), dtype=bool)
        inside[row_starts[(row_starts > 0) & (row_starts < len(cols))] - 1] = False
        if np.any(steps[inside] <= 0):
            raise GraphError("column indices must be strictly increasing within a row")
        for name, arr in (("row_offsets", offsets), ("col_indices", cols), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a, dtype=np.float64)
        return cls.from_scipy(sp.csr_matrix(a))

    @classmethod
    def from_edge_list(cls, n_rows: int, n_cols: int, entries: Iterable[tuple[int, int, float]]) -> "SparseMatrix":
        """Build from (row, col, value) triplets; duplicates are an error."""
        entries = list(entries)
        if not entries:
            return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), [], [])
        rows, cols, vals = (np.asarray(x) for x in zip(*entries))
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order].astype(np.float64)
        if np.any((np.diff(rows) == 0) & (np.diff(cols) == 0)):
            raise GraphError("duplicate entry in edge list")
        if rows.min() < 0 or rows.max() >= n_rows:
            raise GraphError("row index out of range")
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        return cls(n_rows, n_cols, np.cumsum(offsets), cols, vals)

    def to_edge_list(self) -> list[tuple[int, int, float]]:
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        return [(int(r), int(c), float(v)) for r, c, v in zip(rows, self.col_indices, self.values)]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    @cached_property
    def scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.scipy.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.scipy @ x

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.scipy.T)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.n_rows != self.n_cols:
            return False
        diff = self.scipy - self.scipy.T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= tol

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class GraphSnapshot:
    adjacency: SparseMatrix
    features: np.ndarray
    timestep: int = 0
    edge_labels: dict[tuple[int, int], int] | None = None
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        a = self.adjacency
        if a.n_rows != a.n_cols:
            raise GraphError("adjacency must be square")
        if not a.is_symmetric():
            raise GraphError("adjacency must be symmetric")
        rows = np.repeat(np.arange(a.n_rows), np.diff(a.row_offsets))
        if np.any(rows == a.col_indices):
            raise GraphError("adjacency must not contain self-loops")
        if np.any(a.values < 0):
            raise GraphError("edge weights must be non-negative")
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if feats.shape[0] != a.n_rows:
            raise GraphError(f"features have {feats.shape[0]} rows for {a.n_rows} nodes")
        if self.timestep < 0:
            raise GraphError("timestep must be non-negative")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.node_labels is not None:
            labels = np.array(self.node_labels, dtype=np.int64).reshape(-1)
            if len(labels) != a.n_rows:
                raise GraphError("node_labels length differs from node count")
            labels.setflags(write=False)
            object.__setattr__(self, "node_labels", labels)
        if self.edge_labels is not None:
            object.__setattr__(self, "edge_labels", dict(self.edge_labels))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.n_rows

    @property
    def n_edges(self) -> int:
        """Undirected edge count."""
        return self.adjacency.nnz // 2

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.scipy.sum(axis=1)).reshape(-1)

    def edges(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with src < dst."""
        a = self.adjacency
        rows = np.repeat(np.arange(a.n_rows), np.diff(a.row_offsets))
        keep = rows < a.col_indices
        return np.stack([rows[keep], a.col_indices[keep]], axis=1)

    def edge_weights(self) -> np.ndarray:
        a = self.adjacency
        rows = np.repeat(np.arange(a.n_rows), np.diff(a.row_offsets))
        return a.values[rows < a.col_indices]

    @cached_property
    def laplacian(self) -> SparseMatrix:
        return build_laplacian(self)

    @cached_property
    def lambda_max(self) -> float:
        """Power-iteration estimate of the Laplacian's largest eigenvalue (cached)."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LambdaMaxWarning)
            return estimate_lambda_max(self.laplacian, "power_iteration")

    def __eq__(self, other):
        if not isinstance(other, GraphSnapshot):
            return NotImplemented
        same_labels = (self.node_labels is None) == (other.node_labels is None) and (
            self.node_labels is None or np.array_equal(self.node_labels, other.node_labels)
        )
        return (
            self.adjacency == other.adjacency
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and self.timestep == other.timestep
            and (self.edge_labels or None) == (other.edge_labels or None)
            and same_labels
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class DynamicGraph:
    snapshots: tuple[GraphSnapshot, ...]
    n_nodes: int
    split: tuple[int, int, int] = field(default=None)

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise GraphError("a dynamic graph needs at least one snapshot")
        object.__setattr__(self, "snapshots", snaps)
        ts = [s.timestep for s in snaps]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise GraphError("snapshots must have strictly increasing timesteps")
        if any(s.n_nodes != self.n_nodes for s in snaps):
            raise GraphError("every snapshot must have n_nodes nodes")
        split = self.split if self.split is not None else default_split(len(snaps))
        split = tuple(int(x) for x in split)
        train_end, val_end, test_end = split
        if not (0 < train_end <= val_end <= test_end == len(snaps)):
            raise GraphError(f"invalid split {split} for {len(snaps)} snapshots")
        object.__setattr__(self, "split", split)

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, t):
        return self.snapshots[t]

    def __eq__(self, other):
        if not isinstance(other, DynamicGraph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.split == other.split
            and len(self.snapshots) == len(other.snapshots)
            and all(a == b for a, b in zip(self.snapshots, other.snapshots))
        )

    __hash__ = object.__hash__


def default_split(T: int) -> tuple[int, int, int]:
    """70/10/20 split of T snapshots, keeping the train range non-empty."""
    train_end = max(1, int(round(0.7 * T)))
    val_end = max(train_end, min(T, int(round(0.8 * T))))
    return train_end, val_end, T


def snapshot_from_edges(
    n_nodes: int,
    edges: Sequence[tuple[int, int]] | np.ndarray,
    weights: Sequence[float] | None = None,
    features: np.ndarray | None = None,
    timestep: int = 0,
    edge_labels=None,
    node_labels=None,
    binarize: bool = False,
) -> GraphSnapshot:
    """Undirected snapshot from an edge list (each edge listed once)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = np.ones(len(edges)) if weights is None or binarize else np.asarray(weights, dtype=np.float64)
    if np.any(edges[:, 0] == edges[:, 1]):
        raise GraphError("self-loops are not allowed")
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    m = sp.coo_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    if m.nnz != 2 * len(edges):
        raise GraphError("duplicate edge in edge list")
    if features is None:
        features = np.ones((n_nodes, 1))
    return GraphSnapshot(SparseMatrix.from_scipy(m), features, timestep, edge_labels, node_labels)


def build_laplacian(g: GraphSnapshot, normalized: bool = False) -> SparseMatrix:
    """L = D - A with an explicit diagonal (zero for isolated nodes).

    ``normalized=True`` gives I - D^-1/2 A D^-1/2 (isolated nodes keep a 0 row).
    """
    a = g.adjacency
    n = g.n_nodes
    rows = np.repeat(np.arange(n), np.diff(a.row_offsets))
    deg = np.bincount(rows, weights=a.values, minlength=n)
    if normalized:
        inv = np.zeros(n)
        inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
        diag = (deg > 0).astype(np.float64)
        off = -a.values * inv[rows] * inv[a.col_indices]
    else:
        diag = deg
        off = -a.values
    idx = np.arange(n)
    m = sp.coo_matrix(
        (np.concatenate([diag, off]), (np.concatenate([idx, rows]), np.concatenate([idx, a.col_indices]))),
        shape=(n, n),
    ).tocsr()
    m.sort_indices()
    return SparseMatrix(n, n, m.indptr, m.indices, m.data)


def dense_eigenvalues(L: SparseMatrix) -> np.ndarray:
    if L.n_rows > EXACT_SIZE_LIMIT:
        raise SizeLimitError(f"dense spectrum limited to N <= {EXACT_SIZE_LIMIT}, got {L.n_rows}")
    return np.linalg.eigvalsh(L.to_dense())


def power_iteration(L: SparseMatrix, tol: float = 1e-6, max_iter: int = 500, seed: int = 0) -> tuple[float, bool]:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Converged when the residual ||Lv - rho v|| <= tol * rho. Returns (rho, converged).
    """
    n = L.n_rows
    if n == 0 or L.nnz == 0:
        return 0.0, True
    v = np.random.default_rng(seed).uniform(0.5, 1.5, n) * np.where(np.arange(n) % 2, 1.0, -1.0)
    v /= np.linalg.norm(v)
    m = L.scipy
    rho = 0.0
    for _ in range(max_iter):
        w = m @ v
        rho = float(v @ w)
        if rho <= 0.0:
            return 0.0, True
        if np.linalg.norm(w - rho * v) <= tol * rho:
            return rho, True
        v = w / np.linalg.norm(w)
    return rho, False


def estimate_lambda_max(L: SparseMatrix, mode: str = "power_iteration") -> float:
    if mode == "exact_small":
        ev = dense_eigenvalues(L)
        return float(ev[-1]) if len(ev) else 0.0
    if mode == "degree_bound":
        diag = L.scipy.diagonal()
        return 2.0 * float(diag.max()) if len(diag) else 0.0
    if mode == "power_iteration":
        rho, ok = power_iteration(L)
        if ok:
            return rho
        warnings.warn("power iteration did not converge; using degree bound", LambdaMaxWarning, stacklevel=2)
        return estimate_lambda_max(L, "degree_bound")
    raise ValueError(f"unknown lambda_max mode {mode!r}")


def neighbors(g: GraphSnapshot, i: int) -> list[tuple[int, float]]:
    if not 0 <= i < g.n_nodes:
        raise IndexError(f"node {i} out of range for {g.n_nodes} nodes")
    cols, vals = g.adjacency.row(i)
    return [(int(c), float(v)) for c, v in zip(cols, vals)]


def hop_distances(g: GraphSnapshot, source: int) -> np.ndarray:
    """BFS hop counts from ``source``; unreachable nodes get -1."""
    dist = csgraph.shortest_path(g.adjacency.scipy, unweighted=True, indices=source)
    out = np.where(np.isinf(dist), -1, dist)
    return out.astype(np.int64)
