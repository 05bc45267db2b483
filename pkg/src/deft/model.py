"""The DEFT architecture on top of the autograd kernel.

Per snapshot the model runs

* a spectral module: RNN-evolved GNN weights -> message passing -> pooling ->
  two-layer MLP emitting Chebyshev coefficients, which filter the node
  features at every scale (one shared coefficient vector across scales);
* a spatial module: RNN-evolved message-passing layers;
* the homogeneous representation module (HRM): an MLP on the concatenated
  spectral, spatial and timestep features, sine/cosine features, then a
  two-layer MLP;
* an aggregator: plain MLP, GAT-style attention or sparse dot-product
  attention restricted to graph edges.

GNN weights evolve once per timestep; the evolving weights are the RNN state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .chebyshev import (
    ChebyshevFilter,
    ScaleSet,
    all_pass_coefficients,
    chebyshev_terms,
    combine_terms,
    effective_scale,
    snapshot_filter_lambda,
)
from .config import ConfigError, DeftConfig
from .graph import DynamicGraph, GraphSnapshot, SparseMatrix
from .layers import GRUParams, Parameter, ParameterStore, gru_cell, linear, mlp2


# -- per-snapshot constants -----------------------------------------------------


class PreparedSnapshot:
    """Operators derived from a snapshot that do not depend on parameters."""

    def __init__(self, g: GraphSnapshot):
        self.g = g
        n = g.n_nodes
        a_hat = g.adjacency.scipy + sp.identity(n, format="csr")
        deg = np.asarray(a_hat.sum(axis=1)).reshape(-1)
        self.mean_adj = sp.csr_matrix(sp.diags(1.0 / deg) @ a_hat)
        pattern = sp.csr_matrix(a_hat)
        pattern.sort_indices()
        self.att_offsets = pattern.indptr.astype(np.int64)
        self.att_src = np.repeat(np.arange(n), np.diff(pattern.indptr))
        self.att_dst = pattern.indices.astype(np.int64)
        self.src_sel = ag.selection_matrix(self.att_src, n)
        self.dst_sel = ag.selection_matrix(self.att_dst, n)
        self.segment_sum = sp.csr_matrix(self.src_sel.T)
        self.features = Tensor(g.features)
        self._terms: dict[tuple[float, int], list[np.ndarray]] = {}

    @property
    def laplacian(self) -> SparseMatrix:
        return self.g.laplacian

    @cached_property
    def lambda_hat(self) -> float:
        return self.g.lambda_max

    @cached_property
    def filter_lambda(self) -> float:
        return snapshot_filter_lambda(self.g)

    def feature_terms(self, scale: float, order: int) -> list[np.ndarray]:
        key = (scale, order)
        if key not in self._terms:
            self._terms[key] = chebyshev_terms(self.laplacian, scale, self.filter_lambda, self.g.features, order)
        return self._terms[key]


def prepare(g: GraphSnapshot) -> PreparedSnapshot:
    # cached on the (immutable) snapshot itself
    prep = g.__dict__.get("_deft_prepared")
    if prep is None:
        prep = PreparedSnapshot(g)
        g.__dict__["_deft_prepared"] = prep
    return prep


# -- building blocks ------------------------------------------------------------


def timestep_encoding(t: int, d_t: int) -> np.ndarray:
    if d_t % 2:
        raise ConfigError("timestep encoding dimension must be even")
    i = np.arange(d_t // 2)
    angle = t / 10000.0 ** (2 * i / d_t)
    out = np.empty(d_t)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def fourier_features(v: Tensor) -> Tensor:
    """sin(v) || cos(v); inner products depend only on differences of inputs."""
    return ag.concat([ag.sin(v), ag.cos(v)], axis=1)


def message_passing_layer(mean_adj: sp.csr_matrix, H: Tensor, W: Tensor, activation: str = "leaky_relu") -> Tensor:
    """sigma(D^-1 (A + I) H W)."""
    if H.shape[1] != W.shape[0]:
        raise ShapeError(f"message passing: features {H.shape} vs weights {W.shape}")
    return ag.ACTIVATIONS[activation](ag.spmm(mean_adj, H) @ W)


def chebyshev_filter_op(
    coeffs: Tensor,
    X: Tensor,
    L: SparseMatrix,
    scale: float,
    lambda_max: float,
    terms: list[np.ndarray] | None = None,
) -> Tensor:
    """Differentiable sum' c_k T_k((scale L - a) / a) X.

    Gradients: d/dc_k = <G, T_k X> (halved for k = 0) and, since the operator
    is symmetric, d/dX = sum' c_k T_k G.
    """
    c = coeffs.value.reshape(-1)
    order = len(c) - 1
    if terms is None:
        terms = chebyshev_terms(L, scale, lambda_max, X.value, order)
    out = combine_terms(c, terms)

    def back(g):
        dc = np.array([[float(np.sum(g * t)) for t in terms]])
        dc[0, 0] *= 0.5
        dx = combine_terms(c, chebyshev_terms(L, scale, lambda_max, g, order)) if X.requires_grad else None
        return dc, dx

    return ag.make_op(out, (coeffs, X), back, "chebyshev_filter")


def spectral_features(
    coeffs: Tensor,
    scales: ScaleSet,
    L: SparseMatrix,
    X: Tensor,
    proj: Tensor,
    lambda_max: float,
    lambda_hat: float,
    prepared: PreparedSnapshot | None = None,
) -> Tensor:
    """concat_j g(s_j L) X, projected by ``proj`` ((J * d_in) x d_g)."""
    if proj.shape[0] != len(scales) * X.shape[1]:
        raise ShapeError(f"projection has {proj.shape[0]} rows, expected {len(scales) * X.shape[1]}")
    probe = ChebyshevFilter(np.ones(1), lambda_max)
    blocks = []
    for s in scales:
        s_eff = effective_scale(probe, s, lambda_hat, scales.clamp_mode)
        terms = None
        if prepared is not None and X is prepared.features:
            terms = prepared.feature_terms(s_eff, coeffs.shape[1] - 1)
        blocks.append(chebyshev_filter_op(coeffs, X, L, s_eff, lambda_max, terms))
    z = blocks[0] if len(blocks) == 1 else ag.concat(blocks, axis=1)
    return z @ proj


def attention_weights(prep: PreparedSnapshot, q: Tensor, k: Tensor, d_out: int) -> Tensor:
    """Edge-level weights softmax_j(<q_i, k_j> / d_out) over j in N(i) + {i}, as an (E, 1) column."""
    qi = ag.gather_rows(q, prep.att_src, prep.src_sel)
    kj = ag.gather_rows(k, prep.att_dst, prep.dst_sel)
    scores = ag.scale(ag.sum_cols(ag.mul(qi, kj)), 1.0 / d_out)
    return ag.segment_softmax(scores, prep.att_offsets)


def aggregate(prep: PreparedSnapshot, w: Tensor, v: Tensor) -> Tensor:
    """out_i = sum_j w_ij v_j over attention edges."""
    vj = ag.gather_rows(v, prep.att_dst, prep.dst_sel)
    return ag.spmm(prep.segment_sum, ag.mul(vj, w))


def am_forward(prep: PreparedSnapshot, X: Tensor, heads: list[tuple[Tensor, Tensor, Tensor]], d_out: int,
               return_weights: bool = False):
    """Sparse multi-head attention over graph edges plus self-loops; heads are concatenated."""
    outs, weights = [], []
    for W_q, W_k, W_v in heads:
        w = attention_weights(prep, X @ W_q, X @ W_k, d_out)
        outs.append(aggregate(prep, w, X @ W_v))
        weights.append(w)
    out = outs[0] if len(outs) == 1 else ag.concat(outs, axis=1)
    return (out, weights) if return_weights else out


def gat_forward(prep: PreparedSnapshot, X: Tensor, heads: list[tuple[Tensor, Tensor, Tensor]]) -> Tensor:
    """GAT-style additive attention: e_ij = leaky_relu(a_s . W x_i + a_d . W x_j, 0.2)."""
    outs = []
    for W, a_src, a_dst in heads:
        hx = X @ W
        e = ag.add(
            ag.gather_rows(hx @ a_src, prep.att_src, prep.src_sel),
            ag.gather_rows(hx @ a_dst, prep.att_dst, prep.dst_sel),
        )
        w = ag.segment_softmax(ag.leaky_relu(e, 0.2), prep.att_offsets)
        outs.append(aggregate(prep, w, hx))
    return outs[0] if len(outs) == 1 else ag.concat(outs, axis=1)


# -- model ----------------------------------------------------------------------


@dataclass
class EvolvingWeight:
    """A GNN weight matrix whose columns are GRU hidden states across timesteps."""

    initial: Parameter
    gru: GRUParams

    def evolve(self, current: Tensor, layer_input: Tensor | None, rnn_style: str) -> Tensor:
        h = ag.transpose(current)  # (d_out, d_in): one hidden state per output column
        x = None
        if rnn_style == "input_driven":
            if layer_input is None:
                raise ValueError("input_driven evolution needs the layer input")
            pooled = ag.mean_rows(layer_input)
            x = ag.repeat_rows(pooled, h.shape[0])
        return ag.transpose(gru_cell(x, h, self.gru))


def evolve_weights(weight: EvolvingWeight, current: Tensor, layer_input: Tensor | None = None,
                   rnn_style: str = "weights_as_state") -> Tensor:
    return weight.evolve(current, layer_input, rnn_style)


@dataclass
class SpectralHead:
    gnn: EvolvingWeight
    W1: Parameter
    W2: Parameter
    proj: Parameter


@dataclass
class DynamicParamState:
    """Current evolved weights plus bookkeeping carried across timesteps."""

    weights: dict[str, Tensor] = field(default_factory=dict)
    frozen_coeffs: dict[int, Tensor] = field(default_factory=dict)
    steps: int = 0

    def detach(self):
        """Cut the graph behind the carried weights (truncated backpropagation through time)."""
        self.weights = {k: w.detach() for k, w in self.weights.items()}
        self.frozen_coeffs = {k: c.detach() for k, c in self.frozen_coeffs.items()}


@dataclass
class ForwardOutput:
    embeddings: Tensor
    filters: list[ChebyshevFilter]
    coefficients: list[Tensor]
    spectral: Tensor | None
    spatial: Tensor | None
    hrm: Tensor


class DeftModel:
    def __init__(self, config: DeftConfig, in_dim: int, seed: int = 0):
        self.config = config
        self.in_dim = in_dim
        self.seed = seed
        self.store = ParameterStore(seed)
        cfg, st = config, self.store
        d = cfg.hidden_dim
        M = cfg.filter_order
        J = len(cfg.scales)
        self.scales = ScaleSet(cfg.scales, cfg.clamp_mode)

        self.spectral_heads: list[SpectralHead] = []
        if cfg.variant != "wo_spectral":
            for h in range(cfg.n_filter_heads):
                p = f"spectral{h}"
                if cfg.share_coefficients:
                    n_coeff = M + 1
                else:
                    n_coeff = J * (M + 1)
                self.spectral_heads.append(SpectralHead(
                    gnn=EvolvingWeight(st.glorot(f"{p}.gnn.W0", in_dim, d), GRUParams.create(st, f"{p}.gnn.gru", in_dim, in_dim)),
                    W1=st.glorot(f"{p}.mlp.W1", d, d),
                    # zero so that the initial filter is exactly all-pass
                    W2=st.zeros(f"{p}.mlp.W2", d, n_coeff),
                    proj=st.glorot(f"{p}.proj", J * in_dim, d),
                ))

        self.spatial_layers: list[EvolvingWeight] = []
        if cfg.variant != "wo_spatial":
            d_in = in_dim
            for layer in range(cfg.n_layers):
                p = f"spatial{layer}"
                self.spatial_layers.append(
                    EvolvingWeight(st.glorot(f"{p}.W0", d_in, d), GRUParams.create(st, f"{p}.gru", d_in, d_in))
                )
                d_in = d

        d_g = d * len(self.spectral_heads)
        d_l = d if self.spatial_layers else 0
        if cfg.variant == "wo_hrm":
            if self.spectral_heads and d_g != d_l:
                raise ConfigError("wo_hrm adds spectral and spatial features and needs n_filter_heads = 1")
        else:
            hrm_in = d_g + d_l + cfg.d_t
            self.hrm = {
                "W_a": st.glorot("hrm.mlp.W_a", hrm_in, d),
                "b_a": st.zeros("hrm.mlp.b_a", 1, d),
                "W_b": st.glorot("hrm.mlp.W_b", d, d),
                "b_b": st.zeros("hrm.mlp.b_b", 1, d),
                "W_hr1": st.glorot("hrm.W_hr1", 2 * d, d),
                "W_hr2": st.glorot("hrm.W_hr2", d, d),
            }

        if cfg.aggregator == "mlp":
            self.agg = [(st.glorot("agg.mlp.W1", d, d), st.glorot("agg.mlp.W2", d, d))]
        elif cfg.aggregator == "sparse_transformer":
            self.agg = [
                (st.glorot(f"agg.head{h}.W_Q", d, cfg.d_out), st.glorot(f"agg.head{h}.W_K", d, cfg.d_out),
                 st.glorot(f"agg.head{h}.W_V", d, cfg.d_out))
                for h in range(cfg.n_heads)
            ]
        else:
            self.agg = [
                (st.glorot(f"agg.head{h}.W", d, cfg.d_out), st.glorot(f"agg.head{h}.a_src", cfg.d_out, 1),
                 st.glorot(f"agg.head{h}.a_dst", cfg.d_out, 1))
                for h in range(cfg.n_heads)
            ]

    # -- parameters -------------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.store)

    @property
    def out_dim(self) -> int:
        return self.config.hidden_dim

    def initial_state(self) -> DynamicParamState:
        state = DynamicParamState()
        for h, head in enumerate(self.spectral_heads):
            state.weights[f"spectral{h}"] = head.gnn.initial
        for layer, w in enumerate(self.spatial_layers):
            state.weights[f"spatial{layer}"] = w.initial
        return state

    # -- modules ----------------------------------------------------------------

    def espectral_step(self, prep: PreparedSnapshot, h: int, state: DynamicParamState) -> Tensor:
        """RNN -> GNN -> pool -> MLP; returns the coefficient row (1, n_coeff), all-pass offset included."""
        cfg = self.config
        head = self.spectral_heads[h]
        key = f"spectral{h}"
        W = head.gnn.evolve(state.weights[key], prep.features, cfg.rnn_style)
        state.weights[key] = W
        H = message_passing_layer(prep.mean_adj, prep.features, W, cfg.activation)
        pooled = ag.mean_rows(H) if cfg.pooling == "mean" else ag.sum_rows(H)
        delta = mlp2(pooled, head.W1, head.W2, cfg.activation)
        n_sets = delta.shape[1] // (cfg.filter_order + 1)
        base = np.tile(all_pass_coefficients(cfg.filter_order), n_sets)[None, :]
        return ag.add(delta, Tensor(base))

    def _coefficients(self, prep: PreparedSnapshot, state: DynamicParamState) -> list[Tensor]:
        coeffs = []
        for h in range(len(self.spectral_heads)):
            c = self.espectral_step(prep, h, state)
            if self.config.variant == "static_spectral":
                # learnable, but fixed after the first snapshot of the sequence
                c = state.frozen_coeffs.setdefault(h, c)
            coeffs.append(c)
        return coeffs

    def _spectral(self, prep: PreparedSnapshot, coeffs: list[Tensor]) -> Tensor:
        cfg = self.config
        feats = []
        M1 = cfg.filter_order + 1
        for head, c in zip(self.spectral_heads, coeffs):
            if cfg.share_coefficients:
                z = spectral_features(c, self.scales, prep.laplacian, prep.features, head.proj,
                                      prep.filter_lambda, prep.lambda_hat, prep)
            else:
                blocks = []
                for j, s in enumerate(self.scales):
                    cj = ag.gather_rows(ag.transpose(c), np.arange(j * M1, (j + 1) * M1))
                    blocks.append(spectral_features(ag.transpose(cj), ScaleSet((s,), cfg.clamp_mode), prep.laplacian,
                                                    prep.features, ag.gather_rows(head.proj, np.arange(j * self.in_dim, (j + 1) * self.in_dim)),
                                                    prep.filter_lambda, prep.lambda_hat, prep))
                z = blocks[0]
                for b in blocks[1:]:
                    z = ag.add(z, b)
            feats.append(z)
        return feats[0] if len(feats) == 1 else ag.concat(feats, axis=1)

    def espatial_step(self, prep: PreparedSnapshot, state: DynamicParamState) -> Tensor:
        cfg = self.config
        H = prep.features
        for layer, w in enumerate(self.spatial_layers):
            key = f"spatial{layer}"
            W = w.evolve(state.weights[key], H, cfg.rnn_style)
            state.weights[key] = W
            H = message_passing_layer(prep.mean_adj, H, W, cfg.activation)
        return H

    def hrm_forward(self, v_g: Tensor | None, v_l: Tensor | None, t: int, n: int) -> Tensor:
        cfg = self.config
        t_enc = Tensor(np.repeat(timestep_encoding(t, cfg.d_t)[None, :], n, axis=0))
        parts = [x for x in (v_g, v_l) if x is not None] + [t_enc]
        v_in = ag.concat(parts, axis=1)
        p = self.hrm
        v_gl = linear(ag.ACTIVATIONS[cfg.activation](linear(v_in, p["W_a"], p["b_a"])), p["W_b"], p["b_b"])
        return mlp2(fourier_features(v_gl), p["W_hr1"], p["W_hr2"], cfg.activation)

    def aggregate(self, prep: PreparedSnapshot, X: Tensor) -> Tensor:
        cfg = self.config
        if cfg.aggregator == "mlp":
            W1, W2 = self.agg[0]
            return mlp2(X, W1, W2, cfg.activation)
        if cfg.aggregator == "sparse_transformer":
            return am_forward(prep, X, self.agg, cfg.d_out)
        return gat_forward(prep, X, self.agg)

    # -- forward ------------------------------------------------------------------

    def forward(self, g: GraphSnapshot, state: DynamicParamState | None = None) -> ForwardOutput:
        """One snapshot; evolves every GNN weight in ``state`` exactly once."""
        if g.features.shape[1] != self.in_dim:
            raise ShapeError(f"model expects {self.in_dim} input features, snapshot has {g.features.shape[1]}")
        state = self.initial_state() if state is None else state
        prep = prepare(g)
        cfg = self.config
        coeffs = self._coefficients(prep, state)
        v_g = self._spectral(prep, coeffs) if self.spectral_heads else None
        v_l = self.espatial_step(prep, state) if self.spatial_layers else None
        if cfg.variant == "wo_hrm":
            hrm = v_l if v_g is None else (v_g if v_l is None else ag.add(v_g, v_l))
        else:
            hrm = self.hrm_forward(v_g, v_l, g.timestep, g.n_nodes)
        emb = self.aggregate(prep, hrm)
        state.steps += 1
        filters = [ChebyshevFilter(c.value.reshape(-1)[: cfg.filter_order + 1], prep.filter_lambda) for c in coeffs]
        return ForwardOutput(emb, filters, coeffs, v_g, v_l, hrm)

    def sequence_forward(self, graph: DynamicGraph, t_range: range, state: DynamicParamState | None = None) -> list[ForwardOutput]:
        """Forward over ``t_range`` (snapshot indices) carrying the evolving weights."""
        if len(t_range) == 0:
            raise ValueError("empty timestep range")
        state = self.initial_state() if state is None else state
        return [self.forward(graph[t], state) for t in t_range]

    def filter_at(self, graph: DynamicGraph, t: int, head: int = 0) -> ChebyshevFilter:
        """Learned filter at snapshot index ``t`` (weights evolved from the start of the sequence)."""
        with ag.no_grad():
            outs = self.sequence_forward(graph, range(t + 1))
        return outs[-1].filters[head]


def deft_forward(model: DeftModel, snapshot: GraphSnapshot, state: DynamicParamState | None = None) -> Tensor:
    return model.forward(snapshot, state).embeddings


def deft_sequence_forward(model: DeftModel, graph: DynamicGraph, t_range: range) -> list[Tensor]:
    return [o.embeddings for o in model.sequence_forward(graph, t_range)]
