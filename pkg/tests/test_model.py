import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import path_graph, six_node_task_loss
from deft import autograd as ag
from deft.autograd import ShapeError, Tensor
from deft.chebyshev import ChebyshevFilter, ScaleSet, apply_filter, snapshot_filter_lambda
from deft.config import ConfigError, DeftConfig
from deft.graph import DynamicGraph, hop_distances, snapshot_from_edges
from deft.layers import Parameter, gradient_check, gradient_pairs, mlp2, relative_errors
from deft.model import (
    DeftModel,
    am_forward,
    deft_forward,
    deft_sequence_forward,
    evolve_weights,
    fourier_features,
    message_passing_layer,
    prepare,
    spectral_features,
    timestep_encoding,
)


def mean_adj(g):
    return prepare(g).mean_adj


def zero_grus(model):
    for p in model.parameters():
        if ".gru." in p.name or p.name.split(".")[1] == "gru":
            p.value[:] = 0.0


def randomize(model, names=("W2", "b_z", "b_r", "b_h"), scale=0.3, seed=0):
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        if p.name.split(".")[-1] in names:
            p.value = rng.normal(scale=scale, size=p.shape)


# -- weight evolution ------------------------------------------------------------


def test_zero_gru_halves_weights(six_node_sequence):
    model = DeftModel(DeftConfig(), 3, seed=0)
    zero_grus(model)
    state = model.initial_state()
    w0 = state.weights["spatial0"].value.copy()
    model.forward(six_node_sequence[0], state)
    np.testing.assert_allclose(state.weights["spatial0"].value, 0.5 * w0, atol=1e-15)
    model.forward(six_node_sequence[1], state)
    np.testing.assert_allclose(state.weights["spatial0"].value, 0.25 * w0, atol=1e-15)
    assert state.steps == 2


def test_sequence_weights_decay_geometrically(six_node_sequence):
    model = DeftModel(DeftConfig(), 3, seed=0)
    zero_grus(model)
    state = model.initial_state()
    w0 = state.weights["spectral0"].value.copy()
    model.sequence_forward(six_node_sequence, range(3), state)
    np.testing.assert_allclose(state.weights["spectral0"].value, 0.125 * w0, atol=1e-15)


def test_input_driven_requires_input():
    model = DeftModel(DeftConfig(rnn_style="input_driven"), 3, seed=0)
    layer = model.spatial_layers[0]
    with pytest.raises(ValueError):
        evolve_weights(layer, layer.initial, None, "input_driven")
    out = evolve_weights(layer, layer.initial, Tensor(np.ones((5, 3))), "input_driven")
    assert out.shape == layer.initial.shape


def test_gru_gradient_through_three_steps(six_node_sequence):
    model = DeftModel(DeftConfig(), 3, seed=0)
    randomize(model, names=("W2",))
    outs = model.sequence_forward(six_node_sequence, range(3))
    ag.sum_all(ag.tanh(outs[-1].embeddings)).backward()
    # weights-as-state GRUs have no external input, so only U_* and b_* are live
    gru = [p for p in model.parameters() if ".gru." in p.name or p.name.startswith("spatial0.gru")]
    live = [p for p in gru if p.name.rsplit(".", 1)[1][0] in "Ub"]
    assert len(live) == 12
    assert all(p.grad is not None and np.linalg.norm(p.grad) > 0 for p in live)


# -- message passing ----------------------------------------------------------------


def test_message_passing_trivial_cases():
    iso = snapshot_from_edges(1, [], features=np.array([[2.0, 3.0]]))
    H = Tensor(iso.features)
    np.testing.assert_allclose(message_passing_layer(mean_adj(iso), H, Tensor(np.eye(2))).value, H.value)
    p2 = path_graph(2, features=np.array([[1.0, -2.0], [1.0, -2.0]]))
    out = message_passing_layer(mean_adj(p2), Tensor(p2.features), Tensor(np.random.default_rng(0).normal(size=(2, 4)))).value
    np.testing.assert_array_equal(out[0], out[1])
    zero = message_passing_layer(mean_adj(p2), Tensor(np.zeros((2, 2))), Tensor(np.ones((2, 3))))
    assert not zero.value.any()
    with pytest.raises(ShapeError):
        message_passing_layer(mean_adj(p2), Tensor(np.zeros((2, 2))), Tensor(np.ones((3, 3))))


def test_spatial_module_trivial_cases():
    cfg = DeftConfig(variant="wo_spectral")
    iso = snapshot_from_edges(1, [], features=np.zeros((1, 3)))
    model = DeftModel(cfg, 3, seed=0)
    assert not model.espatial_step(prepare(iso), model.initial_state()).value.any()
    p2 = path_graph(2, features=np.array([[1.0, 2.0, 3.0]] * 2))
    out = model.espatial_step(prepare(p2), model.initial_state()).value
    np.testing.assert_array_equal(out[0], out[1])


# -- spectral module ----------------------------------------------------------------


def test_fresh_head_is_all_pass(six_node_sequence):
    model = DeftModel(DeftConfig(filter_order=8), 3, seed=5)
    prep = prepare(six_node_sequence[0])
    coeffs = model.espectral_step(prep, 0, model.initial_state())
    np.testing.assert_array_equal(coeffs.value[0], [2.0] + [0.0] * 8)
    g = six_node_sequence[0]
    f = ChebyshevFilter(coeffs.value[0], snapshot_filter_lambda(g))
    np.testing.assert_allclose(apply_filter(f, 1.0, g.laplacian, g.features), g.features, atol=1e-12)


@pytest.mark.parametrize("order", [4, 8, 16])
def test_coefficient_length(order, six_node_sequence):
    model = DeftModel(DeftConfig(filter_order=order), 3, seed=0)
    assert model.forward(six_node_sequence[0]).coefficients[0].shape == (1, order + 1)


def test_coefficients_depend_on_snapshot(six_node_sequence):
    model = DeftModel(DeftConfig(), 3, seed=0)
    randomize(model)
    a = model.espectral_step(prepare(six_node_sequence[0]), 0, model.initial_state()).value
    b = model.espectral_step(prepare(six_node_sequence[1]), 0, model.initial_state()).value
    assert np.abs(a - b).max() > 1e-9


def test_spectral_features_trivial_cases(six_node_sequence):
    g = six_node_sequence[0]
    L, lam = g.laplacian, snapshot_filter_lambda(g)
    allpass = Tensor([[2.0, 0.0, 0.0, 0.0, 0.0]])
    X = Tensor(g.features)
    z = spectral_features(allpass, ScaleSet((1.0,)), L, X, Tensor(np.eye(3)), lam, g.lambda_max)
    np.testing.assert_allclose(z.value, g.features, atol=1e-12)
    zero = spectral_features(allpass, ScaleSet((0.5, 2.0)), L, Tensor(np.zeros((6, 3))), Tensor(np.ones((6, 4))), lam, g.lambda_max)
    assert not zero.value.any()
    with pytest.raises(ShapeError):
        spectral_features(allpass, ScaleSet((0.5, 2.0)), L, X, Tensor(np.eye(3)), lam, g.lambda_max)


def test_spectral_features_gradients(six_node_sequence):
    g = six_node_sequence[0]
    rng = np.random.default_rng(2)
    c = Parameter(rng.normal(size=(1, 6)), "c")
    X = Parameter(g.features.copy(), "X")
    proj = Parameter(rng.normal(size=(6, 4)), "proj")
    scales = ScaleSet((0.7, 1.5))
    f = lambda: ag.sum_all(spectral_features(c, scales, g.laplacian, X, proj, snapshot_filter_lambda(g), g.lambda_max))
    assert gradient_check(f, [c]) < 1e-5
    assert gradient_check(f, [X, proj]) < 1e-5


def test_spectral_features_match_apply_filter(six_node_sequence):
    g = six_node_sequence[1]
    rng = np.random.default_rng(4)
    coeffs = rng.normal(size=7)
    f = ChebyshevFilter(coeffs, snapshot_filter_lambda(g))
    scales = ScaleSet((0.5, 3.0))
    z = spectral_features(Tensor(coeffs), scales, g.laplacian, Tensor(g.features), Tensor(np.eye(6)),
                          f.lambda_max, g.lambda_max, prepare(g))
    want = np.hstack([apply_filter(f, s, g.laplacian, g.features, lambda_hat=g.lambda_max) for s in scales])
    np.testing.assert_allclose(z.value, want, atol=1e-12)


def test_independent_scale_coefficients(six_node_sequence):
    model = DeftModel(DeftConfig(share_coefficients=False, filter_order=4), 3, seed=0)
    out = model.forward(six_node_sequence[0])
    assert out.coefficients[0].shape == (1, 10)
    # fresh heads are all-pass at every scale, so the projection sees X at each scale
    proj = model.spectral_heads[0].proj.value
    np.testing.assert_allclose(out.spectral.value, six_node_sequence[0].features @ (proj[:3] + proj[3:]), atol=1e-12)


# -- integration --------------------------------------------------------------------


def test_timestep_encoding():
    np.testing.assert_array_equal(timestep_encoding(0, 8), [0, 1] * 4)
    np.testing.assert_allclose(timestep_encoding(1, 2), [math.sin(1), math.cos(1)], atol=1e-15)
    assert np.abs(timestep_encoding(12345, 16)).max() <= 1.0
    with pytest.raises(ConfigError):
        timestep_encoding(3, 7)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**31))
def test_fourier_shift_invariance(d, seed):
    rng = np.random.default_rng(seed)
    x, y, delta = (rng.normal(scale=3, size=(1, d)) for _ in range(3))
    ff = lambda v: fourier_features(Tensor(v)).value[0]
    assert abs(ff(x + delta) @ ff(y + delta) - ff(x) @ ff(y)) <= 1e-9


def test_hrm_with_zero_mlp(six_node_sequence):
    model = DeftModel(DeftConfig(), 3, seed=0)
    model.hrm["W_b"].value[:] = 0.0
    g = six_node_sequence[0]
    out = model.forward(g)
    d = model.config.hidden_dim
    v_ff = Tensor(np.hstack([np.zeros((1, d)), np.ones((1, d))]))
    want = mlp2(v_ff, model.hrm["W_hr1"], model.hrm["W_hr2"]).value[0]
    np.testing.assert_allclose(out.hrm.value, np.tile(want, (6, 1)), atol=1e-12)


def test_attention_self_loop_only():
    g = snapshot_from_edges(3, [(0, 1)], features=np.random.default_rng(0).normal(size=(3, 4)))
    rng = np.random.default_rng(1)
    heads = [tuple(Tensor(rng.normal(size=(4, 2))) for _ in range(3))]
    out, (w,) = am_forward(prepare(g), Tensor(g.features), heads, 2, return_weights=True)
    prep = prepare(g)
    iso = np.nonzero(prep.att_src == 2)[0]
    assert len(iso) == 1 and w.value[iso[0], 0] == 1.0
    np.testing.assert_allclose(out.value[2], g.features[2] @ heads[0][2].value, atol=1e-15)


def test_attention_uniform_on_triangle():
    g = snapshot_from_edges(3, [(0, 1), (1, 2), (0, 2)], features=np.ones((3, 4)))
    rng = np.random.default_rng(1)
    heads = [tuple(Tensor(rng.normal(size=(4, 2))) for _ in range(3))]
    _, (w,) = am_forward(prepare(g), Tensor(g.features), heads, 2, return_weights=True)
    np.testing.assert_allclose(w.value, 1 / 3, atol=1e-15)


def test_attention_rows_stochastic(rng):
    src, dst = np.nonzero(np.triu(rng.random((30, 30)) < 0.2, 1))
    g = snapshot_from_edges(30, np.stack([src, dst], 1), features=rng.normal(size=(30, 8)))
    heads = [tuple(Tensor(rng.normal(size=(8, 4))) for _ in range(3)) for _ in range(4)]
    prep = prepare(g)
    out, ws = am_forward(prep, Tensor(g.features), heads, 4, return_weights=True)
    assert out.shape == (30, 16)
    for w in ws:
        sums = np.add.reduceat(w.value[:, 0], prep.att_offsets[:-1])
        assert np.abs(sums - 1.0).max() <= 1e-12


# -- full forward ---------------------------------------------------------------------


SEARCH_SPACE = list(itertools.product((1, 2), (32, 64, 128), (4, 8, 16), (4, 8, 16),
                                      ("mlp", "gat_style", "sparse_transformer"), ("weights_as_state", "input_driven")))


def test_forward_shape_over_search_space(six_node_sequence):
    g = six_node_sequence[0]
    for n_layers, hidden, heads, order, agg, style in SEARCH_SPACE:
        cfg = DeftConfig(n_layers=n_layers, hidden_dim=hidden, n_heads=heads, filter_order=order, aggregator=agg,
                         rnn_style=style)
        assert deft_forward(DeftModel(cfg, 3, seed=0), g).shape == (6, hidden)


@pytest.mark.parametrize("variant", ["full", "wo_spectral", "wo_spatial", "wo_hrm", "static_spectral"])
def test_variants_run(variant, six_node_sequence):
    model = DeftModel(DeftConfig(variant=variant), 3, seed=0)
    outs = deft_sequence_forward(model, six_node_sequence, range(3))
    assert [o.shape for o in outs] == [(6, 32)] * 3


def test_static_spectral_reuses_first_filter(six_node_sequence):
    model = DeftModel(DeftConfig(variant="static_spectral"), 3, seed=0)
    randomize(model)
    outs = model.sequence_forward(six_node_sequence, range(3))
    for o in outs[1:]:
        np.testing.assert_array_equal(o.coefficients[0].value, outs[0].coefficients[0].value)
    full = DeftModel(DeftConfig(), 3, seed=0)
    randomize(full)
    fo = full.sequence_forward(six_node_sequence, range(3))
    assert np.abs(fo[1].coefficients[0].value - fo[0].coefficients[0].value).max() > 1e-9


def test_forward_deterministic(six_node_sequence):
    a = deft_forward(DeftModel(DeftConfig(), 3, seed=7), six_node_sequence[0]).value
    b = deft_forward(DeftModel(DeftConfig(), 3, seed=7), six_node_sequence[0]).value
    assert np.array_equal(a, b)


def test_mlp_aggregator_skips_attention(six_node_sequence):
    model = DeftModel(DeftConfig(aggregator="mlp"), 3, seed=0)
    out = model.forward(six_node_sequence[0])
    W1, W2 = model.agg[0]
    np.testing.assert_array_equal(out.embeddings.value, mlp2(out.hrm, W1, W2).value)


def test_single_step_sequence_equals_forward(six_node_sequence):
    model = DeftModel(DeftConfig(), 3, seed=0)
    seq = deft_sequence_forward(model, six_node_sequence, range(1))
    np.testing.assert_array_equal(seq[0].value, deft_forward(model, six_node_sequence[0]).value)
    with pytest.raises(ValueError):
        deft_sequence_forward(model, six_node_sequence, range(0))


def test_temporal_dependence(six_node_sequence):
    model = DeftModel(DeftConfig(rnn_style="input_driven"), 3, seed=0)
    randomize(model)
    base = deft_sequence_forward(model, six_node_sequence, range(2))[1].value
    snaps = list(six_node_sequence.snapshots)
    g0 = snaps[0]
    snaps[0] = snapshot_from_edges(6, g0.edges(), features=g0.features + 0.5, timestep=0)
    changed = deft_sequence_forward(model, DynamicGraph(snaps, 6), range(2))[1].value
    assert np.linalg.norm(base - changed) > 1e-9


def test_feature_width_checked(six_node_sequence):
    with pytest.raises(ShapeError):
        DeftModel(DeftConfig(), 4, seed=0).forward(six_node_sequence[0])


@pytest.mark.parametrize("order", [4, 8])
def test_spectral_locality_in_model(order):
    n = 3 * order + 6
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n, 3))
    g = path_graph(n, features=X)
    model = DeftModel(DeftConfig(aggregator="mlp", n_layers=1, filter_order=order), 3, seed=1)
    randomize(model)
    coeffs = model.forward(g).coefficients
    far = np.nonzero(hop_distances(g, 0) > order)[0]
    X2 = X.copy()
    X2[far] += rng.normal(size=(len(far), 3))
    g2 = path_graph(n, features=X2)

    def spectral(graph):
        # the learned filter from the unperturbed snapshot, applied to each feature matrix
        return model._spectral(prepare(graph), coeffs).value[0]

    assert np.array_equal(spectral(g), spectral(g2))
    # with fresh (all-pass) heads the full model is local without holding coefficients fixed
    fresh = DeftModel(DeftConfig(aggregator="mlp", n_layers=1, filter_order=order), 3, seed=1)
    assert np.array_equal(fresh.forward(g).spectral.value[0], fresh.forward(g2).spectral.value[0])


@pytest.mark.parametrize("config", [DeftConfig(), DeftConfig(aggregator="gat_style", rnn_style="input_driven"),
                                    DeftConfig(aggregator="mlp", n_layers=2, share_coefficients=False)])
def test_task_loss_gradients(config):
    loss, model = six_node_task_loss(config)
    a, n = gradient_pairs(loss, model.parameters(), max_coords=10)
    # central differences at step 1e-5 carry ~1e-11 of roundoff, which dominates on near-zero derivatives
    assert np.all(np.abs(a - n) <= 1e-4 * (np.abs(a) + np.abs(n)) + 1e-9)
    big = np.abs(a) + np.abs(n) >= 1e-6
    assert big.sum() > len(a) // 2 and relative_errors(a[big], n[big]).max() < 1e-4
