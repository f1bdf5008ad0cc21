"""Mean-aggregation layers, the two fusion paradigms, and the ego-Jacobian."""

import numpy as np
import pytest

from magsim import tensor as T
from magsim.aggregation import (GnnStack, MeanAggLayer, ego_jacobian_diag,
                                mean_aggregate)
from magsim.errors import ContractError
from magsim.graph import (CsrMatrix, Mag, ModalitySpec, SyntheticSpec,
                          generate)
from magsim.models import IndependentAgg, JointGcn
from magsim.validation import autodiff_ego_gradient, directed_chain


def ring_adj(n):
    pairs = np.array([[i, (i + 1) % n] for i in range(n)])
    return CsrMatrix.from_undirected_edges(pairs, n).row_normalize()


def triangle_adj():
    pairs = np.array([[0, 1], [1, 2], [0, 2]])
    return CsrMatrix.from_undirected_edges(pairs, 3).row_normalize()


# ---------------------------------------------------------------------------
# mean_aggregate
# ---------------------------------------------------------------------------

def test_mean_aggregate_fixed_point():
    adj = ring_adj(6)
    h = T.Tensor(np.tile([2.0, -1.0, 3.0], (6, 1)))
    for alpha in (0.2, 0.5, 0.8):
        out = mean_aggregate(h, adj, alpha)
        assert np.max(np.abs(out.data - h.data)) < 1e-12


def test_mean_aggregate_mutual_pair():
    adj = CsrMatrix.from_undirected_edges(np.array([[0, 1]]), 2).row_normalize()
    out = mean_aggregate(T.Tensor([[1.0, 0.0], [0.0, 1.0]]), adj, 0.5)
    assert np.array_equal(out.data, [[0.5, 0.5], [0.5, 0.5]])


def test_mean_aggregate_dense_oracle():
    rng = np.random.default_rng(0)
    adj = ring_adj(8)
    h = rng.standard_normal((8, 3))
    alpha = 0.3
    expected = alpha * h + (1 - alpha) * adj.to_dense() @ h
    out = mean_aggregate(T.Tensor(h), adj, alpha)
    assert np.max(np.abs(out.data - expected)) < 1e-12


# ---------------------------------------------------------------------------
# layers and stack
# ---------------------------------------------------------------------------

def test_layer_alpha_bounds():
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ContractError):
            MeanAggLayer(bad)


def test_layer_unknown_variant():
    with pytest.raises(ContractError):
        MeanAggLayer(0.5, variant="gat")


def test_ego_concat_doubles_width():
    layer = MeanAggLayer(0.5, in_dim=4, out_dim=3, variant="ego-concat")
    assert layer.weight_shape() == (8, 3)
    assert MeanAggLayer(0.5, in_dim=4, out_dim=3).weight_shape() == (4, 3)


def test_layer_missing_weight_errors():
    layer = MeanAggLayer(0.5, in_dim=2, out_dim=2)
    adj = CsrMatrix.from_undirected_edges(np.array([[0, 1]]), 2).row_normalize()
    with pytest.raises(ContractError):
        layer.forward(T.Tensor(np.ones((2, 2))), adj)


def test_stack_needs_a_layer():
    with pytest.raises(ContractError):
        GnnStack(0, 0.5)


def test_stack_param_shapes_chain_dimensions():
    stack = GnnStack(3, 0.5, hidden_dim=8, in_dim=20)
    shapes = stack.param_shapes("gnn")
    assert shapes == {"gnn.w0": (20, 8), "gnn.w1": (8, 8), "gnn.w2": (8, 8)}


# ---------------------------------------------------------------------------
# joint and independent paradigms
# ---------------------------------------------------------------------------

def _single_modality_mag():
    spec = SyntheticSpec(60, 3, [ModalitySpec("text", 6, 1.0, 0.2)],
                         homophily=0.7, mean_degree=4, seed=8)
    return generate(spec)


def test_joint_single_modality_is_plain_gcn():
    mag = _single_modality_mag()
    rng = np.random.default_rng(0)
    model = JointGcn(rng, mag, hidden=8, num_layers=2, alpha=0.5, dropout=0.0)
    out = model.forward(mag, mag.adjacency.row_normalize(), None,
                        training=False, rng=None)
    assert out["logits"].data.shape == (60, 3)


def test_joint_identical_rows_give_identical_logits():
    mag = _single_modality_mag()
    const = np.tile(mag.features["text"][0], (60, 1))
    mag = mag.with_features({"text": const})
    rng = np.random.default_rng(1)
    model = JointGcn(rng, mag, hidden=8, num_layers=2, alpha=0.5, dropout=0.0)
    # smoothing has a fixed point on row-constant input, except where
    # isolated nodes receive a zero neighbor mean
    active = mag.adjacency.degrees > 0
    logits = model.forward(mag, mag.adjacency.row_normalize(), None,
                           training=False, rng=None)["logits"].data[active]
    assert np.max(np.abs(logits - logits[0])) < 1e-10


def _two_modality_mag():
    spec = SyntheticSpec(50, 3, [ModalitySpec("a", 5, 1.0, 0.3),
                                 ModalitySpec("b", 5, 1.0, 0.3)],
                         homophily=0.7, mean_degree=4, seed=13)
    return generate(spec)


def test_independent_branch_symmetry():
    mag = _two_modality_mag()
    # identical features and identical branch parameters
    mag = mag.with_features({"a": mag.features["a"], "b": mag.features["a"]})
    model = IndependentAgg(np.random.default_rng(2), mag, hidden=6,
                           num_layers=2, alpha=0.5, dropout=0.0)
    for pname in list(model.params):
        if pname.endswith("_b.w") or pname.endswith("_b.b"):
            model.params[pname][...] = model.params[pname.replace("_b.", "_a.")]
        if pname.startswith("gnn_b."):
            model.params[pname][...] = model.params["gnn_a." + pname.split(".")[1]]
    norm_adj = mag.adjacency.row_normalize()
    p = model.wrap(None)
    outs = []
    for name in ("a", "b"):
        h = T.relu(T.add(T.matmul(T.Tensor(mag.features[name], None),
                                  p[f"proj_{name}.w"]), p[f"proj_{name}.b"]))
        h = model.stacks[name].forward(h, norm_adj, p, f"gnn_{name}")
        outs.append(h.data)
    assert np.max(np.abs(outs[0] - outs[1])) < 1e-12


def test_independent_head_additivity():
    mag = _two_modality_mag()
    model = IndependentAgg(np.random.default_rng(3), mag, hidden=6,
                           num_layers=1, alpha=0.5, dropout=0.0)
    norm_adj = mag.adjacency.row_normalize()
    full = model.forward(mag, norm_adj, None, training=False, rng=None)["logits"].data
    model.params["head.w"][:6, :] = 0.0     # zero branch a's slice of the head
    only_b = model.forward(mag, norm_adj, None, training=False, rng=None)["logits"].data
    model.params["head.w"][6:, :] = 0.0     # now both slices zero: bias only
    bias_only = model.forward(mag, norm_adj, None, training=False, rng=None)["logits"].data
    contrib_a = full - only_b
    assert np.max(np.abs((only_b - bias_only) + contrib_a + bias_only - full)) < 1e-10


def test_independent_dense_oracle():
    mag = _two_modality_mag()
    model = IndependentAgg(np.random.default_rng(4), mag, hidden=6,
                           num_layers=1, alpha=0.4, dropout=0.0)
    norm_adj = mag.adjacency.row_normalize()
    logits = model.forward(mag, norm_adj, None, training=False, rng=None)["logits"].data

    dense = norm_adj.to_dense()
    outs = []
    for name in ("a", "b"):
        h = mag.features[name] @ model.params[f"proj_{name}.w"] + model.params[f"proj_{name}.b"]
        h = np.maximum(h, 0.0)
        h = (0.4 * h + 0.6 * dense @ h) @ model.params[f"gnn_{name}.w0"]
        outs.append(h)
    expected = np.concatenate(outs, axis=1) @ model.params["head.w"] + model.params["head.b"]
    assert np.max(np.abs(logits - expected)) < 1e-10


# ---------------------------------------------------------------------------
# ego-Jacobian
# ---------------------------------------------------------------------------

def test_ego_jacobian_chain_alpha_cubed():
    adj = directed_chain(10)
    assert abs(ego_jacobian_diag(adj, 0.5, 3, 0) - 0.125) < 1e-15


def test_ego_jacobian_single_layer_is_alpha():
    for adj in (ring_adj(5), triangle_adj()):
        for alpha in (0.3, 0.7):
            assert abs(ego_jacobian_diag(adj, alpha, 1, 0) - alpha) < 1e-15


def test_ego_jacobian_triangle_two_layers():
    # dense 3x3 matrix-power oracle: diag of (alpha*I + (1-alpha)*A_hat)^2
    adj = triangle_adj()
    B = 0.5 * np.eye(3) + 0.5 * adj.to_dense()
    expected = (B @ B)[0, 0]
    assert abs(expected - 0.375) < 1e-15   # alpha^2 + (1-alpha)^2 * 1/2
    assert abs(ego_jacobian_diag(adj, 0.5, 2, 0) - expected) < 1e-15


def test_ego_jacobian_dag_alpha_power():
    rng = np.random.default_rng(0)
    adj = directed_chain(30)
    for _ in range(10):
        alpha = float(rng.uniform(0.05, 0.95))
        L = int(rng.integers(1, 6))
        assert abs(ego_jacobian_diag(adj, alpha, L, 0) - alpha ** L) < 1e-12


def test_ego_jacobian_errors():
    adj = directed_chain(5)
    with pytest.raises(ContractError):
        ego_jacobian_diag(adj, 1.0, 2, 0)
    with pytest.raises(ContractError):
        ego_jacobian_diag(adj, 0.5, 2, 9)
    raw = CsrMatrix.from_undirected_edges(np.array([[0, 1]]), 2)
    with pytest.raises(ContractError):
        ego_jacobian_diag(raw, 0.5, 1, 0)


def test_autodiff_matches_structural_jacobian():
    adj = directed_chain(20)
    for alpha in (0.3, 0.9):
        for L in (1, 3):
            structural = ego_jacobian_diag(adj, alpha, L, 0)
            measured = autodiff_ego_gradient(adj, alpha, L, 0)
            assert abs(measured - structural) < 1e-10


def test_autodiff_ego_gradient_with_cycles():
    # on a cyclic graph the structural diagonal exceeds alpha^L; the
    # autodiff pass must still match it exactly
    adj = triangle_adj()
    structural = ego_jacobian_diag(adj, 0.5, 2, 0)
    measured = autodiff_ego_gradient(adj, 0.5, 2, 0)
    assert abs(measured - structural) < 1e-12
    assert structural > 0.25
