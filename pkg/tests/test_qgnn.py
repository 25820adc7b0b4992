import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import five_node_graph, random_graph
from qgnntrack.circuits import AnsatzKind, Shots, qnn_forward
from qgnntrack.errors import ArityError, CompatibilityError, ParseError
from qgnntrack.graphbuild import SubGraph
from qgnntrack.qgnn import (
    Model,
    ModelConfig,
    PerceptronBlock,
    QnnBlock,
    aggregate,
    edge_network,
    format_checkpoint,
    forward,
    forward_classical,
    init_params,
    input_network,
    logistic,
    node_network,
    parse_checkpoint,
    read_checkpoint,
    write_checkpoint,
)

KINDS = list(AnsatzKind)


def aggregate_oracle(H, edges, s):
    """Loop form of the score-weighted neighbour means."""
    N, D = H.shape
    h_in, h_out = np.zeros((N, D)), np.zeros((N, D))
    for i in range(N):
        w_in = w_out = 0.0
        for (a, b), w in zip(edges, s):
            if b == i:
                h_in[i] += w * H[a]
                w_in += w
            if a == i:
                h_out[i] += w * H[b]
                w_out += w
        h_in[i] /= max(1.0, w_in)
        h_out[i] /= max(1.0, w_out)
    return h_in, h_out


# ---------------------------------------------------------------------------
# Input network
# ---------------------------------------------------------------------------

def test_input_network_zero_weights():
    H = input_network(np.random.default_rng(0).uniform(0, 1, (4, 3)), np.zeros((3, 2)), np.zeros(2))
    assert H.shape == (4, 5)
    assert np.all(H[:, 3:] == 0.5)


def test_input_network_single_weight():
    w = 0.8
    H = input_network(np.array([[1.0, 0.0, 0.0]]), np.array([[w], [0.0], [0.0]]), np.zeros(1))
    assert H[0, 3] == pytest.approx(1 / (1 + np.exp(-w)), abs=1e-15)


def test_input_network_shape_errors():
    with pytest.raises(ArityError):
        input_network(np.zeros((2, 4)), np.zeros((3, 1)), np.zeros(1))
    with pytest.raises(ArityError):
        input_network(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(1))


def test_logistic_matches_closed_form():
    x = np.linspace(-30, 30, 61)
    assert np.allclose(logistic(x), 1 / (1 + np.exp(-x)), atol=1e-15)


# ---------------------------------------------------------------------------
# Edge and node networks
# ---------------------------------------------------------------------------

def test_block_widths_for_one_hidden():
    m = Model(ModelConfig(n_hidden=1))
    assert m.edge_block.template.n_qubits == 8
    assert m.node_block.template.n_qubits == 12


def test_edge_network_empty():
    block = QnnBlock(AnsatzKind.TTN, 8, 1)
    assert edge_network(np.zeros((3, 4)), np.zeros((0, 2)), block, np.zeros(block.n_params)).shape == (0,)


def test_edge_network_bad_index():
    block = QnnBlock(AnsatzKind.TTN, 8, 1)
    with pytest.raises(IndexError):
        edge_network(np.zeros((3, 4)), [[0, 3]], block, np.zeros(block.n_params))


@pytest.mark.parametrize("kind", KINDS)
def test_edge_network_matches_per_edge_circuit(kind):
    rng = np.random.default_rng(1)
    H = rng.uniform(0, 1, (4, 4))
    edges = np.array([[0, 1], [2, 3], [1, 2]])
    block = QnnBlock(kind, 8, 1)
    p = block.init_params(rng)
    s = edge_network(H, edges, block, p)
    for k, (a, b) in enumerate(edges):
        ref = qnn_forward(block.template, np.concatenate([H[a], H[b]]), p)[0]
        assert s[k] == pytest.approx(ref, abs=1e-12)
    assert np.all((s >= 0) & (s <= 1))


def test_aggregate_matches_loop_oracle():
    rng = np.random.default_rng(2)
    H = rng.uniform(0, 1, (6, 4))
    edges = rng.integers(0, 6, (9, 2))
    s = rng.uniform(0, 1, 9) * 2
    h_in, h_out, _, _ = aggregate(H, edges, s)
    ref_in, ref_out = aggregate_oracle(H, edges, s)
    assert np.allclose(h_in, ref_in, atol=1e-14)
    assert np.allclose(h_out, ref_out, atol=1e-14)


def test_isolated_node_and_zero_scores():
    H = np.full((3, 4), 0.7)
    h_in, h_out, _, _ = aggregate(H, np.array([[0, 1]]), np.zeros(1))
    assert np.all(h_in == 0) and np.all(h_out == 0)
    block = QnnBlock(AnsatzKind.TTN, 12, 1)
    out = node_network(H, np.array([[0, 1]]), np.zeros(1), block, block.init_params(0))
    assert np.all((out >= 0) & (out <= 1))


def test_node_network_keeps_spatial_columns():
    rng = np.random.default_rng(3)
    H = rng.uniform(0, 1, (5, 4))
    block = QnnBlock(AnsatzKind.MPS, 12, 1)
    out = node_network(H, np.array([[0, 1], [1, 2]]), np.array([0.3, 0.9]), block, block.init_params(rng))
    assert np.array_equal(out[:, :3], H[:, :3])
    assert not np.array_equal(out[:, 3:], H[:, 3:])


# ---------------------------------------------------------------------------
# Full forward pass
# ---------------------------------------------------------------------------

def test_pipeline_order():
    trace = []
    cfg = ModelConfig(n_iterations=1)
    forward(five_node_graph(), init_params(cfg, 0), cfg, trace)
    assert trace == ["EN", "NN", "EN"]
    trace = []
    cfg = ModelConfig(n_iterations=3)
    forward(five_node_graph(), init_params(cfg, 0), cfg, trace)
    assert trace == ["EN", "NN"] * 3 + ["EN"]


@pytest.mark.parametrize("kind", KINDS)
def test_forward_length_range_and_determinism(kind):
    cfg = ModelConfig(ansatz=kind)
    p = init_params(cfg, 4)
    a = forward(five_node_graph(), p, cfg)
    assert a.shape == (4,)
    assert np.all((a >= 0) & (a <= 1))
    assert np.array_equal(a, forward(five_node_graph(), p, cfg))


def test_forward_matches_manual_composition():
    cfg = ModelConfig(n_hidden=1, n_iterations=1, ansatz="MERA")
    m = Model(cfg)
    p = init_params(cfg, 7)
    g = five_node_graph()
    H = input_network(g.node_features, p.input_weights, p.input_bias)
    s = edge_network(H, g.edges, m.edge_block, p.edge_params)
    h_in, h_out = aggregate_oracle(H, g.edges, s)
    trip = np.hstack([h_in, H, h_out])
    H2 = H.copy()
    for i in range(len(H)):
        H2[i, 3:] = qnn_forward(m.node_block.template, trip[i], p.node_params)
    final = np.array([qnn_forward(m.edge_block.template, np.concatenate([H2[a], H2[b]]), p.edge_params)[0]
                      for a, b in g.edges])
    assert np.allclose(forward(g, p, cfg), final, atol=1e-12)


def test_forward_empty_graph():
    cfg = ModelConfig()
    g = SubGraph(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros(0))
    assert forward(g, init_params(cfg, 0), cfg).shape == (0,)


def test_shot_mode_is_close_to_analytic():
    cfg = ModelConfig()
    p = init_params(cfg, 5)
    exact = forward(five_node_graph(), p, cfg)
    noisy_cfg = ModelConfig(mode=Shots(20000, 3))
    noisy = forward(five_node_graph(), p, noisy_cfg)
    assert np.max(np.abs(noisy - exact)) < 0.05
    assert np.array_equal(noisy, forward(five_node_graph(), p, noisy_cfg))


def test_mismatched_params_rejected():
    p = init_params(ModelConfig(ansatz="MPS"), 0)
    with pytest.raises(CompatibilityError):
        forward(five_node_graph(), p, ModelConfig(ansatz="MERA"))


# ---------------------------------------------------------------------------
# Classical baseline
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("h", [1, 5, 10])
def test_classical_sizes_constructible(h):
    cfg = ModelConfig(n_hidden=h, classical_baseline=True)
    s = forward_classical(five_node_graph(), init_params(cfg, 0), cfg)
    assert s.shape == (4,)


def test_classical_zero_weights_give_half():
    cfg = ModelConfig(n_hidden=2, classical_baseline=True)
    m = Model(cfg)
    p = m.unflatten(np.zeros(m.n_params))
    assert np.all(forward_classical(five_node_graph(), p, cfg) == 0.5)


def test_perceptron_jacobian_matches_differences():
    rng = np.random.default_rng(6)
    blk = PerceptronBlock(5, 3, 2)
    p = blk.init_params(rng) + rng.normal(0, 0.1, blk.n_params)
    X = rng.uniform(0, 1, (4, 5))
    _, Jp, Jx = blk.jacobians(X, p)
    eps = 1e-6
    for k in range(blk.n_params):
        d = np.zeros(blk.n_params)
        d[k] = eps
        fd = (blk.forward(X, p + d) - blk.forward(X, p - d)) / (2 * eps)
        assert np.allclose(Jp[:, :, k], fd, atol=1e-8)
    for j in range(5):
        d = np.zeros(5)
        d[j] = eps
        fd = (blk.forward(X + d, p) - blk.forward(X - d, p)) / (2 * eps)
        assert np.allclose(Jx[:, :, j], fd, atol=1e-8)


# ---------------------------------------------------------------------------
# Parameters and checkpoints
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig(n_hidden=2, ansatz="MERA"),
                                 ModelConfig(n_hidden=3, classical_baseline=True)])
def test_flatten_unflatten(cfg):
    m = Model(cfg)
    p = init_params(cfg, 1)
    assert m.unflatten(p.flatten()) == p
    assert p.flatten().size == m.n_params
    with pytest.raises(ArityError):
        m.unflatten(np.zeros(m.n_params + 1))


def test_init_is_seeded():
    cfg = ModelConfig()
    assert init_params(cfg, 3) == init_params(cfg, 3)
    assert not init_params(cfg, 3) == init_params(cfg, 4)


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(n_hidden=2, n_iterations=2, ansatz="MPS", mode=Shots(100, 4))
    p = init_params(cfg, 9)
    write_checkpoint(tmp_path / "c.txt", p, cfg)
    p2, cfg2 = read_checkpoint(tmp_path / "c.txt")
    assert p2 == p and cfg2 == cfg


def test_checkpoint_truncated():
    cfg = ModelConfig()
    text = format_checkpoint(init_params(cfg, 0), cfg)
    with pytest.raises(ParseError):
        parse_checkpoint("\n".join(text.split("\n")[:6]))


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 7), st.integers(1, 10), st.sampled_from(KINDS))
def test_permutation_equivariance(seed, n, e, kind):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, e)
    cfg = ModelConfig(ansatz=kind)
    p = init_params(cfg, seed)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    g2 = SubGraph(g.node_features[perm], inv[g.edges], g.labels)
    assert np.allclose(forward(g2, p, cfg), forward(g, p, cfg), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(1, 3))
def test_node_state_stays_in_unit_interval(seed, h, iters):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 6, 8)
    cfg = ModelConfig(n_hidden=h, n_iterations=iters, ansatz="MPS")
    m = Model(cfg)
    p = m.unflatten(rng.uniform(-10, 10, m.n_params))
    H = input_network(g.node_features, p.input_weights, p.input_bias)
    for _ in range(iters):
        s = edge_network(H, g.edges, m.edge_block, p.edge_params)
        H_next = node_network(H, g.edges, s, m.node_block, p.node_params)
        assert np.array_equal(H_next[:, :3], H[:, :3])
        H = H_next
        assert np.all((H >= 0) & (H <= 1))
