import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import final_state, z_expectation
from qgnntrack.circuits import (
    ANALYTIC,
    AnsatzKind,
    Shots,
    build_pqc,
    describe,
    describe_json,
    describe_text,
    encode_features,
    init_pqc_params,
    param_count,
    pipeline_param_counts,
    qnn_forward,
    qnn_forward_batch,
    qnn_jacobian,
    qnn_jacobian_batch,
)
from qgnntrack.errors import ArityError, ConstructionError, RangeError, UnsupportedModeError
from qgnntrack.qsim import Circuit, Constant, InputSlot, ParamSlot, expectation_z, run_circuit

KINDS = list(AnsatzKind)


def oracle_values(template, features, params):
    """(1 + <Z>)/2 on each readout via the dense Kronecker oracle."""
    gates = []
    for g in template.circuit.gates:
        if g.kind == "CNOT":
            gates.append(("CNOT", *g.qubits))
        elif isinstance(g.angle, InputSlot):
            gates.append(("RY", g.qubits[0], np.pi * features[g.angle.index]))
        else:
            gates.append(("RY", g.qubits[0], params[g.angle.index]))
    psi = final_state(template.n_qubits, gates)
    return np.array([(1 + z_expectation(psi, template.n_qubits, q)) / 2 for q in template.readout_qubits])


def fd_jacobian(template, features, params, eps=1e-5):
    d_p = np.zeros((template.n_readout, template.n_params))
    d_f = np.zeros((template.n_readout, template.n_qubits))
    for k in range(template.n_params):
        up, dn = params.copy(), params.copy()
        up[k] += eps
        dn[k] -= eps
        d_p[:, k] = (qnn_forward(template, features, up) - qnn_forward(template, features, dn)) / (2 * eps)
    for i in range(template.n_qubits):
        up, dn = features.copy(), features.copy()
        up[i] += eps
        dn[i] -= eps
        d_f[:, i] = (qnn_forward(template, up, params) - qnn_forward(template, dn, params)) / (2 * eps)
    return d_p, d_f


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("f,z", [(0.0, 1.0), (1.0, -1.0)])
def test_encoder_extremes(f, z):
    c = Circuit(1, encode_features([f]))
    assert abs(expectation_z(run_circuit(c), 0) - z) < 1e-12


def test_encoder_angles_and_expectations():
    gates = encode_features([0.5, 0.25])
    assert [g.angle.value for g in gates] == [np.pi / 2, np.pi / 4]
    s = run_circuit(Circuit(2, gates))
    assert abs(expectation_z(s, 0)) < 1e-12
    assert abs(expectation_z(s, 1) - np.cos(np.pi / 4)) < 1e-12


@pytest.mark.parametrize("bad", [[-0.01], [1.01], [np.nan]])
def test_encoder_range(bad):
    with pytest.raises(RangeError):
        encode_features(bad)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def test_mps_8_count_and_readout():
    t = build_pqc("MPS", 8, 1)
    assert t.n_params == 15
    assert t.readout_qubits == (7,)


def test_mps_2_gate_list():
    t = build_pqc(AnsatzKind.MPS, 2, 1)
    pqc = t.pqc_gates()
    assert [(g.kind, g.qubits) for g in pqc] == [("RY", (0,)), ("RY", (1,)), ("CNOT", (0, 1)), ("RY", (1,))]
    assert [g.angle.index for g in pqc if g.kind == "RY"] == [0, 1, 2]
    assert t.n_params == 3


def test_ttn_4_blocks():
    t = build_pqc("TTN", 4, 1)
    cnots = [g.qubits for g in t.pqc_gates() if g.kind == "CNOT"]
    assert cnots == [(0, 1), (2, 3), (1, 3)]
    assert t.n_params == 7
    assert t.readout_qubits == (3,)


@pytest.mark.parametrize("kind,n,count", [
    ("MPS", 8, 15), ("MPS", 12, 23), ("MPS", 2, 3),
    ("TTN", 8, 15), ("TTN", 12, 23), ("MERA", 8, 23), ("MERA", 12, 37),
])
def test_param_counts(kind, n, count):
    assert param_count(kind, n) == count
    assert param_count(kind, n) == param_count(kind, n)


def test_template_invariants():
    for kind in KINDS:
        for n in range(2, 13):
            for r in (1, 2, 3):
                if r > n:
                    continue
                t = build_pqc(kind, n, r)
                assert t.circuit.n_input_slots == n
                assert t.n_params == t.circuit.n_param_slots
                assert len(set(t.readout_qubits)) == r == t.n_readout
                assert all(0 <= q < n for q in t.readout_qubits)


def test_node_readouts_for_hidden_dimensions():
    t = build_pqc("TTN", 15, 2)
    assert t.n_readout == 2
    assert build_pqc("MPS", 15, 2).readout_qubits == (14, 13)


@pytest.mark.parametrize("n,r", [(1, 1), (17, 1), (4, 0), (4, 5)])
def test_construction_errors(n, r):
    with pytest.raises(ConstructionError):
        build_pqc("TTN", n, r)


def test_unknown_kind():
    with pytest.raises(ConstructionError):
        build_pqc("PEPS", 4)


def test_deterministic_construction():
    for kind in KINDS:
        build_pqc.cache_clear()
        a = build_pqc(kind, 12, 1).circuit.gates
        build_pqc.cache_clear()
        assert build_pqc(kind, 12, 1).circuit.gates == a


def is_subsequence(short, long):
    it = iter(long)
    return all(any(x == y for y in it) for x in short)


def structure(t):
    return [(g.kind, g.qubits) for g in t.pqc_gates()]


@pytest.mark.parametrize("n", range(2, 17))
def test_ttn_is_subsequence_of_mera(n):
    ttn, mera = build_pqc("TTN", n), build_pqc("MERA", n)
    assert is_subsequence(structure(ttn), structure(mera))
    if n >= 4:
        assert mera.n_params > ttn.n_params


def test_init_params_range_and_seed():
    p = init_pqc_params(500, 3)
    assert p.min() >= 0 and p.max() <= 4 * np.pi
    assert np.array_equal(p, init_pqc_params(500, 3))


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def test_forward_zero_params_zero_features():
    assert np.allclose(qnn_forward(build_pqc("MPS", 2), [0, 0], [0, 0, 0]), [1.0])


def test_forward_gate_trace():
    assert np.allclose(qnn_forward(build_pqc("MPS", 2), [0, 1], [0, 0, 0]), [0.0], atol=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_forward_matches_dense_oracle(kind):
    rng = np.random.default_rng(4)
    for n, r in [(4, 1), (5, 2), (6, 1)]:
        t = build_pqc(kind, n, r)
        for _ in range(5):
            f, p = rng.uniform(0, 1, n), init_pqc_params(t.n_params, rng)
            assert np.allclose(qnn_forward(t, f, p), oracle_values(t, f, p), atol=1e-12)


def test_batch_matches_single():
    rng = np.random.default_rng(2)
    t = build_pqc("MERA", 8)
    F = rng.uniform(0, 1, (7, 8))
    p = init_pqc_params(t.n_params, rng)
    batch = qnn_forward_batch(t, F, p)
    for b in range(7):
        assert np.allclose(batch[b], qnn_forward(t, F[b], p), atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_shots_converge_to_analytic(kind):
    rng = np.random.default_rng(6)
    t = build_pqc(kind, 6, 1)
    f, p = rng.uniform(0, 1, 6), init_pqc_params(t.n_params, rng)
    exact = qnn_forward(t, f, p, ANALYTIC)
    est = qnn_forward(t, f, p, Shots(10_000, 1))
    assert np.all(np.abs(exact - est) < 0.05)
    assert np.array_equal(est, qnn_forward(t, f, p, Shots(10_000, 1)))


def test_forward_arity_and_range():
    t = build_pqc("TTN", 4)
    with pytest.raises(ArityError):
        qnn_forward(t, [0.1, 0.2, 0.3], np.zeros(7))
    with pytest.raises(ArityError):
        qnn_forward(t, [0.1] * 4, np.zeros(6))
    with pytest.raises(RangeError):
        qnn_forward(t, [0.1, 0.2, 0.3, 1.5], np.zeros(7))


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def test_single_rotation_derivative():
    # One-qubit template built by hand: input RY then a single param RY.
    from qgnntrack.circuits import PQCTemplate
    from qgnntrack.qsim import GateOp

    c = Circuit(1, [GateOp("RY", (0,), InputSlot(0)), GateOp("RY", (0,), ParamSlot(0))], 1, 1)
    t = PQCTemplate(AnsatzKind.MPS, 1, c, (0,), 1)
    d_p, d_f = qnn_jacobian(t, [0.0], [np.pi / 2])
    assert abs(d_p[0, 0] + 0.5) < 1e-12
    # Same angle reached through the feature: chain factor pi.
    assert abs(d_f[0, 0] + 0.5 * np.pi) < 1e-12
    for theta in np.linspace(0, 2 * np.pi, 9):
        d_p, _ = qnn_jacobian(t, [0.0], [theta])
        assert abs(d_p[0, 0] + np.sin(theta) / 2) < 1e-12


def test_zero_parameter_template():
    from qgnntrack.circuits import PQCTemplate
    from qgnntrack.qsim import GateOp

    c = Circuit(2, [GateOp("RY", (q,), InputSlot(q)) for q in range(2)] + [GateOp("CNOT", (0, 1))], 2, 0)
    t = PQCTemplate(AnsatzKind.MPS, 2, c, (1,), 0)
    d_p, d_f = qnn_jacobian(t, [0.3, 0.6], [])
    assert d_p.shape == (1, 0)
    assert d_f.shape == (1, 2)
    assert np.all(np.isfinite(d_f))


def test_jacobian_refuses_shots():
    with pytest.raises(UnsupportedModeError):
        qnn_jacobian(build_pqc("TTN", 4), [0.1] * 4, np.zeros(7), Shots(100, 0))


@pytest.mark.parametrize("kind", KINDS)
def test_jacobian_matches_finite_differences(kind):
    rng = np.random.default_rng(10)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        r = int(rng.integers(1, min(n, 3) + 1))
        t = build_pqc(kind, n, r)
        # Keep features away from the [0, 1] edges so the difference stencil stays in range.
        f = rng.uniform(0.01, 0.99, n)
        p = init_pqc_params(t.n_params, rng)
        d_p, d_f = qnn_jacobian(t, f, p)
        fd_p, fd_f = fd_jacobian(t, f, p)
        assert np.max(np.abs(d_p - fd_p)) < 1e-6
        assert np.max(np.abs(d_f - fd_f)) < 1e-6


def test_jacobian_batch_values_match_forward():
    rng = np.random.default_rng(12)
    t = build_pqc("TTN", 12, 1)
    F = rng.uniform(0, 1, (4, 12))
    p = init_pqc_params(t.n_params, rng)
    values, d_p, d_f = qnn_jacobian_batch(t, F, p)
    assert np.allclose(values, qnn_forward_batch(t, F, p), atol=1e-15)
    assert d_p.shape == (4, 1, t.n_params) and d_f.shape == (4, 1, 12)


# ---------------------------------------------------------------------------
# Description
# ---------------------------------------------------------------------------

def test_pipeline_counts():
    assert pipeline_param_counts("MPS")["circuit_total"] == 38
    assert pipeline_param_counts("TTN")["circuit_total"] == 38
    assert pipeline_param_counts("MERA")["circuit_total"] == 60
    assert [pipeline_param_counts(k)["reported_total"] for k in ("MPS", "TTN", "MERA")] == [40, 42, 58]
    p5 = pipeline_param_counts("TTN", 5)
    assert (p5["edge_qubits"], p5["node_qubits"]) == (16, 24)
    assert p5["reported_total"] is None


def test_describe_listing():
    info = describe("MPS", 8)
    assert info["n_params"] == 15 and info["readout_qubits"] == [7]
    assert len(info["gates"]) == len(build_pqc("MPS", 8).circuit.gates)
    assert json.loads(describe_json("TTN", 4))["n_params"] == 7
    text = describe_text("MERA", 8)
    assert "params 23" in text and "reported total 58" in text


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.integers(2, 9), st.integers(0, 2**31))
def test_outputs_in_unit_interval(kind, n, seed):
    rng = np.random.default_rng(seed)
    t = build_pqc(kind, n, 1)
    v = qnn_forward_batch(t, rng.uniform(0, 1, (3, n)), rng.uniform(-50, 50, t.n_params))
    assert np.all((v >= 0) & (v <= 1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
def test_encoder_angles_in_zero_pi(features):
    for g in encode_features(features):
        assert 0 <= g.angle.value <= np.pi
