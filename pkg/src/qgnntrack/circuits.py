"""
Quantum neural network blocks: RY angle encoding followed by a tensor-network
shaped parametrized circuit (MPS ladder, TTN binary tree, or MERA = TTN plus
disentanglers), read out as (1 + <Z>)/2 on designated qubits.

Gradients use the two-term parameter-shift rule. Every RY angle slot in a
template is referenced by exactly one gate, so for an output f

    df/dtheta = [f(theta + pi/2) - f(theta - pi/2)] / 2

holds exactly for both trainable parameters and encoded inputs. Feature
derivatives pick up the factor pi from the [0, 1] -> [0, pi] angle map.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import ArityError, ConstructionError, RangeError, UnsupportedModeError
from .qsim import (
    Circuit,
    Constant,
    GateOp,
    InputSlot,
    MAX_QUBITS,
    ParamSlot,
    as_real,
    batch_prob_one,
    make_rng,
    sample_z_mean,
    simulate_batch,
)

# Largest number of float64 amplitudes held per simulation chunk.
_CHUNK_AMPLITUDES = 2**21


class AnsatzKind(enum.Enum):
    MPS = "MPS"
    TTN = "TTN"
    MERA = "MERA"

    @classmethod
    def parse(cls, value) -> "AnsatzKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConstructionError(f"unknown ansatz kind {value!r}") from None


@dataclass(frozen=True)
class Shots:
    """Shot-sampled readout: ``n`` repetitions, seeded."""

    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ArityError("shots must be >= 1")


ANALYTIC = "analytic"
Mode = Union[str, Shots]


def parse_mode(mode) -> Mode:
    if mode is None or mode == ANALYTIC:
        return ANALYTIC
    if isinstance(mode, Shots):
        return mode
    raise UnsupportedModeError(f"unknown evaluation mode {mode!r}")


@dataclass(frozen=True)
class PQCTemplate:
    kind: AnsatzKind
    n_qubits: int
    circuit: Circuit
    readout_qubits: tuple
    n_params: int

    @property
    def n_readout(self) -> int:
        return len(self.readout_qubits)

    def pqc_gates(self) -> tuple:
        return self.circuit.gates[self.n_qubits:]

    @property
    def program(self) -> "_Program":
        prog = self.__dict__.get("_program")
        if prog is None:
            prog = _Program.compile(self)
            object.__setattr__(self, "_program", prog)
        return prog


@dataclass(frozen=True, eq=False)
class _Program:
    """Flat gate arrays plus slot-to-gate maps for the compiled kernel."""

    kinds: np.ndarray
    q0: np.ndarray
    q1: np.ndarray
    n_head: int
    input_gates: np.ndarray
    input_slots: np.ndarray
    param_gates: np.ndarray
    param_slots: np.ndarray
    readout: np.ndarray

    @classmethod
    def compile(cls, template: "PQCTemplate") -> "_Program":
        gates = template.circuit.gates
        kinds = np.array([_kernels.RY if g.kind == "RY" else _kernels.CNOT for g in gates])
        q0 = np.array([g.qubits[0] for g in gates])
        q1 = np.array([g.qubits[1] if g.kind == "CNOT" else -1 for g in gates])
        ins = [(i, g.angle.index) for i, g in enumerate(gates) if isinstance(g.angle, InputSlot)]
        pars = [(i, g.angle.index) for i, g in enumerate(gates) if isinstance(g.angle, ParamSlot)]
        return cls(
            kinds, q0, q1, template.n_qubits,
            np.array([i for i, _ in ins], dtype=int), np.array([k for _, k in ins], dtype=int),
            np.array([i for i, _ in pars], dtype=int), np.array([k for _, k in pars], dtype=int),
            np.array(template.readout_qubits),
        )

    def angles(self, inputs: np.ndarray, params: np.ndarray) -> np.ndarray:
        theta = np.zeros((inputs.shape[0], self.kinds.shape[0]))
        theta[:, self.input_gates] = inputs[:, self.input_slots]
        theta[:, self.param_gates] = params[..., self.param_slots]
        return theta


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def encode_features(features: Sequence[float]) -> list:
    """RY(pi * f) on qubit i for each feature f in [0, 1]."""
    features = np.asarray(features, dtype=float).reshape(-1)
    if np.any(~np.isfinite(features)) or np.any(features < 0) or np.any(features > 1):
        raise RangeError("features must lie in [0, 1]; scale them first")
    return [GateOp("RY", (i,), Constant(np.pi * f)) for i, f in enumerate(features)]


class _Builder:
    def __init__(self):
        self.gates = []
        self.n_params = 0

    def ry(self, qubit):
        self.gates.append(GateOp("RY", (qubit,), ParamSlot(self.n_params)))
        self.n_params += 1

    def block(self, left, right):
        self.ry(left)
        self.ry(right)
        self.gates.append(GateOp("CNOT", (left, right)))


def _tree_levels(n_qubits: int, n_readout: int):
    """Yield (pairs, boundaries) per level of the pairing tree.

    Pairs are formed left to right among active qubits; at most
    ``len(active) - n_readout`` pairs are taken so the tree stops at exactly
    ``n_readout`` survivors. Boundaries join the right qubit of one pair to
    the left qubit of the next.
    """
    active = list(range(n_qubits))
    while len(active) > n_readout:
        n_pairs = min(len(active) // 2, len(active) - n_readout)
        pairs = [(active[2 * i], active[2 * i + 1]) for i in range(n_pairs)]
        boundaries = [(pairs[i][1], pairs[i + 1][0]) for i in range(n_pairs - 1)]
        yield pairs, boundaries
        losers = {left for left, _ in pairs}
        active = [q for q in active if q not in losers]


def _survivors(n_qubits: int, n_readout: int) -> list:
    active = list(range(n_qubits))
    for pairs, _ in _tree_levels(n_qubits, n_readout):
        losers = {left for left, _ in pairs}
        active = [q for q in active if q not in losers]
    return active


def _ansatz(kind: AnsatzKind, n_qubits: int, n_readout: int):
    """(gates, n_params, readout qubits) of the ansatz alone; no width cap."""
    if n_qubits < 2:
        raise ConstructionError(f"n_qubits must be >= 2, got {n_qubits}")
    if not 1 <= n_readout <= n_qubits:
        raise ConstructionError(f"n_readout must be in [1, {n_qubits}], got {n_readout}")
    b = _Builder()
    if kind is AnsatzKind.MPS:
        for q in range(n_qubits - 1):
            b.block(q, q + 1)
        b.ry(n_qubits - 1)
        readout = [n_qubits - 1 - i for i in range(n_readout)]
    else:
        for pairs, boundaries in _tree_levels(n_qubits, n_readout):
            if kind is AnsatzKind.MERA:
                for left, right in boundaries:
                    b.block(left, right)
            for left, right in pairs:
                b.block(left, right)
        readout = _survivors(n_qubits, n_readout)
        for q in readout:
            b.ry(q)
    return b.gates, b.n_params, readout


@lru_cache(maxsize=None)
def build_pqc(kind, n_qubits: int, n_readout: int = 1) -> PQCTemplate:
    """Encoder (one RY input slot per qubit) followed by the chosen ansatz."""
    kind = AnsatzKind.parse(kind)
    if n_qubits > MAX_QUBITS:
        raise ConstructionError(f"n_qubits must be in [2, {MAX_QUBITS}], got {n_qubits}")
    gates, n_params, readout = _ansatz(kind, n_qubits, n_readout)
    encoder = [GateOp("RY", (q,), InputSlot(q)) for q in range(n_qubits)]
    circuit = Circuit(n_qubits, tuple(encoder + gates), n_qubits, n_params)
    return PQCTemplate(kind, n_qubits, circuit, tuple(readout), n_params)


def param_count(kind, n_qubits: int, n_readout: int = 1) -> int:
    """Trainable angles of the construction; defined beyond the simulator's width cap."""
    return _ansatz(AnsatzKind.parse(kind), n_qubits, n_readout)[1]


def init_pqc_params(n_params: int, rng) -> np.ndarray:
    """Uniform draws in [0, 4*pi]."""
    return make_rng(rng).uniform(0.0, 4 * np.pi, size=n_params)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _check_features(template: PQCTemplate, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(as_real(features))
    if features.shape[1] != template.n_qubits:
        raise ArityError(f"expected {template.n_qubits} features, got {features.shape[1]}")
    if np.any(~np.isfinite(features)) or np.any(features < 0) or np.any(features > 1):
        raise RangeError("features must lie in [0, 1]")
    return features


def _check_params(template: PQCTemplate, params) -> np.ndarray:
    params = as_real(params).reshape(-1)
    if params.size != template.n_params:
        raise ArityError(f"expected {template.n_params} params, got {params.size}")
    return params


def _chunks(n_rows: int, n_qubits: int):
    step = max(1, _CHUNK_AMPLITUDES >> n_qubits)
    for start in range(0, n_rows, step):
        yield slice(start, min(n_rows, start + step))


def _prob_one_rows(template: PQCTemplate, angles: np.ndarray, params: np.ndarray) -> np.ndarray:
    """P(readout bit = 1) for rows of (input angles, params); shape (R, n_readout)."""
    n = template.n_qubits
    dtype = np.result_type(angles, params)
    # The compiled kernel is float64 only; long double goes through numpy.
    if _kernels.HAVE_NUMBA and dtype == np.float64:
        prog = template.program
        theta = prog.angles(angles, params)
        return _kernels.readout_prob_one(n, prog.kinds, prog.q0, prog.q1, prog.n_head, theta, prog.readout)
    out = np.empty((angles.shape[0], template.n_readout), dtype=dtype)
    for sl in _chunks(angles.shape[0], n):
        p = params[sl] if params.ndim == 2 else params
        states = simulate_batch(template.circuit, angles[sl], p)
        out[sl] = batch_prob_one(states, n, template.readout_qubits)
    return out


def qnn_forward_batch(template: PQCTemplate, features, params, mode: Mode = ANALYTIC) -> np.ndarray:
    """Readout values in [0, 1] for each feature row; shape (B, n_readout)."""
    mode = parse_mode(mode)
    features = _check_features(template, features)
    params = _check_params(template, params)
    p_one = _prob_one_rows(template, np.pi * features, params)
    if mode == ANALYTIC:
        return 1.0 - p_one
    z = sample_z_mean(p_one, mode.n, make_rng(mode.seed))
    return (1.0 + z) / 2.0


def qnn_forward(template: PQCTemplate, features, params, mode: Mode = ANALYTIC) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ArityError("qnn_forward takes a single feature vector")
    return qnn_forward_batch(template, features, params, mode)[0]


def qnn_jacobian_batch(template: PQCTemplate, features, params):
    """Values and parameter-shift Jacobians for a batch of feature rows.

    Returns ``(values, d_params, d_features)`` with shapes (B, R), (B, R, P)
    and (B, R, n_qubits), where R is the number of readouts.
    """
    features = _check_features(template, features)
    params = _check_params(template, params)
    batch, n = features.shape
    n_p = template.n_params
    shift = np.pi / 2

    # Row layout per sample: base, +param_k, -param_k, +input_i, -input_i.
    per = 1 + 2 * n_p + 2 * n
    angles = np.repeat(np.pi * features, per, axis=0).reshape(batch, per, n)
    rows_params = np.broadcast_to(params, (batch, per, n_p)).copy()
    k = np.arange(n_p)
    rows_params[:, 1 + 2 * k, k] += shift
    rows_params[:, 2 + 2 * k, k] -= shift
    i = np.arange(n)
    base = 1 + 2 * n_p
    angles[:, base + 2 * i, i] += shift
    angles[:, base + 1 + 2 * i, i] -= shift

    values = 1.0 - _prob_one_rows(
        template, angles.reshape(batch * per, n), rows_params.reshape(batch * per, n_p)
    ).reshape(batch, per, template.n_readout)

    out = values[:, 0, :]
    d_params = (values[:, 1:base:2, :] - values[:, 2:base:2, :]) / 2
    d_inputs = (values[:, base::2, :] - values[:, base + 1::2, :]) / 2
    d_params = np.transpose(d_params, (0, 2, 1))
    d_features = np.pi * np.transpose(d_inputs, (0, 2, 1))
    return out, d_params, d_features


def qnn_jacobian(template: PQCTemplate, features, params, mode: Mode = ANALYTIC):
    """(d_out/d_params, d_out/d_features) for one feature vector."""
    if parse_mode(mode) != ANALYTIC:
        raise UnsupportedModeError("Jacobians require analytic expectations")
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ArityError("qnn_jacobian takes a single feature vector")
    _, d_params, d_features = qnn_jacobian_batch(template, features, params)
    return d_params[0], d_features[0]


# ---------------------------------------------------------------------------
# Description
# ---------------------------------------------------------------------------

# Total trainable parameter counts reported for the full hybrid model with
# one hidden dimension (edge + node circuits).
REPORTED_TOTAL_PARAMS = {AnsatzKind.MPS: 40, AnsatzKind.TTN: 42, AnsatzKind.MERA: 58}


def _gate_record(g: GateOp) -> dict:
    rec = {"gate": g.kind, "qubits": list(g.qubits)}
    if isinstance(g.angle, InputSlot):
        rec["input_slot"] = g.angle.index
    elif isinstance(g.angle, ParamSlot):
        rec["param_slot"] = g.angle.index
    elif isinstance(g.angle, Constant):
        rec["angle"] = g.angle.value
    return rec


def pipeline_param_counts(kind, n_hidden: int = 1) -> dict:
    """Circuit and input-layer parameter totals for a whole hybrid model."""
    kind = AnsatzKind.parse(kind)
    width = 3 + n_hidden
    edge = param_count(kind, 2 * width, 1)
    node = param_count(kind, 3 * width, n_hidden)
    input_layer = 3 * n_hidden + n_hidden
    return {
        "edge_qubits": 2 * width,
        "node_qubits": 3 * width,
        "edge_params": edge,
        "node_params": node,
        "circuit_total": edge + node,
        "model_total": edge + node + input_layer,
        "reported_total": REPORTED_TOTAL_PARAMS[kind] if n_hidden == 1 else None,
    }


def describe(kind, n_qubits: int, n_readout: int = 1) -> dict:
    """JSON-serialisable listing of a template plus hybrid-model totals."""
    t = build_pqc(kind, n_qubits, n_readout)
    return {
        "ansatz": t.kind.value,
        "n_qubits": t.n_qubits,
        "n_readout": t.n_readout,
        "readout_qubits": list(t.readout_qubits),
        "n_input_slots": t.circuit.n_input_slots,
        "n_params": t.n_params,
        "gates": [_gate_record(g) for g in t.circuit.gates],
        "pipeline_n_hidden_1": pipeline_param_counts(t.kind, 1),
    }


def describe_text(kind, n_qubits: int, n_readout: int = 1) -> str:
    info = describe(kind, n_qubits, n_readout)
    lines = [
        f"ansatz {info['ansatz']}  qubits {info['n_qubits']}  "
        f"readout {info['readout_qubits']}  params {info['n_params']}",
    ]
    for pos, g in enumerate(info["gates"]):
        if g["gate"] == "CNOT":
            lines.append(f"{pos:4d}  CNOT  {g['qubits'][0]} -> {g['qubits'][1]}")
        elif "input_slot" in g:
            lines.append(f"{pos:4d}  RY    q{g['qubits'][0]}  input[{g['input_slot']}]")
        else:
            lines.append(f"{pos:4d}  RY    q{g['qubits'][0]}  param[{g['param_slot']}]")
    p = info["pipeline_n_hidden_1"]
    lines.append(
        f"pipeline (n_hidden=1): edge {p['edge_qubits']}q/{p['edge_params']}p, "
        f"node {p['node_qubits']}q/{p['node_params']}p, circuits {p['circuit_total']}, "
        f"with input layer {p['model_total']}; reported total {p['reported_total']}"
    )
    return "\n".join(lines)


def describe_json(kind, n_qubits: int, n_readout: int = 1) -> str:
    return json.dumps(describe(kind, n_qubits, n_readout), indent=2)
