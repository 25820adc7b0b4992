"""
Dense statevector simulation restricted to the {RY, CNOT} gate set.

Qubit ordering is little-endian: qubit 0 is the least significant bit of the
amplitude index, so basis state |q_{n-1} ... q_1 q_0> sits at index
sum(q_k << k).

Two evaluation paths are provided:

- ``new_state`` / ``apply_ry`` / ``apply_cnot`` / ``run_circuit`` act on a
  single complex ``Statevector`` and are the reference path.
- ``simulate_batch`` evaluates one circuit for many angle assignments at
  once. RY and CNOT are real matrices and the start state is real, so the
  batch path keeps amplitudes in float64, which halves memory traffic.

Shot sampling draws uniforms from numpy's PCG64 bit generator
(``numpy.random.Generator(numpy.random.PCG64(seed))``), which is
platform-independent for a fixed numpy release.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import ArityError, QubitIndexError, SizeError

MAX_QUBITS = 16


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class InputSlot:
    index: int


@dataclass(frozen=True)
class ParamSlot:
    index: int


AngleSource = Union[Constant, InputSlot, ParamSlot]


@dataclass(frozen=True)
class GateOp:
    kind: str  # "RY" or "CNOT"
    qubits: tuple
    angle: AngleSource | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.kind == "RY":
            if len(self.qubits) != 1:
                raise ArityError("RY acts on exactly one qubit")
            if self.angle is None:
                raise ArityError("RY requires an angle source")
        elif self.kind == "CNOT":
            if len(self.qubits) != 2:
                raise ArityError("CNOT acts on (control, target)")
            if self.qubits[0] == self.qubits[1]:
                raise QubitIndexError("CNOT control and target must differ")
            if self.angle is not None:
                raise ArityError("CNOT carries no angle")
        else:
            raise ValueError(f"unsupported gate kind {self.kind!r}")


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple = field(default_factory=tuple)
    n_input_slots: int = 0
    n_param_slots: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise SizeError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        seen_inputs, seen_params = set(), set()
        for g in self.gates:
            for q in g.qubits:
                if not 0 <= q < self.n_qubits:
                    raise QubitIndexError(f"qubit {q} out of range for {self.n_qubits} qubits")
            if isinstance(g.angle, InputSlot):
                if not 0 <= g.angle.index < self.n_input_slots:
                    raise ArityError(f"input slot {g.angle.index} out of range")
                seen_inputs.add(g.angle.index)
            elif isinstance(g.angle, ParamSlot):
                if not 0 <= g.angle.index < self.n_param_slots:
                    raise ArityError(f"param slot {g.angle.index} out of range")
                seen_params.add(g.angle.index)
        if len(seen_inputs) != self.n_input_slots:
            raise ArityError("every input slot must be referenced by a gate")
        if len(seen_params) != self.n_param_slots:
            raise ArityError("every param slot must be referenced by a gate")


@dataclass(frozen=True, eq=False)
class Statevector:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        dim = amps.shape[0] if amps.ndim == 1 else 0
        if dim < 2 or dim & (dim - 1) or dim > 2**MAX_QUBITS:
            raise SizeError(f"amplitude vector length {dim} is not 2**n with 1 <= n <= {MAX_QUBITS}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_qubits(self) -> int:
        return int(self.amplitudes.shape[0]).bit_length() - 1

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


# ---------------------------------------------------------------------------
# Single-state reference path
# ---------------------------------------------------------------------------

def new_state(n_qubits: int) -> Statevector:
    """Return |0...0> on ``n_qubits`` qubits."""
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits!r}")
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return Statevector(amps)


def _check_qubit(state: Statevector, qubit: int) -> None:
    if not 0 <= qubit < state.n_qubits:
        raise QubitIndexError(f"qubit {qubit} out of range for {state.n_qubits} qubits")


def ry_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array([[c, -s], [s, c]])


def apply_ry(state: Statevector, qubit: int, angle: float) -> Statevector:
    _check_qubit(state, qubit)
    if not np.isfinite(angle):
        raise ValueError("RY angle must be finite")
    n = state.n_qubits
    amps = state.amplitudes.reshape(2 ** (n - qubit - 1), 2, 2**qubit)
    out = np.einsum("ab,ibj->iaj", ry_matrix(angle), amps)
    return Statevector(out.reshape(-1))


def apply_cnot(state: Statevector, control: int, target: int) -> Statevector:
    _check_qubit(state, control)
    _check_qubit(state, target)
    if control == target:
        raise QubitIndexError("CNOT control and target must differ")
    perm = _cnot_permutation(state.n_qubits, control, target)
    return Statevector(state.amplitudes[perm])


def _resolve_angle(source: AngleSource, inputs, params) -> float:
    if isinstance(source, Constant):
        return float(source.value)
    if isinstance(source, InputSlot):
        return float(inputs[source.index])
    return float(params[source.index])


def _check_arity(circuit: Circuit, n_inputs: int, n_params: int) -> None:
    if n_inputs != circuit.n_input_slots:
        raise ArityError(f"expected {circuit.n_input_slots} inputs, got {n_inputs}")
    if n_params != circuit.n_param_slots:
        raise ArityError(f"expected {circuit.n_param_slots} params, got {n_params}")


def run_circuit(circuit: Circuit, inputs: Sequence[float] = (), params: Sequence[float] = ()) -> Statevector:
    """Apply the circuit's gates in order to |0...0>."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    params = np.asarray(params, dtype=float).reshape(-1)
    _check_arity(circuit, inputs.size, params.size)
    state = new_state(circuit.n_qubits)
    for g in circuit.gates:
        if g.kind == "RY":
            state = apply_ry(state, g.qubits[0], _resolve_angle(g.angle, inputs, params))
        else:
            state = apply_cnot(state, *g.qubits)
    return state


def prob_one(state: Statevector, qubit: int) -> float:
    _check_qubit(state, qubit)
    n = state.n_qubits
    probs = state.probabilities().reshape(2 ** (n - qubit - 1), 2, 2**qubit)
    return float(probs[:, 1, :].sum())


def expectation_z(state: Statevector, qubit: int) -> float:
    """Exact <Z> on one qubit: P(bit=0) - P(bit=1)."""
    _check_qubit(state, qubit)
    n = state.n_qubits
    probs = state.probabilities().reshape(2 ** (n - qubit - 1), 2, 2**qubit)
    value = probs[:, 0, :].sum() - probs[:, 1, :].sum()
    return float(np.clip(value, -1.0, 1.0))


def make_rng(seed) -> np.random.Generator:
    """PCG64-backed generator; passes an existing Generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sample_z_mean(p_one, shots: int, rng) -> np.ndarray:
    """Average of ``shots`` sampled +/-1 outcomes for each P(bit=1) in ``p_one``."""
    if shots < 1:
        raise ArityError("shots must be >= 1")
    p_one = np.asarray(p_one, dtype=float)
    rng = make_rng(rng)
    u = rng.random(p_one.shape + (shots,))
    ones = np.count_nonzero(u < p_one[..., None], axis=-1)
    return (shots - 2 * ones) / shots


def estimate_expectation_z(state: Statevector, qubit: int, shots: int, seed) -> float:
    """Shot-averaged <Z>, reproducible for a fixed seed."""
    if shots < 1:
        raise ArityError("shots must be >= 1")
    return float(sample_z_mean(prob_one(state, qubit), shots, seed))


# ---------------------------------------------------------------------------
# Batched real-amplitude path
# ---------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    flip = (idx >> control) & 1
    perm = idx ^ (flip << target)
    perm.setflags(write=False)
    return perm


def as_real(x) -> np.ndarray:
    """Real array in float64, or in long double if the input already is."""
    a = np.asarray(x)
    return a if a.dtype == np.longdouble else np.asarray(a, dtype=float)


def _leading_encoder(circuit: Circuit) -> int:
    """Number of leading RY gates that act on distinct, untouched qubits."""
    seen = set()
    for i, g in enumerate(circuit.gates):
        if g.kind != "RY" or g.qubits[0] in seen:
            return i
        seen.add(g.qubits[0])
    return len(circuit.gates)


def _angles(source: AngleSource, inputs: np.ndarray, params: np.ndarray, batch: int) -> np.ndarray:
    if isinstance(source, Constant):
        return np.full(batch, float(source.value))
    if isinstance(source, InputSlot):
        return inputs[:, source.index]
    return params[:, source.index]


def _product_state(n: int, cos_sin: dict, batch: int) -> np.ndarray:
    state = np.ones((batch, 1))
    for q in range(n - 1, -1, -1):
        if q in cos_sin:
            c, s = cos_sin[q]
            factor = np.stack([c, s], axis=1)
        else:
            factor = np.broadcast_to(np.array([1.0, 0.0]), (batch, 2))
        state = (state[:, :, None] * factor[:, None, :]).reshape(batch, -1)
    return state


def simulate_batch(circuit: Circuit, inputs, params) -> np.ndarray:
    """Final real amplitudes for a batch of angle assignments.

    ``inputs`` has shape (B, n_input_slots) and ``params`` shape
    (B, n_param_slots); either may be 1-D to broadcast over the batch.
    Returns an array of shape (B, 2**n_qubits).
    """
    inputs = np.atleast_2d(as_real(inputs))
    params = np.atleast_2d(as_real(params))
    if circuit.n_input_slots == 0:
        inputs = inputs.reshape(-1, 0) if inputs.size == 0 else inputs
    if circuit.n_param_slots == 0:
        params = params.reshape(-1, 0) if params.size == 0 else params
    _check_arity(circuit, inputs.shape[1], params.shape[1])
    batch = max(inputs.shape[0], params.shape[0])
    if inputs.shape[0] not in (1, batch) or params.shape[0] not in (1, batch):
        raise ArityError("inputs and params batch sizes differ")
    inputs = np.broadcast_to(inputs, (batch, inputs.shape[1]))
    params = np.broadcast_to(params, (batch, params.shape[1]))
    n = circuit.n_qubits

    head = _leading_encoder(circuit)
    cos_sin = {}
    for g in circuit.gates[:head]:
        half = _angles(g.angle, inputs, params, batch) / 2
        cos_sin[g.qubits[0]] = (np.cos(half), np.sin(half))
    state = _product_state(n, cos_sin, batch)

    for g in circuit.gates[head:]:
        if g.kind == "CNOT":
            state = state[:, _cnot_permutation(n, *g.qubits)]
            continue
        q = g.qubits[0]
        half = _angles(g.angle, inputs, params, batch) / 2
        c = np.cos(half)[:, None, None]
        s = np.sin(half)[:, None, None]
        view = state.reshape(batch, 2 ** (n - q - 1), 2, 2**q)
        a0, a1 = view[:, :, 0, :], view[:, :, 1, :]
        out = np.empty_like(view)
        out[:, :, 0, :] = c * a0 - s * a1
        out[:, :, 1, :] = s * a0 + c * a1
        state = out.reshape(batch, -1)
    return state


def batch_prob_one(states: np.ndarray, n_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    """P(bit=1) for each listed qubit; shape (B, len(qubits))."""
    probs = np.abs(np.asarray(states)) ** 2
    batch = probs.shape[0]
    out = np.empty((batch, len(qubits)), dtype=probs.dtype)
    for i, q in enumerate(qubits):
        view = probs.reshape(batch, 2 ** (n_qubits - q - 1), 2, 2**q)
        out[:, i] = view[:, :, 1, :].sum(axis=(1, 2))
    return np.clip(out, 0.0, 1.0)


def batch_expectation_z(states: np.ndarray, n_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    return 1.0 - 2.0 * batch_prob_one(states, n_qubits, qubits)
