"""Statevector simulation of small rotation/CNOT circuits.

All kernels operate on batches of statevectors with shape ``(B, 2**n)`` so
that circuit evaluation amortizes across batch elements; the public
single-state API wraps batches of size one.  Expectations are exact (no
shot sampling) and gate-error noise is handled upstream by sampling a
perturbed program per run (see :mod:`qtsad.qsim.noise`).

Bit ordering: qubit 0 is the most significant bit of the basis index, so
for two qubits the amplitude order is |00>, |01>, |10>, |11> with the
first bit belonging to qubit 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from qtsad.errors import BudgetError, NumericError, ShapeError
from qtsad.qsim.program import (
    CircuitProgram,
    Constant,
    GateKind,
    GateOp,
    Input,
    NoiseSpec,
    Param,
    encode_value,
)

MAX_QUBITS = 12

_PAULI = {
    GateKind.RX: np.array([[0, 1], [1, 0]], dtype=np.complex128),
    GateKind.RY: np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    GateKind.RZ: np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


@dataclass
class QubitState:
    """Normalized complex amplitude vector over ``2**n_qubits`` basis states."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ShapeError(
                f"expected {1 << self.n_qubits} amplitudes, got {self.amplitudes.shape}"
            )
        norm_sq = float(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(norm_sq - 1.0) > 1e-8:
            raise NumericError(f"state norm^2 = {norm_sq!r} is not 1")


def init_zero_state(n_qubits: int) -> QubitState:
    """All-zeros computational basis state |0...0>."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise BudgetError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return QubitState(n_qubits, amps)


@lru_cache(maxsize=None)
def _z_signs(n_qubits: int) -> np.ndarray:
    """Z eigenvalue table: signs[q, i] = +1 if bit q of index i is 0 else -1."""
    idx = np.arange(1 << n_qubits)
    signs = np.empty((n_qubits, 1 << n_qubits), dtype=np.float64)
    for q in range(n_qubits):
        signs[q] = 1.0 - 2.0 * ((idx >> (n_qubits - 1 - q)) & 1)
    return signs


def rotation_matrices(kind: GateKind, angles: np.ndarray) -> np.ndarray:
    """Per-angle 2x2 unitaries for R_P(theta) = exp(-i*theta*P/2); shape (B, 2, 2)."""
    half = 0.5 * np.asarray(angles, dtype=np.float64)
    c, s = np.cos(half), np.sin(half)
    m = np.zeros(half.shape + (2, 2), dtype=np.complex128)
    if kind is GateKind.RX:
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
    elif kind is GateKind.RY:
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
    elif kind is GateKind.RZ:
        m[..., 0, 0] = np.exp(-1j * half)
        m[..., 1, 1] = np.exp(1j * half)
    else:
        raise ShapeError(f"{kind} is not a rotation")
    return m


def apply_1q(states: np.ndarray, mats: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply a 2x2 matrix (shared or per-batch-element) on one qubit.

    ``states`` has shape (B, 2**n); ``mats`` is (2, 2) or (B, 2, 2).
    """
    batch = states.shape[0]
    lead = 1 << qubit
    trail = 1 << (n_qubits - qubit - 1)
    view = states.reshape(batch, lead, 2, trail)
    v0, v1 = view[:, :, 0, :], view[:, :, 1, :]
    out = np.empty_like(view)
    if mats.ndim == 2:
        out[:, :, 0, :] = mats[0, 0] * v0 + mats[0, 1] * v1
        out[:, :, 1, :] = mats[1, 0] * v0 + mats[1, 1] * v1
    else:
        m = mats[:, :, :, None, None]  # (B, 2, 2, 1, 1) broadcast over lead/trail
        out[:, :, 0, :] = m[:, 0, 0] * v0 + m[:, 0, 1] * v1
        out[:, :, 1, :] = m[:, 1, 0] * v0 + m[:, 1, 1] * v1
    return out.reshape(batch, 1 << n_qubits)


def apply_pauli(states: np.ndarray, kind: GateKind, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply the Pauli generator of a rotation kind (X for RX, Y for RY, Z for RZ)."""
    batch = states.shape[0]
    lead = 1 << qubit
    trail = 1 << (n_qubits - qubit - 1)
    view = states.reshape(batch, lead, 2, trail)
    v0, v1 = view[:, :, 0, :], view[:, :, 1, :]
    out = np.empty_like(view)
    if kind is GateKind.RX:
        out[:, :, 0, :] = v1
        out[:, :, 1, :] = v0
    elif kind is GateKind.RY:
        out[:, :, 0, :] = -1j * v1
        out[:, :, 1, :] = 1j * v0
    else:
        out[:, :, 0, :] = v0
        out[:, :, 1, :] = -v1
    return out.reshape(batch, 1 << n_qubits)


@lru_cache(maxsize=None)
def _cnot_perm(n_qubits: int, control: int, target: int) -> np.ndarray:
    """Basis permutation of CNOT: flip the target bit where the control bit is 1."""
    idx = np.arange(1 << n_qubits)
    c_mask = 1 << (n_qubits - 1 - control)
    t_mask = 1 << (n_qubits - 1 - target)
    return np.where(idx & c_mask, idx ^ t_mask, idx)


def apply_cnot(states: np.ndarray, control: int, target: int, n_qubits: int) -> np.ndarray:
    """Apply CNOT as a basis permutation (its own inverse)."""
    return states[:, _cnot_perm(n_qubits, control, target)]


def resolve_angles(
    op: GateOp, params: np.ndarray, inputs: np.ndarray
) -> float | np.ndarray:
    """Angle(s) of a rotation given bound slots; per-batch for input-bound gates."""
    src = op.angle
    if isinstance(src, Constant):
        return src.value
    if isinstance(src, Param):
        return float(params[src.slot])
    return encode_value(src.encoding, inputs[:, src.slot])


def _gate_matrix(op: GateOp, params: np.ndarray, inputs: np.ndarray, sign: float = 1.0) -> np.ndarray:
    angle = resolve_angles(op, params, inputs)
    if np.ndim(angle) == 0:
        return rotation_matrices(op.kind, np.asarray([sign * angle]))[0]
    return rotation_matrices(op.kind, sign * np.asarray(angle))


def run_batched(program: CircuitProgram, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Run the program on |0...0> for each row of ``inputs``; returns (B, 2**n)."""
    params = np.asarray(params, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != program.n_input_slots:
        raise ShapeError(
            f"expected inputs of shape (B, {program.n_input_slots}), got {inputs.shape}"
        )
    if params.shape != (program.n_param_slots,):
        raise ShapeError(
            f"expected {program.n_param_slots} params, got shape {params.shape}"
        )
    n = program.n_qubits
    states = np.zeros((inputs.shape[0], 1 << n), dtype=np.complex128)
    states[:, 0] = 1.0
    for op in program.ops:
        if op.kind is GateKind.CNOT:
            states = apply_cnot(states, op.wires[0], op.wires[1], n)
        else:
            states = apply_1q(states, _gate_matrix(op, params, inputs), op.wires[0], n)
    return states


def expect_z_batched(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """Per-qubit Pauli-Z expectations for a batch of states; returns (B, n)."""
    probs = np.abs(states) ** 2
    return probs @ _z_signs(n_qubits).T


def run_circuit(
    program: CircuitProgram,
    params: np.ndarray,
    inputs: np.ndarray,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> QubitState:
    """Run one circuit from |0...0>, optionally through a sampled noisy program.

    With noise disabled the result is independent of ``rng``; with noise
    enabled the run is deterministic given the generator state.
    """
    from qtsad.qsim.noise import sample_noisy_program

    if noise is not None and noise.enabled:
        if rng is None:
            rng = np.random.default_rng(noise.seed)
        program = sample_noisy_program(program, noise, rng)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape != (program.n_input_slots,):
        raise ShapeError(
            f"expected {program.n_input_slots} inputs, got shape {inputs.shape}"
        )
    states = run_batched(program, params, inputs[None, :])
    return QubitState(program.n_qubits, states[0])


def apply_gate(state: QubitState, gate: GateOp, resolved_angle: float = 0.0) -> QubitState:
    """Apply one gate with an already-resolved angle (ignored for CNOT)."""
    n = state.n_qubits
    for w in gate.wires:
        if not 0 <= w < n:
            raise ShapeError(f"wire {w} out of range for {n} qubits")
    states = state.amplitudes[None, :]
    if gate.kind is GateKind.CNOT:
        if len(gate.wires) != 2 or gate.wires[0] == gate.wires[1]:
            raise ShapeError(f"CNOT needs two distinct wires, got {gate.wires}")
        out = apply_cnot(states, gate.wires[0], gate.wires[1], n)
    else:
        if not math.isfinite(resolved_angle):
            raise NumericError(f"gate angle must be finite, got {resolved_angle!r}")
        mat = rotation_matrices(gate.kind, np.asarray([resolved_angle]))[0]
        out = apply_1q(states, mat, gate.wires[0], n)
    return QubitState(n, out[0])


def expect_z_all(state: QubitState | np.ndarray, n_qubits: int | None = None) -> np.ndarray:
    """Pauli-Z expectation of every qubit, each in [-1, 1]."""
    if isinstance(state, QubitState):
        amps, n = state.amplitudes, state.n_qubits
    else:
        amps = np.asarray(state, dtype=np.complex128)
        n = int(round(math.log2(amps.shape[-1]))) if n_qubits is None else n_qubits
    return expect_z_batched(amps[None, :], n)[0]
