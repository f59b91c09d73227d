"""Exact gradients of weighted Pauli-Z expectations.

Two independent routes are provided for the same derivative:

* the parameter-shift rule, evaluating the circuit at angles shifted by
  +/- pi/2 per parameter slot (exact for single-occurrence rotation
  parameters, eigenvalue spacing +/- 1/2);
* an adjoint reverse sweep that un-applies gates one by one, yielding every
  parameter and input gradient from a single backward pass.

Both are defined on noise-free programs only.  Training under gate noise
differentiates the sampled gate sequence of the forward pass with these
same rules; the noisy insertions are constant rotations and contribute no
gradient slots of their own.
"""
from __future__ import annotations

import math

import numpy as np

from qtsad.errors import ShapeError, UnsupportedError
from qtsad.qsim.program import (
    CircuitProgram,
    Input,
    GateKind,
    NoiseSpec,
    Param,
    encode_grad,
)
from qtsad.qsim.simulator import (
    _z_signs,
    apply_1q,
    apply_cnot,
    apply_pauli,
    expect_z_batched,
    resolve_angles,
    rotation_matrices,
    run_batched,
)


def _check_noise_free(noise: NoiseSpec | None) -> None:
    if noise is not None and noise.enabled:
        raise UnsupportedError("gradients are defined on noiseless circuits only")


def weighted_expectation(
    program: CircuitProgram,
    params: np.ndarray,
    inputs: np.ndarray,
    obs_weights: np.ndarray,
) -> float:
    """f = sum_q w[q] * <Z_q> for a single input row."""
    states = run_batched(program, params, np.asarray(inputs, dtype=np.float64)[None, :])
    z = expect_z_batched(states, program.n_qubits)[0]
    return float(np.dot(np.asarray(obs_weights, dtype=np.float64), z))


def grad_parameter_shift(
    program: CircuitProgram,
    params: np.ndarray,
    inputs: np.ndarray,
    obs_weights: np.ndarray,
    noise: NoiseSpec | None = None,
) -> np.ndarray:
    """d f / d params via [f(theta + pi/2) - f(theta - pi/2)] / 2 per slot."""
    _check_noise_free(noise)
    params = np.asarray(params, dtype=np.float64)
    obs_weights = np.asarray(obs_weights, dtype=np.float64)
    if obs_weights.shape != (program.n_qubits,):
        raise ShapeError(
            f"expected {program.n_qubits} observable weights, got {obs_weights.shape}"
        )
    grads = np.zeros(program.n_param_slots)
    for slot in range(program.n_param_slots):
        shifted = params.copy()
        shifted[slot] = params[slot] + math.pi / 2
        plus = weighted_expectation(program, shifted, inputs, obs_weights)
        shifted[slot] = params[slot] - math.pi / 2
        minus = weighted_expectation(program, shifted, inputs, obs_weights)
        grads[slot] = 0.5 * (plus - minus)
    return grads


def adjoint_batched(
    program: CircuitProgram,
    params: np.ndarray,
    inputs: np.ndarray,
    obs_weights: np.ndarray,
    final_states: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-sweep gradients for a batch with per-row observable weights.

    ``inputs`` is (B, n_input_slots) and ``obs_weights`` is (B, n_qubits);
    the implied scalar is sum_b sum_q w[b, q] * <Z_q>_b.  Returns parameter
    gradients summed over the batch, shape (n_param_slots,), and per-row
    input gradients, shape (B, n_input_slots), with the encoding chain
    factor already applied.
    """
    params = np.asarray(params, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    obs_weights = np.asarray(obs_weights, dtype=np.float64)
    n = program.n_qubits
    if obs_weights.shape != (inputs.shape[0], n):
        raise ShapeError(
            f"expected obs_weights of shape ({inputs.shape[0]}, {n}), got {obs_weights.shape}"
        )
    if final_states is None:
        final_states = run_batched(program, params, inputs)

    # bra = M|psi> with the diagonal observable M = sum_q w_q Z_q.
    diag = obs_weights @ _z_signs(n)
    bra = diag * final_states
    ket = final_states
    dparams = np.zeros(program.n_param_slots)
    dinputs = np.zeros(inputs.shape)
    for op in reversed(program.ops):
        if op.kind is GateKind.CNOT:
            ket = apply_cnot(ket, op.wires[0], op.wires[1], n)
            bra = apply_cnot(bra, op.wires[0], op.wires[1], n)
            continue
        wire = op.wires[0]
        if isinstance(op.angle, (Param, Input)):
            # dU/dtheta |before> = -(i/2) P |after>; 2 Re(-i/2 z) = Im(z),
            # and |after> is the current ket prior to undoing this gate.
            tangent = apply_pauli(ket, op.kind, wire, n)
            d = np.imag(np.sum(np.conj(bra) * tangent, axis=1))
            if isinstance(op.angle, Param):
                dparams[op.angle.slot] += float(d.sum())
            else:
                slot = op.angle.slot
                dinputs[:, slot] += d * encode_grad(op.angle.encoding, inputs[:, slot])
        angle = resolve_angles(op, params, inputs)
        angle_arr = np.asarray([angle]) if np.ndim(angle) == 0 else np.asarray(angle)
        undo = rotation_matrices(op.kind, -angle_arr)
        if angle_arr.shape[0] == 1:
            undo = undo[0]
        ket = apply_1q(ket, undo, wire, n)
        bra = apply_1q(bra, undo, wire, n)
    return dparams, dinputs


def grad_adjoint(
    program: CircuitProgram,
    params: np.ndarray,
    inputs: np.ndarray,
    obs_weights: np.ndarray,
    noise: NoiseSpec | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint gradients of the weighted Z expectation for one input row.

    Returns ``(param_grads, input_grads)``; input gradients include the
    derivative of the encoding applied inside each input-bound gate.
    """
    _check_noise_free(noise)
    inputs = np.asarray(inputs, dtype=np.float64)
    obs_weights = np.asarray(obs_weights, dtype=np.float64)
    if obs_weights.shape != (program.n_qubits,):
        raise ShapeError(
            f"expected {program.n_qubits} observable weights, got {obs_weights.shape}"
        )
    dparams, dinputs = adjoint_batched(
        program, params, inputs[None, :], obs_weights[None, :]
    )
    return dparams, dinputs[0]
