"""Differentiable statevector simulator for small variational circuits."""

from qtsad.qsim.gradients import (
    adjoint_batched,
    grad_adjoint,
    grad_parameter_shift,
    weighted_expectation,
)
from qtsad.qsim.noise import sample_noisy_program
from qtsad.qsim.program import (
    AngleSource,
    CircuitProgram,
    Constant,
    Encoding,
    GateKind,
    GateOp,
    Input,
    NoiseSpec,
    Param,
    encode_grad,
    encode_value,
    program_from_text,
    program_to_text,
)
from qtsad.qsim.simulator import (
    MAX_QUBITS,
    QubitState,
    apply_gate,
    expect_z_all,
    expect_z_batched,
    init_zero_state,
    run_batched,
    run_circuit,
)

__all__ = [
    "AngleSource",
    "CircuitProgram",
    "Constant",
    "Encoding",
    "GateKind",
    "GateOp",
    "Input",
    "MAX_QUBITS",
    "NoiseSpec",
    "Param",
    "QubitState",
    "adjoint_batched",
    "apply_gate",
    "encode_grad",
    "encode_value",
    "expect_z_all",
    "expect_z_batched",
    "grad_adjoint",
    "grad_parameter_shift",
    "init_zero_state",
    "program_from_text",
    "program_to_text",
    "run_batched",
    "run_circuit",
    "sample_noisy_program",
    "weighted_expectation",
]
