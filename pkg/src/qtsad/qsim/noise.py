"""Stochastic gate-error sampling.

Noise is simulated with pure-state trajectories: each run draws a perturbed
copy of the program instead of evolving a density matrix.  After every
parameter- or input-bound rotation, a uniformly chosen Pauli (X, Y, or Z)
is inserted on the same wire with probability ``p_single``; every CNOT is
replaced by a control/target-flipped CNOT with probability ``p_cnot``.

Paulis are emitted as constant pi-rotations about the matching axis; this
stays inside the RX/RY/RZ/CNOT gate alphabet and differs from a bare Pauli
only by a global phase, which no expectation value can observe.
"""
from __future__ import annotations

import math

import numpy as np

from qtsad.qsim.program import (
    CircuitProgram,
    Constant,
    GateKind,
    GateOp,
    Input,
    NoiseSpec,
    Param,
)

_PAULI_KINDS = (GateKind.RX, GateKind.RY, GateKind.RZ)


def sample_noisy_program(
    program: CircuitProgram, noise: NoiseSpec, rng: np.random.Generator
) -> CircuitProgram:
    """Draw one noisy trajectory of ``program``; deterministic given ``rng`` state."""
    ops: list[GateOp] = []
    for op in program.ops:
        if op.kind is GateKind.CNOT:
            if rng.random() < noise.p_cnot:
                ops.append(GateOp(GateKind.CNOT, (op.wires[1], op.wires[0])))
            else:
                ops.append(op)
            continue
        ops.append(op)
        if isinstance(op.angle, (Param, Input)) and rng.random() < noise.p_single:
            kind = _PAULI_KINDS[rng.integers(3)]
            ops.append(GateOp(kind, op.wires, Constant(math.pi)))
    return CircuitProgram(
        n_qubits=program.n_qubits,
        ops=tuple(ops),
        n_param_slots=program.n_param_slots,
        n_input_slots=program.n_input_slots,
    )
