"""Shared fixtures and finite-difference oracles."""
from __future__ import annotations

import numpy as np
import pytest

from qtsad.qsim import CircuitProgram, GateKind, GateOp, Input, Param
from qtsad.trainer import flatten_tensors


def fd_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        shifted = x.copy()
        shifted[i] = x[i] + step
        plus = f(shifted)
        shifted[i] = x[i] - step
        minus = f(shifted)
        grad[i] = (plus - minus) / (2.0 * step)
    return grad


def fd_bundle_gradient(loss_fn, bundle, step: float = 1e-6) -> dict[str, np.ndarray]:
    """Central finite differences over every tensor of a parameter bundle.

    ``loss_fn`` takes no arguments and reads the (mutated) bundle.
    """
    grads: dict[str, np.ndarray] = {}
    for name, arr in flatten_tensors(bundle).items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            plus = loss_fn()
            arr[idx] = orig - step
            minus = loss_fn()
            arr[idx] = orig
            g[idx] = (plus - minus) / (2.0 * step)
        grads[name] = g
    return grads


def max_rel_err(got: dict[str, np.ndarray], want: dict[str, np.ndarray], floor: float = 1e-6) -> float:
    worst = 0.0
    for name in want:
        diff = np.abs(got[name] - want[name])
        denom = np.maximum(np.abs(want[name]), floor)
        worst = max(worst, float((diff / denom).max()) if diff.size else 0.0)
    return worst


def random_layered_program(
    rng: np.random.Generator, n_qubits: int = 3, depth: int = 4
) -> tuple[CircuitProgram, np.ndarray, np.ndarray]:
    """Random program of encoded RY + parameterized RZ/RX blocks with CNOT chains."""
    ops: list[GateOp] = []
    n_params = 0
    n_inputs = 0
    for _ in range(depth):
        for q in range(n_qubits):
            ops.append(GateOp(GateKind.RY, (q,), Input(n_inputs)))
            n_inputs += 1
            ops.append(GateOp(GateKind.RZ, (q,), Param(n_params)))
            n_params += 1
            ops.append(GateOp(GateKind.RX, (q,), Param(n_params)))
            n_params += 1
        for q in range(n_qubits - 1):
            ops.append(GateOp(GateKind.CNOT, (q, q + 1)))
    program = CircuitProgram(
        n_qubits=n_qubits, ops=tuple(ops), n_param_slots=n_params, n_input_slots=n_inputs
    )
    params = rng.uniform(-np.pi, np.pi, n_params)
    inputs = rng.uniform(-2.0, 2.0, n_inputs)
    return program, params, inputs


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
