"""Simulator core: states, gates, expectations, program validation, serialization."""
import math

import numpy as np
import pytest

from qtsad.errors import BudgetError, ConfigError, CsvParseError, NumericError, ShapeError
from qtsad.qsim import (
    CircuitProgram,
    Constant,
    Encoding,
    GateKind,
    GateOp,
    Input,
    NoiseSpec,
    Param,
    QubitState,
    apply_gate,
    expect_z_all,
    init_zero_state,
    program_from_text,
    program_to_text,
    run_circuit,
)

NO_PARAMS = np.zeros(0)
NO_INPUTS = np.zeros(0)


class TestInitZeroState:
    def test_one_qubit(self):
        state = init_zero_state(1)
        assert np.array_equal(state.amplitudes, [1, 0])

    def test_two_qubits(self):
        state = init_zero_state(2)
        assert np.array_equal(state.amplitudes, [1, 0, 0, 0])

    def test_budget(self):
        with pytest.raises(BudgetError):
            init_zero_state(13)
        with pytest.raises(BudgetError):
            init_zero_state(0)


class TestApplyGate:
    def test_ry_pi_flips(self):
        state = apply_gate(init_zero_state(1), GateOp(GateKind.RY, (0,)), math.pi)
        assert abs(abs(state.amplitudes[1]) - 1.0) < 1e-12
        assert expect_z_all(state)[0] == pytest.approx(-1.0, abs=1e-12)

    def test_rz_keeps_z_eigenstate(self):
        for theta in (0.3, 1.2, -2.0):
            state = apply_gate(init_zero_state(1), GateOp(GateKind.RZ, (0,)), theta)
            assert expect_z_all(state)[0] == pytest.approx(1.0, abs=1e-12)

    def test_cnot_truth_table(self):
        # |10> -> |11>
        state = apply_gate(init_zero_state(2), GateOp(GateKind.RY, (0,)), math.pi)
        state = apply_gate(state, GateOp(GateKind.CNOT, (0, 1)))
        probs = np.abs(state.amplitudes) ** 2
        assert probs[3] == pytest.approx(1.0, abs=1e-12)

    def test_nonfinite_angle(self):
        with pytest.raises(NumericError):
            apply_gate(init_zero_state(1), GateOp(GateKind.RX, (0,)), math.nan)

    def test_bad_wire(self):
        with pytest.raises(ShapeError):
            apply_gate(init_zero_state(1), GateOp(GateKind.RY, (3,)), 0.1)


class TestRotationAlgebra:
    def test_inverse_restores_state(self, rng):
        state = init_zero_state(2)
        state = apply_gate(state, GateOp(GateKind.RY, (0,)), 0.7)
        state = apply_gate(state, GateOp(GateKind.RX, (1,)), -1.1)
        before = state.amplitudes.copy()
        state = apply_gate(state, GateOp(GateKind.RY, (1,)), 0.4)
        state = apply_gate(state, GateOp(GateKind.RY, (1,)), -0.4)
        assert np.abs(state.amplitudes - before).max() < 1e-10

    def test_norm_preserved_over_long_sequence(self, rng):
        state = init_zero_state(4)
        kinds = (GateKind.RX, GateKind.RY, GateKind.RZ)
        for _ in range(1000):
            if rng.random() < 0.25:
                q = int(rng.integers(3))
                state = apply_gate(state, GateOp(GateKind.CNOT, (q, q + 1)))
            else:
                kind = kinds[rng.integers(3)]
                q = int(rng.integers(4))
                state = apply_gate(state, GateOp(kind, (q,)), float(rng.uniform(-np.pi, np.pi)))
        norm_sq = float(np.sum(np.abs(state.amplitudes) ** 2))
        assert abs(norm_sq - 1.0) <= 1e-10


class TestExpectZ:
    def test_zero_state(self):
        assert np.allclose(expect_z_all(init_zero_state(2)), [1.0, 1.0])

    def test_equal_superposition(self):
        state = init_zero_state(2)
        for q in range(2):
            state = apply_gate(state, GateOp(GateKind.RY, (q,)), math.pi / 2)
        assert np.abs(expect_z_all(state)).max() < 1e-10

    def test_bit_ordering(self):
        # qubit 0 is the most significant bit: |01> has qubit 1 flipped.
        state = apply_gate(init_zero_state(2), GateOp(GateKind.RY, (1,)), math.pi)
        assert np.allclose(expect_z_all(state), [1.0, -1.0], atol=1e-12)


class TestRunCircuit:
    def test_empty_program_identity(self):
        program = CircuitProgram(2, ())
        state = run_circuit(program, NO_PARAMS, NO_INPUTS)
        assert np.array_equal(state.amplitudes, [1, 0, 0, 0])

    def test_arctan_encoding_closed_form(self):
        program = CircuitProgram(
            1, (GateOp(GateKind.RY, (0,), Input(0)),), n_input_slots=1
        )
        for h in (0.0, 1.0, -2.5):
            state = run_circuit(program, NO_PARAMS, np.asarray([h]))
            assert expect_z_all(state)[0] == pytest.approx(math.cos(math.atan(h)), abs=1e-12)

    def test_arccos_encoding_clamps(self):
        program = CircuitProgram(
            1,
            (GateOp(GateKind.RY, (0,), Input(0, Encoding.ARCCOS)),),
            n_input_slots=1,
        )
        state = run_circuit(program, NO_PARAMS, np.asarray([5.0]))
        assert np.all(np.isfinite(state.amplitudes))

    def test_shape_errors(self):
        program = CircuitProgram(
            1, (GateOp(GateKind.RY, (0,), Param(0)),), n_param_slots=1
        )
        with pytest.raises(ShapeError):
            run_circuit(program, np.zeros(2), NO_INPUTS)
        with pytest.raises(ShapeError):
            run_circuit(program, np.zeros(1), np.zeros(1))

    def test_noise_disabled_ignores_seed(self, rng):
        program, params, inputs = _small_program()
        a = run_circuit(program, params, inputs, NoiseSpec(enabled=False, seed=1))
        b = run_circuit(program, params, inputs, NoiseSpec(enabled=False, seed=2))
        assert np.array_equal(a.amplitudes, b.amplitudes)

    def test_noise_deterministic_given_seed(self):
        program, params, inputs = _small_program()
        spec = NoiseSpec(enabled=True, p_single=0.5, p_cnot=0.5, seed=7)
        a = run_circuit(program, params, inputs, spec, np.random.default_rng(9))
        b = run_circuit(program, params, inputs, spec, np.random.default_rng(9))
        assert np.array_equal(a.amplitudes, b.amplitudes)


def _small_program():
    ops = (
        GateOp(GateKind.RY, (0,), Input(0)),
        GateOp(GateKind.RZ, (0,), Param(0)),
        GateOp(GateKind.RX, (1,), Param(1)),
        GateOp(GateKind.CNOT, (0, 1)),
    )
    program = CircuitProgram(2, ops, n_param_slots=2, n_input_slots=1)
    return program, np.asarray([0.3, -0.8]), np.asarray([0.4])


class TestProgramValidation:
    def test_unused_param_slot_rejected(self):
        with pytest.raises(ConfigError):
            CircuitProgram(
                1, (GateOp(GateKind.RY, (0,), Param(0)),), n_param_slots=2
            )

    def test_input_slot_must_be_used_once(self):
        with pytest.raises(ConfigError):
            CircuitProgram(
                1,
                (
                    GateOp(GateKind.RY, (0,), Input(0)),
                    GateOp(GateKind.RX, (0,), Input(0)),
                ),
                n_input_slots=1,
            )

    def test_cnot_needs_distinct_wires(self):
        with pytest.raises(ConfigError):
            CircuitProgram(2, (GateOp(GateKind.CNOT, (1, 1)),))

    def test_wire_out_of_range(self):
        with pytest.raises(ConfigError):
            CircuitProgram(1, (GateOp(GateKind.RY, (1,), Constant(0.1)),))


class TestProgramSerialization:
    def test_round_trip(self):
        program, _, _ = _small_program()
        text = program_to_text(program)
        back = program_from_text(text)
        assert back == program

    def test_constants_round_trip_exactly(self):
        program = CircuitProgram(
            1, (GateOp(GateKind.RX, (0,), Constant(math.pi / 3)),)
        )
        back = program_from_text(program_to_text(program))
        assert back.ops[0].angle.value == math.pi / 3

    def test_bad_header_rejected(self):
        with pytest.raises(CsvParseError):
            program_from_text("qprog 999\nqubits 1\nparams 0\ninputs 0\n")


class TestQubitStateValidation:
    def test_rejects_unnormalized(self):
        with pytest.raises(NumericError):
            QubitState(1, np.asarray([1.0, 1.0], dtype=complex))

    def test_rejects_wrong_length(self):
        with pytest.raises(ShapeError):
            QubitState(2, np.asarray([1.0, 0.0], dtype=complex))
