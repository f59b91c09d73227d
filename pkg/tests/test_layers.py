"""Hybrid quantum layer and recurrent cell: structure, math, gradients."""
import math

import numpy as np
import pytest

from conftest import fd_bundle_gradient, max_rel_err
from qtsad.errors import ConfigError, InputError
from qtsad.layers import (
    GruParams,
    HqlConfig,
    HqlParams,
    build_hql_program,
    hql_backward,
    hql_forward,
    init_gru_params,
    init_hql_params,
    qgru_backward,
    qgru_forward,
    qgru_step,
    zeros_like_hql,
)
from qtsad.qsim import Constant, GateKind, Input, NoiseSpec, Param
from qtsad.trainer import flatten_tensors


def _zeroed(params: HqlParams) -> HqlParams:
    z = zeros_like_hql(params)
    z.b_out = np.zeros_like(params.b_out)
    return z


class TestProgramStructure:
    def test_figure_sized_circuit(self):
        # 3 qubits, 2 blocks, both injected: per block 3 RY + 3x(RZ, RX) + 2 CNOTs.
        cfg = HqlConfig(in_dim=4, out_dim=3, n_qubits=3, n_blocks=2, injection_blocks=2)
        program = build_hql_program(cfg)
        assert program.n_input_slots == 6
        assert program.n_param_slots == 12
        cnots = [op for op in program.ops if op.kind is GateKind.CNOT]
        assert len(cnots) == 4
        assert [op.wires for op in cnots] == [(0, 1), (1, 2)] * 2
        block = program.ops[: len(program.ops) // 2]
        kinds = [op.kind for op in block]
        assert kinds == [
            GateKind.RY, GateKind.RY, GateKind.RY,
            GateKind.RZ, GateKind.RX, GateKind.RZ, GateKind.RX, GateKind.RZ, GateKind.RX,
            GateKind.CNOT, GateKind.CNOT,
        ]
        assert [op.angle.slot for op in block[:3]] == [0, 1, 2]

    def test_single_qubit_degenerate(self):
        cfg = HqlConfig(in_dim=1, out_dim=1, n_qubits=1, n_blocks=1, injection_blocks=1)
        program = build_hql_program(cfg)
        assert [op.kind for op in program.ops] == [GateKind.RY, GateKind.RZ, GateKind.RX]
        assert isinstance(program.ops[0].angle, Input)
        assert isinstance(program.ops[1].angle, Param)

    def test_default_slot_counts(self):
        cfg = HqlConfig(in_dim=10, out_dim=4)
        program = build_hql_program(cfg)
        assert program.n_input_slots == 36
        assert program.n_param_slots == 144

    def test_injection_blocks_lead(self):
        cfg = HqlConfig(in_dim=2, out_dim=1, n_qubits=2, n_blocks=3, injection_blocks=1)
        program = build_hql_program(cfg)
        inputs = [i for i, op in enumerate(program.ops) if isinstance(op.angle, Input)]
        first_cnot = next(i for i, op in enumerate(program.ops) if op.kind is GateKind.CNOT)
        assert all(i < first_cnot for i in inputs)

    def test_gate_and_slot_count_formulas(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 5))
            blocks = int(rng.integers(1, 6))
            inj = int(rng.integers(1, blocks + 1))
            cfg = HqlConfig(in_dim=3, out_dim=2, n_qubits=n, n_blocks=blocks, injection_blocks=inj)
            program = build_hql_program(cfg)
            assert program.n_input_slots == inj * n
            assert program.n_param_slots == 2 * n * blocks
            n_gates = len(program.ops)
            assert n_gates == inj * n + blocks * 2 * n + blocks * (n - 1)

    def test_invalid_injection_count(self):
        with pytest.raises(ConfigError):
            HqlConfig(in_dim=2, out_dim=1, n_qubits=2, n_blocks=2, injection_blocks=3)


class TestHqlForward:
    def test_constant_path(self, rng):
        cfg = HqlConfig(in_dim=3, out_dim=2, n_qubits=2, n_blocks=1, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        for name in ("w_in", "b_in", "theta", "w_out"):
            setattr(params, name, np.zeros_like(getattr(params, name)))
        params.b_out = np.asarray([1.5, -0.5])
        for x in (np.zeros(3), np.asarray([9.0, -9.0, 9.0])):
            y, _ = hql_forward(params, x)
            assert np.allclose(y, [1.5, -0.5])

    def test_bounded_even_for_huge_bias(self, rng):
        cfg = HqlConfig(in_dim=2, out_dim=1, n_qubits=2, n_blocks=1, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        params.b_in = np.full_like(params.b_in, -1e9)
        y, _ = hql_forward(params, np.zeros(2))
        assert np.all(np.isfinite(y))

    def test_single_qubit_closed_form(self, rng):
        cfg = HqlConfig(in_dim=1, out_dim=1, n_qubits=1, n_blocks=1, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        params.theta = np.zeros_like(params.theta)
        params.w_out = np.ones_like(params.w_out)
        params.b_out = np.zeros_like(params.b_out)
        x = np.asarray([0.7])
        h = float(params.w_in @ x + params.b_in)
        y, _ = hql_forward(params, x)
        assert y[0] == pytest.approx(math.cos(math.atan(h)), abs=1e-12)

    def test_output_bound(self, rng):
        cfg = HqlConfig(in_dim=3, out_dim=2, n_qubits=3, n_blocks=2, injection_blocks=2)
        params = init_hql_params(cfg, rng)
        bound = np.abs(params.w_out).sum(axis=1) + np.abs(params.b_out)
        for _ in range(20):
            y, _ = hql_forward(params, rng.uniform(-5, 5, 3))
            assert np.all(np.abs(y) <= bound + 1e-12)

    def test_batched_matches_single(self, rng):
        cfg = HqlConfig(in_dim=3, out_dim=2, n_qubits=2, n_blocks=2, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        xs = rng.uniform(-1, 1, (5, 3))
        batched, _ = hql_forward(params, xs)
        for i in range(5):
            single, _ = hql_forward(params, xs[i])
            assert np.abs(batched[i] - single).max() < 1e-14


class TestHqlBackward:
    def test_zero_upstream(self, rng):
        cfg = HqlConfig(in_dim=2, out_dim=2, n_qubits=2, n_blocks=1, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        _, cache = hql_forward(params, rng.uniform(-1, 1, 2))
        grads, dx = hql_backward(cache, np.zeros(2))
        assert all(np.all(g == 0) for _, g in flatten_tensors(grads).items())
        assert np.all(dx == 0)

    def test_parameter_gradients_match_fd(self, rng):
        cfg = HqlConfig(in_dim=3, out_dim=2, n_qubits=2, n_blocks=2, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        x = rng.uniform(-1, 1, 3)
        upstream = rng.uniform(-1, 1, 2)
        _, cache = hql_forward(params, x)
        grads, _ = hql_backward(cache, upstream)

        def loss():
            y, _ = hql_forward(params, x)
            return float(upstream @ y)

        fd = fd_bundle_gradient(loss, params)
        assert max_rel_err(flatten_tensors(grads), fd) <= 1e-4

    def test_input_gradient_matches_fd(self, rng):
        cfg = HqlConfig(in_dim=3, out_dim=2, n_qubits=2, n_blocks=2, injection_blocks=2)
        params = init_hql_params(cfg, rng)
        x = rng.uniform(-1, 1, 3)
        upstream = rng.uniform(-1, 1, 2)
        _, cache = hql_forward(params, x)
        _, dx = hql_backward(cache, upstream)
        fd = np.zeros(3)
        for j in range(3):
            shifted = x.copy()
            shifted[j] += 1e-6
            plus, _ = hql_forward(params, shifted)
            shifted[j] -= 2e-6
            minus, _ = hql_forward(params, shifted)
            fd[j] = float(upstream @ (plus - minus)) / 2e-6
        err = np.abs(dx - fd).max() / max(np.abs(fd).max(), 1e-6)
        assert err <= 1e-4


class TestQgruStep:
    def test_zero_hqls_halve_hidden(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=1, injection_blocks=1)
        for gate in (gru.update, gru.reset, gru.candidate):
            for name in ("w_in", "b_in", "theta", "w_out", "b_out"):
                setattr(gate, name, np.zeros_like(getattr(gate, name)))
        h_prev = np.asarray([0.6, -0.4])
        h, _ = qgru_step(gru, np.asarray([0.3, 0.3]), h_prev)
        assert np.allclose(h, 0.5 * h_prev)

    def test_constant_candidate_from_zero_hidden(self, rng):
        gru = init_gru_params(1, 1, rng, n_qubits=1, n_blocks=1, injection_blocks=1)
        for gate in (gru.update, gru.reset):
            for name in ("w_in", "b_in", "theta", "w_out", "b_out"):
                setattr(gate, name, np.zeros_like(getattr(gate, name)))
        for name in ("w_in", "b_in", "theta", "w_out"):
            setattr(gru.candidate, name, np.zeros_like(getattr(gru.candidate, name)))
        c = 0.8
        gru.candidate.b_out = np.asarray([c])
        h, _ = qgru_step(gru, np.asarray([0.1]), np.zeros(1))
        assert h[0] == pytest.approx(0.5 * math.tanh(c), abs=1e-12)

    def test_hidden_stays_in_open_unit_interval(self, rng):
        gru = init_gru_params(2, 3, rng, n_qubits=2, n_blocks=2, injection_blocks=1)
        h = np.zeros(3)
        for _ in range(50):
            h, _ = qgru_step(gru, rng.uniform(-3, 3, 2), h)
            assert np.all(np.abs(h) < 1.0)


class TestQgruForward:
    def test_length_one_equals_single_step(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=1, injection_blocks=1)
        x = rng.uniform(0, 1, (1, 2))
        h_fold, _ = qgru_forward(gru, x)
        h_step, _ = qgru_step(gru, x[0], np.zeros(2))
        assert np.allclose(h_fold, h_step)

    def test_zero_parameters_keep_hidden_zero(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=1, injection_blocks=1)
        for gate in (gru.update, gru.reset, gru.candidate):
            for name in ("w_in", "b_in", "theta", "w_out", "b_out"):
                setattr(gate, name, np.zeros_like(getattr(gate, name)))
        h, _ = qgru_forward(gru, rng.uniform(0, 1, (6, 2)))
        assert np.allclose(h, 0.0)

    def test_order_sensitivity(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=2, injection_blocks=1)
        window = rng.uniform(0, 1, (4, 2))
        h1, _ = qgru_forward(gru, window)
        h2, _ = qgru_forward(gru, window[::-1].copy())
        assert np.abs(h1 - h2).max() > 1e-6

    def test_empty_window_rejected(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=1, injection_blocks=1)
        with pytest.raises(InputError):
            qgru_forward(gru, np.zeros((0, 2)))

    def test_determinism(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=2, injection_blocks=1)
        window = rng.uniform(0, 1, (3, 2))
        h1, _ = qgru_forward(gru, window)
        h2, _ = qgru_forward(gru, window)
        assert np.array_equal(h1, h2)


class TestQgruBackward:
    def test_single_step_equals_step_backward(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=1, injection_blocks=1)
        window = rng.uniform(0, 1, (1, 2))
        upstream = rng.uniform(-1, 1, 2)
        _, caches = qgru_forward(gru, window)
        grads, dx_seq, _ = qgru_backward(gru, caches, upstream)
        assert dx_seq.shape == (1, 1, 2)

    def test_zero_upstream(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=1, injection_blocks=1)
        _, caches = qgru_forward(gru, rng.uniform(0, 1, (3, 2)))
        grads, dx_seq, dh0 = qgru_backward(gru, caches, np.zeros(2))
        assert all(np.all(g == 0) for _, g in flatten_tensors(grads).items())
        assert np.all(dx_seq == 0)

    def test_parameter_gradients_match_fd(self, rng):
        gru = init_gru_params(2, 2, rng, n_qubits=2, n_blocks=2, injection_blocks=1)
        window = rng.uniform(0, 1, (3, 2))
        upstream = rng.uniform(-1, 1, 2)
        _, caches = qgru_forward(gru, window)
        grads, _, _ = qgru_backward(gru, caches, upstream)

        def loss():
            h, _ = qgru_forward(gru, window)
            return float(upstream @ h)

        fd = fd_bundle_gradient(loss, gru)
        assert max_rel_err(flatten_tensors(grads), fd) <= 1e-3


class TestNoiseThroughLayers:
    def test_forward_noise_is_deterministic_given_seed(self, rng):
        cfg = HqlConfig(in_dim=2, out_dim=1, n_qubits=2, n_blocks=2, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        spec = NoiseSpec(enabled=True, p_single=0.5, p_cnot=0.5)
        x = rng.uniform(-1, 1, 2)
        y1, _ = hql_forward(params, x, spec, np.random.default_rng(3))
        y2, _ = hql_forward(params, x, spec, np.random.default_rng(3))
        assert np.array_equal(y1, y2)

    def test_backward_differentiates_the_sampled_program(self, rng):
        cfg = HqlConfig(in_dim=2, out_dim=1, n_qubits=2, n_blocks=2, injection_blocks=1)
        params = init_hql_params(cfg, rng)
        spec = NoiseSpec(enabled=True, p_single=0.7, p_cnot=0.7)
        x = rng.uniform(-1, 1, 2)
        _, cache = hql_forward(params, x, spec, np.random.default_rng(5))
        grads, _ = hql_backward(cache, np.ones(1))

        def loss():
            states_y, _ = hql_forward(params, x, spec, np.random.default_rng(5))
            return float(states_y[0])

        fd = fd_bundle_gradient(loss, params)
        assert max_rel_err(flatten_tensors(grads), fd) <= 1e-4
