"""Hybrid quantum layers and the quantum-gated recurrent cell.

A hybrid quantum layer (HQL) is dense-in -> variational circuit -> dense-out:
the dense input map produces one value per circuit input slot, the circuit
injects those values as encoded rotation angles staged across its depth, and
the per-qubit Z expectations are projected by the dense output map.

The recurrent cell replaces the three GRU transforms (update, reset,
candidate) with HQLs over the concatenated ``[x_t, h]`` input:

    z = sigmoid(update([x, h]));  r = sigmoid(reset([x, h]))
    c = tanh(candidate([x, r * h]));  h' = (1 - z) * h + z * c

Forward passes accept a single sample or a batch (leading axis); backward
passes consume the cache returned by the matching forward and produce
gradients shaped like the parameter bundles plus input gradients, all via
the simulator's adjoint sweep.  With a noise spec enabled, each forward
call samples one noisy program and the backward pass differentiates that
sampled gate sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from qtsad.errors import ConfigError, InputError, ShapeError
from qtsad.qsim import (
    CircuitProgram,
    Encoding,
    GateKind,
    GateOp,
    Input,
    NoiseSpec,
    Param,
    adjoint_batched,
    expect_z_batched,
    run_batched,
    sample_noisy_program,
)


@dataclass(frozen=True)
class HqlConfig:
    """Architecture of one hybrid quantum layer."""

    in_dim: int
    out_dim: int
    n_qubits: int = 6
    n_blocks: int = 12
    injection_blocks: int = 6
    encoding: Encoding = Encoding.ARCTAN

    def __post_init__(self) -> None:
        if min(self.in_dim, self.out_dim, self.n_qubits, self.n_blocks) < 1:
            raise ConfigError("dimensions, qubit and block counts must be positive")
        if not 1 <= self.injection_blocks <= self.n_blocks:
            raise ConfigError(
                f"injection_blocks must be in [1, n_blocks], got {self.injection_blocks}"
            )

    @property
    def hidden_width(self) -> int:
        """Width of the dense input map: one value per circuit input slot."""
        return self.injection_blocks * self.n_qubits

    @property
    def n_theta(self) -> int:
        return 2 * self.n_qubits * self.n_blocks


@lru_cache(maxsize=None)
def build_hql_program(config: HqlConfig) -> CircuitProgram:
    """Ansatz of ``n_blocks`` blocks over ``n_qubits`` wires.

    Each block applies per-qubit RZ/RX parameter rotations followed by a
    CNOT chain q -> q+1; the first ``injection_blocks`` blocks are prefixed
    by per-qubit encoded RY input rotations.  Slot layout: input slot of
    (block b, qubit q) is ``b*n + q``; parameter slots of (b, q) are
    ``2*(b*n + q)`` (RZ) and ``2*(b*n + q) + 1`` (RX).
    """
    n = config.n_qubits
    ops: list[GateOp] = []
    for block in range(config.n_blocks):
        if block < config.injection_blocks:
            for q in range(n):
                ops.append(
                    GateOp(GateKind.RY, (q,), Input(block * n + q, config.encoding))
                )
        for q in range(n):
            base = 2 * (block * n + q)
            ops.append(GateOp(GateKind.RZ, (q,), Param(base)))
            ops.append(GateOp(GateKind.RX, (q,), Param(base + 1)))
        for q in range(n - 1):
            ops.append(GateOp(GateKind.CNOT, (q, q + 1)))
    return CircuitProgram(
        n_qubits=n,
        ops=tuple(ops),
        n_param_slots=config.n_theta,
        n_input_slots=config.injection_blocks * n,
    )


@dataclass
class HqlParams:
    """Trainable tensors of one HQL; also reused as the gradient container."""

    config: HqlConfig
    w_in: np.ndarray
    b_in: np.ndarray
    theta: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray


def init_hql_params(config: HqlConfig, rng: np.random.Generator) -> HqlParams:
    """Dense maps uniform in +/- 1/sqrt(fan_in); circuit angles uniform in +/- pi."""
    m = config.hidden_width
    bound_in = 1.0 / np.sqrt(config.in_dim)
    bound_out = 1.0 / np.sqrt(config.n_qubits)
    return HqlParams(
        config=config,
        w_in=rng.uniform(-bound_in, bound_in, size=(m, config.in_dim)),
        b_in=rng.uniform(-bound_in, bound_in, size=m),
        theta=rng.uniform(-np.pi, np.pi, size=config.n_theta),
        w_out=rng.uniform(-bound_out, bound_out, size=(config.out_dim, config.n_qubits)),
        b_out=rng.uniform(-bound_out, bound_out, size=config.out_dim),
    )


def zeros_like_hql(params: HqlParams) -> HqlParams:
    return HqlParams(
        config=params.config,
        w_in=np.zeros_like(params.w_in),
        b_in=np.zeros_like(params.b_in),
        theta=np.zeros_like(params.theta),
        w_out=np.zeros_like(params.w_out),
        b_out=np.zeros_like(params.b_out),
    )


@dataclass
class HqlCache:
    params: HqlParams
    program: CircuitProgram  # possibly a sampled noisy trajectory
    x: np.ndarray  # (B, in_dim)
    h: np.ndarray  # (B, m) raw dense-in outputs = circuit input values
    states: np.ndarray  # (B, 2**n) final statevectors
    z: np.ndarray  # (B, n_qubits) measured expectations
    single: bool


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        single = True
    elif x.ndim == 2:
        single = False
    else:
        raise ShapeError(f"{what} must be 1- or 2-dimensional, got shape {x.shape}")
    if x.shape[1] != dim:
        raise ShapeError(f"{what} must have {dim} columns, got {x.shape[1]}")
    return x, single


def hql_forward(
    params: HqlParams,
    x: np.ndarray,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, HqlCache]:
    """y = W_out <Z> + b_out with circuit inputs h = W_in x + b_in."""
    cfg = params.config
    x2d, single = _as_batch(x, cfg.in_dim, "x")
    h = x2d @ params.w_in.T + params.b_in
    program = build_hql_program(cfg)
    if noise is not None and noise.enabled:
        if rng is None:
            rng = np.random.default_rng(noise.seed)
        program = sample_noisy_program(program, noise, rng)
    states = run_batched(program, params.theta, h)
    z = expect_z_batched(states, cfg.n_qubits)
    y = z @ params.w_out.T + params.b_out
    cache = HqlCache(params, program, x2d, h, states, z, single)
    return (y[0] if single else y), cache


def hql_backward(cache: HqlCache, upstream: np.ndarray) -> tuple[HqlParams, np.ndarray]:
    """Gradients of sum(upstream * y) for the forward held in ``cache``.

    Returns an ``HqlParams``-shaped gradient bundle and the gradient with
    respect to the layer input (same leading shape as the forward input).
    """
    params, cfg = cache.params, cache.params.config
    dy, _ = _as_batch(upstream, cfg.out_dim, "upstream")
    if dy.shape[0] != cache.x.shape[0]:
        raise ShapeError("upstream batch does not match cached forward")
    db_out = dy.sum(axis=0)
    dw_out = dy.T @ cache.z
    dz = dy @ params.w_out
    dtheta, dh = adjoint_batched(
        cache.program, params.theta, cache.h, dz, final_states=cache.states
    )
    db_in = dh.sum(axis=0)
    dw_in = dh.T @ cache.x
    dx = dh @ params.w_in
    grads = HqlParams(cfg, dw_in, db_in, dtheta, dw_out, db_out)
    return grads, (dx[0] if cache.single else dx)


# ---------------------------------------------------------------------------
# Quantum-gated recurrent cell


@dataclass
class GruParams:
    """Update/reset/candidate HQLs of one recurrent cell."""

    update: HqlParams
    reset: HqlParams
    candidate: HqlParams

    @property
    def hidden_dim(self) -> int:
        return self.update.config.out_dim

    @property
    def input_dim(self) -> int:
        return self.update.config.in_dim - self.hidden_dim


def init_gru_params(
    input_dim: int,
    hidden_dim: int,
    rng: np.random.Generator,
    n_qubits: int = 6,
    n_blocks: int = 12,
    injection_blocks: int = 6,
    encoding: Encoding = Encoding.ARCTAN,
) -> GruParams:
    gate_cfg = HqlConfig(
        in_dim=input_dim + hidden_dim,
        out_dim=hidden_dim,
        n_qubits=n_qubits,
        n_blocks=n_blocks,
        injection_blocks=injection_blocks,
        encoding=encoding,
    )
    return GruParams(
        update=init_hql_params(gate_cfg, rng),
        reset=init_hql_params(gate_cfg, rng),
        candidate=init_hql_params(gate_cfg, rng),
    )


def zeros_like_gru(params: GruParams) -> GruParams:
    return GruParams(
        update=zeros_like_hql(params.update),
        reset=zeros_like_hql(params.reset),
        candidate=zeros_like_hql(params.candidate),
    )


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class GruStepCache:
    update: HqlCache
    reset: HqlCache
    candidate: HqlCache
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray
    single: bool


def qgru_step(
    params: GruParams,
    x_t: np.ndarray,
    h_prev: np.ndarray,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, GruStepCache]:
    """One gated update; hidden components stay inside (-1, 1)."""
    x2d, single = _as_batch(x_t, params.input_dim, "x_t")
    h2d, _ = _as_batch(h_prev, params.hidden_dim, "h_prev")
    if h2d.shape[0] == 1 and x2d.shape[0] > 1:
        h2d = np.broadcast_to(h2d, (x2d.shape[0], h2d.shape[1])).copy()
    gate_in = np.concatenate([x2d, h2d], axis=1)
    a_z, cache_z = hql_forward(params.update, gate_in, noise, rng)
    a_r, cache_r = hql_forward(params.reset, gate_in, noise, rng)
    z = _sigmoid(np.atleast_2d(a_z))
    r = _sigmoid(np.atleast_2d(a_r))
    cand_in = np.concatenate([x2d, r * h2d], axis=1)
    a_c, cache_c = hql_forward(params.candidate, cand_in, noise, rng)
    c = np.tanh(np.atleast_2d(a_c))
    h_t = (1.0 - z) * h2d + z * c
    cache = GruStepCache(cache_z, cache_r, cache_c, h2d, z, r, c, single)
    return (h_t[0] if single else h_t), cache


def qgru_step_backward(
    cache: GruStepCache, dh_t: np.ndarray
) -> tuple[GruParams, np.ndarray, np.ndarray]:
    """Gradients of one step: (parameter grads, d x_t, d h_prev)."""
    dh = np.atleast_2d(np.asarray(dh_t, dtype=np.float64))
    z, r, c, h_prev = cache.z, cache.r, cache.c, cache.h_prev
    in_dim = cache.update.params.config.in_dim - h_prev.shape[1]

    dc = dh * z
    dz = dh * (c - h_prev)
    dh_prev = dh * (1.0 - z)

    da_c = dc * (1.0 - c * c)
    grads_c, dcand_in = hql_backward(cache.candidate, da_c)
    dcand_in = np.atleast_2d(dcand_in)
    dx = dcand_in[:, :in_dim].copy()
    drh = dcand_in[:, in_dim:]
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r

    da_z = dz * z * (1.0 - z)
    grads_z, dgate_z = hql_backward(cache.update, da_z)
    dgate_z = np.atleast_2d(dgate_z)
    dx += dgate_z[:, :in_dim]
    dh_prev = dh_prev + dgate_z[:, in_dim:]

    da_r = dr * r * (1.0 - r)
    grads_r, dgate_r = hql_backward(cache.reset, da_r)
    dgate_r = np.atleast_2d(dgate_r)
    dx += dgate_r[:, :in_dim]
    dh_prev = dh_prev + dgate_r[:, in_dim:]

    grads = GruParams(update=grads_z, reset=grads_r, candidate=grads_c)
    if cache.single:
        return grads, dx[0], dh_prev[0]
    return grads, dx, dh_prev


def qgru_forward(
    params: GruParams,
    window: np.ndarray,
    h0: np.ndarray | None = None,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[GruStepCache]]:
    """Fold the cell over a (B, T, in_dim) or (T, in_dim) window, left to right."""
    w = np.asarray(window, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None, :, :]
    if w.ndim != 3 or w.shape[2] != params.input_dim:
        raise ShapeError(
            f"window must have shape (B, T, {params.input_dim}), got {np.shape(window)}"
        )
    if w.shape[1] == 0:
        raise InputError("window must contain at least one step")
    h = (
        np.zeros((w.shape[0], params.hidden_dim))
        if h0 is None
        else np.broadcast_to(
            np.atleast_2d(np.asarray(h0, dtype=np.float64)),
            (w.shape[0], params.hidden_dim),
        ).copy()
    )
    caches: list[GruStepCache] = []
    for t in range(w.shape[1]):
        h, cache = qgru_step(params, w[:, t, :], h, noise, rng)
        cache.single = False
        caches.append(cache)
    return (h[0] if single else h), caches


def _accumulate_hql(total: HqlParams, part: HqlParams) -> None:
    total.w_in += part.w_in
    total.b_in += part.b_in
    total.theta += part.theta
    total.w_out += part.w_out
    total.b_out += part.b_out


def accumulate_gru(total: GruParams, part: GruParams) -> None:
    _accumulate_hql(total.update, part.update)
    _accumulate_hql(total.reset, part.reset)
    _accumulate_hql(total.candidate, part.candidate)


def qgru_backward(
    params: GruParams, caches: list[GruStepCache], upstream: np.ndarray
) -> tuple[GruParams, np.ndarray, np.ndarray]:
    """Backpropagation through time over the caches of one forward pass.

    Returns parameter gradients accumulated across steps, per-step input
    gradients with shape (B, T, in_dim), and the gradient at h0.
    """
    if not caches:
        raise InputError("no caches to backpropagate through")
    dh = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    grads = zeros_like_gru(params)
    batch = caches[0].h_prev.shape[0]
    dx_seq = np.zeros((batch, len(caches), params.input_dim))
    for t in range(len(caches) - 1, -1, -1):
        step_grads, dx, dh = qgru_step_backward(caches[t], dh)
        accumulate_gru(grads, step_grads)
        dx_seq[:, t, :] = np.atleast_2d(dx)
    return grads, dx_seq, dh
