"""Forecasting generator, Wasserstein critic, and their training losses.

The generator runs the gated recurrent backbone over a context window and
maps the final hidden state through two quantum-layer heads to the mean and
log-variance of a diagonal Gaussian over the next step; a sample is drawn
by reparameterization, ``x_hat = mu + exp(logvar / 2) * eps``.

The critic is a single function: it scores a (window, candidate) pair by
running one shared backbone over the window with the candidate appended as
the final step and projecting the last hidden state to a scalar.  Real and
generated candidates are scored by the same weights.

Losses follow the gradient-penalty Wasserstein recipe with two Gaussian
regularizers on the generator head outputs:

    critic:    mean(D(fake)) - mean(D(real)) + lambda_gp * penalty
    generator: -mean(D(fake)) + mean(exp(logvar))
               + lambda_kl * 0.5 * mean(exp(logvar) + mu^2 - 1 - logvar)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qtsad.errors import InputError, ShapeError
from qtsad.layers import (
    GruParams,
    GruStepCache,
    HqlConfig,
    HqlParams,
    accumulate_gru,
    hql_backward,
    hql_forward,
    init_gru_params,
    init_hql_params,
    qgru_backward,
    qgru_forward,
    zeros_like_gru,
    zeros_like_hql,
)
from qtsad.qsim import Encoding, NoiseSpec

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass(frozen=True)
class GanArch:
    """Shared architecture knobs for generator and critic."""

    n_qubits: int = 6
    n_blocks: int = 12
    injection_blocks: int = 6
    hidden_dim: int = 6
    encoding: Encoding = Encoding.ARCTAN


@dataclass
class GeneratorParams:
    backbone: GruParams
    head_mu: HqlParams
    head_logvar: HqlParams


@dataclass
class CriticParams:
    backbone: GruParams
    head_score: HqlParams


@dataclass
class GaussianOut:
    mu: np.ndarray
    logvar: np.ndarray


def _head_config(arch: GanArch, out_dim: int) -> HqlConfig:
    return HqlConfig(
        in_dim=arch.hidden_dim,
        out_dim=out_dim,
        n_qubits=arch.n_qubits,
        n_blocks=arch.n_blocks,
        injection_blocks=arch.injection_blocks,
        encoding=arch.encoding,
    )


def make_generator_params(
    arch: GanArch, n_features: int, rng: np.random.Generator
) -> GeneratorParams:
    backbone = init_gru_params(
        n_features,
        arch.hidden_dim,
        rng,
        n_qubits=arch.n_qubits,
        n_blocks=arch.n_blocks,
        injection_blocks=arch.injection_blocks,
        encoding=arch.encoding,
    )
    return GeneratorParams(
        backbone=backbone,
        head_mu=init_hql_params(_head_config(arch, n_features), rng),
        head_logvar=init_hql_params(_head_config(arch, n_features), rng),
    )


def make_critic_params(
    arch: GanArch, n_features: int, rng: np.random.Generator
) -> CriticParams:
    backbone = init_gru_params(
        n_features,
        arch.hidden_dim,
        rng,
        n_qubits=arch.n_qubits,
        n_blocks=arch.n_blocks,
        injection_blocks=arch.injection_blocks,
        encoding=arch.encoding,
    )
    return CriticParams(
        backbone=backbone,
        head_score=init_hql_params(_head_config(arch, 1), rng),
    )


def reparameterize(mu: np.ndarray, logvar: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """mu + exp(logvar / 2) * eps, elementwise; differentiable in mu and logvar."""
    return np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(eps)


@dataclass
class GeneratorCache:
    backbone_caches: list[GruStepCache]
    head_mu_cache: object
    head_logvar_cache: object
    logvar_raw: np.ndarray
    eps: np.ndarray
    single: bool


def _window_batch(window: np.ndarray, n_features: int) -> tuple[np.ndarray, bool]:
    w = np.asarray(window, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None, :, :]
    if w.ndim != 3 or w.shape[2] != n_features:
        raise ShapeError(f"window must be (B, T, {n_features}), got {np.shape(window)}")
    if w.shape[1] == 0:
        raise InputError("window must contain at least one step")
    return w, single


def generator_forward(
    gen: GeneratorParams,
    window: np.ndarray,
    eps: np.ndarray,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[GaussianOut, np.ndarray, GeneratorCache]:
    """Forecast the next step as a Gaussian and draw one reparameterized sample."""
    d = gen.head_mu.config.out_dim
    w, single = _window_batch(window, d)
    eps_arr = np.asarray(eps, dtype=np.float64)
    if single and eps_arr.ndim == 1:
        eps_arr = eps_arr[None, :]
    if eps_arr.shape != (w.shape[0], d):
        raise ShapeError(f"eps must have shape ({w.shape[0]}, {d}), got {eps_arr.shape}")
    h, caches = qgru_forward(gen.backbone, w, noise=noise, rng=rng)
    mu, mu_cache = hql_forward(gen.head_mu, h, noise, rng)
    logvar_raw, lv_cache = hql_forward(gen.head_logvar, h, noise, rng)
    mu = np.atleast_2d(mu)
    logvar_raw = np.atleast_2d(logvar_raw)
    logvar = np.clip(logvar_raw, LOGVAR_MIN, LOGVAR_MAX)
    x_hat = reparameterize(mu, logvar, eps_arr)
    cache = GeneratorCache(caches, mu_cache, lv_cache, logvar_raw, eps_arr, single)
    if single:
        return GaussianOut(mu[0], logvar[0]), x_hat[0], cache
    return GaussianOut(mu, logvar), x_hat, cache


def zeros_like_generator(gen: GeneratorParams) -> GeneratorParams:
    return GeneratorParams(
        backbone=zeros_like_gru(gen.backbone),
        head_mu=zeros_like_hql(gen.head_mu),
        head_logvar=zeros_like_hql(gen.head_logvar),
    )


def zeros_like_critic(critic: CriticParams) -> CriticParams:
    return CriticParams(
        backbone=zeros_like_gru(critic.backbone),
        head_score=zeros_like_hql(critic.head_score),
    )


def generator_backward(
    gen: GeneratorParams,
    cache: GeneratorCache,
    dmu: np.ndarray,
    dlogvar: np.ndarray,
    dx_hat: np.ndarray | None = None,
) -> GeneratorParams:
    """Parameter gradients given upstreams on mu, clamped logvar, and x_hat."""
    logvar = np.clip(cache.logvar_raw, LOGVAR_MIN, LOGVAR_MAX)
    dmu = np.atleast_2d(np.asarray(dmu, dtype=np.float64)).copy()
    dlogvar = np.atleast_2d(np.asarray(dlogvar, dtype=np.float64)).copy()
    if dx_hat is not None:
        dx = np.atleast_2d(np.asarray(dx_hat, dtype=np.float64))
        dmu += dx
        dlogvar += dx * cache.eps * 0.5 * np.exp(0.5 * logvar)
    # Clamp gradient: zero where the raw head output was clipped.
    inside = (cache.logvar_raw > LOGVAR_MIN) & (cache.logvar_raw < LOGVAR_MAX)
    dlogvar = dlogvar * inside
    grads_mu, dh_mu = hql_backward(cache.head_mu_cache, dmu)
    grads_lv, dh_lv = hql_backward(cache.head_logvar_cache, dlogvar)
    dh = np.atleast_2d(dh_mu) + np.atleast_2d(dh_lv)
    grads_backbone, _, _ = qgru_backward(gen.backbone, cache.backbone_caches, dh)
    return GeneratorParams(grads_backbone, grads_mu, grads_lv)


@dataclass
class CriticCache:
    backbone_caches: list[GruStepCache]
    head_cache: object
    single: bool


def critic_forward(
    critic: CriticParams,
    window: np.ndarray,
    candidate: np.ndarray,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, CriticCache]:
    """Score (window || candidate); returns per-sample scalars and a cache."""
    d = critic.backbone.input_dim
    w, single = _window_batch(window, d)
    cand = np.asarray(candidate, dtype=np.float64)
    if single and cand.ndim == 1:
        cand = cand[None, :]
    if cand.shape != (w.shape[0], d):
        raise ShapeError(f"candidate must have shape ({w.shape[0]}, {d}), got {cand.shape}")
    seq = np.concatenate([w, cand[:, None, :]], axis=1)
    h, caches = qgru_forward(critic.backbone, seq, noise=noise, rng=rng)
    score, head_cache = hql_forward(critic.head_score, h, noise, rng)
    score = np.atleast_2d(score)[:, 0]
    return (score[0] if single else score), CriticCache(caches, head_cache, single)


def critic_score(
    critic: CriticParams,
    window: np.ndarray,
    candidate: np.ndarray,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> float | np.ndarray:
    score, _ = critic_forward(critic, window, candidate, noise, rng)
    return score


def critic_backward(
    critic: CriticParams, cache: CriticCache, upstream: np.ndarray
) -> tuple[CriticParams, np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * score).

    Returns (parameter grads, d candidate, d window); the candidate gradient
    is the input gradient at the appended final step.
    """
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
    grads_head, dh = hql_backward(cache.head_cache, up)
    grads_backbone, dx_seq, _ = qgru_backward(
        critic.backbone, cache.backbone_caches, np.atleast_2d(dh)
    )
    grads = CriticParams(grads_backbone, grads_head)
    dcand = dx_seq[:, -1, :]
    dwin = dx_seq[:, :-1, :]
    if cache.single:
        return grads, dcand[0], dwin[0]
    return grads, dcand, dwin


def critic_input_gradient(
    critic: CriticParams, window: np.ndarray, candidate: np.ndarray
) -> np.ndarray:
    """d score_b / d candidate_b for each batch row (noise-free path)."""
    cand = np.atleast_2d(np.asarray(candidate, dtype=np.float64))
    scores, cache = critic_forward(critic, window, cand)
    cache.single = False
    _, dcand, _ = critic_backward(critic, cache, np.ones(cand.shape[0]))
    return dcand


# ---------------------------------------------------------------------------
# Losses


def kl_loss(mu: np.ndarray, logvar: np.ndarray) -> float:
    """0.5 * mean(exp(logvar) + mu^2 - 1 - logvar); zero only at N(0, 1)."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(0.5 * np.mean(np.exp(logvar) + mu * mu - 1.0 - logvar))


def var_penalty(logvar: np.ndarray) -> float:
    """mean(exp(logvar)): the average predicted variance."""
    return float(np.mean(np.exp(np.asarray(logvar, dtype=np.float64))))


def generator_loss(
    fake_scores: np.ndarray, mu: np.ndarray, logvar: np.ndarray, lambda_kl: float
) -> float:
    """-mean(D(fake)) + variance penalty + lambda_kl * KL regularizer."""
    fake_scores = np.asarray(fake_scores, dtype=np.float64)
    if fake_scores.size == 0:
        raise InputError("fake_scores must be nonempty")
    return float(
        -np.mean(fake_scores) + var_penalty(logvar) + lambda_kl * kl_loss(mu, logvar)
    )


def critic_loss(real_scores: np.ndarray, fake_scores: np.ndarray) -> float:
    """mean(D(fake)) - mean(D(real)); the critic minimizes this."""
    real_scores = np.asarray(real_scores, dtype=np.float64)
    fake_scores = np.asarray(fake_scores, dtype=np.float64)
    if real_scores.size == 0 or fake_scores.size == 0:
        raise InputError("score batches must be nonempty")
    return float(np.mean(fake_scores) - np.mean(real_scores))


# ---------------------------------------------------------------------------
# Gradient penalty

_HVP_STEP = 1e-4


def _interpolate(
    x_real: np.ndarray, x_fake: np.ndarray, rng: np.random.Generator | None, interp: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    x_real = np.atleast_2d(np.asarray(x_real, dtype=np.float64))
    x_fake = np.atleast_2d(np.asarray(x_fake, dtype=np.float64))
    if x_real.shape != x_fake.shape:
        raise ShapeError("real and fake candidates must share a shape")
    if interp is None:
        if rng is None:
            raise InputError("either rng or explicit interpolation weights are required")
        u = rng.uniform(size=x_real.shape[0])
    else:
        u = np.asarray(interp, dtype=np.float64).reshape(-1)
    x_tilde = u[:, None] * x_real + (1.0 - u[:, None]) * x_fake
    return x_tilde, u


def gradient_penalty(
    critic: CriticParams,
    window: np.ndarray,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    rng: np.random.Generator | None = None,
    interp: np.ndarray | None = None,
) -> float:
    """mean((||d D / d x_tilde||_2 - 1)^2) over per-row random interpolants.

    The window is held fixed; only the appended candidate is interpolated.
    Computed on the noise-free circuit path.
    """
    x_tilde, _ = _interpolate(x_real, x_fake, rng, interp)
    win = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if win.ndim == 2:
        win = np.broadcast_to(win[None, :, :], (x_tilde.shape[0],) + win.shape).copy()
    g = critic_input_gradient(critic, win, x_tilde)
    norms = np.linalg.norm(g, axis=1)
    return float(np.mean((norms - 1.0) ** 2))


def gradient_penalty_with_grads(
    critic: CriticParams,
    window: np.ndarray,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    rng: np.random.Generator | None = None,
    interp: np.ndarray | None = None,
) -> tuple[float, CriticParams]:
    """Penalty value plus its parameter gradient.

    The parameter gradient needs the second derivative d^2 D / (d theta d x);
    it is formed as a central-difference Hessian-vector product along the
    unit input-gradient direction, i.e. two extra backward passes at
    candidates shifted by +/- eps * g / ||g||.
    """
    x_tilde, _ = _interpolate(x_real, x_fake, rng, interp)
    batch = x_tilde.shape[0]
    win = np.asarray(window, dtype=np.float64)
    if win.ndim == 2:
        win = np.broadcast_to(win[None, :, :], (batch,) + win.shape).copy()
    g = critic_input_gradient(critic, win, x_tilde)
    norms = np.linalg.norm(g, axis=1)
    value = float(np.mean((norms - 1.0) ** 2))

    safe = norms > 1e-12
    unit = np.zeros_like(g)
    unit[safe] = g[safe] / norms[safe, None]
    # d penalty / d theta = sum_b (2/B)(n_b - 1) * d(u_b . g_b)/d theta.
    coeff = np.where(safe, 2.0 * (norms - 1.0) / batch, 0.0)

    def _weighted_param_grads(cands: np.ndarray, weights: np.ndarray) -> CriticParams:
        _, cache = critic_forward(critic, win, cands)
        cache.single = False
        grads, _, _ = critic_backward(critic, cache, weights)
        return grads

    up = coeff / (2.0 * _HVP_STEP)
    plus = _weighted_param_grads(x_tilde + _HVP_STEP * unit, up)
    minus = _weighted_param_grads(x_tilde - _HVP_STEP * unit, -up)
    total = zeros_like_critic(critic)
    accumulate_gru(total.backbone, plus.backbone)
    accumulate_gru(total.backbone, minus.backbone)
    for field in ("w_in", "b_in", "theta", "w_out", "b_out"):
        setattr(
            total.head_score,
            field,
            getattr(plus.head_score, field) + getattr(minus.head_score, field),
        )
    return value, total
