"""Adversarial training loop, optimizers, and checkpoint serialization.

Per batch the critic takes ``n_critic`` descent steps on
``critic_loss + lambda_gp * gradient_penalty`` followed by one generator
step on the composite generator loss.  All randomness (shuffling, Gaussian
draws, interpolation weights, noise-trajectory sampling) flows from a
single seeded generator, so a (config, data) pair fully determines the
result.

Checkpoint files are a binary container:

    bytes 0..7    magic ``QTSADCKP``
    bytes 8..11   little-endian u32 format version (currently 1)
    bytes 12..19  little-endian u64 length of the JSON metadata block
    metadata      UTF-8 JSON: train config, epoch, rng state, per-layer
                  architecture, and an ordered tensor directory (name, shape)
    payload       the directory's tensors, raw little-endian float64
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from qtsad.errors import CheckpointError, ConfigError, InputError, NumericError
from qtsad.layers import GruParams, HqlConfig, HqlParams
from qtsad.model import (
    CriticParams,
    GanArch,
    GeneratorParams,
    critic_backward,
    critic_forward,
    critic_loss,
    generator_backward,
    generator_forward,
    generator_loss,
    gradient_penalty_with_grads,
    kl_loss,
    make_critic_params,
    make_generator_params,
    var_penalty,
)
from qtsad.qsim import Encoding, NoiseSpec

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"QTSADCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 0.001
    batch_size: int = 32
    n_critic: int = 5
    lambda_gp: float = 10.0
    lambda_kl: float = 0.1
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.n_critic < 1:
            raise ConfigError("batch_size and n_critic must be positive")
        if self.lambda_gp < 0 or self.lambda_kl < 0:
            raise ConfigError("penalty weights must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# Parameter bundles as flat name -> tensor dictionaries


def iter_tensors(bundle, prefix: str = ""):
    """Yield (dotted name, array) for every ndarray field, depth first."""
    for f in dataclasses.fields(bundle):
        value = getattr(bundle, f.name)
        if isinstance(value, np.ndarray):
            yield f"{prefix}{f.name}", value
        elif dataclasses.is_dataclass(value) and not isinstance(value, type):
            yield from iter_tensors(value, f"{prefix}{f.name}.")


def flatten_tensors(bundle, prefix: str = "") -> dict[str, np.ndarray]:
    return dict(iter_tensors(bundle, prefix))


def assign_tensors(bundle, values: dict[str, np.ndarray], prefix: str = "") -> None:
    """Write arrays from ``values`` back into the bundle's fields."""
    for f in dataclasses.fields(bundle):
        current = getattr(bundle, f.name)
        if isinstance(current, np.ndarray):
            setattr(bundle, f.name, values[f"{prefix}{f.name}"])
        elif dataclasses.is_dataclass(current) and not isinstance(current, type):
            assign_tensors(current, values, f"{prefix}{f.name}.")


def _add_scaled(acc: dict[str, np.ndarray], bundle, scale: float = 1.0) -> None:
    for name, arr in iter_tensors(bundle):
        acc[name] += scale * arr


def _zero_grads_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


# ---------------------------------------------------------------------------
# Optimizers


@dataclass
class OptimizerState:
    kind: str
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def make_optimizer_state(kind: str, params: dict[str, np.ndarray]) -> OptimizerState:
    if kind == "sgd":
        return OptimizerState(kind="sgd")
    if kind == "adam":
        return OptimizerState(
            kind="adam",
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )
    raise ConfigError(f"unknown optimizer {kind!r}")


def optimizer_step(
    state: OptimizerState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
) -> dict[str, np.ndarray]:
    """One update; returns new tensors and advances the state in place."""
    out: dict[str, np.ndarray] = {}
    if state.kind == "sgd":
        for name, p in params.items():
            out[name] = p - lr * grads[name]
        state.step_count += 1
        return out
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - _ADAM_BETA1**t
    bc2 = 1.0 - _ADAM_BETA2**t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = _ADAM_BETA1 * state.m[name] + (1.0 - _ADAM_BETA1) * g
        state.v[name] = _ADAM_BETA2 * state.v[name] + (1.0 - _ADAM_BETA2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
    return out


# ---------------------------------------------------------------------------
# Objective evaluation (deterministic given explicit random draws)


def _check_finite(value: float, term: str) -> float:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {term}: {value!r}")
    return value


def critic_objective_and_grads(
    critic: CriticParams,
    windows: np.ndarray,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    interp_u: np.ndarray,
    lambda_gp: float,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """(wasserstein loss, penalty, parameter grads) on one fixed batch.

    Score terms may run under sampled gate noise; the penalty always uses
    the clean circuit path.
    """
    batch = windows.shape[0]
    real_scores, real_cache = critic_forward(critic, windows, x_real, noise, rng)
    fake_scores, fake_cache = critic_forward(critic, windows, x_fake, noise, rng)
    loss = _check_finite(critic_loss(real_scores, fake_scores), "critic_loss")
    grads = _zero_grads_like(flatten_tensors(critic))
    g_fake, _, _ = critic_backward(critic, fake_cache, np.full(batch, 1.0 / batch))
    g_real, _, _ = critic_backward(critic, real_cache, np.full(batch, -1.0 / batch))
    _add_scaled(grads, g_fake)
    _add_scaled(grads, g_real)
    gp = 0.0
    if lambda_gp > 0:
        gp, gp_grads = gradient_penalty_with_grads(
            critic, windows, x_real, x_fake, interp=interp_u
        )
        _check_finite(gp, "gradient_penalty")
        _add_scaled(grads, gp_grads, lambda_gp)
    return loss, gp, grads


def generator_objective_and_grads(
    generator: GeneratorParams,
    critic: CriticParams,
    windows: np.ndarray,
    eps: np.ndarray,
    lambda_kl: float,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """(generator loss, kl, variance penalty, parameter grads) on one batch."""
    batch, d = eps.shape
    gauss, x_hat, gen_cache = generator_forward(generator, windows, eps, noise, rng)
    fake_scores, critic_cache = critic_forward(critic, windows, x_hat, noise, rng)
    loss = _check_finite(
        generator_loss(fake_scores, gauss.mu, gauss.logvar, lambda_kl), "generator_loss"
    )
    kl = _check_finite(kl_loss(gauss.mu, gauss.logvar), "kl_loss")
    var = _check_finite(var_penalty(gauss.logvar), "var_penalty")
    # Adversarial term: d(-mean D)/d x_hat through the frozen critic.
    _, dx_hat, _ = critic_backward(critic, critic_cache, np.full(batch, -1.0 / batch))
    denom = batch * d
    dmu = lambda_kl * gauss.mu / denom
    dlogvar = np.exp(gauss.logvar) / denom + lambda_kl * (np.exp(gauss.logvar) - 1.0) / (
        2.0 * denom
    )
    g = generator_backward(generator, gen_cache, dmu, dlogvar, dx_hat)
    grads = _zero_grads_like(flatten_tensors(generator))
    _add_scaled(grads, g)
    return loss, kl, var, grads


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochStats:
    epoch: int
    critic_loss: float
    gp: float
    gen_loss: float
    kl: float
    var: float


def train(
    config: TrainConfig,
    windows,
    arch: GanArch | None = None,
    generator: GeneratorParams | None = None,
    critic: CriticParams | None = None,
) -> tuple[GeneratorParams, CriticParams, list[EpochStats]]:
    """Train on windows of shape (N, w+1, d): w context rows plus one target."""
    X = np.asarray(getattr(windows, "windows", windows), dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0:
        raise InputError(f"expected nonempty (N, w+1, d) windows, got shape {X.shape}")
    if X.shape[1] < 2:
        raise InputError("windows need at least one context row and one target row")
    n, w_plus_1, d = X.shape
    w = w_plus_1 - 1
    rng = np.random.default_rng(config.seed)
    if generator is None or critic is None:
        if arch is None:
            raise InputError("provide either an architecture or initial parameters")
        generator = generator if generator is not None else make_generator_params(arch, d, rng)
        critic = critic if critic is not None else make_critic_params(arch, d, rng)
    noise = config.noise if config.noise.enabled else None

    gen_opt = make_optimizer_state(config.optimizer, flatten_tensors(generator))
    critic_opt = make_optimizer_state(config.optimizer, flatten_tensors(critic))
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(5)
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            win = X[idx, :w, :]
            x_real = X[idx, w, :]
            batch = idx.shape[0]
            for _ in range(config.n_critic):
                eps = rng.standard_normal((batch, d))
                u = rng.uniform(size=batch)
                _, x_fake, _ = generator_forward(generator, win, eps, noise, rng)
                c_loss, gp, c_grads = critic_objective_and_grads(
                    critic, win, x_real, x_fake, u, config.lambda_gp, noise, rng
                )
                new = optimizer_step(
                    critic_opt, flatten_tensors(critic), c_grads, config.learning_rate
                )
                assign_tensors(critic, new)
            eps = rng.standard_normal((batch, d))
            g_loss, kl, var, g_grads = generator_objective_and_grads(
                generator, critic, win, eps, config.lambda_kl, noise, rng
            )
            new = optimizer_step(
                gen_opt, flatten_tensors(generator), g_grads, config.learning_rate
            )
            assign_tensors(generator, new)
            sums += (c_loss, gp, g_loss, kl, var)
            n_batches += 1
        means = sums / max(n_batches, 1)
        history.append(EpochStats(epoch, *(float(v) for v in means)))
    return generator, critic, history


def write_history_csv(history: list[EpochStats], path) -> None:
    lines = ["epoch,critic_loss,gp,gen_loss,kl,var"]
    for h in history:
        lines.append(
            f"{h.epoch},{h.critic_loss!r},{h.gp!r},{h.gen_loss!r},{h.kl!r},{h.var!r}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    generator: GeneratorParams
    critic: CriticParams
    config: TrainConfig
    rng_state: dict
    epoch: int
    version: int = CHECKPOINT_VERSION


def _hql_config_dict(cfg: HqlConfig) -> dict:
    return {
        "in_dim": cfg.in_dim,
        "out_dim": cfg.out_dim,
        "n_qubits": cfg.n_qubits,
        "n_blocks": cfg.n_blocks,
        "injection_blocks": cfg.injection_blocks,
        "encoding": cfg.encoding.value,
    }


def _hql_config_from_dict(data: dict) -> HqlConfig:
    return HqlConfig(
        in_dim=data["in_dim"],
        out_dim=data["out_dim"],
        n_qubits=data["n_qubits"],
        n_blocks=data["n_blocks"],
        injection_blocks=data["injection_blocks"],
        encoding=Encoding(data["encoding"]),
    )


def _iter_hql_params(ckpt: Checkpoint):
    g, c = ckpt.generator, ckpt.critic
    yield "generator.backbone.update", g.backbone.update
    yield "generator.backbone.reset", g.backbone.reset
    yield "generator.backbone.candidate", g.backbone.candidate
    yield "generator.head_mu", g.head_mu
    yield "generator.head_logvar", g.head_logvar
    yield "critic.backbone.update", c.backbone.update
    yield "critic.backbone.reset", c.backbone.reset
    yield "critic.backbone.candidate", c.backbone.candidate
    yield "critic.head_score", c.head_score


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = flatten_tensors(ckpt.generator, "generator.")
    tensors.update(flatten_tensors(ckpt.critic, "critic."))
    directory = [[name, list(arr.shape)] for name, arr in tensors.items()]
    meta = {
        "config": dataclasses.asdict(ckpt.config),
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "layers": {name: _hql_config_dict(p.config) for name, p in _iter_hql_params(ckpt)},
        "tensors": directory,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        for name, _ in directory:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())


def _read_exact(fh, count: int, section: str) -> bytes:
    try:
        data = fh.read(count)
    except (OverflowError, MemoryError) as exc:
        raise CheckpointError(f"implausible size while reading {section}") from exc
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint while reading {section}")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic bytes {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt metadata: {exc}") from exc
        tensors: dict[str, np.ndarray] = {}
        for name, shape in meta["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * 8, f"tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    def hql(prefix: str) -> HqlParams:
        cfg = _hql_config_from_dict(meta["layers"][prefix])
        return HqlParams(
            config=cfg,
            w_in=tensors[f"{prefix}.w_in"],
            b_in=tensors[f"{prefix}.b_in"],
            theta=tensors[f"{prefix}.theta"],
            w_out=tensors[f"{prefix}.w_out"],
            b_out=tensors[f"{prefix}.b_out"],
        )

    generator = GeneratorParams(
        backbone=GruParams(
            update=hql("generator.backbone.update"),
            reset=hql("generator.backbone.reset"),
            candidate=hql("generator.backbone.candidate"),
        ),
        head_mu=hql("generator.head_mu"),
        head_logvar=hql("generator.head_logvar"),
    )
    critic = CriticParams(
        backbone=GruParams(
            update=hql("critic.backbone.update"),
            reset=hql("critic.backbone.reset"),
            candidate=hql("critic.backbone.candidate"),
        ),
        head_score=hql("critic.head_score"),
    )
    cfg_data = dict(meta["config"])
    cfg_data["noise"] = NoiseSpec(**cfg_data["noise"])
    config = TrainConfig(**cfg_data)
    return Checkpoint(
        generator=generator,
        critic=critic,
        config=config,
        rng_state=meta["rng_state"],
        epoch=meta["epoch"],
        version=version,
    )
