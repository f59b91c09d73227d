"""Two-stage gated anomaly scoring over a forecast model.

Stage one screens each timestep with the interval-violation score: the mean
of the top-k per-feature exceedances of the model's kappa-sigma band,

    v_j = max(0, |x_j - mu_j| - kappa * sigma_j).

Where the gate opens (score above a locally adaptive threshold), stage two
combines the top-k squared forecast error and the negated critic score,
each min-max normalized against validation statistics, into

    A = S_topk_norm + S_critic_norm,

and flags an anomaly where A also exceeds its own adaptive threshold.
Thresholds are mean + k * population-std over a sliding window, centered
(offline) or trailing (online).  Inference is deterministic: the forecast
is scored at eps = 0, i.e. against the predicted mean.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from qtsad.errors import ConfigError, CsvParseError, InputError
from qtsad.model import CriticParams, GeneratorParams, critic_forward, generator_forward
from qtsad.qsim import NoiseSpec


class ThresholdMode(enum.Enum):
    CENTERED_OFFLINE = "centered"
    CAUSAL_ONLINE = "causal"


class ScoreSignal(enum.Enum):
    """Which signals feed the final score; single-signal modes skip the gate."""

    FULL = "full"
    CRITIC_ONLY = "critic_only"
    RECON_ONLY = "recon_only"
    INTERVAL_ONLY = "interval_only"


@dataclass(frozen=True)
class DetectorConfig:
    kappa: float = 2.0
    k_top: int = 3
    k_sens: float = 1.5
    k_sens_final: float | None = None  # defaults to k_sens
    threshold_window: int = 59
    mode: ThresholdMode = ThresholdMode.CENTERED_OFFLINE
    signal: ScoreSignal = ScoreSignal.FULL
    n_trajectories: int = 1  # >1 averages noisy-model trajectories
    sample_candidate: bool = False  # draw eps instead of scoring at the mean

    def __post_init__(self) -> None:
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.k_top < 1:
            raise ConfigError("k_top must be positive")
        if self.threshold_window < 3 or self.threshold_window % 2 == 0:
            raise ConfigError("threshold_window must be odd and >= 3")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be positive")

    @property
    def final_sensitivity(self) -> float:
        return self.k_sens if self.k_sens_final is None else self.k_sens_final


# ---------------------------------------------------------------------------
# Scoring primitives


def _topk_mean(values: np.ndarray, k: int) -> np.ndarray:
    """Row-wise mean of the k largest entries."""
    if k > values.shape[-1]:
        raise ConfigError(f"k_top={k} exceeds feature count {values.shape[-1]}")
    part = np.partition(values, values.shape[-1] - k, axis=-1)[..., -k:]
    return part.mean(axis=-1)


def interval_violation_score(
    x: np.ndarray, mu: np.ndarray, sigma: np.ndarray, kappa: float, k_top: int
) -> float | np.ndarray:
    """Mean of the k largest per-feature band exceedances; 0 inside the band."""
    single = np.asarray(x).ndim == 1
    x, mu, sigma = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x, mu, sigma))
    v = np.maximum(0.0, np.abs(x - mu) - kappa * sigma)
    out = _topk_mean(v, k_top)
    return float(out[0]) if single else out


def topk_recon_error(x: np.ndarray, mu: np.ndarray, k_top: int) -> float | np.ndarray:
    """Mean of the k largest per-feature squared forecast errors."""
    single = np.asarray(x).ndim == 1
    x, mu = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x, mu))
    out = _topk_mean((x - mu) ** 2, k_top)
    return float(out[0]) if single else out


def critic_anomaly_score(
    critic: CriticParams, window: np.ndarray, x_hat: np.ndarray
) -> float | np.ndarray:
    """Negated critic score: lower critic output means a more suspicious sample."""
    score, _ = critic_forward(critic, window, x_hat)
    return -score


# ---------------------------------------------------------------------------
# Calibration


@dataclass
class CalibrationStats:
    """Validation-set min/max of the raw stage-two scores."""

    topk_min: float
    topk_max: float
    critic_min: float
    critic_max: float

    def __post_init__(self) -> None:
        if self.topk_max < self.topk_min or self.critic_max < self.critic_min:
            raise InputError("calibration max must be >= min")

    def normalize_topk(self, raw: np.ndarray) -> np.ndarray:
        return _minmax_unit(raw, self.topk_min, self.topk_max)

    def normalize_critic(self, raw: np.ndarray) -> np.ndarray:
        return _minmax_unit(raw, self.critic_min, self.critic_max)


def _minmax_unit(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if hi <= lo:
        return np.zeros_like(raw)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def calibrate(trace: "ScoreTrace") -> CalibrationStats:
    """Record min/max of the raw stage-two scores over a validation trace."""
    valid = trace.scored
    if not valid.any():
        raise InputError("validation trace has no scored timesteps")
    topk = trace.s_topk_raw[valid]
    crit = trace.s_critic_raw[valid]
    return CalibrationStats(
        topk_min=float(topk.min()),
        topk_max=float(topk.max()),
        critic_min=float(crit.min()),
        critic_max=float(crit.max()),
    )


# ---------------------------------------------------------------------------
# Adaptive thresholds


def adaptive_threshold(segment: np.ndarray, k_sens: float) -> float:
    """mean + k * population-std of one score window."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.size < 2:
        raise InputError("threshold segment needs at least two samples")
    return float(segment.mean() + k_sens * segment.std())


def rolling_thresholds(values: np.ndarray, config: DetectorConfig, k_sens: float) -> np.ndarray:
    """Per-timestep adaptive thresholds over a full score trace.

    Centered mode truncates the window at the trace boundaries; causal mode
    uses the trailing window and emits +inf where fewer than two samples
    exist (nothing can fire there).
    """
    values = np.asarray(values, dtype=np.float64)
    t = values.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(values)])
    csum2 = np.concatenate([[0.0], np.cumsum(values * values)])
    out = np.empty(t)
    length = config.threshold_window
    half = (length - 1) // 2
    for i in range(t):
        if config.mode is ThresholdMode.CENTERED_OFFLINE:
            lo, hi = max(0, i - half), min(t, i + half + 1)
        else:
            lo, hi = max(0, i - length + 1), i + 1
        count = hi - lo
        if count < 2:
            out[i] = np.inf
            continue
        mean = (csum[hi] - csum[lo]) / count
        var = max((csum2[hi] - csum2[lo]) / count - mean * mean, 0.0)
        out[i] = mean + k_sens * np.sqrt(var)
    return out


# ---------------------------------------------------------------------------
# Trace


@dataclass
class ScoreTrace:
    """Per-timestep scores and decisions; arrays all share length T."""

    s_iv: np.ndarray
    s_topk_raw: np.ndarray
    s_topk_norm: np.ndarray
    s_critic_raw: np.ndarray
    s_critic_norm: np.ndarray
    a: np.ndarray
    gate_open: np.ndarray
    anomaly: np.ndarray
    mean_logvar: np.ndarray
    scored: np.ndarray  # False for the first w steps that lack context
    mu: np.ndarray | None = None
    logvar: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.s_iv.shape[0]


_TRACE_COLUMNS = (
    "t",
    "s_iv",
    "s_topk_raw",
    "s_topk_norm",
    "s_critic_raw",
    "s_critic_norm",
    "a",
    "gate",
    "anomaly",
    "mean_logvar",
)


def write_trace_csv(trace: ScoreTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(_TRACE_COLUMNS) + "\n")
        for i in range(trace.n_steps):
            fh.write(
                ",".join(
                    [
                        str(i),
                        repr(float(trace.s_iv[i])),
                        repr(float(trace.s_topk_raw[i])),
                        repr(float(trace.s_topk_norm[i])),
                        repr(float(trace.s_critic_raw[i])),
                        repr(float(trace.s_critic_norm[i])),
                        repr(float(trace.a[i])),
                        str(int(trace.gate_open[i])),
                        str(int(trace.anomaly[i])),
                        repr(float(trace.mean_logvar[i])),
                    ]
                )
                + "\n"
            )


def read_trace_csv(path) -> ScoreTrace:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != _TRACE_COLUMNS:
            raise CsvParseError(f"unexpected trace header {header!r}", row=1)
        cols: list[list[float]] = [[] for _ in _TRACE_COLUMNS]
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(_TRACE_COLUMNS):
                raise CsvParseError("wrong cell count", row=row_no)
            try:
                for c, cell in enumerate(row):
                    cols[c].append(float(cell))
            except ValueError:
                raise CsvParseError("non-numeric cell", row=row_no) from None
    arr = [np.asarray(c) for c in cols]
    gate = arr[7].astype(bool)
    return ScoreTrace(
        s_iv=arr[1],
        s_topk_raw=arr[2],
        s_topk_norm=arr[3],
        s_critic_raw=arr[4],
        s_critic_norm=arr[5],
        a=arr[6],
        gate_open=gate,
        anomaly=arr[8].astype(bool),
        mean_logvar=arr[9],
        scored=np.ones_like(gate, dtype=bool),
    )


# ---------------------------------------------------------------------------
# Full pipeline


def _forecast_series(
    series: np.ndarray,
    generator: GeneratorParams,
    critic: CriticParams,
    w: int,
    config: DetectorConfig,
    noise: NoiseSpec | None,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched one-step forecasts for t in [w, T): mu, logvar, x_hat, critic score."""
    t_total, d = series.shape
    idx = np.arange(t_total - w)
    windows = np.stack([series[i : i + w] for i in idx])
    runs = max(config.n_trajectories if noise is not None and noise.enabled else 1, 1)
    mu_acc = np.zeros((len(idx), d))
    lv_acc = np.zeros((len(idx), d))
    xh_acc = np.zeros((len(idx), d))
    score_acc = np.zeros(len(idx))
    for _ in range(runs):
        if config.sample_candidate:
            if rng is None:
                raise InputError("sample_candidate requires an rng")
            eps = rng.standard_normal((len(idx), d))
        else:
            eps = np.zeros((len(idx), d))
        gauss, x_hat, _ = generator_forward(generator, windows, eps, noise, rng)
        score, _ = critic_forward(critic, windows, x_hat, noise, rng)
        mu_acc += gauss.mu
        lv_acc += gauss.logvar
        xh_acc += x_hat
        score_acc += np.atleast_1d(score)
    return mu_acc / runs, lv_acc / runs, xh_acc / runs, score_acc / runs


def detect(
    series: np.ndarray,
    generator: GeneratorParams,
    critic: CriticParams,
    window_size: int,
    config: DetectorConfig,
    calib: CalibrationStats | None = None,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> ScoreTrace:
    """Score every timestep of a series; rows before ``window_size`` stay closed.

    With ``calib=None`` the stage-two scores are normalized against this very
    trace (the self-calibrated form used on the validation split).
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise InputError(f"series must be (T, d), got shape {series.shape}")
    t_total, d = series.shape
    w = window_size
    if w < 1:
        raise ConfigError("window_size must be positive")
    if t_total < w + 1:
        raise InputError(f"series needs at least {w + 1} rows, got {t_total}")
    if config.k_top > d:
        raise ConfigError(f"k_top={config.k_top} exceeds {d} features")

    mu, logvar, x_hat, d_score = _forecast_series(
        series, generator, critic, w, config, noise, rng
    )
    x_true = series[w:]
    sigma = np.exp(0.5 * logvar)

    s_iv = np.zeros(t_total)
    s_topk = np.zeros(t_total)
    s_critic = np.zeros(t_total)
    mean_lv = np.zeros(t_total)
    scored = np.zeros(t_total, dtype=bool)
    scored[w:] = True
    s_iv[w:] = np.atleast_1d(
        interval_violation_score(x_true, mu, sigma, config.kappa, config.k_top)
    )
    s_topk[w:] = np.atleast_1d(topk_recon_error(x_true, mu, config.k_top))
    s_critic[w:] = -d_score
    mean_lv[w:] = logvar.mean(axis=1)

    mu_full = np.zeros((t_total, d))
    lv_full = np.zeros((t_total, d))
    mu_full[w:] = mu
    lv_full[w:] = logvar

    trace = ScoreTrace(
        s_iv=s_iv,
        s_topk_raw=s_topk,
        s_topk_norm=np.zeros(t_total),
        s_critic_raw=s_critic,
        s_critic_norm=np.zeros(t_total),
        a=np.zeros(t_total),
        gate_open=np.zeros(t_total, dtype=bool),
        anomaly=np.zeros(t_total, dtype=bool),
        mean_logvar=mean_lv,
        scored=scored,
        mu=mu_full,
        logvar=lv_full,
    )
    if calib is None:
        calib = calibrate(trace)
    trace.s_topk_norm[scored] = calib.normalize_topk(s_topk[scored])
    trace.s_critic_norm[scored] = calib.normalize_critic(s_critic[scored])

    if config.signal is ScoreSignal.FULL:
        gate_th = rolling_thresholds(s_iv, config, config.k_sens)
        trace.gate_open = scored & (s_iv > gate_th)
        trace.a = np.where(
            trace.gate_open, trace.s_topk_norm + trace.s_critic_norm, 0.0
        )
    elif config.signal is ScoreSignal.CRITIC_ONLY:
        trace.gate_open = scored.copy()
        trace.a = np.where(scored, trace.s_critic_norm, 0.0)
    elif config.signal is ScoreSignal.RECON_ONLY:
        trace.gate_open = scored.copy()
        trace.a = np.where(scored, trace.s_topk_norm, 0.0)
    else:  # INTERVAL_ONLY
        trace.gate_open = scored.copy()
        trace.a = np.where(scored, s_iv, 0.0)
    final_th = rolling_thresholds(trace.a, config, config.final_sensitivity)
    trace.anomaly = trace.gate_open & (trace.a > final_th)
    return trace
