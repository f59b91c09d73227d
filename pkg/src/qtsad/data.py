"""Ingestion, normalization, windowing, downsampling, and synthetic data.

CSV layout: one header row of column names, then numeric rows.  An optional
time column (named ``time`` or ``timestamp``) must be strictly increasing;
an optional label column holds 0/1 attack flags.  All remaining columns are
features.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from qtsad.errors import ConfigError, CsvParseError, InputError

_TIME_NAMES = ("time", "timestamp")


@dataclass
class TimeSeriesTable:
    timestamps: np.ndarray  # (T,) strictly increasing
    values: np.ndarray  # (T, d)
    feature_names: list[str]
    labels: np.ndarray | None = None  # (T,) bool, True = attack

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        t = self.timestamps.shape[0]
        if self.values.shape[0] != t:
            raise InputError("timestamps and values disagree on row count")
        if self.values.ndim != 2 or self.values.shape[1] != len(self.feature_names):
            raise InputError("values must be (T, d) matching feature_names")
        if t > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise InputError("timestamps must be strictly increasing")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape[0] != t:
                raise InputError("labels and values disagree on row count")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


def load_csv(path, label_column: str | None = None) -> TimeSeriesTable:
    """Parse a CSV file into a table; offending rows are reported 1-based."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file") from None
        header = [name.strip() for name in header]
        time_idx = next(
            (i for i, name in enumerate(header) if name.lower() in _TIME_NAMES), None
        )
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise CsvParseError(f"label column {label_column!r} not in header")
            label_idx = header.index(label_column)
        feature_idx = [
            i for i in range(len(header)) if i != time_idx and i != label_idx
        ]
        rows: list[list[float]] = []
        times: list[float] = []
        labels: list[bool] = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"expected {len(header)} cells, got {len(row)}", row=row_no
                )
            try:
                parsed = [float(row[i]) for i in feature_idx]
                t_val = float(row[time_idx]) if time_idx is not None else float(len(rows))
                if label_idx is not None:
                    lbl = float(row[label_idx])
                    if lbl not in (0.0, 1.0):
                        raise CsvParseError(f"label must be 0 or 1, got {row[label_idx]!r}", row=row_no)
                    labels.append(bool(lbl))
            except ValueError as exc:
                raise CsvParseError(f"non-numeric cell ({exc})", row=row_no) from None
            rows.append(parsed)
            times.append(t_val)
        names = [header[i] for i in feature_idx]
        times_arr = np.asarray(times)
        if times_arr.size > 1 and not np.all(np.diff(times_arr) > 0):
            bad = int(np.flatnonzero(np.diff(times_arr) <= 0)[0])
            raise CsvParseError("timestamps not strictly increasing", row=bad + 3)
        return TimeSeriesTable(
            timestamps=times_arr,
            values=np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names)),
            feature_names=names,
            labels=np.asarray(labels, dtype=bool) if label_idx is not None else None,
        )


def save_csv(table: TimeSeriesTable, path, label_column: str = "label") -> None:
    header = ["time", *table.feature_names]
    if table.labels is not None:
        header.append(label_column)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(table.n_steps):
            cells = [repr(float(table.timestamps[i]))]
            cells += [repr(float(v)) for v in table.values[i]]
            if table.labels is not None:
                cells.append(str(int(table.labels[i])))
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# Normalization


@dataclass
class NormalizationStats:
    """Per-feature training-set minimum and maximum."""

    min_: np.ndarray
    max_: np.ndarray

    def __post_init__(self) -> None:
        self.min_ = np.asarray(self.min_, dtype=np.float64)
        self.max_ = np.asarray(self.max_, dtype=np.float64)
        if np.any(self.max_ < self.min_):
            raise InputError("normalization max must be >= min per feature")


def minmax_fit(values: np.ndarray | TimeSeriesTable) -> NormalizationStats:
    v = values.values if isinstance(values, TimeSeriesTable) else np.asarray(values)
    return NormalizationStats(min_=v.min(axis=0), max_=v.max(axis=0))


def minmax_apply(values, stats: NormalizationStats):
    """Scale to [0, 1]; constant features map to 0, out-of-range values clamp."""
    if isinstance(values, TimeSeriesTable):
        return TimeSeriesTable(
            timestamps=values.timestamps,
            values=minmax_apply(values.values, stats),
            feature_names=values.feature_names,
            labels=values.labels,
        )
    v = np.asarray(values, dtype=np.float64)
    span = stats.max_ - stats.min_
    safe = np.where(span > 0, span, 1.0)
    scaled = (v - stats.min_) / safe
    scaled = np.where(span > 0, scaled, 0.0)
    return np.clip(scaled, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Windowing


class WindowProvenance(enum.Enum):
    RAW = "raw"
    CLUSTER_CENTROIDS = "cluster_centroids"


@dataclass
class WindowSet:
    """Stacked windows of w context rows plus one target row each."""

    windows: np.ndarray  # (N, w+1, d)
    stride: int
    provenance: WindowProvenance = WindowProvenance.RAW

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def context_len(self) -> int:
        return self.windows.shape[1] - 1

    def target_row(self, i: int) -> int:
        """Source-table row index of window i's target (raw windows only)."""
        return i * self.stride + self.context_len


def make_windows(values: np.ndarray | TimeSeriesTable, w: int, stride: int) -> WindowSet:
    v = values.values if isinstance(values, TimeSeriesTable) else np.asarray(values)
    if w < 1 or stride < 1:
        raise ConfigError("window size and stride must be positive")
    t = v.shape[0]
    if t < w + 1:
        raise InputError(f"need at least {w + 1} rows, got {t}")
    count = (t - (w + 1)) // stride + 1
    idx = np.arange(count) * stride
    windows = np.stack([v[i : i + w + 1] for i in idx])
    return WindowSet(windows=windows, stride=stride)


# ---------------------------------------------------------------------------
# K-means downsampling


def _kmeans_pp_seeds(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted seeding: each new seed drawn proportional to D^2."""
    n = x.shape[0]
    seeds = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    seeds[0] = x[first]
    d2 = np.sum((x - seeds[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # All remaining points coincide with a seed; pick deterministically.
            seeds[j] = x[j % n]
            continue
        r = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), r))
        idx = min(idx, n - 1)
        seeds[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - seeds[j]) ** 2, axis=1))
    return seeds


def lloyd_kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 300,
    track_inertia: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from distance-weighted seeds until assignments repeat.

    Returns (centroids, assignments, per-iteration within-cluster sums of
    squares when tracked).  Empty clusters keep their previous centroid.
    """
    n = x.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"cluster count must be in [1, {n}], got {k}")
    centroids = _kmeans_pp_seeds(x, k, rng)
    assign = np.full(n, -1)
    inertia: list[float] = []
    for _ in range(max_iter):
        d2 = (
            np.sum(x * x, axis=1)[:, None]
            - 2.0 * x @ centroids.T
            + np.sum(centroids * centroids, axis=1)[None, :]
        )
        new_assign = np.argmin(d2, axis=1)
        if track_inertia:
            inertia.append(float(np.maximum(d2[np.arange(n), new_assign], 0.0).sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if members.shape[0]:
                centroids[j] = members.mean(axis=0)
    return centroids, assign, inertia


def kmeans_downsample(windows: WindowSet, n: int, seed: int = 0) -> WindowSet:
    """Replace the window set by the centroids of ``n`` clusters of flattened windows."""
    flat = windows.windows.reshape(windows.n_windows, -1)
    rng = np.random.default_rng(seed)
    centroids, _, _ = lloyd_kmeans(flat, n, rng)
    return WindowSet(
        windows=centroids.reshape((n,) + windows.windows.shape[1:]),
        stride=windows.stride,
        provenance=WindowProvenance.CLUSTER_CENTROIDS,
    )


# ---------------------------------------------------------------------------
# Feature ranking


def gini_feature_importance(
    table: TimeSeriesTable,
    n_trees: int = 100,
    max_depth: int = 8,
    seed: int = 0,
) -> list[tuple[str, float]]:
    """Rank features by mean impurity decrease over a bootstrapped forest.

    Trains depth-limited classification trees on bootstrap samples with
    sqrt(d) features per split; importances are normalized to sum to one
    and returned in descending order.
    """
    from sklearn.ensemble import RandomForestClassifier

    if table.labels is None:
        raise InputError("feature ranking requires labels")
    y = table.labels.astype(int)
    if len(np.unique(y)) < 2:
        raise InputError("labels contain a single class; ranking is degenerate")
    forest = RandomForestClassifier(
        n_estimators=n_trees,
        max_depth=max_depth,
        max_features="sqrt",
        bootstrap=True,
        random_state=seed,
        n_jobs=1,
    )
    forest.fit(table.values, y)
    order = np.argsort(-forest.feature_importances_)
    return [(table.feature_names[i], float(forest.feature_importances_[i])) for i in order]


# ---------------------------------------------------------------------------
# Window-size estimation


def attack_segments(labels: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (start, end) index pairs."""
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        return []
    padded = np.concatenate([[False], labels, [False]])
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def estimate_window_size(labels: np.ndarray) -> int:
    """Probability-weighted geometric mean of attack and benign durations.

    With mean attack length mu_d over A segments in N steps, the estimate is
    round(mu_d**p * g**(1-p)) with p = A*mu_d/N and g = N/A - mu_d, floored
    at 2.  Requires at least one attack segment and one benign step.
    """
    labels = np.asarray(labels, dtype=bool)
    segments = attack_segments(labels)
    if not segments:
        raise InputError("no attack segments; supply the window size manually")
    if labels.all():
        raise InputError("no benign gap; supply the window size manually")
    n_total = labels.size
    n_attacks = len(segments)
    mu_d = float(np.mean([e - s + 1 for s, e in segments]))
    p = n_attacks * mu_d / n_total
    g = n_total / n_attacks - mu_d
    w = round(mu_d**p * g ** (1.0 - p))
    return max(int(w), 2)


# ---------------------------------------------------------------------------
# Synthetic generator


class AttackKind(enum.Enum):
    LEVEL_JUMP = "level_jump"  # set-point style constant offset
    OVERRIDE_PLATEAU = "override_plateau"  # control-output style hold
    REPLAY = "replay"  # stealth: repeat an earlier benign stretch
    DRIFT_RAMP = "drift_ramp"  # gradual linear offset


_ATTACK_CYCLE = (
    AttackKind.LEVEL_JUMP,
    AttackKind.OVERRIDE_PLATEAU,
    AttackKind.REPLAY,
    AttackKind.DRIFT_RAMP,
)


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    feature: int
    start: int
    length: int
    magnitude: float


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic plant-like series generator."""

    n_steps: int
    n_features: int
    n_attacks: int = 0
    attacks: tuple[AttackSpec, ...] | None = None  # overrides n_attacks when given
    duration_min: int = 50
    duration_max: int = 300
    magnitude: float = 0.4
    period_min: float = 60.0
    period_max: float = 500.0
    amp_min: float = 0.05
    amp_max: float = 0.15
    noise_scale: float = 0.01
    seed: int = 0
    process_seed: int | None = None  # baseline regime; defaults to seed

    def __post_init__(self) -> None:
        if self.n_steps < 1 or self.n_features < 1:
            raise ConfigError("n_steps and n_features must be positive")
        if self.n_attacks < 0:
            raise ConfigError("n_attacks must be >= 0")
        if not 1 <= self.duration_min <= self.duration_max:
            raise ConfigError("need 1 <= duration_min <= duration_max")
        if not 0 < self.period_min <= self.period_max:
            raise ConfigError("need 0 < period_min <= period_max")


def _baseline(spec: SynthSpec) -> np.ndarray:
    """Per-feature mixture of two sinusoids plus AR(1) noise around 0.5."""
    proc = np.random.default_rng(
        spec.seed if spec.process_seed is None else spec.process_seed
    )
    noise_rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.n_steps)
    values = np.empty((spec.n_steps, spec.n_features))
    for j in range(spec.n_features):
        base = np.full(spec.n_steps, 0.5)
        for _ in range(2):
            period = proc.uniform(spec.period_min, spec.period_max)
            amp = proc.uniform(spec.amp_min, spec.amp_max)
            phase = proc.uniform(0, 2 * math.pi)
            base += amp * np.sin(2 * math.pi * t / period + phase)
        ar = np.empty(spec.n_steps)
        prev = 0.0
        shocks = spec.noise_scale * noise_rng.standard_normal(spec.n_steps)
        for i in range(spec.n_steps):
            prev = 0.9 * prev + shocks[i]
            ar[i] = prev
        values[:, j] = base + ar
    return values


def _place_attacks(spec: SynthSpec, rng: np.random.Generator) -> list[AttackSpec]:
    if spec.attacks is not None:
        return list(spec.attacks)
    if spec.n_attacks == 0:
        return []
    margin = spec.duration_max + 10  # keep an untouched prefix for replay sources
    usable = spec.n_steps - margin
    slot = usable // spec.n_attacks
    if slot <= spec.duration_max:
        raise ConfigError(
            f"{spec.n_attacks} attacks of up to {spec.duration_max} steps "
            f"do not fit in {spec.n_steps} steps"
        )
    attacks = []
    for i in range(spec.n_attacks):
        kind = _ATTACK_CYCLE[i % len(_ATTACK_CYCLE)]
        length = int(rng.integers(spec.duration_min, spec.duration_max + 1))
        lo = margin + i * slot
        start = int(rng.integers(lo, lo + slot - length))
        feature = int(rng.integers(spec.n_features))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        attacks.append(AttackSpec(kind, feature, start, length, sign * spec.magnitude))
    return attacks


def synth_generate(spec: SynthSpec) -> TimeSeriesTable:
    """Deterministic synthetic series with exactly-delimited labeled attacks."""
    values = _baseline(spec)
    rng = np.random.default_rng((spec.seed, 0x5EED))
    labels = np.zeros(spec.n_steps, dtype=bool)
    attacks = _place_attacks(spec, rng)
    for atk in attacks:
        end = atk.start + atk.length  # exclusive
        if atk.start < 0 or end > spec.n_steps:
            raise ConfigError(f"attack [{atk.start}, {end}) exceeds the series")
        if atk.feature < 0 or atk.feature >= spec.n_features:
            raise ConfigError(f"attack feature {atk.feature} out of range")
        seg = slice(atk.start, end)
        if atk.kind is AttackKind.LEVEL_JUMP:
            values[seg, atk.feature] += atk.magnitude
        elif atk.kind is AttackKind.OVERRIDE_PLATEAU:
            hold = float(np.mean(values[:, atk.feature])) + atk.magnitude
            values[seg, atk.feature] = hold
        elif atk.kind is AttackKind.REPLAY:
            src = slice(0, atk.length)  # earliest stretch is benign by placement
            values[seg, atk.feature] = values[src, atk.feature]
        else:  # DRIFT_RAMP
            values[seg, atk.feature] += np.linspace(0.0, atk.magnitude, atk.length)
        labels[seg] = True
    return TimeSeriesTable(
        timestamps=np.arange(spec.n_steps, dtype=np.float64),
        values=values,
        feature_names=[f"f{j}" for j in range(spec.n_features)],
        labels=labels,
    )
