"""Scikit-learn style wrappers around the pipeline.

``QuantumGanAnomalyDetector`` is the whole method as one estimator: ``fit``
on a benign multivariate series trains the adversarial forecaster and
calibrates the stage-two scores on a held-out tail; ``predict`` follows the
outlier-detector convention (+1 inlier, -1 anomaly) and ``score_samples``
returns the negated combined score so that larger means more normal.  The
preprocessing steps that are genuinely transformer-shaped are exposed as
transformers.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from qtsad.data import (
    NormalizationStats,
    TimeSeriesTable,
    gini_feature_importance,
    kmeans_downsample,
    make_windows,
    minmax_apply,
    minmax_fit,
)
from qtsad.detect import (
    CalibrationStats,
    DetectorConfig,
    ScoreSignal,
    ScoreTrace,
    ThresholdMode,
    calibrate,
    detect,
)
from qtsad.errors import InputError
from qtsad.model import GanArch
from qtsad.qsim import Encoding, NoiseSpec
from qtsad.trainer import TrainConfig, train


class MinMaxNormalizer(BaseEstimator, TransformerMixin):
    """Per-feature scaling to [0, 1] with training-set statistics.

    Constant features map to 0 and out-of-range values clamp, so transforms
    of unseen data always stay inside the unit interval.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        stats = minmax_fit(X)
        self.min_ = stats.min_
        self.max_ = stats.max_
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "min_")
        X = check_array(X)
        return minmax_apply(X, NormalizationStats(self.min_, self.max_))


class GiniFeatureSelector(BaseEstimator, TransformerMixin):
    """Keep the most informative features ranked by forest impurity decrease."""

    def __init__(self, n_features=16, n_trees=100, max_depth=8, random_state=0):
        self.n_features = n_features
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y).astype(bool)
        table = TimeSeriesTable(
            timestamps=np.arange(X.shape[0], dtype=np.float64),
            values=X,
            feature_names=[str(j) for j in range(X.shape[1])],
            labels=y,
        )
        ranking = gini_feature_importance(
            table, n_trees=self.n_trees, max_depth=self.max_depth, seed=self.random_state
        )
        self.ranking_ = [(int(name), imp) for name, imp in ranking]
        keep = min(self.n_features, X.shape[1])
        self.selected_ = sorted(idx for idx, _ in self.ranking_[:keep])
        self.importances_ = np.zeros(X.shape[1])
        for idx, imp in self.ranking_:
            self.importances_[idx] = imp
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_")
        X = check_array(X)
        return X[:, self.selected_]


class QuantumGanAnomalyDetector(BaseEstimator):
    """Forecast-based anomaly detector with quantum-gated recurrent networks.

    Parameters mirror the pipeline configuration; see the package README for
    the meaning of each knob.  ``fit`` expects a benign series of shape
    (T, d) ordered in time.
    """

    def __init__(
        self,
        window_size=3,
        n_qubits=6,
        n_blocks=12,
        injection_blocks=6,
        hidden_dim=6,
        encoding="arctan",
        epochs=50,
        learning_rate=0.001,
        batch_size=32,
        n_critic=5,
        lambda_gp=10.0,
        lambda_kl=0.1,
        optimizer="adam",
        n_clusters=300,
        calibration_fraction=0.25,
        kappa=2.0,
        k_top=3,
        k_sens=1.5,
        threshold_window=59,
        threshold_mode="centered",
        signal="full",
        noise_enabled=False,
        noise_p_single=0.1,
        noise_p_cnot=0.2,
        random_state=0,
    ):
        self.window_size = window_size
        self.n_qubits = n_qubits
        self.n_blocks = n_blocks
        self.injection_blocks = injection_blocks
        self.hidden_dim = hidden_dim
        self.encoding = encoding
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.lambda_gp = lambda_gp
        self.lambda_kl = lambda_kl
        self.optimizer = optimizer
        self.n_clusters = n_clusters
        self.calibration_fraction = calibration_fraction
        self.kappa = kappa
        self.k_top = k_top
        self.k_sens = k_sens
        self.threshold_window = threshold_window
        self.threshold_mode = threshold_mode
        self.signal = signal
        self.noise_enabled = noise_enabled
        self.noise_p_single = noise_p_single
        self.noise_p_cnot = noise_p_cnot
        self.random_state = random_state

    def _arch(self) -> GanArch:
        return GanArch(
            n_qubits=self.n_qubits,
            n_blocks=self.n_blocks,
            injection_blocks=self.injection_blocks,
            hidden_dim=self.hidden_dim,
            encoding=Encoding(self.encoding),
        )

    def _detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            kappa=self.kappa,
            k_top=self.k_top,
            k_sens=self.k_sens,
            threshold_window=self.threshold_window,
            mode=ThresholdMode(self.threshold_mode),
            signal=ScoreSignal(self.signal),
        )

    def fit(self, X, y=None):
        X = check_array(X)
        w = self.window_size
        if X.shape[0] < 4 * (w + 1):
            raise InputError(
                f"series too short: need at least {4 * (w + 1)} rows for window {w}"
            )
        if self.k_top > X.shape[1]:
            raise InputError(f"k_top={self.k_top} exceeds {X.shape[1]} features")
        stats = minmax_fit(X)
        normalized = minmax_apply(X, stats)

        split = X.shape[0] - int(round(self.calibration_fraction * X.shape[0]))
        split = max(split, 2 * (w + 1))
        train_part = normalized[:split]
        windows = make_windows(train_part, w, stride=w + 1)
        if self.n_clusters and self.n_clusters < windows.n_windows:
            windows = kmeans_downsample(windows, self.n_clusters, seed=self.random_state)

        config = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            n_critic=self.n_critic,
            lambda_gp=self.lambda_gp,
            lambda_kl=self.lambda_kl,
            seed=self.random_state,
            noise=NoiseSpec(
                enabled=self.noise_enabled,
                p_single=self.noise_p_single,
                p_cnot=self.noise_p_cnot,
                seed=self.random_state,
            ),
            optimizer=self.optimizer,
        )
        generator, critic, history = train(config, windows, arch=self._arch())

        calib_start = max(split - w, 0)
        calib_trace = detect(
            normalized[calib_start:],
            generator,
            critic,
            w,
            self._detector_config(),
            calib=None,
        )
        self.normalization_ = stats
        self.generator_ = generator
        self.critic_ = critic
        self.history_ = history
        self.calibration_ = calibrate(calib_trace)
        self.n_features_in_ = X.shape[1]
        return self

    def detect_trace(self, X) -> ScoreTrace:
        """Full per-timestep score trace for a series."""
        check_is_fitted(self, "generator_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise InputError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        normalized = minmax_apply(X, self.normalization_)
        return detect(
            normalized,
            self.generator_,
            self.critic_,
            self.window_size,
            self._detector_config(),
            calib=self.calibration_,
        )

    def score_samples(self, X):
        """Negated combined anomaly score; larger values are more normal."""
        return -self.detect_trace(X).a

    def decision_function(self, X):
        return self.score_samples(X)

    def predict(self, X):
        """+1 for inliers, -1 for flagged anomalies (outlier-detector style)."""
        trace = self.detect_trace(X)
        return np.where(trace.anomaly, -1, 1)
