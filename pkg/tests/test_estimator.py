"""Scikit-learn facing wrappers."""
import numpy as np
import pytest
from sklearn.base import clone

from qtsad import GiniFeatureSelector, MinMaxNormalizer, QuantumGanAnomalyDetector
from qtsad.data import SynthSpec, synth_generate
from qtsad.errors import InputError


class TestMinMaxNormalizer:
    def test_fit_transform_unit_range(self, rng):
        x = rng.uniform(-5, 9, (50, 3))
        out = MinMaxNormalizer().fit_transform(x)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.min(axis=0) == pytest.approx(np.zeros(3))

    def test_transform_clamps_new_data(self, rng):
        x = rng.uniform(0, 1, (20, 2))
        norm = MinMaxNormalizer().fit(x)
        out = norm.transform(np.asarray([[99.0, -99.0]]))
        assert out.tolist() == [[1.0, 0.0]]

    def test_clone_and_get_params(self):
        norm = MinMaxNormalizer()
        assert clone(norm).get_params() == norm.get_params()


class TestGiniFeatureSelector:
    def test_selects_informative_columns(self, rng):
        n = 300
        y = rng.random(n) < 0.5
        x = np.column_stack(
            [rng.standard_normal(n), y + 0.05 * rng.standard_normal(n), rng.standard_normal(n)]
        )
        sel = GiniFeatureSelector(n_features=1, random_state=0).fit(x, y)
        assert sel.selected_ == [1]
        assert sel.transform(x).shape == (n, 1)

    def test_importances_normalized(self, rng):
        n = 200
        y = rng.random(n) < 0.5
        x = np.column_stack([y + 0.1 * rng.standard_normal(n), rng.standard_normal(n)])
        sel = GiniFeatureSelector(n_features=2, random_state=1).fit(x, y)
        assert sel.importances_.sum() == pytest.approx(1.0)


@pytest.fixture(scope="module")
def fitted_detector():
    train_tbl = synth_generate(
        SynthSpec(n_steps=900, n_features=2, n_attacks=0, seed=21, process_seed=33)
    )
    det = QuantumGanAnomalyDetector(
        window_size=3,
        n_qubits=2,
        n_blocks=2,
        injection_blocks=1,
        hidden_dim=2,
        epochs=4,
        learning_rate=2e-3,
        batch_size=16,
        n_critic=2,
        lambda_gp=1.0,
        n_clusters=48,
        k_top=2,
        threshold_window=99,
        random_state=7,
    )
    return det.fit(train_tbl.values)


class TestDetectorEstimator:
    def test_fit_sets_attributes(self, fitted_detector):
        det = fitted_detector
        assert hasattr(det, "generator_")
        assert hasattr(det, "critic_")
        assert hasattr(det, "calibration_")
        assert det.n_features_in_ == 2
        assert len(det.history_) == det.epochs

    def test_predict_outlier_convention(self, fitted_detector):
        test_tbl = synth_generate(
            SynthSpec(n_steps=400, n_features=2, n_attacks=0, seed=22, process_seed=33)
        )
        pred = fitted_detector.predict(test_tbl.values)
        assert pred.shape == (400,)
        assert set(np.unique(pred)).issubset({-1, 1})

    def test_score_samples_sign(self, fitted_detector):
        test_tbl = synth_generate(
            SynthSpec(n_steps=400, n_features=2, n_attacks=0, seed=23, process_seed=33)
        )
        scores = fitted_detector.score_samples(test_tbl.values)
        trace = fitted_detector.detect_trace(test_tbl.values)
        assert np.array_equal(scores, -trace.a)

    def test_wrong_width_rejected(self, fitted_detector):
        with pytest.raises(InputError):
            fitted_detector.predict(np.zeros((50, 5)))

    def test_unfitted_raises(self):
        det = QuantumGanAnomalyDetector()
        with pytest.raises(Exception):
            det.predict(np.zeros((50, 2)))

    def test_clone_preserves_params(self):
        det = QuantumGanAnomalyDetector(window_size=5, epochs=3, kappa=1.25)
        cloned = clone(det)
        assert cloned.get_params() == det.get_params()
        assert cloned.kappa == 1.25

    def test_short_series_rejected(self):
        det = QuantumGanAnomalyDetector(window_size=10, epochs=1)
        with pytest.raises(InputError):
            det.fit(np.zeros((12, 2)))
