"""Quantum-gated recurrent WGAN forecasting with gated anomaly scoring.

The package trains a hybrid quantum-classical adversarial forecaster over
multivariate time series and flags anomalies through a two-stage gated
scoring pipeline evaluated with segment-aware metrics.  The top-level
estimators follow scikit-learn conventions; the underlying simulator,
layers, model, trainer, data, detection, and metrics modules are importable
directly for finer control.
"""

from qtsad.estimator import (
    GiniFeatureSelector,
    MinMaxNormalizer,
    QuantumGanAnomalyDetector,
)

__version__ = "0.1.0"

__all__ = [
    "GiniFeatureSelector",
    "MinMaxNormalizer",
    "QuantumGanAnomalyDetector",
    "__version__",
]
