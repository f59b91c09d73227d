"""Pipeline configuration: TOML file with environment-variable overrides.

Sections: ``[data]``, ``[model]``, ``[train]``, ``[noise]``, ``[detector]``,
``[synth]`` plus a top-level ``seed``.  Any value can be overridden through
``QTSAD_<SECTION>_<KEY>`` (or ``QTSAD_SEED``), e.g.::

    QTSAD_TRAIN_EPOCHS=10 qtsad train --config run.toml --out model.ckpt

Numeric ranges are validated at parse time; file paths are checked by the
commands that use them.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from qtsad.detect import DetectorConfig, ScoreSignal, ThresholdMode
from qtsad.errors import ConfigError
from qtsad.model import GanArch
from qtsad.qsim import Encoding, NoiseSpec
from qtsad.trainer import TrainConfig

_ENV_PREFIX = "QTSAD_"
_SECTIONS = ("data", "model", "train", "noise", "detector", "synth")


@dataclass
class DataConfig:
    train: str | None = None
    test: str | None = None
    label_column: str = "label"
    feature_count: int = 16
    n_clusters: int = 300
    window: int | str = 3  # integer, or "estimate" to derive from validation labels

    def __post_init__(self) -> None:
        if self.feature_count < 1 or self.n_clusters < 1:
            raise ConfigError("feature_count and n_clusters must be positive")
        if isinstance(self.window, str):
            if self.window != "estimate":
                raise ConfigError(f'window must be an integer or "estimate", got {self.window!r}')
        elif self.window < 1:
            raise ConfigError("window must be positive")


@dataclass
class SynthConfig:
    n_steps: int = 5000
    n_features: int = 4
    n_attacks: int = 6
    duration_min: int = 50
    duration_max: int = 300
    magnitude: float = 0.4
    period_min: float = 60.0
    period_max: float = 500.0
    amp_min: float = 0.05
    amp_max: float = 0.15
    noise_scale: float = 0.01
    process_seed: int | None = None


@dataclass
class PipelineConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    arch: GanArch = field(default_factory=GanArch)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


def _coerce(raw: str, like) -> object:
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean override {raw!r}")
    if isinstance(like, int) and not isinstance(like, bool):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"cannot parse integer override {raw!r}") from exc
    if isinstance(like, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"cannot parse float override {raw!r}") from exc
    return raw


def _apply_env_overrides(doc: dict, environ=None) -> dict:
    env = os.environ if environ is None else environ
    for name, raw in env.items():
        if not name.startswith(_ENV_PREFIX):
            continue
        rest = name[len(_ENV_PREFIX) :].lower()
        if rest == "seed":
            doc["seed"] = _coerce(raw, doc.get("seed", 0))
            continue
        section, _, key = rest.partition("_")
        if section in _SECTIONS and key:
            table = doc.setdefault(section, {})
            table[key] = _coerce(raw, table.get(key, ""))
    return doc


def _take(table: dict, cls, **extra):
    try:
        return cls(**{**table, **extra})
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__} settings: {exc}") from exc


def load_config(path, environ=None) -> PipelineConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    doc = _apply_env_overrides(doc, environ)
    for section in doc:
        if section not in _SECTIONS and section != "seed":
            raise ConfigError(f"unknown config section {section!r}")
    seed = int(doc.get("seed", 0))

    data = _take(dict(doc.get("data", {})), DataConfig)
    synth = _take(dict(doc.get("synth", {})), SynthConfig)

    model_tbl = dict(doc.get("model", {}))
    if "encoding" in model_tbl:
        try:
            model_tbl["encoding"] = Encoding(model_tbl["encoding"])
        except ValueError as exc:
            raise ConfigError(f"unknown encoding {model_tbl['encoding']!r}") from exc
    arch = _take(model_tbl, GanArch)

    noise_tbl = dict(doc.get("noise", {}))
    noise_tbl.setdefault("seed", seed)
    noise = _take(noise_tbl, NoiseSpec)

    train_tbl = dict(doc.get("train", {}))
    train_tbl.setdefault("epochs", 50)
    train = _take(train_tbl, TrainConfig, seed=seed, noise=noise)

    det_tbl = dict(doc.get("detector", {}))
    if "mode" in det_tbl:
        try:
            det_tbl["mode"] = ThresholdMode(det_tbl["mode"])
        except ValueError as exc:
            raise ConfigError(f"unknown threshold mode {det_tbl['mode']!r}") from exc
    if "signal" in det_tbl:
        try:
            det_tbl["signal"] = ScoreSignal(det_tbl["signal"])
        except ValueError as exc:
            raise ConfigError(f"unknown signal {det_tbl['signal']!r}") from exc
    detector = _take(det_tbl, DetectorConfig)

    return PipelineConfig(
        seed=seed, data=data, arch=arch, train=train, detector=detector, synth=synth
    )
