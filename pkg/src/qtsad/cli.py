"""Command-line pipeline: synth, preprocess, train, calibrate, detect, evaluate, plot.

Exit codes: 0 on success, 2 for configuration/input/parse problems, 3 for
numeric failures during training.  All outputs are deterministic for a
fixed config and seed, so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from qtsad.config import PipelineConfig, load_config
from qtsad.data import (
    NormalizationStats,
    SynthSpec,
    TimeSeriesTable,
    estimate_window_size,
    gini_feature_importance,
    kmeans_downsample,
    load_csv,
    make_windows,
    minmax_apply,
    minmax_fit,
    save_csv,
    synth_generate,
)
from qtsad.detect import (
    CalibrationStats,
    calibrate,
    detect,
    read_trace_csv,
    write_trace_csv,
)
from qtsad.errors import (
    CheckpointError,
    ConfigError,
    InputError,
    NumericError,
    QtsadError,
)
from qtsad.metrics import (
    evaluate_flags,
    format_report_table,
    segments_from_pointwise,
    write_report_csv,
)
from qtsad.svg import render_line_svg, write_svg
from qtsad.trainer import Checkpoint, load_checkpoint, save_checkpoint, train, write_history_csv


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what} path is not configured")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p


def _resolve_window(cfg: PipelineConfig) -> int:
    if isinstance(cfg.data.window, int):
        return cfg.data.window
    test = _require_file(cfg.data.test, "test data (needed to estimate the window)")
    table = load_csv(test, label_column=cfg.data.label_column)
    if table.labels is None:
        raise InputError("window estimation needs a labeled test file")
    third = table.n_steps // 3
    return estimate_window_size(table.labels[:third])


def _stats_sidecar(checkpoint_path: str) -> Path:
    return Path(str(checkpoint_path) + ".stats.json")


def _write_stats_sidecar(path: Path, stats: NormalizationStats, names: list[str], window: int) -> None:
    doc = {
        "feature_names": names,
        "min": [float(v) for v in stats.min_],
        "max": [float(v) for v in stats.max_],
        "window_size": window,
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _read_stats_sidecar(path: Path) -> tuple[NormalizationStats, list[str], int]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        stats = NormalizationStats(np.asarray(doc["min"]), np.asarray(doc["max"]))
        return stats, list(doc["feature_names"]), int(doc["window_size"])
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read stats sidecar {path}: {exc}") from exc


def _load_series(path: str | None, label_column: str, what: str = "series") -> TimeSeriesTable:
    p = _require_file(path, what)
    try:
        return load_csv(p, label_column=label_column)
    except QtsadError:
        return load_csv(p)  # unlabeled file


def cmd_synth(args) -> int:
    cfg = load_config(_require_file(args.config, "config"))
    seed = args.seed if args.seed is not None else cfg.seed
    s = cfg.synth
    spec = SynthSpec(
        n_steps=s.n_steps,
        n_features=s.n_features,
        n_attacks=s.n_attacks,
        duration_min=s.duration_min,
        duration_max=s.duration_max,
        magnitude=s.magnitude,
        period_min=s.period_min,
        period_max=s.period_max,
        amp_min=s.amp_min,
        amp_max=s.amp_max,
        noise_scale=s.noise_scale,
        seed=seed,
        process_seed=s.process_seed,
    )
    table = synth_generate(spec)
    save_csv(table, args.out, label_column=cfg.data.label_column)
    print(f"wrote {table.n_steps} rows x {table.n_features} features to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_config(_require_file(args.config, "config"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_table = _load_series(cfg.data.train, cfg.data.label_column, "training data")
    stats = minmax_fit(train_table)
    selected = list(range(train_table.n_features))

    test_table = None
    if cfg.data.test is not None:
        test_table = load_csv(
            _require_file(cfg.data.test, "test data"), label_column=cfg.data.label_column
        )
        if test_table.labels is not None and cfg.data.feature_count < train_table.n_features:
            third = test_table.n_steps // 3
            validation = TimeSeriesTable(
                timestamps=test_table.timestamps[:third],
                values=minmax_apply(test_table.values[:third], stats),
                feature_names=test_table.feature_names,
                labels=test_table.labels[:third],
            )
            ranking = gini_feature_importance(validation, seed=cfg.seed)
            (out_dir / "feature_ranking.json").write_text(
                json.dumps([[n, v] for n, v in ranking], indent=1) + "\n",
                encoding="utf-8",
            )
            keep = {name for name, _ in ranking[: cfg.data.feature_count]}
            selected = [
                i for i, n in enumerate(train_table.feature_names) if n in keep
            ]

    names = [train_table.feature_names[i] for i in selected]
    sub_stats = NormalizationStats(stats.min_[selected], stats.max_[selected])
    _write_stats_sidecar(
        out_dir / "normalization.json",
        sub_stats,
        names,
        cfg.data.window if isinstance(cfg.data.window, int) else 0,
    )

    def _emit(table: TimeSeriesTable, name: str) -> None:
        out = TimeSeriesTable(
            timestamps=table.timestamps,
            values=minmax_apply(table.values[:, selected], sub_stats),
            feature_names=names,
            labels=table.labels,
        )
        save_csv(out, out_dir / name, label_column=cfg.data.label_column)

    _emit(train_table, "processed_train.csv")
    if test_table is not None:
        _emit(test_table, "processed_test.csv")
    print(f"kept {len(names)} features; outputs in {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(_require_file(args.config, "config"))
    table = _load_series(cfg.data.train, cfg.data.label_column, "training data")
    w = _resolve_window(cfg)
    stats = minmax_fit(table)
    normalized = minmax_apply(table.values, stats)
    windows = make_windows(normalized, w, stride=w + 1)
    if cfg.data.n_clusters < windows.n_windows:
        windows = kmeans_downsample(windows, cfg.data.n_clusters, seed=cfg.seed)
    generator, critic, history = train(cfg.train, windows, arch=cfg.arch)
    rng = np.random.default_rng(cfg.train.seed)
    ckpt = Checkpoint(
        generator=generator,
        critic=critic,
        config=cfg.train,
        rng_state=rng.bit_generator.state,
        epoch=cfg.train.epochs,
    )
    save_checkpoint(ckpt, args.out)
    _write_stats_sidecar(_stats_sidecar(args.out), stats, table.feature_names, w)
    history_path = args.history or str(args.out) + ".history.csv"
    write_history_csv(history, history_path)
    print(f"trained {cfg.train.epochs} epochs; checkpoint at {args.out}")
    return 0


def _load_model(args):
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    ckpt = load_checkpoint(ckpt_path)
    stats, names, w = _read_stats_sidecar(_stats_sidecar(ckpt_path))
    return ckpt, stats, names, w


def cmd_calibrate(args) -> int:
    cfg = load_config(_require_file(args.config, "config"))
    ckpt, stats, _, w = _load_model(args)
    table = _load_series(args.series, cfg.data.label_column)
    normalized = minmax_apply(table.values, stats)
    trace = detect(normalized, ckpt.generator, ckpt.critic, w, cfg.detector, calib=None)
    calib = calibrate(trace)
    doc = {
        "topk_min": calib.topk_min,
        "topk_max": calib.topk_max,
        "critic_min": calib.critic_min,
        "critic_max": calib.critic_max,
    }
    Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"calibration written to {args.out}")
    return 0


def _read_calibration(path) -> CalibrationStats:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return CalibrationStats(
            topk_min=doc["topk_min"],
            topk_max=doc["topk_max"],
            critic_min=doc["critic_min"],
            critic_max=doc["critic_max"],
        )
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read calibration {path}: {exc}") from exc


def cmd_detect(args) -> int:
    cfg = load_config(_require_file(args.config, "config"))
    ckpt, stats, _, w = _load_model(args)
    table = _load_series(args.series, cfg.data.label_column)
    normalized = minmax_apply(table.values, stats)
    if args.calib:
        calib = _read_calibration(args.calib)
    elif table.labels is not None:
        # Calibrate on the leading validation third before scoring the rest.
        third = max(table.n_steps // 3, w + 2)
        head = detect(
            normalized[:third], ckpt.generator, ckpt.critic, w, cfg.detector, calib=None
        )
        calib = calibrate(head)
    else:
        calib = None  # self-calibrate over the scored series
    trace = detect(normalized, ckpt.generator, ckpt.critic, w, cfg.detector, calib=calib)
    write_trace_csv(trace, args.out)
    if args.svg:
        truth = (
            segments_from_pointwise(table.labels) if table.labels is not None else None
        )
        svg = render_line_svg(
            trace.a, truth_segments=truth, flags=trace.anomaly, title="combined anomaly score"
        )
        write_svg(svg, args.svg)
    flagged = int(trace.anomaly.sum())
    print(f"scored {trace.n_steps} steps; {flagged} flagged; trace at {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    trace = read_trace_csv(_require_file(args.trace, "trace"))
    table = load_csv(_require_file(args.series, "labeled series"), label_column=args.label_column)
    if table.labels is None:
        raise InputError("evaluation needs a labeled series")
    if table.n_steps != trace.n_steps:
        raise InputError(
            f"trace has {trace.n_steps} rows but series has {table.n_steps}"
        )
    report = evaluate_flags(trace.anomaly, table.labels)
    print(format_report_table(report))
    if args.out:
        write_report_csv(report, str(args.out) + ".csv")
        Path(str(args.out) + ".json").write_text(
            json.dumps(report.as_dict(), sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )
    return 0


def cmd_plot(args) -> int:
    trace = read_trace_csv(_require_file(args.trace, "trace"))
    field = {
        "a": trace.a,
        "s_iv": trace.s_iv,
        "mean_logvar": trace.mean_logvar,
    }[args.field]
    truth = None
    if args.series:
        table = load_csv(_require_file(args.series, "labeled series"), label_column=args.label_column)
        if table.labels is not None:
            truth = segments_from_pointwise(table.labels)
    svg = render_line_svg(field, truth_segments=truth, flags=trace.anomaly, title=args.field)
    write_svg(svg, args.out)
    print(f"plot written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qtsad",
        description="Quantum-gated recurrent WGAN anomaly detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled series")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="normalize and rank/select features")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the adversarial forecaster")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="loss history CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="compute score normalization statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series", required=True, help="validation series CSV")
    p.add_argument("--out", required=True, help="calibration JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="score a series and emit the trace")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--svg", default=None, help="optional score plot path")
    p.add_argument("--calib", default=None, help="calibration JSON from `calibrate`")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score a trace against ground truth")
    p.add_argument("--trace", required=True)
    p.add_argument("--series", required=True, help="labeled series CSV")
    p.add_argument("--label-column", default="label")
    p.add_argument("--out", default=None, help="report path prefix")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render a trace field as SVG")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--field", choices=("a", "s_iv", "mean_logvar"), default="a")
    p.add_argument("--series", default=None, help="labeled series for truth bands")
    p.add_argument("--label-column", default="label")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (QtsadError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
