"""End-to-end command-line pipeline and its exit-code contract."""
import json
from pathlib import Path

import numpy as np
import pytest

from qtsad.cli import main

CONFIG = """
seed = 13

[data]
train = "{train}"
n_clusters = 24
window = 3

[model]
n_qubits = 2
n_blocks = 2
injection_blocks = 1
hidden_dim = 2

[train]
epochs = 2
learning_rate = 0.002
batch_size = 16
n_critic = 2
lambda_gp = 1.0

[detector]
k_top = 2
threshold_window = 9

[synth]
n_steps = 420
n_features = 2
n_attacks = 2
duration_min = 15
duration_max = 30
magnitude = 0.5
process_seed = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    train_csv = root / "train.csv"
    config = root / "run.toml"
    config.write_text(CONFIG.format(train=str(train_csv).replace("\\", "/")))
    # benign training series via the synth command itself
    benign_cfg = root / "benign.toml"
    benign_cfg.write_text(
        CONFIG.format(train=str(train_csv).replace("\\", "/")).replace(
            "n_attacks = 2", "n_attacks = 0"
        )
    )
    assert main(["synth", "--config", str(benign_cfg), "--out", str(train_csv)]) == 0
    return root, config


class TestSynth:
    def test_writes_labeled_csv(self, workspace, tmp_path):
        root, config = workspace
        out = tmp_path / "series.csv"
        assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "time,f0,f1,label"
        assert len(lines) == 421

    def test_zero_attthan_all_benign(self, workspace, tmp_path):
        root, config = workspace
        out = tmp_path / "benign.csv"
        text = config.read_text().replace("n_attacks = 2", "n_attacks = 0")
        cfg2 = tmp_path / "benign.toml"
        cfg2.write_text(text)
        assert main(["synth", "--config", str(cfg2), "--out", str(out)]) == 0
        labels = [line.rsplit(",", 1)[1] for line in out.read_text().strip().splitlines()[1:]]
        assert set(labels) == {"0"}

    def test_bad_spec_exits_2(self, workspace, tmp_path):
        root, config = workspace
        text = config.read_text().replace("n_steps = 420", "n_steps = 40")
        cfg2 = tmp_path / "bad.toml"
        cfg2.write_text(text)
        assert main(["synth", "--config", str(cfg2), "--out", str(tmp_path / "x.csv")]) == 2

    def test_deterministic_output(self, workspace, tmp_path):
        root, config = workspace
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["synth", "--config", str(config), "--out", str(a)]) == 0
        assert main(["synth", "--config", str(config), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


@pytest.fixture(scope="module")
def trained(workspace, tmp_path_factory):
    root, config = workspace
    out = tmp_path_factory.mktemp("model") / "model.ckpt"
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    return out


class TestTrain:
    def test_outputs_exist(self, trained):
        assert trained.is_file()
        assert Path(str(trained) + ".stats.json").is_file()
        history = Path(str(trained) + ".history.csv").read_text().strip().splitlines()
        assert history[0] == "epoch,critic_loss,gp,gen_loss,kl,var"
        assert len(history) == 3

    def test_deterministic_checkpoints(self, workspace, tmp_path):
        root, config = workspace
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        assert main(["train", "--config", str(config), "--out", str(a)]) == 0
        assert main(["train", "--config", str(config), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_data_exits_2(self, workspace, tmp_path):
        root, config = workspace
        text = config.read_text().replace("train.csv", "missing.csv")
        cfg2 = tmp_path / "missing.toml"
        cfg2.write_text(text)
        assert main(["train", "--config", str(cfg2), "--out", str(tmp_path / "m.ckpt")]) == 2

    def test_env_override_epochs(self, workspace, tmp_path, monkeypatch):
        root, config = workspace
        monkeypatch.setenv("QTSAD_TRAIN_EPOCHS", "1")
        out = tmp_path / "short.ckpt"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        history = Path(str(out) + ".history.csv").read_text().strip().splitlines()
        assert len(history) == 2


@pytest.fixture(scope="module")
def attacked_series(workspace, tmp_path_factory):
    root, config = workspace
    out = tmp_path_factory.mktemp("series") / "attacked.csv"
    assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
    return out


class TestDetectEvaluatePlot:
    def test_detect_writes_trace_and_svg(self, workspace, trained, attacked_series, tmp_path):
        root, config = workspace
        trace = tmp_path / "trace.csv"
        svg = tmp_path / "trace.svg"
        code = main([
            "detect", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(attacked_series), "--out", str(trace), "--svg", str(svg),
        ])
        assert code == 0
        header = trace.read_text().splitlines()[0]
        assert header == "t,s_iv,s_topk_raw,s_topk_norm,s_critic_raw,s_critic_norm,a,gate,anomaly,mean_logvar"
        assert svg.read_text().startswith("<svg")

    def test_detect_deterministic(self, workspace, trained, attacked_series, tmp_path):
        root, config = workspace
        t1, t2 = tmp_path / "t1.csv", tmp_path / "t2.csv"
        for t in (t1, t2):
            assert main([
                "detect", "--config", str(config), "--checkpoint", str(trained),
                "--series", str(attacked_series), "--out", str(t),
            ]) == 0
        assert t1.read_bytes() == t2.read_bytes()

    def test_detect_short_series_exits_2(self, workspace, trained, tmp_path):
        root, config = workspace
        short = tmp_path / "short.csv"
        short.write_text("time,f0,f1\n0,0.1,0.2\n1,0.1,0.2\n")
        assert main([
            "detect", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(short), "--out", str(tmp_path / "t.csv"),
        ]) == 2

    def test_calibrate_then_detect(self, workspace, trained, attacked_series, tmp_path):
        root, config = workspace
        calib = tmp_path / "calib.json"
        assert main([
            "calibrate", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(attacked_series), "--out", str(calib),
        ]) == 0
        doc = json.loads(calib.read_text())
        assert set(doc) == {"topk_min", "topk_max", "critic_min", "critic_max"}
        trace = tmp_path / "trace.csv"
        assert main([
            "detect", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(attacked_series), "--out", str(trace), "--calib", str(calib),
        ]) == 0

    def test_evaluate_outputs_report(self, workspace, trained, attacked_series, tmp_path):
        root, config = workspace
        trace = tmp_path / "trace.csv"
        assert main([
            "detect", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(attacked_series), "--out", str(trace),
        ]) == 0
        out = tmp_path / "report"
        assert main([
            "evaluate", "--trace", str(trace), "--series", str(attacked_series),
            "--out", str(out),
        ]) == 0
        report = json.loads(Path(str(out) + ".json").read_text())
        assert set(report) == {"etap", "etar", "taf1", "point_precision", "point_recall", "point_f1"}
        csv_lines = Path(str(out) + ".csv").read_text().strip().splitlines()
        assert csv_lines[0].startswith("etap,etar,taf1")

    def test_evaluate_length_mismatch_exits_2(self, workspace, trained, attacked_series, tmp_path):
        root, config = workspace
        trace = tmp_path / "trace.csv"
        assert main([
            "detect", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(attacked_series), "--out", str(trace),
        ]) == 0
        truncated = tmp_path / "short_series.csv"
        lines = Path(attacked_series).read_text().strip().splitlines()
        truncated.write_text("\n".join(lines[:-10]) + "\n")
        assert main(["evaluate", "--trace", str(trace), "--series", str(truncated)]) == 2

    def test_plot_fields(self, workspace, trained, attacked_series, tmp_path):
        root, config = workspace
        trace = tmp_path / "trace.csv"
        assert main([
            "detect", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(attacked_series), "--out", str(trace),
        ]) == 0
        for field in ("a", "mean_logvar"):
            out = tmp_path / f"{field}.svg"
            assert main([
                "plot", "--trace", str(trace), "--out", str(out),
                "--field", field, "--series", str(attacked_series),
            ]) == 0
            assert out.read_text().startswith("<svg")

    def test_plot_deterministic(self, workspace, trained, attacked_series, tmp_path):
        root, config = workspace
        trace = tmp_path / "trace.csv"
        assert main([
            "detect", "--config", str(config), "--checkpoint", str(trained),
            "--series", str(attacked_series), "--out", str(trace),
        ]) == 0
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        for out in (a, b):
            assert main(["plot", "--trace", str(trace), "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestPreprocess:
    def test_normalizes_and_writes_sidecars(self, workspace, tmp_path):
        root, config = workspace
        out_dir = tmp_path / "prep"
        assert main(["preprocess", "--config", str(config), "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "processed_train.csv").is_file()
        stats = json.loads((out_dir / "normalization.json").read_text())
        assert set(stats) >= {"feature_names", "min", "max"}


class TestCheckpointGuards:
    def test_corrupt_checkpoint_exits_2(self, workspace, tmp_path):
        root, config = workspace
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"QTSADCKP" + b"\x01\x00\x00\x00" + b"\xff" * 32)
        series = tmp_path / "s.csv"
        series.write_text("time,f0,f1\n" + "\n".join(f"{i},0.5,0.5" for i in range(30)) + "\n")
        assert main([
            "detect", "--config", str(config), "--checkpoint", str(bad),
            "--series", str(series), "--out", str(tmp_path / "t.csv"),
        ]) == 2
