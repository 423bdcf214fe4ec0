import json
import os

import numpy as np
import pytest

from specguard import cli
from specguard.config import (ConfigError, load_config, load_preset,
                              parse_config_text)


class TestConfigParsing:
    def test_defaults_filled(self):
        cfg = parse_config_text("")
        assert cfg["train.momentum"] == 0.9
        assert cfg["reg.mode"] == "none"

    def test_values_and_comments(self):
        cfg = parse_config_text(
            "train.lr = 0.5  # inline comment\n"
            "# full comment\n"
            "run.seeds = 3,4,5\n"
            "model.hidden = 16,8\n")
        assert cfg["train.lr"] == 0.5
        assert cfg["run.seeds"] == [3, 4, 5]
        assert cfg["model.hidden"] == [16, 8]

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="train.bogus"):
            parse_config_text("train.bogus = 1")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_config_text("train.lr = 0.1\ntrain.epochs = soon")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("just some text")

    def test_burn_in_fraction_vs_absolute(self):
        cfg = parse_config_text("train.epochs = 200\nreg.burn_in = 0.8\n")
        assert cfg.burn_in_epochs() == 160
        cfg = parse_config_text("train.epochs = 200\nreg.burn_in = 50\n")
        assert cfg.burn_in_epochs() == 50

    def test_echo_roundtrip(self):
        cfg = parse_config_text("train.lr = 0.25\nrun.seeds = 1,2\n")
        cfg2 = parse_config_text(cfg.echo())
        assert cfg2.values == cfg.values

    def test_presets_all_load(self):
        for name in ("xor-clean", "xor-noisy", "mnist-mlp", "etf-demo"):
            cfg = load_preset(name)
            assert cfg["output.dir"]

    def test_unknown_preset_lists_available(self):
        with pytest.raises(ConfigError, match="xor-clean"):
            load_preset("nope")


MINI_XOR = """
data.kind = xor-clean
model.hidden = 8
model.init_std = 0.01
train.epochs = 400
train.batch_size = 0
train.lr = 1.0
train.momentum = 0.9
train.track_samples = 0,1,2,3
reg.mode = rep-spectral
reg.gamma = 1e-4
reg.burn_in = 0.7
attack.n_samples = 2
attack.split = train
attack.T = 10
run.seeds = 0
"""


@pytest.fixture
def xor_run(tmp_path):
    cfg_path = tmp_path / "mini.cfg"
    cfg_path.write_text(MINI_XOR + f"output.dir = {tmp_path}/run\n")
    rc = cli.main(["train", "--config", str(cfg_path)])
    assert rc == 0
    return cfg_path, tmp_path / "run"


class TestCliTrain:
    def test_artifacts_written(self, xor_run):
        _, out = xor_run
        seed_dir = out / "seed0"
        assert (seed_dir / "checkpoint.json").exists()
        assert (seed_dir / "checkpoint_burnin.json").exists()
        assert (seed_dir / "trainlog.csv").exists()
        assert (out / "resolved.cfg").exists()
        summary = json.loads((seed_dir / "summary.json").read_text())
        assert summary["final_train_acc"] == 1.0

    def test_resume_skips_completed(self, xor_run, capsys):
        cfg_path, out = xor_run
        mtime = (out / "seed0" / "checkpoint.json").stat().st_mtime_ns
        rc = cli.main(["train", "--config", str(cfg_path), "--resume"])
        assert rc == 0
        assert (out / "seed0" / "checkpoint.json").stat().st_mtime_ns == mtime

    def test_deterministic_rerun_bit_identical(self, tmp_path):
        csvs = []
        for tag in ("a", "b"):
            cfg_path = tmp_path / f"{tag}.cfg"
            cfg_path.write_text(MINI_XOR + f"output.dir = {tmp_path}/{tag}\n")
            assert cli.main(["train", "--config", str(cfg_path)]) == 0
            csvs.append((tmp_path / tag / "seed0" / "trainlog.csv").read_bytes())
        assert csvs[0] == csvs[1]


class TestCliSubcommands:
    def test_attack_geometry_retrain_report(self, xor_run):
        cfg_path, out = xor_run
        ck = str(out / "seed0" / "checkpoint.json")
        assert cli.main(["attack", "--config", str(cfg_path),
                         "--checkpoint", ck]) == 0
        attack_csvs = list(out.glob("attack_*.csv"))
        assert attack_csvs
        header = attack_csvs[0].read_text().splitlines()[0]
        assert header == "sample_id,true_label,adv_label,delta,queries"
        assert (out / "attack_summary.json").exists()

        assert cli.main(["geometry", "--config", str(cfg_path),
                         "--checkpoint", ck]) == 0
        assert list(out.glob("geometry_*.csv"))
        assert list(out.glob("volume_*.svg"))

        assert cli.main(["retrain-readout", "--config", str(cfg_path),
                         "--checkpoint", ck]) == 0
        retrained = list(out.glob("*_retrained.json"))
        assert retrained

        assert cli.main(["report", "--config", str(cfg_path)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report
        assert (out / "report_boxplot.svg").exists()

    def test_etf_subcommand(self, tmp_path):
        cfg = tmp_path / "etf.cfg"
        cfg.write_text("etf.steps = 200\nrun.seeds = 0\n"
                       f"output.dir = {tmp_path}/etf\n")
        assert cli.main(["etf", "--config", str(cfg)]) == 0
        summary = json.loads((tmp_path / "etf" / "etf_summary.json").read_text())
        assert abs(summary["theta_analytic"] - np.sqrt(3) / 2) < 1e-9


class TestExitCodes:
    def test_unknown_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nope.nope = 1\n")
        assert cli.main(["train", "--config", str(bad)]) == 2

    def test_missing_config_exits_2(self):
        assert cli.main(["train", "--config", "/nonexistent.cfg"]) == 2

    def test_no_config_exits_2(self):
        assert cli.main(["train"]) == 2

    def test_attack_without_checkpoint_exits_2(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"output.dir = {tmp_path}/o\n")
        assert cli.main(["attack", "--config", str(cfg)]) == 2

    def test_numeric_failure_exits_3(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("data.kind = xor-clean\nmodel.init_std = 1e200\n"
                       "train.epochs = 30\ntrain.lr = 1e160\nrun.seeds = 0\n"
                       f"output.dir = {tmp_path}/o\n")
        rc = cli.main(["train", "--config", str(cfg)])
        assert rc == 3


class TestSvgEmission:
    def test_plots_are_valid_svg(self, tmp_path):
        from specguard import plots

        s = plots.svg_lines([0, 1, 2], {"a": [1.0, 2.0, 1.5]}, title="t")
        assert s.startswith("<svg") and s.rstrip().endswith("</svg>")
        s = plots.svg_boxplot({"m": [1.0, 2.0, 3.0]}, title="b")
        assert "<rect" in s
        s = plots.svg_heatmap(np.eye(3), (0, 1, 0, 1))
        assert s.count("<rect") >= 9

    def test_figures_pure_function_of_data(self):
        from specguard import plots

        a = plots.svg_boxplot({"m": [1.0, 2.0]}, title="x")
        b = plots.svg_boxplot({"m": [1.0, 2.0]}, title="x")
        assert a == b
