import numpy as np
import pytest
import yaml

from enlstm.cli import main, summarize_eval
from enlstm.config import config_from_dict, load_config


def write_config(path, **overrides):
    base = {
        "seed": 7,
        "output_dir": str(path.parent / "out"),
        "data": {"synth": {"n_wells": 3, "length": 140, "n_in": 2, "n_out": 2}},
        "network": {"lstm_hidden": 4, "dense_hidden": 3, "dropout": 0.2},
        "train": {"n_realizations": 5, "batch_size": 16, "epochs": 1},
        "window": {"length": 40, "stride": 20},
    }
    base.update(overrides)
    path.write_text(yaml.safe_dump(base))
    return base


class TestConfig:
    def test_synth_channels_autofilled(self):
        cfg = config_from_dict({"data": {"synth": {"n_in": 3, "n_out": 2}}})
        assert cfg.input_channels == ["in01", "in02", "in03"]
        assert cfg.target_channels == ["out01", "out02"]

    def test_needs_a_data_source(self):
        with pytest.raises(ValueError, match="data source"):
            config_from_dict({})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            config_from_dict({"data": {"synth": {}}, "trian": {}})
        with pytest.raises(ValueError, match="train"):
            config_from_dict({"data": {"synth": {}}, "train": {"epoch": 3}})

    def test_defaults_follow_the_field_settings(self):
        cfg = config_from_dict({"data": {"synth": {}}})
        assert cfg.train.n_realizations == 100
        assert cfg.train.batch_size == 64
        assert cfg.train.eps_real_std == 0.02
        assert cfg.network.lstm_hidden == 30
        assert cfg.network.dense_hidden == 15
        assert cfg.network.dropout == 0.3
        assert cfg.window_length == 130
        assert cfg.window_stride == 40
        assert cfg.perturb_alpha == 0.99

    def test_load_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        write_config(path)
        cfg = load_config(path)
        assert cfg.seed == 7
        assert cfg.synth.n_wells == 3


class TestSummarizeEval:
    def test_three_value_fixture(self):
        rows = [
            {"fold": "a", "repeat": 1, "target": "t", "mse": 1.0},
            {"fold": "b", "repeat": 1, "target": "t", "mse": 2.0},
            {"fold": "c", "repeat": 1, "target": "t", "mse": 6.0},
        ]
        summary = summarize_eval(rows)
        assert summary["per_target"]["t"]["mean"] == pytest.approx(3.0)
        assert summary["per_target"]["t"]["median"] == pytest.approx(2.0)
        assert summary["overall"]["count"] == 3


class TestSynthCommand:
    def test_row_counts_and_determinism(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        write_config(cfg_path, data={"synth": {"n_wells": 3, "length": 600,
                                               "n_in": 2, "n_out": 1}})
        assert main(["synth", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out" / "synthetic.csv"
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 3 * 600
        first = out.read_bytes()
        assert main(["synth", "--config", str(cfg_path)]) == 0
        assert out.read_bytes() == first

    def test_case_study_shape(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        write_config(cfg_path, data={"synth": {"n_wells": 2, "length": 50,
                                               "n_in": 11, "n_out": 12}})
        assert main(["synth", "--config", str(cfg_path)]) == 0
        header = (tmp_path / "out" / "synthetic.csv").read_text().splitlines()[0]
        assert header.count("in") == 11
        assert header.count("out") == 12

    def test_csv_config_cannot_synth(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        write_config(cfg_path, data={"csv": "somewhere.csv"})
        assert main(["synth", "--config", str(cfg_path)]) == 1


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    cfg_path = root / "cfg.yaml"
    write_config(cfg_path)
    code = main(["train", "--config", str(cfg_path)])
    assert code == 0
    return root, cfg_path


class TestTrainCommand:
    def test_outputs_exist(self, trained_dir):
        root, _ = trained_dir
        out = root / "out"
        assert (out / "model.json").exists()
        assert (out / "checkpoints" / "stage_01.npz").exists()
        assert (out / "config_resolved.yaml").exists()
        assert (out / "figures" / "training_metrics.png").exists()

    def test_metrics_rows_are_epochs_times_stages(self, trained_dir):
        root, _ = trained_dir
        lines = (root / "out" / "metrics.csv").read_text().splitlines()
        # 2 targets -> 1 stage; 1 epoch -> exactly one data row
        assert lines[0].startswith("stage,epoch,")
        assert len(lines) == 2

    def test_resolved_config_echoes_defaults(self, trained_dir):
        root, _ = trained_dir
        resolved = yaml.safe_load((root / "out" / "config_resolved.yaml").read_text())
        assert resolved["train"]["lambda_init"] == 1.0
        assert resolved["perturb"]["alpha"] == 0.99

    def test_no_figures_flag_in_config(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        write_config(cfg_path, figures=False)
        assert main(["train", "--config", str(cfg_path)]) == 0
        assert not (tmp_path / "out" / "figures").exists()


class TestPredictCommand:
    def test_column_contract_and_ranges(self, trained_dir, tmp_path):
        root, cfg_path = trained_dir
        out = root / "out"
        # predict back on the training data itself
        data_csv = tmp_path / "input.csv"
        from enlstm.data import synth_generate, write_csv

        records = synth_generate(999, 1, 120, 2, 2)
        write_csv(records, data_csv)
        code = main([
            "predict", "--config", str(cfg_path),
            "--checkpoints", str(out / "checkpoints"),
            "--input", str(data_csv),
            "--out", str(tmp_path / "pred"),
        ])
        assert code == 0
        pred_csv = tmp_path / "pred" / "predictions_well01.csv"
        lines = pred_csv.read_text().splitlines()
        header = lines[0].split(",")
        assert len(header) == 1 + 2 * 2  # depth + 2 targets + 2 stds
        assert header[0] == "depth"
        assert len(lines) == 1 + 120

    def test_checkpoint_mismatch_is_named(self, trained_dir, tmp_path, capsys):
        root, cfg_path = trained_dir
        bad_cfg = tmp_path / "bad.yaml"
        base = yaml.safe_load(cfg_path.read_text())
        base["network"]["lstm_hidden"] = 9
        bad_cfg.write_text(yaml.safe_dump(base))
        data_csv = tmp_path / "input.csv"
        from enlstm.data import synth_generate, write_csv

        write_csv(synth_generate(1, 1, 60, 2, 2), data_csv)
        code = main([
            "predict", "--config", str(bad_cfg),
            "--checkpoints", str(root / "out" / "checkpoints"),
            "--input", str(data_csv),
            "--out", str(tmp_path / "pred2"),
        ])
        assert code == 1
        assert "hidden" in capsys.readouterr().err


class TestEvalLooCommand:
    def test_row_structure(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        write_config(
            cfg_path,
            data={"synth": {"n_wells": 3, "length": 120, "n_in": 2, "n_out": 1}},
            evaluation={"repeats": 2},
        )
        assert main(["eval-loo", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        lines = (out / "eval.csv").read_text().splitlines()
        assert lines[0] == "fold,repeat,target,mse"
        assert len(lines) == 1 + 3 * 2  # folds x repeats x 1 target
        summary = yaml.safe_load((out / "summary.yaml").read_text())
        assert summary["overall"]["count"] == 6
        assert (out / "figures" / "mse_boxplot.png").exists()

    def test_seed_flag_overrides(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        write_config(
            cfg_path,
            data={"synth": {"n_wells": 2, "length": 100, "n_in": 2, "n_out": 1}},
            window={"length": 30, "stride": 15},
        )
        assert main(["eval-loo", "--config", str(cfg_path),
                     "--seed", "3", "--out", str(tmp_path / "a")]) == 0
        assert main(["eval-loo", "--config", str(cfg_path),
                     "--seed", "3", "--out", str(tmp_path / "b")]) == 0
        assert main(["eval-loo", "--config", str(cfg_path),
                     "--seed", "4", "--out", str(tmp_path / "c")]) == 0
        a = (tmp_path / "a" / "eval.csv").read_bytes()
        b = (tmp_path / "b" / "eval.csv").read_bytes()
        c = (tmp_path / "c" / "eval.csv").read_bytes()
        assert a == b
        assert a != c


class TestErrors:
    def test_bad_config_path(self, capsys):
        assert main(["train", "--config", "/nonexistent.yaml"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_channels_in_csv(self, tmp_path, capsys):
        data_csv = tmp_path / "data.csv"
        data_csv.write_text("well_id,depth,gr\nA,0.1,1\nA,0.2,2\n")
        cfg_path = tmp_path / "cfg.yaml"
        write_config(
            cfg_path,
            data={"csv": str(data_csv)},
            channels={"inputs": ["gr"], "targets": ["rho"]},
        )
        assert main(["train", "--config", str(cfg_path)]) == 1
        assert "missing channel" in capsys.readouterr().err
