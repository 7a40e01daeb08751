"""Tests for the command-line interface (run in-process through main)."""

import json

import pytest

from conftest import tiny_experiment_config
from uenl.cli import main
from uenl.harness import Checkpoint
from uenl.rng import derive_seed


@pytest.fixture()
def config_path(tmp_path):
    cfg = tiny_experiment_config(epochs=2)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A checkpoint trained once for the whole module via the CLI itself."""
    root = tmp_path_factory.mktemp("cli_train")
    cfg_path = root / "exp.json"
    cfg_path.write_text(json.dumps(tiny_experiment_config(epochs=2).to_dict()), encoding="utf-8")
    ckpt_path = root / "model.ckpt.json"
    rc = main(["train", "--config", str(cfg_path), "--out", str(ckpt_path), "--quiet"])
    assert rc == 0
    return cfg_path, ckpt_path


class TestTrain:
    def test_set_override_recorded_in_checkpoint(self, config_path, tmp_path, capsys):
        out = tmp_path / "m.ckpt"
        rc = main(
            ["train", "--config", str(config_path), "--set", "lambda=0.25", "--out", str(out), "--quiet"]
        )
        assert rc == 0
        assert Checkpoint.load(out).config.kl_weight == 0.25
        assert f"saved checkpoint to {out}" in capsys.readouterr().out

    def test_seed_flag_overrides_config(self, config_path, tmp_path):
        out = tmp_path / "m.ckpt"
        rc = main(["train", "--config", str(config_path), "--seed", "123", "--out", str(out), "--quiet"])
        assert rc == 0
        assert Checkpoint.load(out).config.seed == 123

    def test_progress_lines_unless_quiet(self, config_path, tmp_path, capsys):
        out = tmp_path / "m.ckpt"
        assert main(["train", "--config", str(config_path), "--out", str(out)]) == 0
        noisy = capsys.readouterr().out.splitlines()
        assert sum(1 for line in noisy if line.startswith("epoch")) == 2  # one per epoch
        assert main(["train", "--config", str(config_path), "--out", str(out), "--quiet"]) == 0
        quiet = capsys.readouterr().out.splitlines()
        assert not any(line.startswith("epoch") for line in quiet)

    def test_missing_config_file_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        rc = main(["train", "--config", str(missing), "--out", str(tmp_path / "m.ckpt")])
        assert rc != 0
        err = capsys.readouterr().err
        assert str(missing) in err
        assert len(err.strip().splitlines()) == 1  # single-line diagnostic

    def test_schema_violation_single_line_error(self, config_path, tmp_path, capsys):
        rc = main(
            ["train", "--config", str(config_path), "--set", "delta=0", "--out", str(tmp_path / "m")]
        )
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and "delta" in err
        assert len(err.strip().splitlines()) == 1


class TestEval:
    def test_three_method_blocks(self, trained, tmp_path, capsys):
        _, ckpt = trained
        out = tmp_path / "report"
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(ckpt),
                "--methods",
                "msp,energy,uncertainty",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        metrics = (out / "metrics.csv").read_text(encoding="utf-8").splitlines()
        methods_in_csv = {line.split(",")[0] for line in metrics[1:]}
        assert methods_in_csv == {"msp", "energy", "uncertainty"}
        stdout = capsys.readouterr().out
        assert "id_test error rate" in stdout

    def test_ood_replacement_csv(self, trained, tmp_path):
        cfg_path, ckpt = trained
        # gen-data gives us a CSV OOD file to feed back through --ood
        data_dir = tmp_path / "data"
        assert main(["gen-data", "--config", str(cfg_path), "--out", str(data_dir)]) == 0
        out = tmp_path / "report"
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(ckpt),
                "--ood",
                f"noise={data_dir / 'ood_gaussian_noise.csv'}",
                "--methods",
                "msp",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        metrics = (out / "metrics.csv").read_text(encoding="utf-8").splitlines()
        datasets = {line.split(",")[1] for line in metrics[1:] if not line.startswith("#")}
        assert "noise" in datasets
        assert "uniform" not in datasets

    def test_missing_checkpoint_errors(self, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "ghost.ckpt"), "--out", str(tmp_path)])
        assert rc == 1
        assert "ghost.ckpt" in capsys.readouterr().err


class TestGenData:
    def test_writes_all_splits(self, config_path, tmp_path, capsys):
        out = tmp_path / "data"
        rc = main(["gen-data", "--config", str(config_path), "--out", str(out)])
        assert rc == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["id_test.csv", "id_train.csv", "ood_gaussian_noise.csv", "ood_uniform.csv"]
        stdout = capsys.readouterr().out
        assert stdout.count("wrote ") == 4
        header = (out / "id_train.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header.endswith(",label")
        ood_header = (out / "ood_uniform.csv").read_text(encoding="utf-8").splitlines()[0]
        assert "label" not in ood_header


class TestSweep:
    def test_grid_rows_and_seed_derivation(self, config_path, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        rc = main(
            [
                "sweep",
                "--config",
                str(config_path),
                "--grid",
                "delta=4,8",
                "--out",
                str(out),
                "--quiet",
            ]
        )
        assert rc == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3  # header + 2 cells
        header = lines[0].split(",")
        assert header[0] == "delta"
        seed_col = header.index("seed")
        base_seed = tiny_experiment_config().seed
        assert int(lines[1].split(",")[seed_col]) == derive_seed(base_seed, "cell0")
        assert f"wrote {out} (2 rows)" in capsys.readouterr().out

    def test_malformed_grid_entry(self, config_path, tmp_path, capsys):
        rc = main(
            ["sweep", "--config", str(config_path), "--grid", "delta", "--out", str(tmp_path / "s.csv")]
        )
        assert rc == 1
        assert "grid entry" in capsys.readouterr().err


class TestHist:
    def test_rebin_scores_csv(self, trained, tmp_path):
        _, ckpt = trained
        report_dir = tmp_path / "report"
        assert main(["eval", "--checkpoint", str(ckpt), "--methods", "msp", "--out", str(report_dir)]) == 0
        out = tmp_path / "hist.csv"
        rc = main(["hist", "--scores", str(report_dir / "scores.csv"), "--bins", "5", "--out", str(out)])
        assert rc == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "dataset,method,bin_left,bin_right,count"
        assert len(lines) == 1 + 3 * 5  # id_test + 2 ood sets, 5 bins each

    def test_missing_scores_file(self, tmp_path, capsys):
        rc = main(["hist", "--scores", str(tmp_path / "none.csv"), "--out", str(tmp_path / "h.csv")])
        assert rc == 1
        assert "none.csv" in capsys.readouterr().err


class TestParsing:
    def test_unknown_subcommand(self, capsys):
        rc = main(["transmogrify"])
        assert rc != 0
        assert "invalid choice" in capsys.readouterr().err

    def test_unknown_flag(self, config_path, capsys):
        rc = main(["train", "--config", str(config_path), "--learning-rate", "0.1"])
        assert rc != 0
        assert "unrecognized" in capsys.readouterr().err

    def test_no_subcommand(self, capsys):
        assert main([]) != 0

    def test_missing_required_flag(self, capsys):
        rc = main(["train"])
        assert rc != 0
        assert "--config" in capsys.readouterr().err
