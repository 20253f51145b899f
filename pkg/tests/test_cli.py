"""Exit codes, config resolution, and artifact layout of the command line."""

import subprocess
import sys

import numpy as np
import pytest

from dynsal import cli
from dynsal.model import Diagnostics, ForwardResult, Model
from dynsal.synth import load_dataset
from dynsal.tensor import Tensor
from dynsal.trainer import write_stub_checkpoint


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "ds"
    rc = cli.main(["generate", "--preset", "regime-a", "--seed", "7",
                   "--set", "size=16", "--set", "length=4", "--out", str(d)])
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def run_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    rc = cli.main(["train", "--data", str(dataset), "--out", str(out),
                   "--set", "size=16", "--set", "iterations=3"])
    assert rc == 0
    return out


class TestParsing:
    def test_help_lists_subcommands_and_exit_codes(self, capsys):
        assert cli.main(["--help"]) == 0
        text = capsys.readouterr().out
        for sub in ("generate", "train", "eval", "infer", "ablate", "sweep-tau"):
            assert sub in text
        for code in ("0", "2", "3", "4", "5"):
            assert f"\n  {code}  " in text

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert cli.main(["bogus"]) == cli.EXIT_USAGE

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert cli.main(["train", "--data", "x"]) == cli.EXIT_USAGE

    def test_malformed_override_is_config_error(self, dataset, capsys):
        rc = cli.main(["train", "--data", str(dataset), "--out", "x",
                       "--set", "iterations"])
        assert rc == cli.EXIT_CONFIG
        assert "key=value" in capsys.readouterr().err

    def test_unknown_key_lists_valid_ones(self, dataset, capsys):
        rc = cli.main(["train", "--data", str(dataset), "--out", "x",
                       "--set", "banana=1"])
        assert rc == cli.EXIT_CONFIG
        err = capsys.readouterr().err
        assert err.startswith("error: config:")
        assert "banana" in err and "iterations" in err
        assert len(err.strip().splitlines()) == 1

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "dynsal", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "sweep-tau" in proc.stdout


class TestConfigResolution:
    def test_resolved_config_printed_first(self, dataset, capsys):
        cli.main(["generate", "--preset", "regime-b", "--out",
                  str(dataset.parent / "unused"), "--set", "size=16"])
        out = capsys.readouterr().out
        assert out.startswith("# resolved config\n")
        assert "seed = 0" in out

    def test_env_var_supplies_default_seed(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV_VAR, "99")
        cli.main(["generate", "--out", str(tmp_path / "a"), "--set", "size=16"])
        assert "seed = 99" in capsys.readouterr().out

    def test_seed_flag_beats_env_var(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV_VAR, "99")
        cli.main(["generate", "--seed", "3", "--out", str(tmp_path / "a"),
                  "--set", "size=16"])
        assert "seed = 3" in capsys.readouterr().out

    def test_set_override_beats_config_file(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("iterations = 5\nsize = 16\n")
        rc = cli.main(["train", "--data", str(dataset), "--config", str(cfg),
                       "--set", "iterations=2", "--out", str(tmp_path / "run")])
        assert rc == 0
        assert "iterations = 2" in capsys.readouterr().out

    def test_missing_config_file_is_io_error(self, dataset, capsys):
        rc = cli.main(["train", "--data", str(dataset),
                       "--config", "nope.cfg", "--out", "x"])
        assert rc == cli.EXIT_IO
        assert capsys.readouterr().err.startswith("error: io:")

    def test_malformed_config_file_is_config_error(self, dataset, tmp_path,
                                                   capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just some words\n")
        rc = cli.main(["train", "--data", str(dataset), "--config", str(cfg),
                       "--out", "x"])
        assert rc == cli.EXIT_CONFIG


class TestGenerate:
    def test_deterministic_datasets(self, dataset, tmp_path):
        again = tmp_path / "again"
        rc = cli.main(["generate", "--preset", "regime-a", "--seed", "7",
                       "--set", "size=16", "--set", "length=4",
                       "--out", str(again)])
        assert rc == 0
        for path in sorted(dataset.rglob("*")):
            twin = again / path.relative_to(dataset)
            if path.is_file():
                assert twin.read_bytes() == path.read_bytes()

    def test_dataset_loads_back(self, dataset):
        samples, scene = load_dataset(dataset)
        assert len(samples) == 4
        assert scene["seed"] == "7"

    def test_bad_scene_value_is_config_error(self, tmp_path, capsys):
        rc = cli.main(["generate", "--out", str(tmp_path / "x"),
                       "--set", "contrast=7"])
        assert rc == cli.EXIT_CONFIG


class TestTrainEval:
    def test_run_artifacts(self, run_dir):
        assert (run_dir / "train_log.csv").exists()
        assert (run_dir / "checkpoint" / "config.cfg").exists()

    def test_loss_curve_svg(self, dataset, tmp_path):
        out = tmp_path / "run"
        rc = cli.main(["train", "--data", str(dataset), "--out", str(out),
                       "--set", "size=16", "--set", "iterations=2", "--svg"])
        assert rc == 0
        assert (out / "loss_curve.svg").read_text().startswith("<svg")

    def test_missing_dataset_is_io_error(self, capsys):
        rc = cli.main(["train", "--data", "no_such_dir", "--out", "x"])
        assert rc == cli.EXIT_IO

    def test_numeric_failure_exit_code(self, dataset, capsys, monkeypatch):
        def bad_forward(self, frames, flows):
            b = frames.shape[0]
            nan = Tensor(np.full((b, 1, 16, 16), np.nan))
            half = Tensor(np.full((b, 1, 16, 16), 0.5))
            return ForwardResult(nan, half, half, half, Diagnostics())

        monkeypatch.setattr(Model, "forward", bad_forward)
        rc = cli.main(["train", "--data", str(dataset), "--out", "x",
                       "--set", "size=16", "--set", "iterations=1"])
        assert rc == cli.EXIT_NUMERIC
        err = capsys.readouterr().err
        assert err.startswith("error: numeric:")
        assert "iteration 0" in err

    def test_eval_prints_metrics(self, dataset, run_dir, tmp_path, capsys):
        out = tmp_path / "ev"
        rc = cli.main(["eval", "--ckpt", str(run_dir / "checkpoint"),
                       "--data", str(dataset), "--out", str(out), "--svg"])
        assert rc == 0
        text = capsys.readouterr().out
        assert "max_f = " in text and "eps_s_mean = " in text
        assert (out / "eval_report.csv").exists()
        assert (out / "pr_curve.svg").exists()

    def test_variant_mismatch_is_config_error(self, dataset, run_dir, capsys):
        rc = cli.main(["eval", "--ckpt", str(run_dir / "checkpoint"),
                       "--data", str(dataset), "--expect-variant", "M3"])
        assert rc == cli.EXIT_CONFIG


class TestInfer:
    def test_stub_reproduces_masks_byte_for_byte(self, dataset, tmp_path):
        stub = write_stub_checkpoint(tmp_path / "stub")
        out = tmp_path / "pred"
        rc = cli.main(["infer", "--ckpt", str(stub), "--data", str(dataset),
                       "--out", str(out)])
        assert rc == 0
        for i in range(4):
            pred = (out / "S_f" / f"{i:05d}.png").read_bytes()
            truth = (dataset / "masks" / f"{i:05d}.png").read_bytes()
            assert pred == truth

    def test_trained_checkpoint_writes_all_heads(self, dataset, run_dir,
                                                 tmp_path):
        out = tmp_path / "pred"
        rc = cli.main(["infer", "--ckpt", str(run_dir / "checkpoint"),
                       "--data", str(dataset), "--out", str(out),
                       "--index", "1"])
        assert rc == 0
        for name in ("S_s", "S_t", "S_c", "S_f"):
            assert (out / name / "00001.png").exists()
        assert not (out / "S_f" / "00000.png").exists()

    def test_index_out_of_range_is_config_error(self, dataset, tmp_path,
                                                capsys):
        stub = write_stub_checkpoint(tmp_path / "stub")
        rc = cli.main(["infer", "--ckpt", str(stub), "--data", str(dataset),
                       "--out", str(tmp_path / "x"), "--index", "9"])
        assert rc == cli.EXIT_CONFIG


class TestTables:
    def test_sweep_tau_artifacts(self, dataset, tmp_path, capsys):
        out = tmp_path / "sweep"
        rc = cli.main(["sweep-tau", "--data", str(dataset), "--out", str(out),
                       "--set", "size=16", "--set", "iterations=1",
                       "--taus", "0.5", "--svg"])
        assert rc == 0
        assert "tau=0.5" in capsys.readouterr().out
        assert (out / "tau_sweep.csv").exists()
        assert (out / "tau_sweep.svg").exists()

    def test_ablate_family_table(self, dataset, tmp_path, capsys):
        out = tmp_path / "ab"
        rc = cli.main(["ablate", "--data", str(dataset), "--out", str(out),
                       "--set", "size=16", "--set", "iterations=1",
                       "--families", "baseline"])
        assert rc == 0
        assert (out / "ablation_baseline.csv").exists()
        assert "baseline M3" in capsys.readouterr().out

    def test_unknown_family_is_usage_error(self, dataset, capsys):
        rc = cli.main(["ablate", "--data", str(dataset), "--out", "x",
                       "--families", "nonesuch"])
        assert rc == cli.EXIT_USAGE
