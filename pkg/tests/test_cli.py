import csv
import json

import numpy as np
import pytest

from egmn.cli import EXIT_DATA, EXIT_USAGE, build_parser, run_cli
from egmn.metrics import MetricReport
from egmn.runner import TrainHistory

FAST = ["--k", "3", "--epochs", "2", "--hidden", "16", "8", "--batch", "256", "--pairs", "20000"]


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    assert run_cli(["synth", "--out", str(d), "--n", "3000", "--users", "12", "--videos", "10", "--seed", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def run_dir(world, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", "--data", str(world / "interactions.csv"), "--manifest", str(world / "manifest.ini"),
            "--out", str(out), *FAST]
    assert run_cli(argv) == 0
    return out


def _curve(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(a), float(b)] for a, b in rows])


class TestPipeline:
    def test_synth_outputs(self, world):
        for name in ("interactions.csv", "oracle.json", "manifest.ini"):
            assert (world / name).exists()
        assert len((world / "interactions.csv").read_text().splitlines()) == 3001

    def test_train_outputs(self, run_dir):
        for name in ("model.ckpt", "transform.json", "history.csv", "run.json", "report.txt", "report.csv",
                     "report_bins.csv"):
            assert (run_dir / name).exists(), name
        assert len(TrainHistory.read_csv(run_dir / "history.csv").rows) == 2
        run = json.loads((run_dir / "run.json").read_text())
        assert run["train"]["n_gaussians"] == 3 and run["n_train"] + run["n_eval"] == 3000

    def test_evaluate_reproduces_train_report(self, run_dir, tmp_path):
        argv = ["evaluate", "--run", str(run_dir), "--out", str(tmp_path), "--pairs", "20000"]
        assert run_cli(argv) == 0
        assert MetricReport.read_csv(tmp_path / "report.csv") == MetricReport.read_csv(run_dir / "report.csv")

    def test_evaluate_all_part(self, run_dir, tmp_path):
        assert run_cli(["evaluate", "--run", str(run_dir), "--part", "all", "--out", str(tmp_path), "--stem", "x"]) == 0
        assert MetricReport.read_csv(tmp_path / "x.csv").n_examples == 3000

    def test_predict(self, world, run_dir, tmp_path):
        out = tmp_path / "pred.csv"
        argv = ["predict", "--run", str(run_dir), "--data", str(world / "interactions.csv"), "--out", str(out),
                "--quantiles", "0.5", "0.9"]
        assert run_cli(argv) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3000
        assert all(float(r["q0.5"]) <= float(r["q0.9"]) for r in rows)
        assert all(0 <= float(r["p_le_4"]) <= 1 for r in rows)

    def test_inspect_density_integrates_to_one(self, world, run_dir, tmp_path):
        argv = ["inspect", "--run", str(run_dir), "--user", "u3", "--video", "v4", "--oracle",
                str(world / "oracle.json"), "--context", "hour=5", "weekday=2", "device=ios", "--out", str(tmp_path)]
        assert run_cli(argv) == 0
        dens = _curve(tmp_path / "density.csv")
        assert np.trapezoid(dens[:, 1], dens[:, 0]) == pytest.approx(1.0, abs=1e-3)
        true = _curve(tmp_path / "oracle_density.csv")
        assert np.trapezoid(true[:, 1], true[:, 0]) == pytest.approx(1.0, abs=1e-3)
        c = _curve(tmp_path / "cdf.csv")[:, 1]
        assert np.all(np.diff(c) >= 0) and c[-1] == pytest.approx(1.0, abs=1e-6)
        params = json.loads((tmp_path / "params.json").read_text())
        assert len(params["weights"]) == 4 and sum(params["weights"]) == pytest.approx(1.0)


class TestAblationFlags:
    @pytest.mark.parametrize("flags", [["--k", "0", "--disable-gaussians"], ["--disable-exponential"]])
    def test_runs(self, world, tmp_path, flags):
        argv = ["train", "--data", str(world / "interactions.csv"), "--out", str(tmp_path), *FAST, *flags]
        assert run_cli(argv) == 0
        run = json.loads((tmp_path / "run.json").read_text())
        key = "disable_gaussians" if "--disable-gaussians" in flags else "disable_exponential"
        assert run["train"][key] is True


class TestConfigPrecedence:
    def test_flags_beat_config_beat_manifest(self, world, tmp_path):
        manifest = tmp_path / "m.ini"
        manifest.write_text((world / "manifest.ini").read_text() + "\n[train]\nepochs = 3\nalpha = 0.3\n")
        config = tmp_path / "c.ini"
        config.write_text("[train]\nepochs = 1\nalpha = 0.2\n[split]\ntrain_fraction = 0.7\n")
        out = tmp_path / "run"
        argv = ["train", "--data", str(world / "interactions.csv"), "--manifest", str(manifest), "--config",
                str(config), "--out", str(out), "--k", "2", "--hidden", "8", "--batch", "512", "--alpha", "0.05"]
        assert run_cli(argv) == 0
        run = json.loads((out / "run.json").read_text())
        assert run["train"]["alpha"] == 0.05  # flag over config
        assert run["train"]["epochs"] == 1  # config over manifest
        assert run["train"]["n_gaussians"] == 2
        assert run["split"]["train_fraction"] == 0.7 and run["n_eval"] == 900


class TestErrors:
    def test_missing_data_file(self, tmp_path, capsys):
        assert run_cli(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == EXIT_DATA
        assert "nope.csv" in capsys.readouterr().err

    def test_missing_run_dir(self, tmp_path):
        assert run_cli(["evaluate", "--run", str(tmp_path)]) == EXIT_DATA

    @pytest.mark.parametrize("argv", [["train", "--bogus"], ["frobnicate"], [], ["train", "--data", "x.csv"],
                                      ["train", "--data", "x.csv", "--out", "o", "--split", "sideways"]])
    def test_usage(self, argv):
        assert run_cli(argv) == EXIT_USAGE

    def test_bad_config_value(self, world, tmp_path):
        argv = ["train", "--data", str(world / "interactions.csv"), "--out", str(tmp_path), "--lr", "-1"]
        assert run_cli(argv) == EXIT_USAGE

    def test_bad_csv(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("user_id,video_id\nu,v\n")
        assert run_cli(["train", "--data", str(p), "--out", str(tmp_path / "o")]) == EXIT_DATA


class TestHelp:
    def test_every_flag_documented(self):
        parser = build_parser()
        sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
        assert set(sub.choices) == {"synth", "train", "evaluate", "predict", "inspect"}
        for name, p in sub.choices.items():
            for action in p._actions:
                if action.option_strings and action.dest != "help":
                    assert action.help, f"{name} {action.option_strings} lacks help"

    def test_spec_flags_present(self, capsys):
        assert run_cli(["train", "--help"]) == 0
        text = capsys.readouterr().out
        for flag in ("--data", "--manifest", "--k", "--alpha", "--beta", "--lr", "--batch", "--epochs", "--seed",
                     "--split", "--train-frac", "--disable-exponential", "--disable-gaussians", "--out",
                     "--deterministic"):
            assert flag in text
