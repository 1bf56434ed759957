import json

import numpy as np
import pytest

import spikekit as sk
from spikekit import cli


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Trained fixture model plus converted artifacts, built through the CLI."""
    root = tmp_path_factory.mktemp("pipeline")
    model_dir = root / "model"
    conv_dir = root / "converted"
    code = run(
        [
            "train",
            "--out",
            str(model_dir),
            "--widths",
            "16,32,10",
            "--epochs",
            "3",
            "--train-samples",
            "600",
            "--test-samples",
            "200",
        ]
    )
    assert code == 0
    code = run(
        [
            "convert",
            "--model",
            str(model_dir),
            "--calib",
            str(model_dir / "train.bsd"),
            "--calib-samples",
            "300",
            "--out",
            str(conv_dir),
        ]
    )
    assert code == 0
    return {"root": root, "model": model_dir, "conv": conv_dir}


class TestTrain:
    def test_artifacts_written(self, pipeline):
        model_dir = pipeline["model"]
        assert (model_dir / "model.json").exists()
        assert (model_dir / "weights.bin").exists()
        assert (model_dir / "train.bsd").exists()
        assert (model_dir / "test.bsd").exists()
        model = sk.load_model(model_dir)
        assert tuple(model.input_shape) == (16,)


class TestConvert:
    def test_stats_written_with_positive_lambdas(self, pipeline):
        stats = json.loads((pipeline["conv"] / "stats.json").read_text())
        assert stats["p_max"] == 1.0
        assert stats["lambdas"] and all(v > 0 for v in stats["lambdas"].values())

    def test_rerun_is_byte_identical(self, pipeline):
        again = pipeline["root"] / "converted2"
        code = run(
            [
                "convert",
                "--model",
                str(pipeline["model"]),
                "--calib",
                str(pipeline["model"] / "train.bsd"),
                "--calib-samples",
                "300",
                "--out",
                str(again),
            ]
        )
        assert code == 0
        for name in ("stats.json", "model.json", "weights.bin"):
            assert (again / name).read_bytes() == (pipeline["conv"] / name).read_bytes()

    def test_smaller_p_max_never_larger(self, pipeline):
        robust = pipeline["root"] / "converted999"
        code = run(
            [
                "convert",
                "--model",
                str(pipeline["model"]),
                "--calib",
                str(pipeline["model"] / "train.bsd"),
                "--calib-samples",
                "300",
                "--p-max",
                "0.999",
                "--out",
                str(robust),
            ]
        )
        assert code == 0
        full = json.loads((pipeline["conv"] / "stats.json").read_text())["lambdas"]
        small = json.loads((robust / "stats.json").read_text())["lambdas"]
        assert all(small[p] <= full[p] for p in full)

    def test_missing_calibration_file_is_io_error(self, pipeline, tmp_path):
        code = run(
            [
                "convert",
                "--model",
                str(pipeline["model"]),
                "--calib",
                str(tmp_path / "nope.bsd"),
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == cli.EXIT_IO

    def test_corrupt_model_is_validation_error(self, pipeline, tmp_path):
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "model.json").write_text('{"version": 1, "layers": [], "input_shape": []}')
        (bad / "weights.bin").write_bytes(b"")
        code = run(
            [
                "convert",
                "--model",
                str(bad),
                "--calib",
                str(pipeline["model"] / "train.bsd"),
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == cli.EXIT_VALIDATION


class TestSimulate:
    def simulate_args(self, pipeline, tmp_path, extra=()):
        return [
            "simulate",
            "--model",
            str(pipeline["conv"]),
            "--data",
            str(pipeline["model"] / "test.bsd"),
            "--periods",
            "4",
            "--limit",
            "30",
            "--report",
            str(tmp_path / "report.json"),
            "--curve",
            str(tmp_path / "curve.csv"),
            *extra,
        ]

    def test_report_and_curve(self, pipeline, tmp_path, capsys):
        code = run(self.simulate_args(pipeline, tmp_path))
        assert code == 0
        assert "no effect" in capsys.readouterr().out  # --sn note on a plain MLP
        report = cli.read_report(tmp_path / "report.json")
        assert report["mode"] == "bsnn"
        assert report["samples"] == 30
        assert len(report["curve"]) == 4
        for row in report["curve"]:
            assert 0.0 <= row["accuracy"] <= 1.0
        assert 0.0 <= report["final_accuracy"] <= 1.0
        assert 0.0 <= report["ann_accuracy"] <= 1.0
        curve_lines = (tmp_path / "curve.csv").read_text().strip().splitlines()
        assert curve_lines[0] == "period,accuracy"
        assert len(curve_lines) == 5

    def test_deterministic_reports(self, pipeline, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        a_dir.mkdir(), b_dir.mkdir()
        assert run(self.simulate_args(pipeline, a_dir)) == 0
        assert run(self.simulate_args(pipeline, b_dir)) == 0
        a = cli.read_report(a_dir / "report.json")
        b = cli.read_report(b_dir / "report.json")
        a.pop("wall_clock_sec"), b.pop("wall_clock_sec")
        assert a == b

    def test_threads_do_not_change_results(self, pipeline, tmp_path):
        a_dir, b_dir = tmp_path / "one", tmp_path / "four"
        a_dir.mkdir(), b_dir.mkdir()
        assert run(self.simulate_args(pipeline, a_dir, ("--threads", "1"))) == 0
        assert run(self.simulate_args(pipeline, b_dir, ("--threads", "4"))) == 0
        a = cli.read_report(a_dir / "report.json")
        b = cli.read_report(b_dir / "report.json")
        a.pop("wall_clock_sec"), b.pop("wall_clock_sec")
        assert a == b

    def test_zero_periods_is_usage_error(self, pipeline, tmp_path):
        args = self.simulate_args(pipeline, tmp_path)
        args[args.index("--periods") + 1] = "0"
        assert run(args) == cli.EXIT_USAGE

    def test_rate_mode_runs(self, pipeline, tmp_path):
        code = run(self.simulate_args(pipeline, tmp_path, ("--mode", "rate")))
        assert code == 0
        assert cli.read_report(tmp_path / "report.json")["mode"] == "rate"


class TestCompare:
    def test_histogram_and_summary(self, pipeline, tmp_path, capsys):
        out = tmp_path / "hist.csv"
        code = run(
            [
                "compare",
                "--model",
                str(pipeline["conv"]),
                "--data",
                str(pipeline["model"] / "test.bsd"),
                "--modes",
                "bsnn,rate",
                "--periods",
                "4",
                "--limit",
                "20",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "mode,bin_lo,count"
        modes = {line.split(",")[0] for line in lines[1:]}
        assert modes == {"bsnn", "rate"}

    def test_single_period_warns(self, pipeline, tmp_path, capsys):
        code = run(
            [
                "compare",
                "--model",
                str(pipeline["conv"]),
                "--data",
                str(pipeline["model"] / "test.bsd"),
                "--modes",
                "bsnn",
                "--periods",
                "1",
                "--limit",
                "5",
                "--out",
                str(tmp_path / "hist.csv"),
            ]
        )
        assert code == 0
        assert "pre-warm-up" in capsys.readouterr().out

    def test_unknown_mode_is_usage_error(self, pipeline, tmp_path):
        code = run(
            [
                "compare",
                "--model",
                str(pipeline["conv"]),
                "--data",
                str(pipeline["model"] / "test.bsd"),
                "--modes",
                "burst",
                "--limit",
                "5",
                "--out",
                str(tmp_path / "hist.csv"),
            ]
        )
        assert code == cli.EXIT_USAGE


class TestReportCommand:
    def test_round_trip_print(self, pipeline, tmp_path, capsys):
        assert run(TestSimulate().simulate_args(pipeline, tmp_path)) == 0
        capsys.readouterr()
        assert run(["report", "--report", str(tmp_path / "report.json")]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed == cli.read_report(tmp_path / "report.json")


class TestUsage:
    def test_missing_subcommand(self):
        assert run([]) == cli.EXIT_USAGE

    def test_unknown_flag(self):
        assert run(["train", "--out", "x", "--bogus"]) == cli.EXIT_USAGE
