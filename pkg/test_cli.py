import json

import pandas as pd
import pytest

import cli
import reporting


def run(tmp_path, *args, out="out"):
    argv = list(args) + ["--out", str(tmp_path / out), "--config", str(tmp_path / "missing.yaml"),
                         "--no-timestamp", "--no-plot", "--quiet"]
    return cli.main(argv)


def read_bytes(directory):
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir())}


class TestExitCodes:
    def test_linear_passes(self, tmp_path):
        assert run(tmp_path, "linear", "--dim", "6", "--k", "2", "--trials", "100", "--seed", "7") == 0

    def test_near_identity_maps_pass(self, tmp_path):
        assert run(tmp_path, "linear", "--dim", "4", "--k", "1", "--scale", "1e-4", "--trials", "200") == 0

    def test_zero_trials(self, tmp_path):
        assert run(tmp_path, "linear", "--trials", "0") == 0
        frame = pd.read_csv(tmp_path / "out" / "linear_trials.csv", comment="#")
        assert frame.empty

    @pytest.mark.parametrize("args", [
        ["linear", "--tol", "-1"],
        ["linear", "--trials", "-5"],
        ["linear", "--dim", "5"],
        ["linear", "--dim", "4", "--k", "3"],
        ["wirtinger", "--radius", "0"],
        ["estimate", "--map", "twirl"],
        ["estimate", "--cells", "2"],
        ["squeeze", "--eps", "0.5"],
        ["teleport"],
        ["linear", "--trials", "many"],
    ])
    def test_usage_errors(self, tmp_path, args):
        assert run(tmp_path, *args) == 64

    def test_help_exits_cleanly(self, capsys):
        assert cli.main(["linear", "--help"]) == 0
        assert "--trials" in capsys.readouterr().out

    def test_violation_exit_code(self, tmp_path, monkeypatch):
        def failing(cfg):
            return {"trials": pd.DataFrame({"trial": [0]}), "tables": {},
                    "summary": {"command": "linear", "witness_seeds": [123], "passed": False}}

        monkeypatch.setitem(cli.batch.EXPERIMENTS, "linear", failing)
        assert run(tmp_path, "linear", "--trials", "1") == 2

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        def crashing(cfg):
            raise cli.NumericalFailure("expm overflow")

        monkeypatch.setitem(cli.batch.EXPERIMENTS, "linear", crashing)
        assert run(tmp_path, "linear", "--trials", "1") == 70

    def test_failed_trials_exit_code(self, tmp_path, monkeypatch):
        def partial(cfg):
            return {"trials": pd.DataFrame({"trial": [0]}), "tables": {},
                    "summary": {"command": "linear", "errors": 1, "passed": True}}

        monkeypatch.setitem(cli.batch.EXPERIMENTS, "linear", partial)
        assert run(tmp_path, "linear", "--trials", "1") == 70


class TestOutputs:
    def test_linear_files(self, tmp_path):
        assert run(tmp_path, "linear", "--trials", "20", "--dim", "4", "--k", "1") == 0
        out = tmp_path / "out"
        assert {p.name for p in out.iterdir()} == {"linear_trials.csv", "linear_summary.json"}
        text = (out / "linear_trials.csv").read_text()
        assert text.startswith("# command=linear\n")
        assert "# dim=4\n" in text
        assert "generated=" not in text
        frame = pd.read_csv(out / "linear_trials.csv", comment="#")
        assert len(frame) == 20
        assert (frame["volume_ratio"] >= 1.0 - 1e-9).all()
        summary = json.loads((out / "linear_summary.json").read_text())
        assert summary["summary"]["passed"] is True
        assert summary["config"]["trials"] == 20

    def test_json_format(self, tmp_path):
        assert run(tmp_path, "wirtinger", "--trials", "10", "--format", "json") == 0
        payload = json.loads((tmp_path / "out" / "wirtinger_trials.json").read_text())
        assert payload["config"]["format"] == "json"
        assert len(payload["rows"]) == 20

    def test_frobenius_writes_heatmap(self, tmp_path):
        assert run(tmp_path, "frobenius", "--trials", "20") == 0
        frame = pd.read_csv(tmp_path / "out" / "frobenius_heatmap.csv", comment="#")
        assert list(frame.columns) == ["q1", "p2", "residual"]

    def test_timestamp_line(self, tmp_path):
        argv = ["linear", "--trials", "3", "--out", str(tmp_path / "stamped"),
                "--config", str(tmp_path / "missing.yaml"), "--quiet"]
        assert cli.main(argv) == 0
        assert "# generated=" in (tmp_path / "stamped" / "linear_trials.csv").read_text()

    def test_config_file_is_overridden_by_flags(self, tmp_path):
        config_path = tmp_path / "lab.yaml"
        config_path.write_text("dim: 4\nk: 1\ntrials: 7\n")
        argv = ["linear", "--trials", "3", "--out", str(tmp_path / "cfg"), "--config", str(config_path),
                "--no-timestamp", "--quiet"]
        assert cli.main(argv) == 0
        summary = json.loads((tmp_path / "cfg" / "linear_summary.json").read_text())
        assert summary["config"]["dim"] == 4
        assert summary["summary"]["trials"] == 3


class TestDeterminism:
    @pytest.mark.parametrize("args", [
        ["linear", "--trials", "50", "--seed", "7"],
        ["linear", "--trials", "20", "--unitary"],
        ["wirtinger", "--trials", "50", "--dim", "8", "--k", "3"],
        ["frobenius", "--trials", "30"],
        ["squeeze", "--samples", "100000"],
        ["estimate", "--map", "guth", "--dim", "4", "--k", "1", "--samples", "100000"],
        ["estimate", "--calibrate", "--trials", "2", "--samples", "100000"],
    ])
    def test_repeat_runs_are_byte_identical(self, tmp_path, args):
        first = run(tmp_path, *args, out="first")
        second = run(tmp_path, *args, out="second")
        assert first == second
        assert read_bytes(tmp_path / "first") == read_bytes(tmp_path / "second")

    def test_rho_is_byte_identical(self, tmp_path):
        assert run(tmp_path, "rho", out="first") == 0
        assert run(tmp_path, "rho", out="second") == 0
        assert read_bytes(tmp_path / "first") == read_bytes(tmp_path / "second")


class TestPlots:
    @staticmethod
    def run_rho(tmp_path, out):
        argv = ["rho", "--out", str(tmp_path / out), "--config", str(tmp_path / "missing.yaml"),
                "--no-timestamp", "--quiet"]
        return cli.main(argv)

    def test_rho_svg_is_byte_identical(self, tmp_path):
        assert self.run_rho(tmp_path, "first") == 0
        assert self.run_rho(tmp_path, "second") == 0
        first = read_bytes(tmp_path / "first")
        assert "rho_jacobian.svg" in first
        assert first == read_bytes(tmp_path / "second")

    def test_failed_export_exit_code(self, tmp_path, monkeypatch):
        def broken(self, *args, **kwargs):
            raise ValueError("no renderer")

        monkeypatch.setattr(reporting.go.Figure, "to_image", broken)
        assert self.run_rho(tmp_path, "broken") == 70
        assert not (tmp_path / "broken" / "rho_jacobian.svg").exists()

    def test_no_plot_skips_renderer(self, tmp_path, monkeypatch):
        def broken(self, *args, **kwargs):
            raise ValueError("no renderer")

        monkeypatch.setattr(reporting.go.Figure, "to_image", broken)
        assert run(tmp_path, "rho") == 0

    def test_stable_svg_ids(self):
        svg = ('<svg><defs id="defs-123456"></defs>'
               '<g clip-path="url(#clip123456xyplot)"><path d="M0.123456,1Z"/></g></svg>')
        stable = reporting.stable_svg_ids(svg)
        assert 'id="defs-squeezelab"' in stable
        assert "#clipsqueezelabxyplot" in stable
        assert 'd="M0.123456,1Z"' in stable


class TestReporting:
    def test_header_lines(self):
        lines = reporting.header_lines({"dim": 6, "shoulder": None}, timestamp=False)
        assert lines == ["# dim=6", "# shoulder="]

    def test_csv_uses_full_precision(self, tmp_path):
        path = tmp_path / "t.csv"
        reporting.write_table(pd.DataFrame({"x": [0.1]}), str(path), {"seed": 1}, timestamp=False)
        assert path.read_text() == "# seed=1\nx\n0.10000000000000001\n"

    def test_json_drops_non_finite(self, tmp_path):
        path = tmp_path / "t.json"
        frame = pd.DataFrame({"x": [float("nan"), 1.5]})
        reporting.write_table(frame, str(path), {}, fmt="json", timestamp=False)
        assert json.loads(path.read_text())["rows"] == [{"x": None}, {"x": 1.5}]

    def test_summary_message(self):
        message = reporting.format_summary_message("linear", {"command": "linear", "trials": 3,
                                                              "witness_seeds": [], "passed": True})
        assert message.startswith("✅ linear: PASS")
        assert "trials: 3" in message
        failed = reporting.format_summary_message("rho", {"checks": {"a": False}, "passed": False})
        assert failed.startswith("❌ rho: VIOLATION")
        assert "a=False" in failed
