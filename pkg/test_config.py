import dataclasses
import os

import pytest

import config


def test_missing_file_gives_defaults(tmp_path):
    assert config.load_config(str(tmp_path / "none.yaml")) == config.DEFAULTS


def test_yaml_values_and_unknown_keys(tmp_path, caplog):
    path = tmp_path / "lab.yaml"
    path.write_text("dim: 8\nradius: 2.5\ncolour_scheme: dark\n")
    loaded = config.load_config(str(path))
    assert loaded["dim"] == 8 and loaded["radius"] == 2.5
    assert "colour_scheme" not in loaded
    assert "colour_scheme" in caplog.text


def test_repo_config_matches_defaults():
    assert config.load_config(os.path.join(os.path.dirname(__file__), "config.yaml")) == config.DEFAULTS


def test_overrides_win_and_none_is_unset(tmp_path):
    path = tmp_path / "lab.yaml"
    path.write_text("trials: 50\nseed: 3\n")
    cfg = config.resolve_config("linear", {"trials": 10, "seed": None}, config_path=str(path))
    assert cfg.trials == 10
    assert cfg.seed == 3
    assert cfg.command == "linear"
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.trials = 5


def test_header_omits_output_directory(tmp_path):
    cfg = config.resolve_config("rho", {}, config_path=str(tmp_path / "none.yaml"))
    header = cfg.header()
    assert "out" not in header
    assert list(header)[0] == "command"


@pytest.mark.parametrize("raw, expected", [("3", 3), ("0", None), ("lots", None), ("", None)])
def test_thread_cap(monkeypatch, raw, expected):
    monkeypatch.setenv(config.THREADS_ENV, raw)
    assert config.get_thread_cap() == expected


def test_worker_count_respects_cap(monkeypatch):
    monkeypatch.setenv(config.THREADS_ENV, "1")
    assert config.worker_count() == 1
