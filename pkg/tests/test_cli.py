"""Tests for the command-line interface."""
import subprocess
import sys
import zlib

import numpy as np
import pytest

from gyronn.cli import PRESETS, derive_seed, main, resolve_config
from gyronn.data import synth_spd_classes, write_sequences
from gyronn.exceptions import ConfigError

SMALL_SPD = ("model=spd\nm=3\nn=4\nclasses=2\nper_class=10\nn_train=12\nepochs=2\n"
             "data_seed=1\nseed=0\n")


def _cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_derive_seed_documented_scheme():
    rng = np.random.default_rng([5, zlib.crc32(b"model")])
    assert derive_seed(5, "model") == int(rng.integers(2**31 - 1))
    assert derive_seed(5, "model") != derive_seed(5, "split")
    assert derive_seed(5, "model") != derive_seed(6, "model")


def test_resolve_config_defaults_and_errors():
    cfg = resolve_config({"model": "spsd"})
    assert (cfg["lr"], cfg["epochs"], cfg["lam"], cfg["gamma"], cfg["beta"]) == \
        (1e-3, 300, 1.0, 0.1, 0.0)
    assert resolve_config({"model": "gr-gcn"})["lr"] == 1e-2
    assert resolve_config({"model": "spd"}, seed=9)["seed"] == 9
    for raw in ({"model": "cnn"}, {"model": "spd", "bogus": "1"},
                {"model": "spd", "lam": "1"}, {"model": "spd", "lr": "fast"},
                {"model": "spd", "data": "files"}, {"model": "spd", "mlr_metric": "xx"}):
        with pytest.raises(ConfigError):
            resolve_config(raw)


def test_presets_resolve():
    from gyronn.cli import _read_raw_config
    for name in PRESETS:
        cfg = resolve_config(_read_raw_config(f"preset:{name}"))
        assert cfg["model"] == name


def test_check_suite_passes(capsys, tmp_path):
    assert main(["check", "--suite", "gyro", "--samples", "10", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "21/21 properties passed" in out
    assert (tmp_path / "check_gyro.csv").exists()


def test_check_reports_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["check", "--suite", "basis", "--seed", "7", "--samples", "10",
                     "--out-dir", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "check_basis.csv").read_bytes() == \
        (tmp_path / "b" / "check_basis.csv").read_bytes()


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["check", "--suite", "nope"]) == 2
    assert main(["gradcheck", "nope"]) == 2
    assert main([]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["train", "--config", "preset:nope"]) == 2
    assert main(["train", "--config", _cfg(tmp_path, "model=spd\nwidth=3\n")]) == 2
    assert not (tmp_path / "runs").exists()


@pytest.mark.parametrize("target", ["spd-fc-le", "gr-gcn-layer"])
def test_gradcheck_targets(capsys, target):
    assert main(["gradcheck", target, "--seed", "1"]) == 0
    assert target in capsys.readouterr().out


def test_train_eval_and_determinism(tmp_path, capsys):
    cfg = _cfg(tmp_path, SMALL_SPD)
    for d in ("a", "b"):
        assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / d)]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("test accuracy: ")
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "checkpoint" / "manifest.txt").exists() and (a / "timing.csv").exists()
    assert main(["eval", "--config", cfg, "--out-dir", str(a)]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == out.strip().splitlines()[-1]
    assert main(["train", "--config", cfg, "--seed", "3", "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "metrics.csv").read_bytes() != (a / "metrics.csv").read_bytes()


def test_train_zero_epochs(tmp_path, capsys):
    cfg = _cfg(tmp_path, SMALL_SPD.replace("epochs=2", "epochs=0"))
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "checkpoint" / "manifest.txt").exists()
    lines = (tmp_path / "r" / "metrics.csv").read_text().splitlines()
    assert {ln.split(",")[0] for ln in lines[1:]} == {"0"}
    assert "test accuracy" in capsys.readouterr().out


def test_train_missing_data_exit_1(tmp_path, capsys):
    cfg = _cfg(tmp_path, f"model=spd\ndata=files\nsequences={tmp_path / 'nothing'}\n")
    out_dir = tmp_path / "r"
    assert main(["train", "--config", cfg, "--out-dir", str(out_dir)]) == 1
    assert not out_dir.exists()
    assert "gyronn: error" in capsys.readouterr().err


def test_train_from_sequence_files(tmp_path, capsys):
    X, y = synth_spd_classes(2, 8, 3, 0.1, seed=0)
    write_sequences(str(tmp_path / "seq"), X[:, None], y)
    cfg = _cfg(tmp_path, f"model=spsd\ndata=files\nsequences={tmp_path / 'seq'}\n"
                         "m=3\np=1\nn_train=10\nepochs=1\n")
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "r")]) == 0


def test_graph_train_from_files(tmp_path, capsys):
    from gyronn.data import synth_sbm_graph, write_graph
    g = synth_sbm_graph(20, 2, 0.5, 0.05, seed=1)
    paths = [str(tmp_path / n) for n in ("e.tsv", "f.csv", "l.csv")]
    write_graph(g, *paths)
    cfg = _cfg(tmp_path, f"model=gr-gcn-onb\ndata=files\nedges={paths[0]}\n"
                         f"features={paths[1]}\nlabels={paths[2]}\nn=4\np=2\nepochs=3\n")
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "r")]) == 0
    assert main(["eval", "--config", cfg, "--out-dir", str(tmp_path / "r")]) == 0


def test_console_script_module_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gyronn", "check", "--suite", "bogus"],
                         capture_output=True, text=True)
    assert res.returncode == 2
