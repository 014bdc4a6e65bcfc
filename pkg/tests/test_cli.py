import subprocess
import sys

import pytest

from oransim import cli

SMALL = ["--set", "variants=kpm", "--set", "data.kpm.counts=60,40", "--set", "train.kpm.epochs=2"]


def test_gen_data_and_train(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path), "--seed", "3", *SMALL]) == cli.EXIT_OK
    assert (tmp_path / "data" / "kpm" / "manifest.txt").exists()
    assert cli.main(["train", "--out", str(tmp_path), "--seed", "3", *SMALL]) == cli.EXIT_OK
    assert (tmp_path / "models" / "kpm_undefended.orml").exists()
    assert cli.main(["sweep", "--out", str(tmp_path), "--seed", "3", *SMALL,
                     "--set", "attack.eps=0,0.1"]) == cli.EXIT_OK
    assert cli.main(["report", "--out", str(tmp_path), *SMALL]) == cli.EXIT_OK
    assert "sweep kpm_undefended_fgsm" in (tmp_path / "report.txt").read_text()


def test_config_file(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("variants = kpm\ndata.kpm.counts = 30,20  # tiny\n")
    assert cli.main(["gen-data", "--config", str(cfgfile), "--out", str(tmp_path)]) == cli.EXIT_OK


@pytest.mark.parametrize("argv", [["train", "--set", "nope=1"], ["train", "--config", "/nonexistent.cfg"],
                                  ["train", "--set", "novalue"], ["run-loop", "--set", "loop.seeds=-1"]])
def test_config_errors_exit_2(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_runtime_error_exit_3(tmp_path, capsys):
    assert cli.main(["run-loop", "--out", str(tmp_path), "--set", "loop.variant=kpm"]) == cli.EXIT_RUNTIME
    assert "not found" in capsys.readouterr().err
    assert cli.main(["report", "--out", str(tmp_path)]) == cli.EXIT_RUNTIME


def test_module_entry_point_and_bad_mode(tmp_path):
    r = subprocess.run([sys.executable, "-m", "oransim", "train", "--mode", "fast"], capture_output=True)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "oransim", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "run-loop" in r.stdout
