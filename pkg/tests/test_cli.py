import csv
import json

import pytest

from maxlab.cli import EXIT_CONFIG, EXIT_GUARD, EXIT_OK, main

RATIO_SWEEP_MAX = 0.829450873440398


def report(out, name):
    return json.loads((out / f"{name}.report.json").read_text())


def test_badness_prints_count_and_confirmation(tmp_path, capsys):
    assert main(["badness", "--n", "2", "--r", "4", "--out-dir", str(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "112/256"
    assert lines[1] == "enumeration: 112/256 (confirmed)"
    rep = report(tmp_path, "badness")
    assert rep["results"]["fraction"] == "7/16"
    assert rep["defaults"]["gamma"] == 3.0 and rep["defaults"]["d"] == 33.0


def test_enumeration_guard_exit_code(tmp_path):
    assert main(["gridcheck", "--n", "3", "--M", "9", "--N", "0", "--out-dir", str(tmp_path)]) == EXIT_GUARD


def test_gridcheck_passes(tmp_path):
    assert main(["gridcheck", "--n", "2", "--M", "4", "--N", "1", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert report(tmp_path, "gridcheck")["results"]["cardinality"] == 64


def test_bad_option_is_a_config_error(tmp_path):
    assert main(["constants", "--family", "nope", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["badness", "--res", "x", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[maxlab]\nr = 3\nn = 2\n")
    assert main(["badness", "--config", str(cfg), "--out-dir", str(tmp_path), "--name", "a"]) == EXIT_OK
    assert report(tmp_path, "a")["results"]["bad"] == 64 - 16
    assert main(["badness", "--config", str(cfg), "--r", "4", "--out-dir", str(tmp_path), "--name", "b"]) == EXIT_OK
    assert report(tmp_path, "b")["results"]["bad"] == 112


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[maxlab]\nbogus = 1\n")
    assert main(["badness", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    cfg.write_text("[other]\nr = 1\n")
    assert main(["badness", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_missing_measure_file_is_io_error(tmp_path):
    code = main(["constants", "--sigma", str(tmp_path / "no.npz"), "--omega", str(tmp_path / "no.npz"), "--out-dir", str(tmp_path)])
    assert code == 3


def test_whitney_subcommand(tmp_path):
    assert main(["whitney", "--refine", "1", "--out-dir", str(tmp_path)]) == EXIT_OK
    rep = report(tmp_path, "whitney")
    assert rep["failing"] == []
    assert rep["properties"]["maximum_principle"] is True
    with open(tmp_path / "whitney.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["k", "j", "level", "index0", "A_jk"]


def test_selftest(tmp_path, capsys):
    assert main(["selftest", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


def test_constants_and_mollify(tmp_path):
    assert main(["constants", "--res", "3", "--restarts", "1", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert main(["mollify", "--res", "3", "--osc-samples", "5", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert report(tmp_path, "mollify")["properties"]["mass_preserved"] is True


def test_domination_small(tmp_path):
    assert main(["domination", "--count", "3", "--samples", "200", "--out-dir", str(tmp_path)]) == EXIT_OK


def test_ratio_sweep_golden_and_byte_identical(tmp_path, monkeypatch):
    args = ["ratio-sweep", "--n", "1", "--family", "random-cells", "--count", "50", "--seed", "42"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    monkeypatch.setenv("MAXLAB_THREADS", "2")
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == EXIT_OK
    first = (tmp_path / "a" / "ratio-sweep.csv").read_bytes()
    assert first == (tmp_path / "b" / "ratio-sweep.csv").read_bytes()
    assert b"\r" not in first
    rows = list(csv.DictReader(first.decode().splitlines()))
    assert len(rows) == 50
    assert max(float(r["ratio"]) for r in rows) == RATIO_SWEEP_MAX


def test_bad_thread_setting(tmp_path, monkeypatch):
    monkeypatch.setenv("MAXLAB_THREADS", "zero")
    assert main(["badness", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("cmd", ["constants", "norm", "whitney", "badness", "domination", "mollify", "ratio-sweep", "gridcheck", "selftest"])
def test_help_exits_cleanly(cmd, capsys):
    assert main([cmd, "--help"]) == EXIT_OK
