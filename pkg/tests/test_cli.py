import csv
import json

import pytest

from otdrnet.cli import main

TINY = """
[sim]
rng_seed = 5

[model]
conv_filters = [4, 4, 4, 4]
head_hidden = 4
max_epochs = 2
batch_size = 32
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "c.toml").write_text(TINY)
    return tmp_path


def _files(root):
    return {p.relative_to(root) for p in root.rglob("*") if p.is_file()}


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip())


def test_bound_single_row(workdir):
    assert main(["bound", "--pfa", "0.1", "--snr", "10:10:1", "--trials", "2000",
                 "--out", "out/b.csv"]) == 0
    rows = list(csv.DictReader(open(workdir / "out" / "b.csv")))
    assert len(rows) == 1
    assert 0.0 <= float(rows[0]["p_d"]) <= 1.0
    man = json.loads((workdir / "out" / "b.manifest.json").read_text())
    assert man["subcommand"] == "bound" and man["outputs"] == ["b.csv"]


def test_bound_directory_output(workdir):
    assert main(["bound", "--snr", "0:2:1", "--trials", "2000", "--out", "bd"]) == 0
    assert _files(workdir / "bd") == {__import__("pathlib").Path(n) for n in ("bound.csv", "run_manifest.json")}
    assert len((workdir / "bd" / "bound.csv").read_text().splitlines()) == 4


def test_end_to_end_writes_only_under_out(workdir):
    before = _files(workdir)
    assert main(["simulate", "--config", "c.toml", "--traces", "10", "--out", "o/sim"]) == 0
    assert main(["dataset", "build", "--config", "c.toml", "--traces", "60", "--out", "o/ds"]) == 0
    assert main(["dataset", "variants", "--seed", "9", "--traces", "40", "--kind", "whole",
                 "--out", "o/var"]) == 0
    assert main(["train", "--dataset", "o/ds", "--config", "c.toml", "--out", "o/tr"]) == 0
    assert main(["eval", "compare", "--model", "o/tr/model.ckpt", "--dataset", "o/var",
                 "--calib", "o/ds", "--trials", "2000", "--out", "o/ev"]) == 0
    new = _files(workdir) - before
    assert new and all(p.parts[0] == "o" for p in new)
    for sub in ("sim", "ds", "var", "tr", "ev"):
        man = json.loads((workdir / "o" / sub / "run_manifest.json").read_text())
        assert man["tool_version"] and "config" in man
        for rel in man["outputs"]:
            assert (workdir / "o" / sub / rel).exists()
    tr = json.loads((workdir / "o" / "tr" / "run_manifest.json").read_text())
    ds = json.loads((workdir / "o" / "ds" / "manifest.json").read_text())
    assert tr["inputs"]["dataset_checksum_sha256"] == ds["checksum_sha256"]
    assert tr["config"]["model"]["conv_filters"] == [4, 4, 4, 4]


def test_flags_override_config(workdir):
    assert main(["dataset", "build", "--config", "c.toml", "--traces", "20", "--out", "ds"]) == 0
    assert main(["train", "--dataset", "ds", "--config", "c.toml", "--epochs", "1", "--lr", "0.01",
                 "--out", "tr"]) == 0
    cfg = json.loads((workdir / "tr" / "run_manifest.json").read_text())["config"]["model"]
    assert cfg["max_epochs"] == 1 and cfg["lr"] == 0.01 and cfg["head_hidden"] == 4


def test_usage_errors_exit_1(workdir, capsys):
    assert main(["nosuch"]) == 1
    assert _err(capsys)["exit_code"] == 1
    assert main(["bound", "--snr", "5:1:1", "--out", "x.csv"]) == 1
    capsys.readouterr()
    assert main(["train", "--dataset", "d", "--out", "t", "--lambda", "1,2"]) == 1
    capsys.readouterr()
    (workdir / "bad.toml").write_text("[model]\nnot_a_field = 3\n")
    assert main(["train", "--dataset", "d", "--out", "t", "--config", "bad.toml"]) == 1
    assert _err(capsys)["error"] == "ConfigError"


def test_data_errors_exit_2(workdir, capsys):
    assert main(["train", "--dataset", "missing", "--out", "t"]) == 2
    err = _err(capsys)
    assert err["exit_code"] == 2 and err["message"]


def test_numeric_errors_exit_3(workdir, capsys):
    assert main(["bound", "--pfa", "0.9", "--snr", "0:1:1", "--out", "x.csv"]) == 3
    assert _err(capsys)["error"] == "DomainError"


def test_threads_flag(workdir):
    assert main(["--threads", "1", "bound", "--snr", "0:0:1", "--trials", "2000", "--out", "t.csv"]) == 0
    assert main(["--threads", "0", "bound", "--snr", "0:0:1", "--out", "t.csv"]) == 1
