import csv
import json
import subprocess
import sys

import pytest

from paraspde.cli import ConfigError, ExperimentConfig, main


def _write(tmp_path, doc):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return p


def test_unknown_subcommand_exits_2():
    r = subprocess.run([sys.executable, "-m", "paraspde.cli", "bogus"], capture_output=True)
    assert r.returncode == 2


def test_invalid_config_is_nonzero(tmp_path):
    assert main(["renorm", "--config", str(_write(tmp_path, {"dim": 4})), "--out", str(tmp_path)]) != 0
    assert main(["renorm", "--config", str(_write(tmp_path, {"nope": 1})), "--out", str(tmp_path)]) != 0
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"eps_grid": [2.0]})


def test_renorm_cubic_coupling(tmp_path):
    cfg = _write(tmp_path, {"eps_grid": [0.5]})
    assert main(["renorm", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    raw = (tmp_path / "o" / "renorm.csv").read_bytes()
    assert b"\r\n" in raw
    row = next(csv.DictReader(raw.decode().splitlines()))
    s2 = float(row["sigma_sq"])
    assert float(row["lambda3"]) == pytest.approx(float(row["f3"]))
    assert float(row["f3"]) == pytest.approx(10 * s2, rel=1e-9)
    assert row["config_hash"] == ExperimentConfig.from_json({"eps_grid": [0.5]}).hash


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, {"eps_grid": [0.5], "ensemble": 2, "n_frames": 8, "seed": 3})
    for d in ("a", "b"):
        assert main(["decompose", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "decompose.csv").read_bytes() == (tmp_path / "b" / "decompose.csv").read_bytes()
    assert not list((tmp_path / "a").glob("*.partial"))


def test_seed_flag_changes_hash():
    a = ExperimentConfig.from_json({"seed": 1})
    b = ExperimentConfig.from_json({"seed": 2})
    assert a.hash != b.hash and len(a.hash) == 16


def test_maxprinciple_margins(tmp_path):
    cfg = _write(tmp_path, {"eps_grid": [0.5], "ensemble": 1, "n_frames": 10})
    assert main(["maxprinciple", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "maxprinciple.csv").read_text().splitlines()))
    assert rows and all(float(r["margin"]) >= 0 for r in rows)
