import csv
import json
from pathlib import Path

import pytest

from perciso.cli import run
from perciso.config import ConfigError, load_config, parse_seeds

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = str(ROOT / "configs" / "default.ini")


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_seed_ranges():
    assert parse_seeds("0-3,7") == [0, 1, 2, 3, 7]
    with pytest.raises(ValueError):
        parse_seeds("3-1")


def test_gen_then_verify_full_lattice(tmp_path):
    assert run(["gen", "--out", str(tmp_path), "--model", "site2d", "--p", "1", "--m", "12",
                "--seeds", "0-1"]) == 0
    files = sorted((tmp_path / "gen").glob("*.perc"))
    assert len(files) == 2
    out = tmp_path / "v"
    code = run(["verify", "--out", str(out), "--inputs", ",".join(map(str, files)), "--n", "2",
                "--k-max", "8", "--exit-ns", "4", "--exit-times", "1,5"])
    assert code == 0
    rows = read_rows(out / "verify.csv")
    assert rows and all(r["holds"] == "1" for r in rows)
    assert all(r["schema_version"] for r in rows)


def test_walk_refuses_single_time(tmp_path, capsys):
    assert run(["walk", "--out", str(tmp_path), "--times", "10", "--walkers", "10"]) == 2
    assert "five" in capsys.readouterr().err


def test_config_error_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[global]\nseed = 1\n\n[walk]\nwalkers = 100\np = 1.5\n")
    assert run(["walk", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "bad.ini:6" in err and "p" in err
    bad.write_text("[walk]\nspeed = 3\n")
    with pytest.raises(ConfigError, match="bad.ini:2"):
        load_config(str(bad), "walk")
    bad.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(str(bad), "walk")


def test_flag_overrides_config():
    glob, c = load_config(DEFAULT, "walk", {"walk": {"walkers": "77"}, "global": {"seed": "5"}})
    assert c.walkers == 77 and glob.seed == 5


def test_manifest_contents(tmp_path):
    assert run(["cluster", "--config", DEFAULT, "--out", str(tmp_path), "--ns", "4,6",
                "--seeds", "0-1"]) == 0
    man = json.loads((tmp_path / "cluster_manifest.json").read_text())
    assert man["command"] == "cluster" and man["outputs"] == ["cluster.csv"]
    assert man["config"]["cluster"]["seeds"] == [0, 1]
    assert {"numpy", "scipy", "python", "perciso"} <= set(man["versions"])
    assert man["seeds"]["master"] == 20240601 and man["wall_time_s"] >= 0
    rows = read_rows(tmp_path / "cluster.csv")
    keys = [(int(r["seed"]), int(r["n"])) for r in rows]
    assert keys == sorted(keys) and len(keys) == 4


def test_walk_outputs_are_reproducible(tmp_path):
    args = ["walk", "--config", DEFAULT, "--n", "6", "--walkers", "600", "--seeds", "0-1",
            "--times", "1,2,4,8,16", "--window", "1,16"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("walk.csv", "walk_fit.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_writes_charts(tmp_path):
    assert run(["spectrum", "--config", DEFAULT, "--out", str(tmp_path), "--ns", "4,6",
                "--seeds", "0-1"]) == 0
    assert run(["report", "--out", str(tmp_path)]) == 0
    assert list(tmp_path.glob("*.svg"))
