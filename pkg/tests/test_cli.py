import argparse
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from geomatch import cli
from geomatch.data import load_csv

SMALL = """
[dataset]
kind = "swissroll"
n = 40

[experiment]
seeds = [0]
spaces = [{method = "identity", distances = ["euclidean"]}, {method = "pca", k = 2}]
distances = ["euclidean", "riemannian"]
sigma_factors = [0.5]

[geodesic]
nodes = 8
max_nodes = 32
"""


def subparsers():
    parser = cli.build_parser()
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices


def test_generate_example(tmp_path):
    out = tmp_path / "d.csv"
    assert cli.main(["generate", "--kind", "swissroll", "--n", "200", "--dim", "3", "--seed", "7", "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert header[:5] == ["x0", "x1", "x2", "t", "y"]
    ds = load_csv(out)
    assert ds.n == 200 and ds.dim == 3


def test_missing_config_exits_1(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    assert cli.main(["sweep", "--config", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_bad_flag_exits_1(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["generate", "--bogus"])
    assert info.value.code == 1


@pytest.mark.parametrize("name", ["generate", "fit", "match", "evaluate", "sweep", "plot"])
def test_help_lists_flags_with_defaults(name):
    sub = subparsers()[name]
    text = sub.format_help()
    formatter = sub._get_formatter()
    for action in sub._actions:
        if not action.option_strings or action.dest == "help":
            continue
        assert action.option_strings[-1] in text
        if not action.required:
            assert "default" in formatter._expand_help(action), action.option_strings


def test_pipeline_round_trip(tmp_path):
    data = tmp_path / "d.csv"
    space = tmp_path / "s.json"
    pairs = tmp_path / "p.csv"
    est = tmp_path / "e.json"
    assert cli.main(["generate", "--n", "60", "--seed", "1", "--out", str(data)]) == 0
    assert cli.main(["fit", "--data", str(data), "--method", "pca", "--k", "2", "--out", str(space)]) == 0
    assert cli.main(["match", "--data", str(data), "--space", str(space), "--distance", "euclidean",
                     "--out", str(pairs)]) == 0
    assert cli.main(["evaluate", "--data", str(data), "--pairs", str(pairs), "--out", str(est)]) == 0
    doc = json.loads(est.read_text())
    assert doc["n_matched"] == 60 and doc["pehe"] >= 0
    assert cli.main(["match", "--data", str(data), "--space", str(space), "--distance", "riemannian",
                     "--set", "nodes=8", "--out", str(pairs)]) == 0
    lines = pairs.read_text().splitlines()
    assert len(lines) == 61


def test_sweep_twice_identical(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["sweep", "--config", str(cfg), "--out-dir", str(out)]) == 0
        runs.append((out / "report.json").read_bytes())
    assert runs[0] == runs[1]


def test_sweep_dims_and_plot(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL)
    out = tmp_path / "o"
    assert cli.main(["sweep", "--config", str(cfg), "--out-dir", str(out), "--dims", "3,4",
                     "--set", 'experiment.spaces=[{method = "identity"}]', "--set", 'experiment.distances=["euclidean"]']) == 0
    doc = json.loads((out / "sweep.json").read_text())
    assert doc["dims"] == [3, 4]
    assert cli.main(["plot", "--config", str(cfg), "--out-dir", str(out)]) == 0
    assert sorted(p.name for p in (out / "plots").iterdir()) == [
        "0_identity_euclidean.svg", "0_pca2_euclidean.svg", "0_pca2_riemannian.svg"]


def test_unknown_config_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL + "\nbogus = 1\n")
    assert cli.main(["sweep", "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "geomatch", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep" in proc.stdout
