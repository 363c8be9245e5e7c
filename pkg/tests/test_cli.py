import csv
import json

import pytest

from resetgraph.cli import main

FO = {"tf": {"num": [1.0], "den": [1.0, 1.0]}}


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_sg_writes_region_and_boundary(tmp_path):
    cfg = write(tmp_path, "sg.json", {"system": FO,
                                      "lambdas": {"kind": "range", "start": -1, "stop": 1, "step": 0.1}})
    assert main(["sg", cfg, "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "region.json").read_text())
    assert doc["tool"] == "resetgraph" and len(doc["config_hash"]) == 64
    rows = list(csv.reader((tmp_path / "o" / "boundary.csv").open()))
    assert rows[0] == ["re", "im", "constraint_index"] and len(rows) > 10


def test_patch_exports_P_set(tmp_path):
    cfg = write(tmp_path, "p.json", {"system": FO, "lambdas": {"kind": "values", "values": [0, 0.5, 2]}})
    assert main(["patch", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "region.json").read_text())
    assert doc["kind"] == "patch" and doc["P_set"]


def test_malformed_json_exit_2(tmp_path):
    cfg = write(tmp_path, "bad.json", "{not json")
    assert main(["sg", cfg, "--out", str(tmp_path)]) == 2


def test_unknown_key_exit_2(tmp_path):
    cfg = write(tmp_path, "bad.json", {"system": FO, "colour": "red"})
    assert main(["sg", cfg, "--out", str(tmp_path)]) == 2


def test_step_size_exit_2(tmp_path):
    cfg = write(tmp_path, "sim.json", {"system": FO, "k1": 1.0, "delta": 0.01, "dt": 0.01, "T_end": 1.0})
    assert main(["simulate", cfg, "--out", str(tmp_path)]) == 2


def test_admissible_exit_codes(tmp_path):
    lam = {"kind": "values", "values": [0.0, 0.5]}
    ok = write(tmp_path, "a.json", {"system": FO, "R": [[0.5]], "k1": 1.0, "lambdas": lam})
    assert main(["admissible", ok, "--out", str(tmp_path / "a")]) == 0
    bad = write(tmp_path, "b.json", {"system": FO, "R": [[3.0]], "M": [[-1, 0], [0, -1]],
                                      "lambdas": lam})
    assert main(["admissible", bad, "--out", str(tmp_path / "b")]) == 1


def test_stability_exit_codes(tmp_path):
    lam = {"kind": "range", "start": -1, "stop": 2, "step": 0.1}
    ok = write(tmp_path, "s.json", {"plant": FO, "controller": FO, "lambdas": lam, "mode": "hard"})
    assert main(["stability", ok, "--out", str(tmp_path / "s")]) == 0
    cert = json.loads((tmp_path / "s" / "certificate.json").read_text())
    assert cert["stable"] and cert["r_min"] == pytest.approx(1.0, abs=1e-3)
    big = {"tf": {"num": [100.0], "den": [1.0, 1.0]}}
    no = write(tmp_path, "n.json", {"plant": big, "controller": big, "lambdas": lam, "mode": "hard"})
    assert main(["stability", no, "--out", str(tmp_path / "n")]) == 1


def test_simulate_closed_loop(tmp_path):
    cfg = write(tmp_path, "sim.json", {"system": FO, "k1": 20.0, "R": [[0.0]], "plant": FO,
                                        "T_end": 5.0, "dt": 1e-3})
    assert main(["simulate", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "trace.csv").open()))
    assert rows[0][0] == "t" and rows[0][-1] == "jump_flag" and len(rows) == 5002
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["metrics"]["jumps"] == len(m["jumps"])


def test_sgcloud_containment(tmp_path):
    cfg = write(tmp_path, "c.json", {"system": FO, "k1": 1.0, "n_inputs": 3, "T_grid": [1.0, 4.0],
                                      "lambdas": {"kind": "range", "start": -1.5, "stop": 1.5,
                                                  "step": 0.05}})
    assert main(["sgcloud", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "cloud.json").read_text())
    assert doc["points"] == 12 and doc["containment"]["inside"] == 12


def test_design_small(tmp_path):
    cfg = write(tmp_path, "d.json", {"plant": FO, "controller": FO,
                                      "lambdas": {"kind": "values", "values": [0.0, 0.5]},
                                      "k1_grid": {"kind": "values", "values": [1.0, 2.0]},
                                      "T_end": 10.0, "mode": "hard"})
    assert main(["design", cfg, "--out", str(tmp_path)]) == 0
    for name in ("certificate.json", "design.json", "scores.csv"):
        assert (tmp_path / name).exists()
