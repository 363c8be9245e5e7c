import json

import numpy as np
import pytest

from resetgraph.cli import main
from resetgraph.example import dumps


@pytest.mark.slow
def test_report_structure(example_run):
    report, cert, _ = example_run
    assert report["status"] == "PASS"
    assert [c["id"] for c in report["checks"]] == ["step1", "9a", "9b", "9c", "cloud"]
    assert cert["n_P"] > 0 and cert["step1"]["mode"] == "hard"
    assert cert["step1_soft"]["mode"] == "soft" and len(cert["step1_soft"]["mu_grid"]) == 20
    # the certificate is strict JSON
    json.loads(dumps(cert))


@pytest.mark.slow
def test_every_feasible_entry_rechecked(example_run):
    _, cert, _ = example_run
    adm = cert["admissibility"]
    assert adm and all(a["admissible"] for a in adm)
    ks = [e["k1"] for e in cert["design"]["feasible_set"]]
    assert ks == sorted(ks)


@pytest.mark.slow
def test_selected_controller_resets(example_run):
    report, cert, _ = example_run
    sel = cert["design"]["selected"]
    assert cert["design"]["scores"][str(sel["index"])]["jumps"] > 0
    assert np.allclose(report["selected"]["R"], 0.0)


def test_cli_gain_scale_fails_at_step1(tmp_path, capsys):
    code = main(["reproduce-example", "--gain-scale", "100", "--out", str(tmp_path)])
    assert code == 1
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["aborted_at"] == "step1" and rep["distance"] < 1e-3
    assert "FAIL" in capsys.readouterr().out
