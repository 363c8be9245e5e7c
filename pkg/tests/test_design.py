import numpy as np
import pytest
from pydantic import ValidationError

from resetgraph.design import (
    DesignError,
    FeasibleEntry,
    GridSpec,
    MStructure,
    PipelineConfig,
    Step1Failure,
    _score_key,
    collect_P_set,
    design_pipeline,
    synthesize_reset,
)
from resetgraph.example import example_config
from resetgraph.linsys import StateSpace

from conftest import EXAMPLE_LAMBDAS, example_bls, first_order

FO = {"tf": {"num": [1.0], "den": [1.0, 1.0]}}


def small_config(**kw):
    cfg = dict(plant=FO, controller=FO, lambdas={"kind": "values", "values": [0.0, 0.5]},
               k1_grid={"kind": "values", "values": [2.0, 1.0]}, T_end=10.0, mode="hard")
    cfg.update(kw)
    return cfg


@pytest.fixture(scope="module")
def small_run():
    return design_pipeline(small_config())


def test_m_structure():
    G = first_order()
    M = MStructure(2.0).build(G)
    # q = [x; u], y = x: q'Mq = y(u - 2y) * 2 with the symmetric form
    x, u = 0.3, 1.0
    q = np.array([x, u])
    assert q @ M @ q == pytest.approx(2 * x * u - 2.0 * x * x)
    with pytest.raises(ValueError):
        MStructure(1.0, 1.0)


def test_small_pipeline(small_run):
    cert, res = small_run.certificate, small_run.design
    assert cert.stable and cert.r_min == pytest.approx(1.0, abs=1e-3)
    assert {e.k1 for e in res.feasible_set} == {1.0, 2.0}
    assert all(e.report.admissible for e in res.feasible_set)
    assert res.selected in res.feasible_set
    # the selected entry minimizes the criterion
    best = min(res.scores.values(), key=lambda s: s["l2_u1"])["l2_u1"]
    assert res.scores[res.feasible_set.index(res.selected)]["l2_u1"] == best
    csv_text = res.scores_csv()
    assert csv_text.splitlines()[0].startswith("index,k1,R")
    assert res.to_dict()["selected"]["k1"] == res.selected.k1


def test_tie_break_prefers_smaller_k1_then_R():
    a = FeasibleEntry(np.array([[0.5]]), 2.0, 0.0, [0.0], 0.0)
    b = FeasibleEntry(np.array([[0.0]]), 2.0, 0.0, [0.0], 0.0)
    c = FeasibleEntry(np.array([[0.0]]), 1.0, 0.0, [0.0], 0.0)
    metric = 1.2345678901
    ranked = sorted([a, b, c], key=lambda e: _score_key(metric, e))
    assert ranked == [c, b, a]
    # differences below 9 significant digits count as ties
    assert _score_key(metric * (1 + 1e-12), a)[0] == _score_key(metric, a)[0]


def test_empty_grids():
    with pytest.raises(DesignError):
        collect_P_set(first_order(), [])
    with pytest.raises(DesignError):
        synthesize_reset([np.eye(1)], [], 0.0, "free", first_order())
    with pytest.raises(DesignError):
        design_pipeline(small_config(k1_grid={"kind": "values", "values": []}))
    with pytest.raises(DesignError):
        design_pipeline(small_config(k2=5.0))


def test_config_validation():
    with pytest.raises(ValidationError):
        PipelineConfig.model_validate(small_config(bogus=1))
    with pytest.raises(ValidationError):
        PipelineConfig.model_validate(small_config(delta=-1.0))
    with pytest.raises(ValidationError):
        PipelineConfig.model_validate(small_config(criterion="fastest"))


def test_range_grid_is_exact():
    g = GridSpec(kind="range", start=-1.0, stop=1.0, step=0.01).array()
    assert g.size == 201
    assert np.array_equal(g, EXAMPLE_LAMBDAS)
    assert 0.07 in g  # not 0.07000000000000006


def test_scalar_feasible_subset_of_free():
    bls = example_bls()
    certs, _ = collect_P_set(bls, np.linspace(-0.5, 0.5, 21))
    grid = [0.5, 2.0, 8.0, 30.0]
    free = {e.k1 for e in synthesize_reset(certs, grid, 0.0, "free", bls)}
    scalar = {e.k1 for e in synthesize_reset(certs, grid, 0.0, "scalar", bls)}
    assert scalar <= free


def test_uncontrollable_controller_rejected():
    G = StateSpace(np.diag([-1.0, -2.0]), [[1.0], [0.0]], [[1.0, 1.0]], [[0.0]])
    with pytest.raises(DesignError):
        collect_P_set(G, [0.0])


def test_step1_failure_at_high_gain():
    with pytest.raises(Step1Failure) as err:
        design_pipeline(example_config(gain_scale=100.0))
    assert err.value.distance < 1e-3
    assert not err.value.certificate.stable
