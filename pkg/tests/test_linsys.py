import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resetgraph.linsys import (
    NotHurwitzError,
    PoleOnAxisError,
    StateSpace,
    TransferFunction,
    ctrb,
    dc_gain,
    freq_response,
    hinf_norm,
    is_controllable,
    is_hurwitz,
    is_normal,
    nyquist_curve,
    real_spectrum_interval,
    system_from_dict,
)

from conftest import example_bls, first_order

# max |0.1 + 0.055/(1 - w^2 + jw)| on a 1e6-point log sweep over [1e-4, 1e4]
BLS_HINF = 0.15558235381731828


def test_tf_to_ss_matches_frequency_response():
    tf = TransferFunction((0.1, 0.1, 0.155), (1, 1, 1))
    G = tf.to_ss()
    for w in [0.0, 0.3, 1.0, 7.0]:
        assert freq_response(G, w)[0, 0] == pytest.approx(tf(1j * w), rel=1e-12)


def test_improper_tf_rejected():
    with pytest.raises(ValueError):
        TransferFunction((1, 0, 0), (1, 1))


def test_hinf_first_order():
    assert hinf_norm(first_order()) == pytest.approx(1.0, rel=1e-9)


def test_hinf_example_bls_against_sweep():
    assert hinf_norm(example_bls()) == pytest.approx(BLS_HINF, rel=1e-9)


def test_hinf_static_and_unstable():
    assert hinf_norm(StateSpace.static([[2.0]])) == pytest.approx(2.0)
    with pytest.raises(NotHurwitzError):
        hinf_norm(TransferFunction((1,), (1, 0)).to_ss())


def test_pole_on_axis_detected():
    G = TransferFunction((1,), (1, 0, 1)).to_ss()  # poles at +-j
    with pytest.raises(PoleOnAxisError):
        freq_response(G, 1.0)


def test_dc_gain_and_hurwitz():
    assert dc_gain(example_bls())[0, 0] == pytest.approx(0.155)
    assert is_hurwitz(example_bls().A)
    assert not is_hurwitz(np.array([[0.0]]))


def test_controllability_ranks():
    A = np.diag([-1.0, -2.0])
    assert np.linalg.matrix_rank(ctrb(A, np.array([[1.0], [1.0]]))) == 2
    assert is_controllable(A, np.array([[1.0], [1.0]]))
    assert not is_controllable(A, np.array([[1.0], [0.0]]))  # rank 1 by hand


def test_normality():
    assert is_normal(first_order())
    diag = StateSpace(-np.diag([1.0, 2.0]), np.eye(2), np.eye(2), np.zeros((2, 2)))
    assert is_normal(diag)
    skew = StateSpace(-np.diag([1.0, 2.0]), np.eye(2), np.array([[1.0, 3.0], [0.0, 1.0]]),
                      np.zeros((2, 2)))
    assert not is_normal(skew)


def test_spectrum_interval_first_order_and_bls():
    s = real_spectrum_interval(first_order())
    assert (s.p0, s.p1) == (pytest.approx(0.0, abs=1e-12), pytest.approx(1.0))
    s = real_spectrum_interval(example_bls())
    assert s.p0 == pytest.approx(0.1, abs=1e-12)
    assert s.p1 == pytest.approx(0.155, abs=1e-12)


def test_spectrum_interval_interior_crossing():
    # 1/(s+1)^3 crosses the negative real axis at w = sqrt(3) with value -1/8
    G = TransferFunction((1,), (1, 3, 3, 1)).to_ss()
    s = real_spectrum_interval(G)
    assert s.p0 == pytest.approx(-0.125, rel=1e-9)
    assert s.p1 == pytest.approx(1.0)


def test_system_from_dict_roundtrip():
    G = example_bls()
    H = system_from_dict(G.to_dict())
    assert np.allclose(H.A, G.A) and np.allclose(H.D, G.D)
    with pytest.raises(ValueError):
        system_from_dict({"zpk": {}})


def test_nyquist_curve_conjugate_closed():
    pts = nyquist_curve(first_order(), np.logspace(-2, 2, 50))
    arr = np.array(pts)
    assert np.allclose(np.sort_complex(arr), np.sort_complex(arr.conj()))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10))
def test_scaling_scales_norm(a, c):
    G = TransferFunction((1.0,), (1.0, a)).to_ss()
    assert hinf_norm(G * c) == pytest.approx(c / a, rel=1e-6)
