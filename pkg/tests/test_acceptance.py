"""Acceptance criteria, one test each.

Every test records a one-line verdict (shown in the terminal summary) before
asserting, so a failing run still lists all measured values.
"""

import time

import numpy as np
import pytest
from scipy.linalg import expm

from resetgraph.cert import check_admissible
from resetgraph.design import MStructure, collect_P_set
from resetgraph.example import dumps, reproduce
from resetgraph.linsys import StateSpace, TransferFunction, hinf_norm, nyquist_curve
from resetgraph.resetsim import InputSignal, ResetSystem, cloud_points, sample_sg_cloud, simulate_reset
from resetgraph.sdpcore import FEASIBLE, INFEASIBLE, kyp_solve
from resetgraph.sgregions import (
    CircleConstraint,
    RegionApprox,
    default_lambdas,
    invert_region,
    membership,
    negate_region,
    patch_overapprox,
    scale_region,
    sg_overapprox,
)

from conftest import EXAMPLE_LAMBDAS, example_bls, first_order

# real extremes of the example BLS Nyquist curve: D = 0.1 at high frequency, 0.155 at DC
BLS_P0, BLS_P1 = 0.1, 0.155


def test_c01_gain_disk(criterion):
    G = first_order()
    t0 = time.perf_counter()
    out = kyp_solve(G, -1, 0.0)
    dt = time.perf_counter() - t0
    r = out.cert.r
    psd = np.linalg.eigvalsh(out.cert.P).min() >= -1e-9
    ok = (abs(r - 1.0) <= 1e-3 and psd and abs(r - hinf_norm(G)) <= 1e-3 * hinf_norm(G)
          and dt < 1.0)
    criterion(1, ok, f"r={r:.6f} hinf={hinf_norm(G):.6f} psd={psd} t={dt:.3f}s")
    assert ok


def test_c02_hand_certificate(criterion):
    t0 = time.perf_counter()
    c = kyp_solve(first_order(), -1, 0.5).cert
    dt = time.perf_counter() - t0
    ok = abs(c.r - 0.5) <= 1e-3 and abs(c.P[0, 0] - 0.5) <= 1e-6 and dt < 1.0
    criterion(2, ok, f"r={c.r:.6f} P={c.P[0, 0]:.8f} t={dt:.3f}s")
    assert ok


def _classify(G, p0, p1):
    D = p1 - p0
    inside = np.linspace(p0 + 0.05 * D, p1 - 0.05 * D, 13)[1:-1]
    outside = np.concatenate([p0 - 0.05 * D - D * np.linspace(0.02, 3.0, 6),
                              p1 + 0.05 * D + D * np.linspace(0.02, 3.0, 5)])
    bad = []
    for lam in inside:
        if kyp_solve(G, 1, float(lam), require_psd=True).status != INFEASIBLE:
            bad.append(("in", float(lam)))
    for lam in outside:
        if kyp_solve(G, 1, float(lam), require_psd=True).status != FEASIBLE:
            bad.append(("out", float(lam)))
    return bad, len(inside), len(outside)


def test_c03_spectrum_classification(criterion):
    t0 = time.perf_counter()
    bad1, ni, no = _classify(first_order(), 0.0, 1.0)
    bad2, _, _ = _classify(example_bls(), BLS_P0, BLS_P1)
    dt = time.perf_counter() - t0
    ok = not bad1 and not bad2 and ni == 11 and no == 11 and dt < 30
    criterion(3, ok, f"{ni}+{no} lambdas per system, misclassified={bad1 + bad2} t={dt:.1f}s")
    assert ok


def test_c04_overapprox_soundness(criterion):
    systems = {"1/(s+1)": first_order(), "bls": example_bls(),
               "1/(s+1)^3": TransferFunction((1.0,), (1.0, 3.0, 3.0, 1.0)).to_ss()}
    w = np.logspace(-3, 3, 1000)
    t0 = time.perf_counter()
    worst = {}
    for name, G in systems.items():
        R = sg_overapprox(G, default_lambdas(G, 401))
        pts = np.array(nyquist_curve(G, w))  # 1000 frequencies, both conjugates
        assert pts.size == 2000
        worst[name] = float(R.slack(pts).min())
    dt = time.perf_counter() - t0
    ok = all(v >= -1e-6 for v in worst.values()) and dt < 120
    criterion(4, ok, f"min slack {', '.join(f'{k}={v:.2e}' for k, v in worst.items())} t={dt:.1f}s")
    assert ok


def test_c05_scalar_reset_shortcut(criterion):
    bls = example_bls()
    t0 = time.perf_counter()
    certs, _ = collect_P_set(bls, EXAMPLE_LAMBDAS)
    M = MStructure(6.2).build(bls)
    rows = []
    for a in (-1.0, -0.5, 0.0, 0.5, 1.0):
        sys = ResetSystem(bls, a * np.eye(bls.m), M, 1e-2)
        short = check_admissible(sys, certs)
        lmi = check_admissible(sys, certs, force_lmi=True)
        rows.append((a, short.admissible, lmi.admissible))
    dt = time.perf_counter() - t0
    ok = all(s and l for _, s, l in rows) and dt < 60
    criterion(5, ok, f"|P|={len(certs)} (alpha, shortcut, lmi)={rows} t={dt:.1f}s")
    assert ok


def test_c06_fore_containment(criterion):
    G = first_order()
    sys = ResetSystem(G, np.zeros((1, 1)), MStructure(1.0, 0.0).build(G), 0.01)
    t0 = time.perf_counter()
    patch, _ = patch_overapprox(G, default_lambdas(G, 401))
    cloud = sample_sg_cloud(sys, 200, np.geomspace(0.5, 20.0, 10), seed=0)
    pts = cloud_points(cloud)
    inside = patch.contains(pts, 1e-2)
    dt = time.perf_counter() - t0
    n_pairs = len(cloud)
    ok = n_pairs == 2000 and bool(inside.all()) and dt < 300
    criterion(6, ok, f"{int(inside.sum())}/{pts.size} points inside (+1e-2), "
                     f"min slack {patch.slack(pts).min():.3e} t={dt:.1f}s")
    assert ok


# --- simulator oracle ----------------------------------------------------------------

def _random_reset_system(rng):
    m = int(rng.integers(1, 5))
    while True:
        Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
        A = Q @ np.diag(-rng.uniform(0.2, 3.0, m)) @ Q.T + 0.3 * rng.normal(size=(m, m))
        if np.linalg.eigvals(A).real.max() < -0.1:
            break
    base = StateSpace(A, rng.normal(size=(m, 1)), rng.normal(size=(1, m)), 0.2 * rng.normal(size=(1, 1)))
    M = MStructure(float(rng.uniform(0.5, 5.0))).build(base)
    alpha = float(rng.uniform(-1, 1))  # |alpha| <= 1 keeps the pair admissible
    terms = [(float(rng.uniform(0.5, 2) * rng.choice([-1, 1])), float(rng.uniform(0.2, 3)),
              float(rng.uniform(0.05, 0.5)), float(rng.uniform(0, 2 * np.pi)))
             for _ in range(int(rng.integers(1, 4)))]
    sys = ResetSystem(base, alpha * np.eye(m), M, float(rng.uniform(0.1, 0.3)))
    return sys, InputSignal("decaying_sum", n=1, terms=[terms]), terms


def _exosystem(terms):
    """Autonomous generator of sum a e^{-d t} sin(w t + p): state pairs (sin, cos) parts."""
    k = len(terms)
    S, w0, c = np.zeros((2 * k, 2 * k)), np.zeros(2 * k), np.zeros(2 * k)
    for i, (a, w, d, p) in enumerate(terms):
        S[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[-d, w], [-w, -d]]
        w0[2 * i:2 * i + 2] = [np.sin(p), np.cos(p)]
        c[2 * i] = a
    return S, w0, c


def _segment_error(sys, terms, tr):
    """Max relative deviation from expm propagation restarted at each post-jump state."""
    A, B = sys.base.A, sys.base.B
    S, w0, c = _exosystem(terms)
    m, k = A.shape[0], S.shape[0]
    Aa = np.block([[A, B @ c[None, :]], [np.zeros((k, m)), S]])
    starts = [(0.0, np.zeros(m))] + list(zip(tr.jumps, tr.x_post))
    ends = list(tr.jumps) + [np.inf]
    err = 0.0
    for (ts, xp), te in zip(starts, ends):
        sel = (tr.t > ts + 1e-12) & (tr.t < te - 1e-12)
        if not sel.any():
            continue
        z0 = np.concatenate([xp, expm(S * ts) @ w0])
        for tk, xk in zip(tr.t[sel], tr.x[sel]):
            err = max(err, float(np.abs(xk - (expm(Aa * (tk - ts)) @ z0)[:m]).max()))
    return err / max(float(np.abs(tr.x).max()), 1e-300)


def _P_set(base):
    _, Ps = patch_overapprox(base, default_lambdas(base, 21))
    return Ps


def test_c07_simulator_oracle(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_err, worst_order, gap_ok, n_jumps, adm = 0.0, np.inf, True, 0, True
    for _ in range(50):
        sys, u, terms = _random_reset_system(rng)
        adm &= check_admissible(sys, _P_set(sys.base)).admissible
        dt = sys.delta / 20
        tr = simulate_reset(sys, u, 400 * dt, dt)
        tr2 = simulate_reset(sys, u, 400 * dt, dt / 2)
        e1, e2 = _segment_error(sys, terms, tr), _segment_error(sys, terms, tr2)
        worst_err = max(worst_err, e1)
        worst_order = min(worst_order, float(np.log2(e1 / e2)))
        gaps = np.diff([0.0] + list(tr.jumps))
        gap_ok &= bool(np.all(gaps >= sys.delta - dt))
        n_jumps += len(tr.jumps)
    dt_run = time.perf_counter() - t0
    ok = adm and worst_err <= 1e-6 and worst_order >= 3.5 and gap_ok and n_jumps > 0 and dt_run < 300
    criterion(7, ok, f"admissible={adm} max rel err={worst_err:.2e} min order={worst_order:.2f} "
                     f"gaps ok={gap_ok} jumps={n_jumps} t={dt_run:.1f}s")
    assert ok


# --- region algebra ------------------------------------------------------------------

def test_c08_region_algebra(criterion):
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    fails = checks = 0
    while checks < 10_000:
        k = int(rng.integers(1, 4))
        cons = [CircleConstraint.from_pi(int(rng.choice([-1, 1])), float(rng.uniform(-3, 3)),
                                         float(rng.uniform(0.1, 3))) for _ in range(k)]
        R = RegionApprox(cons)
        mu = float(10 ** rng.uniform(-2, 2))
        inv, neg, sc = invert_region(R), negate_region(R), scale_region(R, mu)
        z = complex(rng.uniform(-4, 4), rng.uniform(-4, 4))
        base = membership(R, z, 1e-9)
        fails += membership(inv, 1 / z, 1e-9) != base
        fails += membership(neg, -z, 1e-9) != base
        fails += membership(sc, mu * z, 1e-9) != base
        checks += 3
    dt = time.perf_counter() - t0
    ok = fails == 0 and dt < 10
    criterion(8, ok, f"{checks} checks, {fails} failures t={dt:.1f}s")
    assert ok


# --- example reproduction ------------------------------------------------------------

@pytest.mark.slow
def test_c09_example_reproduction(criterion, example_run):
    report, cert, seconds = example_run
    by_id = {c["id"]: c for c in report["checks"]}
    a, b, c = by_id["9a"], by_id["9b"], by_id["9c"]
    ok = a["pass"] and b["pass"] and c["pass"] and seconds < 600
    criterion(9, ok, f"(a) r_min={a['r_min']:.3e} (b) k1={b['k1']:.4g} R=0 "
                     f"(c) overshoot {c['reset']['overshoot']:.2f}% vs {c['bls']['overshoot']:.2f}%, "
                     f"settling {c['reset']['settling_time']:.2f}s vs {c['bls']['settling_time']:.2f}s "
                     f"t={seconds:.0f}s")
    assert ok


@pytest.mark.slow
def test_c10_determinism(criterion, example_run):
    _, cert1, seconds = example_run
    t0 = time.perf_counter()
    _, cert2 = reproduce(seed=0)
    dt = time.perf_counter() - t0
    same = dumps(cert1) == dumps(cert2)
    ok = same and dt < 600
    criterion(10, ok, f"certificate JSON identical={same} ({len(dumps(cert1))} bytes) t={dt:.0f}s")
    assert ok
