"""Admissibility of reset maps and the separation-based feedback stability test."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import sdpcore
from .linsys import StateSpace, hinf_norm, is_controllable, is_hurwitz, is_normal
from .resetsim import ResetSystem
from .sgregions import (
    PointSet,
    RegionApprox,
    chord_property_check,
    inverse_graph,
    patch_overapprox,
    region_distance,
    scale_region,
    sg_overapprox,
)

log = logging.getLogger(__name__)

TOL_SEP = 1e-3
MU_COUNT = 20
MU_MIN = 1e-3
EPS_REG = 1e-3
ALPHA_TOL = 1e-12

WELL_POSED_NOTE = "well-posedness of the interconnection is assumed, not checked"


class EmptyRegionError(ValueError):
    pass


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form (sorted keys, repr floats)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _f(x):
    """Float for JSON: inf/nan become strings so the output stays strict JSON."""
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


# --- admissibility ----------------------------------------------------------------

def base_hypotheses(base: StateSpace) -> dict:
    """Structural requirements on the BLS: Hurwitz, controllable, normal."""
    hurwitz = bool(is_hurwitz(base.A))
    out = {"hurwitz": hurwitz,
           "controllable": bool(is_controllable(base.A, base.B)) if base.m else True,
           "normal": bool(is_normal(base)) if hurwitz else False}
    out["failures"] = [k for k in ("hurwitz", "controllable", "normal") if not out[k]]
    return out


def contraction_alpha(R, tol=ALPHA_TOL):
    """alpha if R = alpha I with |alpha| <= 1, else None."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.size == 0:
        return None
    a = float(R[0, 0])
    if np.abs(R - a * np.eye(R.shape[0])).max() <= tol and abs(a) <= 1 + tol:
        return a
    return None


@dataclass
class AdmissibilityReport:
    admissible: bool
    per_P: list
    shortcut: str | None = None
    hypotheses: dict = field(default_factory=dict)
    method: str = "lmi"

    def to_dict(self):
        return {"admissible": self.admissible, "shortcut": self.shortcut, "method": self.method,
                "hypotheses": self.hypotheses,
                "per_P": [{k: (_f(v) if isinstance(v, float) else v) for k, v in e.items()}
                          for e in self.per_P]}


def _cert_meta(c, k):
    if isinstance(c, sdpcore.KypCertificate):
        return {"lambda": float(c.lam), "sigma": int(c.sigma)}, c.P
    return {"lambda": None, "sigma": None, "index": k}, np.atleast_2d(np.asarray(c, dtype=float))


def check_admissible(sys: ResetSystem, P_set, force_lmi=False, check_hypotheses=True):
    """Admissibility of (R, M) against every collected P.

    R = alpha I with |alpha| <= 1 takes the shortcut rho = 0 unless
    ``force_lmi``; otherwise one small LMI in rho per P.  Hypothesis
    failures on the base system make the report non-admissible.
    """
    hyp = base_hypotheses(sys.base) if check_hypotheses else {"failures": []}
    entries = [_cert_meta(c, k) for k, c in enumerate(P_set)]
    alpha = contraction_alpha(sys.R)
    if alpha is not None and not force_lmi:
        per = [dict(meta, rho=0.0, status=sdpcore.FEASIBLE) for meta, _ in entries]
        return AdmissibilityReport(not hyp["failures"], per, f"scalar-contraction({alpha:g})", hyp,
                                   "shortcut")
    per = []
    fixed = sdpcore.RStructure("fixed", R=sys.R)
    for meta, P in entries:
        res = sdpcore.admissibility_solve([P], sys.M, fixed, sys.base.n)
        rho = float(res.rho[0]) if res.feasible else None
        per.append(dict(meta, rho=rho, status=res.status))
    ok = all(e["status"] == sdpcore.FEASIBLE for e in per) and not hyp["failures"]
    return AdmissibilityReport(ok, per, None, hyp, "lmi")


# --- stability -------------------------------------------------------------------------

@dataclass
class StabilityCertificate:
    mode: str
    mu_grid: list
    distances: list
    r_min: float
    stable: bool
    gain_bound: float | None
    chord_flags: dict
    caveats: list
    tol_sep: float = TOL_SEP
    tail_bound: float | None = None
    indeterminate: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {"mode": self.mode, "mu_grid": [_f(m) for m in self.mu_grid],
                "distances": [_f(d) for d in self.distances], "r_min": _f(self.r_min),
                "stable": self.stable,
                "gain_bound": None if self.gain_bound is None else _f(self.gain_bound),
                "chord_flags": self.chord_flags, "caveats": list(self.caveats),
                "tol_sep": self.tol_sep,
                "tail_bound": None if self.tail_bound is None else _f(self.tail_bound),
                "indeterminate": [list(x) for x in self.indeterminate],
                "provenance": self.provenance}


def mu_grid(count=MU_COUNT, mu_min=MU_MIN):
    if count < 1:
        raise ValueError("mu grid needs at least one point")
    if count == 1:
        return np.array([1.0])
    return np.logspace(np.log10(mu_min), 0.0, count)


def _outer_radius(R):
    if isinstance(R, PointSet):
        return float(np.abs(R.points).max())
    c, r = R.bounding_disk()
    return abs(c) + r


def _all_psd(R):
    provs = getattr(R, "provenance", [])
    certs = [p for p in provs if isinstance(p, sdpcore.KypCertificate)]
    return bool(certs) and all(c.psd for c in certs)


def inverse_lambdas(gamma, target=1.0, n_inv=200, n_lin=51):
    """Multiplier centres for SG(H1) aimed at its inverse near a target radius.

    Points at lambda = -1/nu with nu up to 2.5*target shape the inverse graph
    where the controller patch lives; a uniform sweep over [0, 1.2 gamma]
    (gamma = ||H1||_inf) covers the rest.
    """
    nu = np.linspace(2.5 * target / n_inv, 2.5 * target, n_inv)
    return np.concatenate([-1.0 / nu, np.linspace(-0.002 * gamma, 1.2 * gamma, n_lin)])


@dataclass
class InverseGraph:
    region: RegionApprox
    system: StateSpace
    eps: float
    lambdas: np.ndarray
    regularized: bool


def h1_inverse_region(H1: StateSpace, eps=EPS_REG, lambdas=None, target=1.0, threads=1,
                      regularize=None):
    """Region for SG^dagger(-H1) built from PSD certificates of SG(H1).

    A plant with poles on or right of the imaginary axis (e.g. an integrator)
    is shifted to ``A - eps I`` first.  ``regularize`` forces or disables
    the shift; by default it is applied only when A is not Hurwitz.
    """
    if regularize is None:
        regularize = not is_hurwitz(H1.A)
    G = H1.shifted(eps) if regularize else H1
    if not is_hurwitz(G.A):
        raise ValueError("plant is not Hurwitz after regularization; increase eps")
    gamma = hinf_norm(G) if G.m else float(np.linalg.norm(G.D, 2))
    if lambdas is None:
        lambdas = inverse_lambdas(gamma, target)
    lambdas = np.asarray(lambdas, dtype=float)
    sg = sg_overapprox(G, lambdas, require_psd=True, threads=threads)
    return InverseGraph(inverse_graph(sg), G, float(eps if regularize else 0.0), lambdas,
                        bool(regularize))


def check_stability(H1_region, patch, mode="soft", mu_count=MU_COUNT, mu_min=MU_MIN,
                    tol_sep=TOL_SEP, N=2048, caveats=(), chord=True, threads=1):
    """Separation test between SG^dagger(-H1) and the mu-scaled controller patch.

    ``patch`` is a RegionApprox or a (bls, lambdas) pair.  In soft mode the
    distance is taken on a log grid of mu in [mu_min, 1]; in hard mode only
    mu = 1 is used and both sets must come from PSD certificates.
    """
    if not isinstance(patch, (RegionApprox, PointSet)):
        bls, lambdas = patch
        patch, _ = patch_overapprox(bls, lambdas, threads=threads)
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown mode {mode!r}")
    for name, R in (("H1", H1_region), ("patch", patch)):
        if isinstance(R, PointSet):
            if R.points.size == 0:
                raise EmptyRegionError(f"{name} point set is empty")
        elif not R.constraints:
            raise EmptyRegionError(f"{name} region has no constraints")
    if isinstance(patch, RegionApprox) and not patch.is_bounded:
        raise ValueError("controller patch region must be bounded")
    notes = list(caveats) + [WELL_POSED_NOTE]
    if mode == "hard":
        for name, R in (("H1", H1_region), ("patch", patch)):
            if isinstance(R, RegionApprox) and not _all_psd(R):
                raise ValueError(f"hard mode needs PSD certificates for the {name} region")
        mus = np.array([1.0])
    else:
        mus = mu_grid(mu_count, mu_min)
    dists = []
    for mu in mus:
        target = scale_region(patch, mu) if isinstance(patch, RegionApprox) else PointSet(mu * patch.points)
        d = region_distance(H1_region, target, N=N)
        dists.append(float(d.distance))
    r_min = float(min(dists))
    tail = None
    Rp = _outer_radius(patch)
    if mode == "soft":
        gaps = np.diff(mus)
        lip = float(gaps.max() * Rp) if gaps.size else 0.0
        d0 = float(region_distance(PointSet([0.0]), H1_region, N=N).distance)
        tail = d0 - mus[0] * Rp
        notes.append(f"mu grid: {len(mus)} log-spaced points on [{mus[0]:.3g}, 1]; "
                     f"Lipschitz slack between grid points <= {lip:.3g}")
        notes.append(f"mu below {mus[0]:.3g}: distance >= {tail:.3g} "
                     f"(distance of 0 to the H1 set minus mu_min * max|patch|)")
    indet = list(getattr(H1_region, "indeterminate", [])) + list(getattr(patch, "indeterminate", []))
    stable = r_min >= tol_sep and not indet
    if indet:
        notes.append(f"{len(indet)} indeterminate solver outcomes; certificate downgraded")
    flags = {"H1": False, "patch": False}
    if chord:
        if isinstance(patch, RegionApprox):
            flags["patch"] = bool(chord_property_check(patch))
        if isinstance(H1_region, RegionApprox):
            sg1 = inverse_graph(H1_region)  # involution: back to SG(H1)
            if sg1.is_bounded:
                flags["H1"] = bool(chord_property_check(sg1))
    gain = 1.0 / r_min if (stable and r_min > 0 and any(flags.values())) else None
    return StabilityCertificate(mode, [float(m) for m in mus], dists, r_min, bool(stable), gain,
                                flags, notes, tol_sep, tail, [tuple(x) for x in indet])
