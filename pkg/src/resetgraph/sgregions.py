"""Regions bounded by generalized circles ``a|z|^2 + 2b Re z + c >= 0``.

A :class:`RegionApprox` is a finite intersection of such constraints.  The
family is closed under inversion ``z -> 1/z``, negation and positive
scaling, and all three act on the coefficient triple exactly, so inverse
graphs and scaled graphs never pick up approximation error.  Distances
between regions are computed from boundary samples.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial import cKDTree

from . import sdpcore
from .linsys import StateSpace, hinf_norm, is_hurwitz, NotHurwitzError

log = logging.getLogger(__name__)

TOL_MEMBER = 1e-9
N_BOUNDARY = 2048
GRID_PROBE = 128


@dataclass(frozen=True)
class CircleConstraint:
    a: float
    b: float
    c: float

    def __post_init__(self):
        a, b, c = float(self.a), float(self.b), float(self.c)
        if not b * b - a * c > 0:
            raise ValueError(f"degenerate generalized circle (a, b, c) = {(a, b, c)}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @classmethod
    def from_pi(cls, sigma, lam, r):
        return cls(sigma, -sigma * lam, sigma * (lam * lam - r * r))

    @classmethod
    def disk(cls, center, radius):
        return cls.from_pi(-1, center, radius)

    @classmethod
    def exterior(cls, center, radius):
        return cls.from_pi(1, center, radius)

    @property
    def disc(self):
        return np.sqrt(self.b * self.b - self.a * self.c)

    @property
    def is_line(self):
        return abs(self.a) <= 1e-14 * max(abs(self.b), abs(self.c))

    @property
    def kind(self):
        if self.is_line:
            return "halfplane"
        return "disk" if self.a < 0 else "exterior"

    @property
    def center(self):
        return -self.b / self.a

    @property
    def radius(self):
        return self.disc / abs(self.a)

    def value(self, z):
        z = np.asarray(z)
        return self.a * np.abs(z) ** 2 + 2 * self.b * z.real + self.c

    def signed_distance(self, z):
        """Euclidean distance to the boundary, positive inside the region."""
        z = np.asarray(z, dtype=complex)
        return self.value(z) / (np.abs(self.a * z + self.b) + self.disc)

    def normalized(self):
        s = abs(self.a) if not self.is_line else abs(self.b)
        return CircleConstraint(self.a / s, self.b / s, self.c / s)

    def inverted(self):
        return CircleConstraint(self.c, self.b, self.a)

    def negated(self):
        return CircleConstraint(self.a, -self.b, self.c)

    def scaled(self, mu):
        if mu <= 0:
            raise ValueError("scaling factor must be positive")
        return CircleConstraint(self.a, mu * self.b, mu * mu * self.c)

    def boundary(self, n, window=None):
        """Up to ``n`` points on the boundary curve, restricted to a window disk ``(center, radius)``."""
        if window is None:
            if self.kind != "disk":
                raise ValueError("unbounded boundary needs a sampling window")
            phi = np.linspace(0, 2 * np.pi, n, endpoint=False)
            return self.center + self.radius * np.exp(1j * phi)
        wc, wr = complex(window[0]), float(window[1])
        if self.is_line:
            x0 = -self.c / (2 * self.b)
            dx = x0 - wc.real
            if abs(dx) > wr:
                return np.zeros(0, dtype=complex)
            h = np.sqrt(wr * wr - dx * dx)
            return x0 + 1j * (wc.imag + np.linspace(-h, h, n))
        # closest boundary point to the window centre, computed without forming huge centres
        v = self.a * wc + self.b
        if abs(v) == 0:
            u = 1.0 + 0j
        else:
            u = (v / abs(v)) * np.sign(self.a)
        r = self.radius
        offset = self.value(wc) / (np.sign(self.a) * (abs(v) + self.disc))
        p0 = wc - offset * u
        L = np.pi * r if r <= 2 * wr else min(np.pi * r, np.pi * wr)
        s = np.linspace(-L, L, n, endpoint=(L < np.pi * r))
        psi = s / r
        pts = p0 + r * u * (np.expm1(1j * psi))
        return pts[np.abs(pts - wc) <= wr * (1 + 1e-12)]

    def to_dict(self):
        return {"a": self.a, "b": self.b, "c": self.c, "kind": self.kind}


@dataclass
class RegionApprox:
    """Intersection of generalized-circle constraints."""

    constraints: list = field(default_factory=list)
    provenance: list = field(default_factory=list)
    mu: float = 1.0
    indeterminate: list = field(default_factory=list)

    def __len__(self):
        return len(self.constraints)

    @property
    def is_bounded(self):
        return any(c.kind == "disk" for c in self.constraints)

    def bounding_disk(self):
        """Smallest constraint disk; the region lies inside it."""
        disks = [c for c in self.constraints if c.kind == "disk"]
        if not disks:
            return None
        d = min(disks, key=lambda c: c.radius)
        return complex(d.center), float(d.radius)

    def bounding_box(self):
        disks = [c for c in self.constraints if c.kind == "disk"]
        if not disks:
            return None
        lo_x = max(c.center - c.radius for c in disks)
        hi_x = min(c.center + c.radius for c in disks)
        hy = min(c.radius for c in disks)
        return lo_x, hi_x, -hy, hy

    def _abc(self):
        A = np.array([[c.a, c.b, c.c] for c in self.constraints], dtype=float).reshape(-1, 3)
        return A[:, 0], A[:, 1], A[:, 2], np.sqrt(A[:, 1] ** 2 - A[:, 0] * A[:, 2])

    def signed_distances(self, z, chunk=4096):
        """Matrix of signed distances, shape (len(z), len(constraints))."""
        z = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
        a, b, c, disc = self._abc()
        out = np.empty((z.size, a.size))
        for i in range(0, z.size, chunk):
            zz = z[i:i + chunk, None]
            val = a * (zz.real ** 2 + zz.imag ** 2) + 2 * b * zz.real + c
            out[i:i + chunk] = val / (np.abs(a * zz + b) + disc)
        return out

    def slack(self, z):
        z = np.asarray(z, dtype=complex)
        if not self.constraints:
            return np.full(z.shape, np.inf)
        return self.signed_distances(z).min(axis=1).reshape(z.shape)

    def contains(self, z, tol=TOL_MEMBER):
        return self.slack(z) >= -tol

    def to_dict(self):
        out = {"mu": self.mu, "constraints": []}
        for k, c in enumerate(self.constraints):
            entry = c.to_dict()
            prov = self.provenance[k] if k < len(self.provenance) else None
            if isinstance(prov, sdpcore.KypCertificate):
                entry.update(sigma=prov.sigma, **{"lambda": prov.lam}, r=prov.r, psd=prov.psd,
                             residual=prov.residual)
            elif prov is not None:
                entry["source"] = str(prov)
            out["constraints"].append(entry)
        out["indeterminate"] = [list(x) for x in self.indeterminate]
        return out

    def _map(self, fn, **kw):
        return RegionApprox([fn(c) for c in self.constraints], list(self.provenance),
                            kw.get("mu", self.mu), list(self.indeterminate))


def membership(Rg, z, tol=TOL_MEMBER):
    """True iff every constraint holds with signed slack >= -tol."""
    return bool(np.all(Rg.contains(complex(z), tol)))


def invert_region(Rg):
    """Image under ``z -> 1/z`` (equivalently ``conj(z)/|z|^2`` on conjugate-symmetric sets)."""
    return Rg._map(CircleConstraint.inverted)


def negate_region(Rg):
    return Rg._map(CircleConstraint.negated)


def scale_region(Rg, mu):
    if mu <= 0:
        raise ValueError("scaling factor must be positive")
    return Rg._map(lambda c: c.scaled(mu), mu=Rg.mu * mu)


def inverse_graph(Rg):
    """Region of ``SG^dagger(-H)`` from a region for ``SG(H)``."""
    return invert_region(negate_region(Rg))


def build_pi(sigma, lam, r):
    return sdpcore.pi_matrix(sigma, lam, r)


def build_theta(G, Pi):
    return sdpcore.theta_matrix(G, Pi)


# --- LMI-based over-approximations ----------------------------------------------

def default_lambdas(H, n=401, span=1.5):
    g = hinf_norm(H) if H.m else float(np.linalg.norm(H.D, 2))
    return np.linspace(-span * g, span * g, n)


def _map_ordered(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def sg_overapprox(H: StateSpace, lambdas=None, require_psd=False, threads=1, method="direct"):
    """Intersect every disk / disk exterior certified by the KYP LMI over the lambda grid."""
    if not is_hurwitz(H.A):
        raise NotHurwitzError("scaled-graph over-approximation requires a Hurwitz A")
    gamma = hinf_norm(H) if H.m else float(np.linalg.norm(H.D, 2))
    if lambdas is None:
        lambdas = default_lambdas(H)
    jobs = [(float(lam), s) for lam in np.asarray(lambdas, dtype=float).ravel() for s in (-1, 1)]

    def run(job):
        lam, s = job
        return sdpcore.kyp_solve(H, s, lam, require_psd, method=method, gamma=gamma)

    outcomes = _map_ordered(run, jobs, threads)
    region = RegionApprox()
    for o in outcomes:
        if o.status == sdpcore.FEASIBLE:
            c = o.cert
            region.constraints.append(CircleConstraint.from_pi(c.sigma, c.lam, max(c.r, 1e-300)))
            region.provenance.append(c)
        elif o.status == sdpcore.INDETERMINATE:
            region.indeterminate.append((o.sigma, o.lam))
    return region


def patch_overapprox(H: StateSpace, lambdas=None, threads=1):
    """Region from positive-semidefinite certificates only, plus the list of their P matrices."""
    region = sg_overapprox(H, lambdas, require_psd=True, threads=threads)
    P_set = [c.P for c in region.provenance if isinstance(c, sdpcore.KypCertificate)]
    return region, P_set


# --- sampling, emptiness and distance ---------------------------------------------

@dataclass
class BoundarySamples:
    points: np.ndarray
    index: np.ndarray
    empty: bool
    pitch: float


def _window_for(Rg, window):
    if window is not None:
        return complex(window[0]), float(window[1])
    bd = Rg.bounding_disk()
    if bd is not None:
        return bd[0], bd[1] * (1 + 1e-9)
    return None


def boundary_samples(Rg, N=N_BOUNDARY, window=None, tol=TOL_MEMBER):
    """Points on the region boundary: constraint curves filtered by the other constraints."""
    win = _window_for(Rg, window)
    if win is None:
        raise ValueError("region is unbounded; pass a sampling window")
    pts, idx, pitch = [], [], 0.0
    for k, c in enumerate(Rg.constraints):
        b = c.boundary(N, None if (window is None and c.kind == "disk") else win)
        if b.size > 1:
            pitch = max(pitch, float(np.max(np.abs(np.diff(b)))))
        if b.size == 0:
            continue
        pts.append(b)
        idx.append(np.full(b.size, k))
    if pts:
        points = np.concatenate(pts)
        index = np.concatenate(idx)
        # filter by one constraint at a time over the shrinking survivor set;
        # constraints rejecting most of a probe subsample go first
        a, b, c, disc = Rg._abc()
        probe = points[:: max(1, points.size // 512)]
        kills = (Rg.signed_distances(probe) < -tol).sum(axis=0)
        alive = np.arange(points.size)
        for j in np.argsort(-kills, kind="stable"):
            z = points[alive]
            sd = (a[j] * (z.real ** 2 + z.imag ** 2) + 2 * b[j] * z.real + c[j]) / (
                np.abs(a[j] * z + b[j]) + disc[j])
            alive = alive[(sd >= -tol) | (index[alive] == j)]
            if alive.size == 0:
                break
        points, index = points[alive], index[alive]
    else:
        points, index = np.zeros(0, dtype=complex), np.zeros(0, dtype=int)
    empty = points.size == 0 and not _probe_nonempty(Rg, win)
    return BoundarySamples(points, index, empty, pitch)


def _probe_nonempty(Rg, win):
    disks = [c for c in Rg.constraints if c.kind == "disk"]
    for i, d1 in enumerate(disks):
        for d2 in disks[i + 1:]:
            if abs(d1.center - d2.center) > d1.radius + d2.radius:
                return False
    return bool(_grid_members(Rg, win).size)


def _grid_members(Rg, win, n=GRID_PROBE, other=None):
    box = Rg.bounding_box()
    if box is None:
        wc, wr = win
        box = (wc.real - wr, wc.real + wr, wc.imag - wr, wc.imag + wr)
    x0, x1, y0, y1 = box
    if x1 < x0:
        return np.zeros(0, dtype=complex)
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
    Z = (X + 1j * Y).ravel()
    mask = Rg.contains(Z, 0.0)
    if other is not None:
        mask &= other.contains(Z, 0.0)
    return Z[mask]


def is_empty(Rg, window=None):
    return boundary_samples(Rg, 256, window).empty


@dataclass
class DistanceResult:
    distance: float
    pitch: float
    overlap: bool
    empty: bool = False

    def __float__(self):
        return float(self.distance)


def disk_distance(c1, r1, c2, r2):
    """Distance between two closed disks."""
    return max(0.0, abs(complex(c1) - complex(c2)) - r1 - r2)


class PointSet:
    """Finite set of complex points usable wherever a region is expected in distance queries."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=complex).ravel()

    def contains(self, z, tol=TOL_MEMBER):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.points.size == 0:
            return np.zeros(z.shape, dtype=bool)
        d, _ = cKDTree(np.c_[self.points.real, self.points.imag]).query(np.c_[z.real, z.imag])
        return d <= tol

    def bounding_disk(self):
        c = complex(np.mean(self.points))
        return c, float(np.max(np.abs(self.points - c)))


def _bounded_disk(R):
    if isinstance(R, PointSet):
        return R.bounding_disk() if R.points.size else None
    return R.bounding_disk()


def _samples(R, N, window):
    if isinstance(R, PointSet):
        return R.points, 0.0, R.points.size == 0
    bs = boundary_samples(R, N, window)
    return bs.points, bs.pitch, bs.empty


def region_distance(Ra, Rb, N=N_BOUNDARY, window=None, refine=True) -> DistanceResult:
    """Distance between two regions (or a point set and a region) from boundary samples.

    Zero when overlap is detected by cross-membership of boundary samples or
    an interior grid probe.  At least one of the sets must be bounded unless
    a ``window`` is supplied.
    """
    da, db = _bounded_disk(Ra), _bounded_disk(Rb)
    if da is None and db is None and window is None:
        raise ValueError("both sets unbounded; pass a window")
    if da is None:
        Ra, Rb, da, db = Rb, Ra, db, da
    # Ra is bounded from here on
    pa, pitch_a, empty_a = _samples(Ra, N, window)
    if empty_a:
        return DistanceResult(np.inf, pitch_a, False, True)
    ca, ra = da if window is None else (complex(window[0]), float(window[1]))
    if db is not None:
        win_b = None
    else:
        W = max(ra, 1e-12)
        pb = np.zeros(0)
        while W < 1e8 * max(ra, 1.0):
            pb, _, _ = _samples(Rb, N, (ca, ra + W))
            if pb.size:
                break
            W *= 4
        if pb.size == 0:
            return DistanceResult(np.inf, 0.0, False, True)
        d0 = float(np.min(np.abs(pa[:, None] - pb[None, ::max(1, pb.size // 256)])))
        win_b = (ca, ra + d0 * (1 + 1e-6) + 1e-12)
    pb, pitch_b, empty_b = _samples(Rb, N, win_b)
    if empty_b:
        return DistanceResult(np.inf, max(pitch_a, pitch_b), False, True)
    pitch = max(pitch_a, pitch_b)
    if np.any(Rb.contains(pa)) or (pb.size and np.any(Ra.contains(pb))):
        return DistanceResult(0.0, pitch, True)
    if isinstance(Ra, RegionApprox) and isinstance(Rb, RegionApprox):
        if _grid_members(Ra, (ca, ra), other=Rb).size:
            return DistanceResult(0.0, pitch, True)
    if pb.size == 0:
        return DistanceResult(np.inf, pitch, False, True)
    tree = cKDTree(np.c_[pb.real, pb.imag])
    d, j = tree.query(np.c_[pa.real, pa.imag])
    k = int(np.argmin(d))
    best = float(d[k])
    if refine and pitch > 0:
        best = min(best, _refine(Ra, Rb, pa[k], pb[j[k]], pitch))
    return DistanceResult(best, pitch, False)


def _refine(Ra, Rb, a, b, pitch, n=512):
    def local(R, p):
        if isinstance(R, PointSet):
            return R.points
        return boundary_samples(R, n, (p, 3 * pitch)).points

    la, lb = local(Ra, a), local(Rb, b)
    if la.size == 0 or lb.size == 0:
        return np.inf
    return float(np.min(np.abs(la[:, None] - lb[None, :])))


# --- chord fill ----------------------------------------------------------------

@dataclass
class HullResult:
    points: np.ndarray
    region: RegionApprox
    polyline: np.ndarray


def hchord_hull(points, n_chord=33, tol=1e-9):
    """Straight-chord fill between conjugate pairs plus a covering disk centred on the real axis."""
    pts = np.asarray(points, dtype=complex).ravel()
    if pts.size == 0:
        raise ValueError("empty point set")
    tree = cKDTree(np.c_[pts.real, pts.imag])
    d, _ = tree.query(np.c_[pts.real, -pts.imag])
    scale = max(1.0, float(np.abs(pts).max()))
    if np.any(d > tol * scale):
        raise ValueError("point set is not closed under conjugation")
    t = np.linspace(-1.0, 1.0, n_chord)
    upper = pts[pts.imag >= 0]
    fill = (upper.real[:, None] + 1j * upper.imag[:, None] * t[None, :]).ravel()

    def radius(c):
        return float(np.max(np.abs(pts - c)))

    lo, hi = float(pts.real.min()), float(pts.real.max())
    if hi - lo > 0:
        res = optimize.minimize_scalar(radius, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12 * scale})
        c = float(res.x)
    else:
        c = lo
    r = max(radius(c), 1e-300)
    region = RegionApprox([CircleConstraint.disk(c, r)], ["nyquist-hull"])
    return HullResult(np.concatenate([pts, fill]), region, pts)


def chord_property_check(Rg, N=256, window=None, n_seg=32, tol=1e-7):
    """Sampled check that each boundary point's vertical chord to its conjugate stays inside."""
    bs = boundary_samples(Rg, N, window)
    if bs.points.size == 0:
        return True
    t = np.linspace(0.0, 1.0, n_seg + 2)[1:-1]
    for z in bs.points:
        seg = z.real + 1j * z.imag * (1 - 2 * t)
        if not np.all(Rg.contains(seg, tol)):
            return False
    return True


# --- export --------------------------------------------------------------------

def region_to_json(Rg, **extra):
    d = Rg.to_dict()
    d.update(extra)
    return json.dumps(d, indent=2, sort_keys=True)


def boundary_csv(Rg, N=N_BOUNDARY, window=None):
    bs = boundary_samples(Rg, N, window)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["re", "im", "constraint_index"])
    for z, k in zip(bs.points, bs.index):
        w.writerow([repr(float(z.real)), repr(float(z.imag)), int(k)])
    return buf.getvalue()
