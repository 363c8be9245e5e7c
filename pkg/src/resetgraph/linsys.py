"""Continuous-time LTI systems: evaluation, structural checks and frequency sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

TOL_HURWITZ = 1e-9
TOL_REAL = 1e-7
TOL_NORMAL = 1e-8
RANK_TOL = 1e-8


class PoleOnAxisError(ValueError):
    """Raised when a frequency grid point hits a pole of the system."""

    def __init__(self, omega):
        super().__init__(f"pole on the imaginary axis at omega={omega!r}")
        self.omega = omega


class NotHurwitzError(ValueError):
    pass


def default_grid(n=2000, lo=1e-3, hi=1e3):
    return np.logspace(np.log10(lo), np.log10(hi), n)


def _as2d(M, rows=None, cols=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 and rows is not None and cols is not None:
        M = np.zeros((rows, cols))
    return M


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Square LTI system ``x' = Ax + Bu, y = Cx + Du``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = _as2d(self.D)
        n = D.shape[0]
        A = np.asarray(self.A, dtype=float)
        m = 0 if A.size == 0 else int(np.sqrt(A.size))
        A = A.reshape(m, m)
        B = np.asarray(self.B, dtype=float).reshape(m, -1) if m else np.zeros((0, n))
        C = np.asarray(self.C, dtype=float).reshape(-1, m) if m else np.zeros((n, 0))
        if D.shape != (n, n):
            raise ValueError(f"D must be square, got {D.shape}")
        if B.shape != (m, n) or C.shape != (n, m):
            raise ValueError(
                f"inconsistent dimensions: A {A.shape}, B {B.shape}, C {C.shape}, D {D.shape}")
        for name, val in zip("ABCD", (A, B, C, D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.D.shape[0]

    @classmethod
    def static(cls, D):
        D = _as2d(D)
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[0])), np.zeros((D.shape[0], 0)), D)

    def __mul__(self, c):
        c = float(c)
        return StateSpace(self.A, self.B, c * self.C, c * self.D)

    __rmul__ = __mul__

    def shifted(self, eps):
        """Same system with every pole moved left by ``eps``."""
        return StateSpace(self.A - eps * np.eye(self.m), self.B, self.C, self.D)

    def poles(self):
        return np.linalg.eigvals(self.A) if self.m else np.zeros(0, dtype=complex)

    def to_dict(self):
        return {"ss": {k: getattr(self, k).tolist() for k in "ABCD"}}


@dataclass(frozen=True)
class TransferFunction:
    """SISO rational transfer function, coefficients in descending powers of s."""

    num: tuple = field(default=(1.0,))
    den: tuple = field(default=(1.0,))

    def __post_init__(self):
        num = np.trim_zeros(np.atleast_1d(np.asarray(self.num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "f")
        if den.size == 0:
            raise ValueError("denominator is identically zero")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ValueError("transfer function is improper")
        object.__setattr__(self, "num", tuple(num))
        object.__setattr__(self, "den", tuple(den))

    def __call__(self, s):
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def to_ss(self):
        """Controllable canonical realization (always (A, B) controllable)."""
        den = np.asarray(self.den) / self.den[0]
        num = np.asarray(self.num) / self.den[0]
        k = den.size - 1
        num = np.concatenate([np.zeros(k + 1 - num.size), num])
        d = num[0]
        if k == 0:
            return StateSpace.static([[d]])
        # strictly proper remainder b(s)/a(s), coefficients ascending
        rem = (num[1:] - d * den[1:])[::-1]
        a = den[1:][::-1]
        A = np.zeros((k, k))
        A[:-1, 1:] = np.eye(k - 1)
        A[-1, :] = -a
        B = np.zeros((k, 1))
        B[-1, 0] = 1.0
        C = rem.reshape(1, k)
        return StateSpace(A, B, C, [[d]])


def as_ss(G):
    if isinstance(G, StateSpace):
        return G
    if isinstance(G, TransferFunction):
        return G.to_ss()
    raise TypeError(f"expected StateSpace or TransferFunction, got {type(G).__name__}")


def system_from_dict(d):
    """Parse ``{"ss": {...}}`` or ``{"tf": {"num": ..., "den": ...}}``."""
    if not isinstance(d, dict) or len(d) != 1:
        raise ValueError("system description must have exactly one of 'ss' or 'tf'")
    if "ss" in d:
        ss = d["ss"]
        missing = {"A", "B", "C", "D"} - set(ss)
        if missing:
            raise ValueError(f"state-space description missing {sorted(missing)}")
        extra = set(ss) - {"A", "B", "C", "D"}
        if extra:
            raise ValueError(f"unknown keys in state-space description: {sorted(extra)}")
        return StateSpace(ss["A"], ss["B"], ss["C"], ss["D"])
    if "tf" in d:
        tf = d["tf"]
        if set(tf) != {"num", "den"}:
            raise ValueError("transfer-function description needs exactly 'num' and 'den'")
        return TransferFunction(tuple(tf["num"]), tuple(tf["den"])).to_ss()
    raise ValueError(f"unknown system kind {next(iter(d))!r}")


def freq_response(G, omega):
    """Evaluate ``C (j omega I - A)^{-1} B + D`` as an n-by-n complex matrix."""
    if isinstance(G, TransferFunction):
        s = 1j * omega
        den = np.polyval(G.den, s)
        if abs(den) < 1e-14 * max(1.0, np.max(np.abs(G.den))):
            raise PoleOnAxisError(omega)
        return np.array([[np.polyval(G.num, s) / den]])
    return _freq_response_many(G, [omega])[0]


def _check_poles(G, omegas):
    poles = G.poles()
    if poles.size == 0:
        return
    scale = max(1.0, np.abs(poles).max())
    gap = np.abs(1j * np.asarray(omegas)[:, None] - poles[None, :])
    k = np.argwhere(gap < 1e-10 * scale)
    if k.size:
        raise PoleOnAxisError(float(np.asarray(omegas)[k[0, 0]]))


def _freq_response_many(G, omegas):
    G = as_ss(G)
    omegas = np.asarray(omegas, dtype=float).ravel()
    if G.m == 0:
        return np.broadcast_to(G.D.astype(complex), (omegas.size, G.n, G.n)).copy()
    _check_poles(G, omegas)
    Ms = 1j * omegas[:, None, None] * np.eye(G.m) - G.A
    X = np.linalg.solve(Ms, np.broadcast_to(G.B.astype(complex), (omegas.size,) + G.B.shape))
    return G.C @ X + G.D


def dc_gain(G):
    G = as_ss(G)
    if G.m == 0:
        return G.D.copy()
    return G.D - G.C @ np.linalg.solve(G.A, G.B)


def is_hurwitz(A, tol=TOL_HURWITZ):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return True
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("eigenvalue computation did not converge") from exc
    return bool(np.all(ev.real < -tol))


def _rank(M, tol=RANK_TOL):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s / s[0] > tol))


def ctrb(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def is_controllable(A, B, tol=RANK_TOL):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return True
    B = np.asarray(B, dtype=float)
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
    return _rank(ctrb(A, B), tol) == A.shape[0]


def is_normal(G, omegas=None, tol=TOL_NORMAL):
    """True iff G(jw) commutes with its conjugate transpose on the grid (relative test)."""
    G = as_ss(G)
    if G.n == 1:
        return True
    if omegas is None:
        omegas = default_grid()
    pts = list(_freq_response_many(G, omegas))
    pts.append(G.D.astype(complex))
    if G.m:
        pts.append(dc_gain(G).astype(complex))
    for H in pts:
        Hh = H.conj().T
        comm = np.linalg.norm(Hh @ H - H @ Hh)
        scale = max(np.linalg.norm(H) ** 2, 1e-300)
        if comm > tol * scale:
            return False
    return True


def _sigma_max(G, w):
    return np.linalg.norm(freq_response(G, w), 2)


def hinf_norm(G, omegas=None):
    """H-infinity norm by a dense logarithmic sweep followed by bounded local refinement."""
    G = as_ss(G)
    if not is_hurwitz(G.A):
        raise NotHurwitzError("H-infinity norm requires a Hurwitz A")
    best_w, best = np.inf, np.linalg.norm(G.D, 2)
    if G.m == 0:
        return float(best)
    if omegas is None:
        mags = np.abs(G.poles())
        lo = max(mags.min() * 1e-3, 1e-8)
        hi = mags.max() * 1e3
        omegas = np.logspace(np.log10(lo), np.log10(hi), 4000)
    omegas = np.concatenate([[0.0], np.asarray(omegas, dtype=float)])
    vals = np.linalg.norm(_freq_response_many(G, omegas), 2, axis=(1, 2))
    k = int(np.argmax(vals))
    if vals[k] > best:
        best_w, best = omegas[k], vals[k]
        if 0 < k:
            lo = omegas[k - 1]
            hi = omegas[k + 1] if k + 1 < omegas.size else omegas[k] * 2
            res = optimize.minimize_scalar(lambda w: -_sigma_max(G, w), bounds=(lo, hi),
                                           method="bounded", options={"xatol": 1e-12 * max(hi, 1)})
            if -res.fun > best:
                best = -res.fun
    return float(best)


@dataclass(frozen=True)
class SpectrumInterval:
    p0: float
    p1: float

    def __post_init__(self):
        if self.p0 > self.p1:
            raise ValueError("p0 must not exceed p1")

    @property
    def width(self):
        return self.p1 - self.p0


def _grazing(absim, tol):
    """Interior grid indices where |Im| dips to a numerically real local minimum.

    Grid end points are excluded: there the locus is still approaching its
    limit at w = 0 or w -> inf, which is handled exactly.
    """
    k = np.arange(1, absim.size - 1)
    hit = (absim[k] <= tol) & (absim[k] <= absim[k - 1]) & (absim[k] <= absim[k + 1])
    return k[hit]


def real_spectrum_interval(G, omegas=None, tol=TOL_REAL):
    """Extreme real points of the characteristic loci of G(jw), w in [0, inf].

    Real crossings are collected at w = 0, w -> inf, interior grid points
    where an eigenvalue touches the real axis, and between grid points where a tracked
    eigenvalue changes the sign of its imaginary part.  For SISO systems the
    crossing is refined by root finding; for MIMO loci it is interpolated
    linearly, so a crossing narrower than the grid can be missed.
    """
    G = as_ss(G)
    if not is_hurwitz(G.A):
        raise NotHurwitzError("spectrum interval requires a Hurwitz A")
    reals = list(np.linalg.eigvals(G.D).real[np.abs(np.linalg.eigvals(G.D).imag) <= tol])
    if G.m:
        ev0 = np.linalg.eigvals(dc_gain(G))
        reals += list(ev0.real[np.abs(ev0.imag) <= tol])
        if omegas is None:
            omegas = default_grid()
        omegas = np.asarray(omegas, dtype=float)
        Hs = _freq_response_many(G, omegas)
        if G.n == 1:
            vals = Hs[:, 0, 0]
            im = vals.imag
            reals += [vals[k].real for k in _grazing(np.abs(im), tol)]
            for k in np.nonzero(np.sign(im[:-1]) * np.sign(im[1:]) < 0)[0]:
                f = lambda w: freq_response(G, w)[0, 0].imag
                w = optimize.brentq(f, omegas[k], omegas[k + 1], xtol=1e-14)
                reals.append(freq_response(G, w)[0, 0].real)
        else:
            # track eigenvalue branches by nearest neighbour
            tracks = [np.linalg.eigvals(Hs[0])]
            for H in Hs[1:]:
                cur = np.linalg.eigvals(H)
                prev = tracks[-1]
                order, free = [], list(range(cur.size))
                for a in prev:
                    j = min(free, key=lambda i: abs(cur[i] - a))
                    free.remove(j)
                    order.append(j)
                tracks.append(cur[order])
            tracks = np.array(tracks)
            for br in tracks.T:
                reals += [br[k].real for k in _grazing(np.abs(br.imag), tol)]
                for k in np.nonzero(br.imag[:-1] * br.imag[1:] < 0)[0]:
                    a, b = br[k], br[k + 1]
                    s = a.imag / (a.imag - b.imag)
                    reals.append(a.real + s * (b.real - a.real))
    if not reals:
        raise ArithmeticError("no real crossings of the characteristic loci found")
    return SpectrumInterval(float(min(reals)), float(max(reals)))


def nyquist_curve(G, omegas):
    """Frequency response samples ordered by frequency, closed under conjugation."""
    G = as_ss(G)
    if G.n != 1:
        raise ValueError("nyquist_curve is defined for SISO systems")
    pts = []
    for w in np.asarray(omegas, dtype=float):
        z = complex(freq_response(G, w)[0, 0])
        pts.append(z)
        if z.imag != 0.0:
            pts.append(z.conjugate())
    return pts
