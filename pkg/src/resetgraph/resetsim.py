"""Fixed-step simulation of time-regularized reset systems and their feedback loops.

Flow uses classical RK4.  Because the flow is linear, one RK4 step is an
affine map ``x+ = Phi x + G0 u(t) + Gh u(t+h/2) + G1 u(t+h)`` that is
precomputed once; partial steps (needed around jumps) fall back to the
generic RK4 formula.  Jump instants are localized by bisection.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .linsys import StateSpace, as_ss, is_hurwitz

EVENT_REL_TOL = 1e-3  # bisection stops at dt * EVENT_REL_TOL
DIVERGENCE_LIMIT = 1e150


class SimulationError(RuntimeError):
    pass


class StepSizeError(ValueError):
    """dt is too coarse for the dwell time delta."""


class DivergenceError(SimulationError):
    def __init__(self, t):
        super().__init__(f"state became non-finite or unbounded at t={t:.6g}")
        self.t = t


class TopologyError(ValueError):
    """Algebraic loop in the feedback interconnection."""


@dataclass(frozen=True, eq=False)
class ResetSystem:
    """LTI flow with jumps ``x+ = R x`` when ``q' M q <= 0`` and the timer has reached delta.

    ``q = [x; u]``.  M must be symmetric and delta strictly positive.
    """

    base: StateSpace
    R: np.ndarray
    M: np.ndarray
    delta: float = 1e-2

    def __post_init__(self):
        base = as_ss(self.base)
        m, n = base.m, base.n
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if R.shape != (m, m):
            raise ValueError(f"R must be {m}x{m}, got {R.shape}")
        if M.shape != (m + n, m + n):
            raise ValueError(f"M must be {(m + n)}x{(m + n)}, got {M.shape}")
        if not np.allclose(M, M.T, atol=1e-12, rtol=0):
            raise ValueError("M must be symmetric")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError("delta must be a positive finite number")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "M", 0.5 * (M + M.T))
        object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def linear(cls, base, delta=1e-2):
        """Reset system whose jump set is the origin only, i.e. the BLS itself."""
        base = as_ss(base)
        return cls(base, np.eye(base.m), np.eye(base.m + base.n), delta)

    def to_dict(self):
        return {"base": self.base.to_dict(), "R": self.R.tolist(), "M": self.M.tolist(),
                "delta": self.delta}


# --- input signals ---------------------------------------------------------------

@dataclass
class InputSignal:
    """Deterministic input ``u(t)``; evaluates on arrays of time points.

    kinds: zero, step, sine, decaying_sum.  Decaying sums hold terms
    ``(amp, omega, decay, phase)`` per channel.
    """

    kind: str = "zero"
    n: int = 1
    amplitude: float = 1.0
    t0: float = 0.0
    omega: float = 1.0
    phase: float = 0.0
    terms: list = field(default_factory=list)  # per channel: list of (amp, omega, decay, phase)
    scale: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if self.kind == "zero":
            out = np.zeros((t.size, self.n))
        elif self.kind == "step":
            out = np.repeat(np.where(t >= self.t0, self.amplitude, 0.0)[:, None], self.n, axis=1)
        elif self.kind == "sine":
            v = self.amplitude * np.sin(self.omega * t + self.phase)
            out = np.repeat(v[:, None], self.n, axis=1)
        elif self.kind == "decaying_sum":
            out = np.zeros((t.size, self.n))
            for ch, terms in enumerate(self.terms):
                for a, w, d, p in terms:
                    out[:, ch] += a * np.exp(-d * t) * np.sin(w * t + p)
        else:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        out = out * self.scale
        return out[0] if scalar else out

    def scaled(self, c):
        s = InputSignal(**{**self.__dict__})
        s.scale = self.scale * c
        return s

    @classmethod
    def random_decaying(cls, rng, n=1, freq=(1e-2, 1e2), amp=(0.1, 10.0), decay=(0.05, 1.0)):
        """Sum of 1 to 5 decaying sinusoids per channel with random parameters."""
        terms = []
        for _ in range(n):
            k = int(rng.integers(1, 6))
            ws = np.exp(rng.uniform(np.log(freq[0]), np.log(freq[1]), k))
            amps = rng.uniform(amp[0], amp[1], k) * rng.choice([-1.0, 1.0], k)
            ds = rng.uniform(decay[0], decay[1], k)
            ps = rng.uniform(0, 2 * np.pi, k)
            terms.append([tuple(map(float, v)) for v in zip(amps, ws, ds, ps)])
        return cls(kind="decaying_sum", n=n, terms=terms)

    @classmethod
    def from_dict(cls, d, n=None):
        d = dict(d)
        kind = d.pop("type", d.pop("kind", "zero"))
        seed = d.pop("seed", None)
        if n is None:
            n = int(d.pop("n", 1))
        else:
            d.pop("n", None)
        if kind == "decaying_sum" and "terms" not in d:
            rng = np.random.default_rng(seed)
            return cls.random_decaying(rng, n=n)
        allowed = {"amplitude", "t0", "omega", "phase", "terms", "scale"}
        bad = set(d) - allowed
        if bad:
            raise ValueError(f"unknown signal keys: {sorted(bad)}")
        if kind == "decaying_sum":
            terms = d.pop("terms")
            if terms and not isinstance(terms[0][0], (list, tuple)):
                terms = [terms] * n
            d["terms"] = [[tuple(map(float, tr)) for tr in ch] for ch in terms]
        return cls(kind=kind, n=n, **d)

    def to_dict(self):
        d = {"type": self.kind, "n": self.n}
        if self.kind == "step":
            d.update(amplitude=self.amplitude, t0=self.t0)
        elif self.kind == "sine":
            d.update(amplitude=self.amplitude, omega=self.omega, phase=self.phase)
        elif self.kind == "decaying_sum":
            d["terms"] = [[list(tr) for tr in ch] for ch in self.terms]
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d


def as_signal(u, n):
    if u is None:
        return InputSignal("zero", n=n)
    if isinstance(u, InputSignal):
        return u
    if isinstance(u, dict):
        return InputSignal.from_dict(u, n=n)
    if callable(u):
        return u
    raise TypeError(f"cannot interpret {type(u).__name__} as an input signal")


# --- traces ------------------------------------------------------------------------

@dataclass
class SimTrace:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    jumps: list
    tau: np.ndarray
    x_pre: list = field(default_factory=list)   # state just before each jump
    x_post: list = field(default_factory=list)  # state just after each jump

    @property
    def jump_flag(self):
        """1 at grid samples whose preceding step contained a jump."""
        flag = np.zeros(self.t.size, dtype=int)
        if self.jumps:
            idx = np.searchsorted(self.t, np.asarray(self.jumps) - 1e-12 * max(1.0, self.t[-1]))
            flag[np.clip(idx, 0, self.t.size - 1)] = 1
        return flag

    def to_csv(self, path):
        m, n, p = self.x.shape[1], self.u.shape[1], self.y.shape[1]
        header = (["t"] + [f"u{i}" for i in range(n)] + [f"y{i}" for i in range(p)]
                  + [f"x{i}" for i in range(m)] + ["tau", "jump_flag"])
        flag = self.jump_flag
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.t.size):
                w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.u[k]]
                           + [repr(float(v)) for v in self.y[k]]
                           + [repr(float(v)) for v in self.x[k]]
                           + [repr(float(self.tau[k])), int(flag[k])])


def rk4_matrices(A, B, h):
    """(Phi, G0, Gh, G1) so that one RK4 step reads Phi x + G0 u0 + Gh u_half + G1 u1."""
    m, n = B.shape

    def step(X, U0, Uh, U1):
        k1 = A @ X + B @ U0
        k2 = A @ (X + 0.5 * h * k1) + B @ Uh
        k3 = A @ (X + 0.5 * h * k2) + B @ Uh
        k4 = A @ (X + h * k3) + B @ U1
        return X + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    Zm, Zn, Im, In = np.zeros((m, m)), np.zeros((n, n)), np.eye(m), np.eye(n)
    return (step(Im, np.zeros((n, m)), np.zeros((n, m)), np.zeros((n, m))),
            step(np.zeros((m, n)), In, Zn, Zn),
            step(np.zeros((m, n)), Zn, In, Zn),
            step(np.zeros((m, n)), Zn, Zn, In))


def _rk4(A, B, x, u, t, h):
    u0, uh, u1 = u(t), u(t + 0.5 * h), u(t + h)
    k1 = A @ x + B @ u0
    k2 = A @ (x + 0.5 * h * k1) + B @ uh
    k3 = A @ (x + 0.5 * h * k2) + B @ uh
    k4 = A @ (x + h * k3) + B @ u1
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _grid(T_end, dt):
    N = int(round(T_end / dt))
    if N < 1 or abs(N * dt - T_end) > 1e-9 * max(1.0, T_end):
        raise StepSizeError(f"T_end={T_end} is not a multiple of dt={dt}")
    return np.arange(N + 1) * dt


def _hybrid(A, B, Cq, Dq, M, Rfull, delta, u, T_end, dt):
    """Core engine.  State z, input w; jump test on q = Cq z + Dq w.

    Returns (t, Z, W, jumps, pre, post, tau).
    """
    if dt > delta / 10 * (1 + 1e-12):
        raise StepSizeError(f"dt={dt} exceeds delta/10={delta / 10}")
    t = _grid(T_end, dt)
    N = t.size - 1
    m = A.shape[0]
    W = np.asarray(u(t), dtype=float).reshape(t.size, -1)
    Wh = np.asarray(u(t[:-1] + 0.5 * dt), dtype=float).reshape(N, -1)
    Phi, G0, Gh, G1 = rk4_matrices(A, B, dt)
    drive = W[:-1] @ G0.T + Wh @ Gh.T + W[1:] @ G1.T
    ufun = lambda s: np.asarray(u(s), dtype=float).reshape(-1)
    Qz = Cq.T @ M @ Cq
    Qzw = Cq.T @ M @ Dq
    Qw = Dq.T @ M @ Dq
    # q'Mq at grid points is linear algebra on (z, w)
    gw = np.einsum("ki,ij,kj->k", W, Qw, W)
    QzwW = W @ Qzw.T  # (N+1, m)

    def g(z, w):
        # q = 0 only touches the cone boundary (and R 0 = 0): count it as flow
        q = Cq @ z + Dq @ w
        return float(q @ M @ q) if np.any(q) else 1.0

    Z = np.empty((t.size, m))
    z = np.zeros(m)
    Z[0] = z
    jumps, pre, post = [], [], []
    t_enable = delta
    tol_ev = dt * EVENT_REL_TOL
    for k in range(N):
        t0, t1 = t[k], t[k + 1]
        z1 = Phi @ z + drive[k]
        if not np.all(np.isfinite(z1)) or np.abs(z1).max() > DIVERGENCE_LIMIT:
            raise DivergenceError(t1)
        if (t1 >= t_enable - 1e-12 * dt
                and (z1 @ Qz @ z1 + 2 * z1 @ QzwW[k + 1] + gw[k + 1]) <= 0.0
                and g(z1, W[k + 1]) <= 0.0):
            # earliest instant in (t0, t1] where the timer allows a jump and q is in the jump set
            te = max(t0, t_enable)
            if te > t0 and te < t1:
                ze = _rk4(A, B, z, ufun, t0, te - t0)
                if g(ze, ufun(te)) <= 0.0:
                    ts, zs = te, ze
                else:
                    ts, zs = _bisect(A, B, z, ufun, t0, te, t1, g, tol_ev)
            elif te <= t0 and g(z, W[k]) <= 0.0 and t0 > 0:  # pragma: no cover - caught one step earlier
                ts, zs = t0, z
            else:
                ts, zs = _bisect(A, B, z, ufun, t0, te, t1, g, tol_ev)
            zp = Rfull @ zs
            jumps.append(float(ts))
            pre.append(zs.copy())
            post.append(zp.copy())
            t_enable = ts + delta
            z1 = zp if ts >= t1 else _rk4(A, B, zp, ufun, ts, t1 - ts)
        z = z1
        Z[k + 1] = z
    tau = t - _last_jump_at(t, jumps)
    return t, Z, W, jumps, pre, post, tau


def _last_jump_at(t, jumps):
    """Time of the latest jump at or before each grid point (0 before the first)."""
    if not jumps:
        return np.zeros(t.size)
    js = np.asarray(jumps)
    idx = np.searchsorted(js, t + 1e-12 * max(1.0, t[-1]), side="right") - 1
    return np.where(idx >= 0, js[np.clip(idx, 0, None)], 0.0)


def _bisect(A, B, z, ufun, t0, lo, hi, g, tol):
    """Shrink (lo, hi] around the first entry into the jump set; returns the right end."""
    zhi = None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        zm = _rk4(A, B, z, ufun, t0, mid - t0)
        if g(zm, ufun(mid)) <= 0.0:
            hi, zhi = mid, zm
        else:
            lo = mid
    if zhi is None:
        zhi = _rk4(A, B, z, ufun, t0, hi - t0)
    return hi, zhi


def simulate_reset(sys: ResetSystem, u=None, T_end=10.0, dt=1e-3) -> SimTrace:
    """Simulate from x(0)=0, tau(0)=0 on the grid k*dt, k = 0..T_end/dt."""
    G = sys.base
    m, n = G.m, G.n
    u = as_signal(u, n)
    Cq = np.vstack([np.eye(m), np.zeros((n, m))])
    Dq = np.vstack([np.zeros((m, n)), np.eye(n)])
    t, X, U, jumps, pre, post, tau = _hybrid(G.A, G.B, Cq, Dq, sys.M, sys.R, sys.delta,
                                             u, T_end, dt)
    Y = X @ G.C.T + U @ G.D.T
    return SimTrace(t, X, U, Y, jumps, tau, pre, post)


@dataclass
class ClosedLoopTrace:
    t: np.ndarray
    trace_plant: SimTrace
    trace_ctrl: SimTrace
    u1: np.ndarray
    y1: np.ndarray
    u2: np.ndarray
    y2: np.ndarray
    w: np.ndarray

    @property
    def jumps(self):
        return self.trace_ctrl.jumps


def closed_loop_matrices(plant: StateSpace, ctrl: StateSpace):
    """Stacked flow of u1 = w - y2, u2 = y1 with state [xp; xc].

    Returns A, B and output maps (K, L) so that signal = K z + L w for
    u1, y1, u2, y2.
    """
    P, C = as_ss(plant), as_ss(ctrl)
    if P.n != C.n:
        raise TopologyError("plant and controller dimensions do not close the loop")
    if np.any(C.D @ P.D != 0) or np.any(P.D @ C.D != 0):
        raise TopologyError("algebraic loop: plant and controller feedthroughs both nonzero")
    mp, mc = P.m, C.m
    # u1 = w - Cc xc - Dc (Cp xp + Dp u1); Dc Dp = 0 so u1 is explicit
    Ku1 = np.hstack([-C.D @ P.C, -C.C])
    Lu1 = np.eye(P.n)
    Ky1 = np.hstack([P.C, np.zeros((P.n, mc))]) + P.D @ Ku1
    Ly1 = P.D @ Lu1
    Ku2, Lu2 = Ky1, Ly1
    Ky2 = np.hstack([np.zeros((C.n, mp)), C.C]) + C.D @ Ku2
    Ly2 = C.D @ Lu2
    A = np.block([[P.A, np.zeros((mp, mc))], [np.zeros((mc, mp)), C.A]])
    A = A + np.vstack([P.B @ Ku1, C.B @ Ku2])
    B = np.vstack([P.B @ Lu1, C.B @ Lu2])
    outs = {"u1": (Ku1, Lu1), "y1": (Ky1, Ly1), "u2": (Ku2, Lu2), "y2": (Ky2, Ly2)}
    return A, B, outs


def simulate_closed_loop(plant, ctrl, w=None, T_end=10.0, dt=1e-3) -> ClosedLoopTrace:
    """Negative feedback of an LTI plant with a reset controller; jumps act on the controller."""
    if not isinstance(ctrl, ResetSystem):
        ctrl = ResetSystem.linear(ctrl)
    P, C = as_ss(plant), ctrl.base
    A, B, outs = closed_loop_matrices(P, C)
    mp, mc = P.m, C.m
    w = as_signal(w, P.n)
    Ku2, Lu2 = outs["u2"]
    Cq = np.vstack([np.hstack([np.zeros((mc, mp)), np.eye(mc)]), Ku2])
    Dq = np.vstack([np.zeros((mc, P.n)), Lu2])
    Rfull = np.block([[np.eye(mp), np.zeros((mp, mc))], [np.zeros((mc, mp)), ctrl.R]])
    t, Z, W, jumps, pre, post, tau = _hybrid(A, B, Cq, Dq, ctrl.M, Rfull, ctrl.delta, w, T_end, dt)
    sig = {k: Z @ K.T + W @ L.T for k, (K, L) in outs.items()}
    tp = SimTrace(t, Z[:, :mp], sig["u1"], sig["y1"], [], t.copy())
    tc = SimTrace(t, Z[:, mp:], sig["u2"], sig["y2"], jumps, tau,
                  [p[mp:] for p in pre], [p[mp:] for p in post])
    return ClosedLoopTrace(t, tp, tc, sig["u1"], sig["y1"], sig["u2"], sig["y2"], W)


# --- gain / phase -----------------------------------------------------------------------

@dataclass(frozen=True)
class GainPhasePoint:
    rho: float
    theta: float
    T: float
    infinite: bool = False

    def points(self):
        """The pair rho e^{+-j theta}."""
        z = self.rho * complex(math.cos(self.theta), math.sin(self.theta))
        return [z, z.conjugate()]


def _trapz(f, t):
    return float(np.trapezoid(f, t)) if hasattr(np, "trapezoid") else float(np.trapz(f, t))


def truncated_gain_phase(u, y, t, T=None) -> GainPhasePoint:
    """Gain and phase of (P_T u, P_T y) by trapezoidal quadrature on the common grid t."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float).reshape(t.size, -1)
    y = np.asarray(y, dtype=float).reshape(t.size, -1)
    if T is None:
        T = float(t[-1])
    k = int(np.searchsorted(t, T, side="right"))
    ts, us, ys = t[:k], u[:k], y[:k]
    nu = math.sqrt(max(_trapz(np.sum(us * us, axis=1), ts), 0.0))
    ny = math.sqrt(max(_trapz(np.sum(ys * ys, axis=1), ts), 0.0))
    if nu == 0.0 and ny == 0.0:
        return GainPhasePoint(0.0, 0.0, T)
    if nu == 0.0:
        return GainPhasePoint(math.inf, 0.0, T, infinite=True)
    if ny == 0.0:
        return GainPhasePoint(0.0, 0.0, T)
    c = _trapz(np.sum(us * ys, axis=1), ts) / (nu * ny)
    return GainPhasePoint(ny / nu, math.acos(min(1.0, max(-1.0, c))), T)


def cloud_inputs(n_inputs, seed, n=1):
    """The seeded input family used for point-cloud sampling."""
    rng = np.random.default_rng(seed)
    return [InputSignal.random_decaying(rng, n=n) for _ in range(n_inputs)]


def sample_sg_cloud(sys: ResetSystem, n_inputs, T_grid, seed=0, dt=None, threads=1):
    """Inner sample of the hard scaled graph: +-theta points per (input, horizon).

    Returned in (input index, horizon) order regardless of ``threads``.
    """
    if n_inputs <= 0:
        return []
    if not is_hurwitz(sys.base.A):
        raise ValueError("sample_sg_cloud needs a Hurwitz base system")
    T_grid = sorted(float(T) for T in T_grid)
    if dt is None:
        dt = min(sys.delta / 10, 2 * np.pi / 1e2 / 40)
    T_end = math.ceil(T_grid[-1] / dt) * dt
    inputs = cloud_inputs(n_inputs, seed, sys.base.n)

    def one(u):
        tr = simulate_reset(sys, u, T_end, dt)
        return [truncated_gain_phase(tr.u, tr.y, tr.t, T) for T in T_grid]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(one, inputs))
    else:
        res = [one(u) for u in inputs]
    return [p for r in res for p in r]


def cloud_points(cloud):
    return np.array([z for p in cloud if not p.infinite for z in p.points()], dtype=complex)


# --- step response metrics ----------------------------------------------------------------

@dataclass
class StepMetrics:
    overshoot: float  # percent
    settling_time: float
    settled: bool
    l2_u1: float
    l2_y1: float
    final_value: float

    def to_dict(self):
        return dict(self.__dict__)


def step_metrics(t, y1, u1=None, band=0.02) -> StepMetrics:
    """Overshoot (%), 2% settling time w.r.t. the mean of the final 10%, and L2 norms."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y1, dtype=float).reshape(t.size, -1)[:, 0]
    tail = y[int(0.9 * t.size):]
    yf = float(tail.mean())
    if yf == 0.0:
        over = 0.0
    else:
        over = max(0.0, (np.max(y * np.sign(yf)) - abs(yf)) / abs(yf) * 100.0)
    out = np.abs(y - yf) > band * abs(yf)
    if not out.any():
        ts, settled = float(t[0]), True
    elif out[-1]:
        ts, settled = math.inf, False
    else:
        last = int(np.nonzero(out)[0][-1])
        ts, settled = float(t[last + 1]), True
    l2 = lambda s: math.sqrt(_trapz(np.sum(np.asarray(s, float).reshape(t.size, -1) ** 2, axis=1), t))
    return StepMetrics(float(over), ts, settled, l2(u1) if u1 is not None else math.nan, l2(y1), yf)
