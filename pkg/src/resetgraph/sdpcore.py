"""Small dense LMI engine for the KYP-type scaled-graph certificates.

Every LMI is written as a list of symmetric blocks, each affine in a vector
of decision variables ``x = [scalars..., vech(P)]``.  The numerical work is
done by cvxopt's primal-dual interior-point SDP solver; every witness it
returns is substituted back and checked here, so a reported feasible point
never rests on the solver's own status flag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers
from scipy import optimize
from scipy.linalg import solve_continuous_lyapunov

from .linsys import NotHurwitzError, StateSpace, hinf_norm, is_hurwitz

log = logging.getLogger(__name__)

TOL_LMI = 1e-7
TOL_PSD = 1e-8
# r below this fraction of ||H||_inf is indistinguishable from zero at TOL_LMI
TOL_R_REL = 1e-3
SOLVER_TOL = 1e-9
BOX = 1e6  # |x_i| bound in feasibility solves; keeps the slack problem bounded

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INDETERMINATE = "indeterminate"


class LmiPreconditionError(ValueError):
    pass


def sym_basis(m):
    """Basis of the symmetric m-by-m matrices, ordered like ``vech``."""
    basis = []
    for i in range(m):
        for j in range(i, m):
            E = np.zeros((m, m))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def vech_to_sym(v, m):
    P = np.zeros((m, m))
    P[np.triu_indices(m)] = v
    return P + np.triu(P, 1).T


@dataclass
class LmiBlock:
    """``const + sum_i x_i coeffs[i]``, constrained ``<= 0`` (sense "nsd") or ``>= 0`` ("psd")."""

    const: np.ndarray
    coeffs: np.ndarray
    sense: str = "nsd"

    def __post_init__(self):
        self.const = np.atleast_2d(np.asarray(self.const, dtype=float))
        k = self.const.shape[0]
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, k, k)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1:] != (k, k):
            raise ValueError("coeffs must have shape (nvar, k, k)")
        if not np.allclose(self.const, self.const.T) or not np.allclose(
                self.coeffs, self.coeffs.transpose(0, 2, 1)):
            raise ValueError("LMI blocks must be symmetric")
        if self.sense not in ("nsd", "psd"):
            raise ValueError(f"unknown sense {self.sense!r}")

    @property
    def size(self):
        return self.const.shape[0]

    def value(self, x):
        return self.const + np.tensordot(x, self.coeffs, axes=1)

    def violation(self, x):
        """Largest eigenvalue of the block in its "must be <= 0" orientation."""
        V = self.value(x)
        V = 0.5 * (V + V.T)
        if self.sense == "psd":
            V = -V
        return float(np.linalg.eigvalsh(V).max())


@dataclass
class LmiProblem:
    """Blocks affine in ``x``; the first ``n_scalar`` entries are named scalars, the rest ``vech(P)``."""

    blocks: list
    n_scalar: int = 0
    m: int = 0
    psd_P: bool = False
    scalar_names: tuple = ()
    objective: np.ndarray | None = None

    @property
    def nvar(self):
        return self.n_scalar + self.m * (self.m + 1) // 2

    def all_blocks(self):
        blocks = list(self.blocks)
        if self.psd_P and self.m:
            coeffs = np.zeros((self.nvar, self.m, self.m))
            for k, E in enumerate(sym_basis(self.m)):
                coeffs[self.n_scalar + k] = E
            blocks.append(LmiBlock(np.zeros((self.m, self.m)), coeffs, "psd"))
        return blocks

    def residual(self, x):
        return max(b.violation(x) for b in self.all_blocks())

    def split(self, x):
        scal = dict(zip(self.scalar_names, x[:self.n_scalar]))
        P = vech_to_sym(x[self.n_scalar:], self.m) if self.m else np.zeros((0, 0))
        return scal, P


@dataclass
class LmiResult:
    status: str
    x: np.ndarray | None = None
    P: np.ndarray | None = None
    scalars: dict = field(default_factory=dict)
    slack: float = np.nan
    residual: float = np.nan
    solver_status: str = ""

    @property
    def feasible(self):
        return self.status == FEASIBLE


def _cvx_solve(c, blocks, slack, nvar, t_floor=1e-6, extra_lin=None, box=None):
    """Run cvxopt on the blocks. Returns (solver status, x, t) with t=0 when no slack."""
    ntot = nvar + (1 if slack else 0)
    Gs, hs = [], []
    for b in blocks:
        k = b.size
        G = np.zeros((k * k, ntot))
        sign = 1.0 if b.sense == "nsd" else -1.0
        for i in range(nvar):
            G[:, i] = sign * b.coeffs[i].ravel(order="F")
        if slack:
            G[:, nvar] = -np.eye(k).ravel(order="F")
        Gs.append(matrix(G))
        hs.append(matrix(-sign * b.const))
    Gl_rows, hl = [], []
    if slack:
        row = np.zeros(ntot)
        row[nvar] = -1.0
        Gl_rows.append(row)
        hl.append(t_floor)
    if box is not None:
        for i in range(nvar):
            for sgn in (1.0, -1.0):
                row = np.zeros(ntot)
                row[i] = sgn
                Gl_rows.append(row)
                hl.append(box)
    if extra_lin is not None:
        for row, h in extra_lin:
            Gl_rows.append(np.concatenate([row, np.zeros(ntot - row.size)]))
            hl.append(h)
    kw = {}
    if Gl_rows:
        kw = dict(Gl=matrix(np.array(Gl_rows)), hl=matrix(np.array(hl, dtype=float)))
    opts = dict(show_progress=False, abstol=SOLVER_TOL, reltol=SOLVER_TOL,
                feastol=SOLVER_TOL, maxiters=100)
    try:
        sol = solvers.sdp(matrix(np.asarray(c, dtype=float)), Gs=Gs, hs=hs,
                          options=opts, **kw)
    except (ArithmeticError, ValueError) as exc:
        log.debug("cvxopt raised %s", exc)
        return "exception", None, np.nan
    if sol["x"] is None:
        return sol["status"], None, np.nan
    z = np.array(sol["x"]).ravel()
    return sol["status"], z[:nvar], (z[nvar] if slack else 0.0)


def lmi_feasible(prob: LmiProblem, tol=TOL_LMI) -> LmiResult:
    """Feasibility through ``min t s.t. block <= t I`` (every block, incl. P >= 0).

    Feasible iff the verified residual of the returned point is at most
    ``tol``; infeasible iff the solver converged with ``t* > tol`` and no
    variable sits on the ``BOX`` bound; anything else is indeterminate.
    """
    blocks = prob.all_blocks()
    c = np.zeros(prob.nvar + 1)
    c[-1] = 1.0
    status, x, t = _cvx_solve(c, blocks, True, prob.nvar, box=BOX)
    if x is None:
        return LmiResult(INDETERMINATE, solver_status=status)
    res = prob.residual(x)
    scal, P = prob.split(x)
    out = LmiResult(INDETERMINATE, x, P, scal, float(t), res, status)
    if res <= tol:
        out.status = FEASIBLE
    elif status == "optimal" and t > tol and np.abs(x).max(initial=0.0) < 0.99 * BOX:
        out.status = INFEASIBLE
    return out


def lmi_optimize(prob: LmiProblem, extra_lin=None) -> LmiResult:
    """Minimize ``prob.objective @ x`` subject to the blocks, no slack.

    The status here is only the solver's; callers verify the witness.
    """
    blocks = prob.all_blocks()
    status, x, _ = _cvx_solve(prob.objective, blocks, False, prob.nvar, extra_lin=extra_lin)
    if x is None:
        return LmiResult(INDETERMINATE, solver_status=status)
    scal, P = prob.split(x)
    res = prob.residual(x)
    return LmiResult(FEASIBLE if status == "optimal" else INDETERMINATE, x, P, scal,
                     0.0, res, status)


# --- KYP certificates ---------------------------------------------------------

def pi_matrix(sigma, lam, r):
    if r <= 0:
        raise ValueError("radius must be positive")
    return sigma * np.array([[1.0, -lam], [-lam, lam * lam - r * r]])


def theta_matrix(G: StateSpace, Pi):
    """``[C D; 0 I]^T (Pi kron I_n) [C D; 0 I]``."""
    n, m = G.n, G.m
    T = np.block([[G.C, G.D], [np.zeros((n, m)), np.eye(n)]])
    return T.T @ np.kron(np.asarray(Pi, dtype=float), np.eye(n)) @ T


def kyp_residual(G, sigma, lam, r, P):
    """Largest eigenvalue of the KYP LMI evaluated at (sigma, lambda, r, P)."""
    m, n = G.m, G.n
    P = np.atleast_2d(np.asarray(P, dtype=float)).reshape(m, m)
    K = np.block([[G.A.T @ P + P @ G.A, P @ G.B], [G.B.T @ P, np.zeros((n, n))]])
    L = K - theta_matrix(G, pi_matrix(sigma, lam, r))
    return float(np.linalg.eigvalsh(0.5 * (L + L.T)).max())


def _kyp_problem(G, sigma, lam, require_psd, r2=None):
    """KYP LMI with x = [r2, vech(P)] (or x = vech(P) when r2 is fixed)."""
    m, n = G.m, G.n
    T = np.block([[G.C, G.D], [np.zeros((n, m)), np.eye(n)]])
    Pi0 = sigma * np.array([[1.0, -lam], [-lam, lam * lam]])
    Th0 = T.T @ np.kron(Pi0, np.eye(n)) @ T
    E2 = np.zeros((m + n, m + n))
    E2[m:, m:] = np.eye(n)
    coeffs = []
    const = -Th0
    if r2 is None:
        coeffs.append(sigma * E2)
    else:
        const = const + sigma * r2 * E2
    for E in sym_basis(m):
        coeffs.append(np.block([[G.A.T @ E + E @ G.A, E @ G.B],
                                [G.B.T @ E, np.zeros((n, n))]]))
    blk = LmiBlock(const, np.array(coeffs), "nsd")
    n_scalar = 1 if r2 is None else 0
    return LmiProblem([blk], n_scalar=n_scalar, m=m, psd_P=require_psd,
                      scalar_names=("r2",) if r2 is None else ())


@dataclass
class KypCertificate:
    sigma: int
    lam: float
    r: float
    P: np.ndarray
    psd: bool
    residual: float

    @property
    def abc(self):
        """Generalized-circle coefficients of the certified region."""
        s = self.sigma
        return (float(s), -s * self.lam, s * (self.lam ** 2 - self.r ** 2))

    def to_dict(self):
        return {"sigma": self.sigma, "lambda": self.lam, "r": self.r, "psd": self.psd,
                "residual": self.residual, "P": np.asarray(self.P).tolist()}


@dataclass
class KypOutcome:
    """Result of :func:`kyp_solve`; ``cert`` is None unless ``status == FEASIBLE``."""

    status: str
    sigma: int
    lam: float
    cert: KypCertificate | None = None


def _fixed_r_witness(Gn, sigma, lamn, r2n, require_psd):
    return lmi_feasible(_kyp_problem(Gn, sigma, lamn, require_psd, r2=r2n))


def kyp_solve(G: StateSpace, sigma: int, lam: float, require_psd: bool = False,
              method: str = "direct", gamma: float | None = None) -> KypOutcome:
    """Optimal-radius KYP certificate for the disk (sigma=-1) or disk exterior (sigma=+1).

    sigma=-1 gives the smallest covering radius about ``lam``; sigma=+1 the
    largest excluded radius.  The problem is solved for ``G / gamma`` with
    ``gamma = ||G||_inf`` and mapped back, which keeps P well scaled.

    ``method="direct"`` treats r^2 as a decision variable (the LMI is affine
    in it); ``method="bisection"`` bisects on r^2 with a feasibility solve
    per step.  Both finish with an independent residual check.
    """
    if sigma not in (-1, 1):
        raise ValueError("sigma must be -1 or +1")
    if not is_hurwitz(G.A):
        raise NotHurwitzError("KYP certificate requires a Hurwitz A")
    if gamma is None:
        gamma = hinf_norm(G) if G.m else float(np.linalg.norm(G.D, 2))
    gamma = gamma if gamma > 0 else 1.0
    Gb, T = balanced_realization(G)
    Gn = Gb * (1.0 / gamma)
    lamn = lam / gamma
    if method == "direct":
        status, r2n, Pn = _kyp_direct(Gn, sigma, lamn, require_psd)
    elif method == "bisection":
        status, r2n, Pn = _kyp_bisect(Gn, sigma, lamn, require_psd)
    else:
        raise ValueError(f"unknown method {method!r}")
    if status != FEASIBLE:
        return KypOutcome(status, sigma, lam)
    r = float(np.sqrt(r2n) * gamma)
    Ti = np.linalg.inv(T) if G.m else T
    P = Ti.T @ Pn @ Ti * gamma ** 2
    P = 0.5 * (P + P.T)
    psd = bool(G.m == 0 or np.linalg.eigvalsh(Pn).min() >= -TOL_PSD * max(1.0, np.abs(Pn).max()))
    if require_psd and not psd:
        return KypOutcome(INDETERMINATE, sigma, lam)
    cert = KypCertificate(sigma, float(lam), r, P, psd, kyp_residual(Gn, sigma, lamn, np.sqrt(r2n), Pn))
    return KypOutcome(FEASIBLE, sigma, lam, cert)


def balanced_realization(G: StateSpace):
    """Balanced coordinates ``x = T xb`` for a stable minimal G, else (G, I).

    The KYP LMI is congruent under state changes, so solving in balanced
    coordinates only changes conditioning.  Systems with widely spread
    poles (near-integrators) need it.
    """
    m = G.m
    eye = np.eye(m)
    if m == 0:
        return G, eye
    try:
        Wc = solve_continuous_lyapunov(G.A, -G.B @ G.B.T)
        Wo = solve_continuous_lyapunov(G.A.T, -G.C.T @ G.C)
        Lc = np.linalg.cholesky(0.5 * (Wc + Wc.T))
        U, sv, _ = np.linalg.svd(Lc.T @ Wo @ Lc)
        if sv.min() <= 1e-14 * sv.max():
            return G, eye
        T = Lc @ U @ np.diag(sv ** -0.25)
        Ti = np.linalg.inv(T)
    except np.linalg.LinAlgError:
        return G, eye
    if not np.all(np.isfinite(T)) or np.linalg.cond(T) > 1e12:
        return G, eye
    return StateSpace(Ti @ G.A @ T, Ti @ G.B, G.C @ T, G.D), T


def _too_small(r2n):
    return r2n <= TOL_R_REL ** 2


def _kyp_direct(Gn, sigma, lamn, require_psd):
    prob = _kyp_problem(Gn, sigma, lamn, require_psd)
    prob.objective = np.zeros(prob.nvar)
    prob.objective[0] = 1.0 if sigma == -1 else -1.0
    # r2 >= 0 always; for sigma=+1 also r2 <= (|lambda| + 1)^2 + 1 keeps the problem bounded
    lin = [(np.eye(prob.nvar)[0] * -1.0, 0.0)]
    if sigma == 1:
        lin.append((np.eye(prob.nvar)[0], (abs(lamn) + 2.0) ** 2))
    res = lmi_optimize(prob, extra_lin=lin)
    if res.x is None:
        return INDETERMINATE, None, None
    r2n = float(res.scalars["r2"])
    if sigma == 1 and _too_small(r2n):
        return (INFEASIBLE if res.solver_status == "optimal" else INDETERMINATE), None, None
    if res.residual <= TOL_LMI and r2n > 0:
        return FEASIBLE, r2n, res.P
    # back the radius off slightly and recover a verified witness at fixed r
    for k in range(1, 6):
        step = 10.0 ** (k - 8)
        r2try = r2n * (1 + step) + step if sigma == -1 else r2n * (1 - step)
        if sigma == 1 and _too_small(r2try):
            break
        fx = _fixed_r_witness(Gn, sigma, lamn, r2try, require_psd)
        if fx.feasible:
            return FEASIBLE, r2try, fx.P
    return INDETERMINATE, None, None


def _kyp_bisect(Gn, sigma, lamn, require_psd, iters=60, rel_width=1e-6):
    def probe(r2):
        return _fixed_r_witness(Gn, sigma, lamn, r2, require_psd)

    if sigma == -1:
        hi = (abs(lamn) + 1.0) ** 2 * 1.01  # ||Gn|| = 1, so |z - lam| <= |lam| + 1 covers SG
        top = probe(hi)
        if not top.feasible:
            return INDETERMINATE, None, None
        lo, best = 0.0, (hi, top.P)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            res = probe(mid)
            if res.status == INDETERMINATE:
                return INDETERMINATE, None, None
            if res.feasible:
                hi, best = mid, (mid, res.P)
            else:
                lo = mid
            if hi - lo <= rel_width * hi:
                break
        assert probe(best[0] * 1.5).feasible, "KYP feasibility not monotone in r^2"
        return FEASIBLE, best[0], best[1]
    lo_r2 = TOL_R_REL ** 2 * 4
    first = probe(lo_r2)
    if first.status == INDETERMINATE:
        return INDETERMINATE, None, None
    if not first.feasible:
        return INFEASIBLE, None, None
    lo, best = lo_r2, (lo_r2, first.P)
    hi = (abs(lamn) + 1.0) ** 2 * 1.01 + 1.0
    while probe(hi).feasible:  # pragma: no cover - exterior radius is bounded by |lam| + 1
        lo, hi = hi, 2 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        res = probe(mid)
        if res.status == INDETERMINATE:
            return INDETERMINATE, None, None
        if res.feasible:
            lo, best = mid, (mid, res.P)
        else:
            hi = mid
        if hi - lo <= rel_width * hi:
            break
    assert probe(best[0] * 0.5).feasible, "KYP feasibility not monotone in r^2"
    return FEASIBLE, best[0], best[1]


# --- reset-map admissibility ---------------------------------------------------

def psd_sqrt(P, tol=TOL_PSD):
    """Symmetric square root; eigenvalues in [-tol, 0) are clipped to zero."""
    P = 0.5 * (np.asarray(P, dtype=float) + np.asarray(P, dtype=float).T)
    w, V = np.linalg.eigh(P)
    scale = max(1.0, np.abs(w).max()) if w.size else 1.0
    if w.size and w.min() < -tol * scale:
        raise LmiPreconditionError(f"P is not positive semidefinite (min eig {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


@dataclass(frozen=True)
class RStructure:
    """Parametrization of the reset matrix: ``free``, ``scalar`` (alpha I), ``partial`` (diag(R11, I)) or ``fixed``."""

    kind: str = "free"
    p: int = 0
    R: np.ndarray | None = None

    def nparams(self, m):
        return {"free": m * m, "scalar": 1, "partial": self.p * self.p, "fixed": 0}[self.kind]

    def basis(self, m):
        """(R0, [R_1, ...]) so that R = R0 + sum_k theta_k R_k."""
        if self.kind == "free":
            mats = []
            for i in range(m):
                for j in range(m):
                    E = np.zeros((m, m))
                    E[i, j] = 1.0
                    mats.append(E)
            return np.zeros((m, m)), mats
        if self.kind == "scalar":
            return np.zeros((m, m)), [np.eye(m)]
        if self.kind == "partial":
            if not 0 < self.p <= m:
                raise ValueError(f"partial reset needs 0 < p <= m, got p={self.p}")
            R0 = np.zeros((m, m))
            R0[self.p:, self.p:] = np.eye(m - self.p)
            mats = []
            for i in range(self.p):
                for j in range(self.p):
                    E = np.zeros((m, m))
                    E[i, j] = 1.0
                    mats.append(E)
            return R0, mats
        if self.kind == "fixed":
            return np.asarray(self.R, dtype=float).reshape(m, m), []
        raise ValueError(f"unknown reset structure {self.kind!r}")


def _admissibility_blocks(P_list, M, structure, m, n, common_rho=False, rho_fixed=None):
    """Stacked admissibility LMI over the P list; x = [rho_1..rho_K (or rho), theta...]."""
    R0, Rmats = structure.basis(m)
    K = len(P_list)
    if rho_fixed is not None:
        n_rho = 0
    else:
        n_rho = 1 if common_rho else K
    nvar = n_rho + len(Rmats)
    M = np.asarray(M, dtype=float)
    if M.shape != (m + n, m + n):
        raise ValueError(f"M must be {(m + n, m + n)}, got {M.shape}")
    blocks = []
    for k, P in enumerate(P_list):
        S = psd_sqrt(P)
        N = 2 * m + n
        const = np.zeros((N, N))
        const[:m, :m] = P
        const[:m, m + n:] = R0.T @ S
        const[m + n:, :m] = S @ R0
        const[m + n:, m + n:] = np.eye(m)
        coeffs = np.zeros((nvar, N, N))
        Mpad = np.zeros((N, N))
        Mpad[:m + n, :m + n] = M
        if rho_fixed is not None:
            const = const + rho_fixed * Mpad
        else:
            coeffs[0 if common_rho else k] = Mpad
        for i, E in enumerate(Rmats):
            C = np.zeros((N, N))
            C[:m, m + n:] = E.T @ S
            C[m + n:, :m] = S @ E
            coeffs[n_rho + i] = C
        blocks.append(LmiBlock(const, coeffs, "psd"))
    for k in range(n_rho):
        c = np.zeros((nvar, 1, 1))
        c[k] = 1.0
        blocks.append(LmiBlock(np.zeros((1, 1)), c, "psd"))
    return blocks, n_rho, nvar


@dataclass
class AdmissibilityResult:
    status: str
    R: np.ndarray | None = None
    rho: list = field(default_factory=list)
    residual: float = np.nan

    @property
    def feasible(self):
        return self.status == FEASIBLE


def admissibility_residual(P, M, R, rho):
    """Most negative eigenvalue (sign-flipped) of the admissibility matrix; <= 0 means satisfied."""
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    M = np.asarray(M, dtype=float)
    n = M.shape[0] - m
    S = psd_sqrt(P)
    R = np.asarray(R, dtype=float).reshape(m, m)
    N = 2 * m + n
    X = np.zeros((N, N))
    X[:m, :m] = P
    X[:m, m + n:] = R.T @ S
    X[m + n:, :m] = S @ R
    X[:m + n, :m + n] += rho * M
    X[m + n:, m + n:] += np.eye(m)
    return float(-np.linalg.eigvalsh(0.5 * (X + X.T)).min())


def best_rho(P, M, R, rho_max=1e8):
    """Maximize the smallest eigenvalue of the admissibility matrix over rho >= 0.

    The smallest eigenvalue is concave in rho, so a bracketing expansion
    followed by a bounded scalar search finds the optimum.  Returns
    (rho, residual) with residual = -max min-eig (<= 0 means admissible).
    """
    f = lambda r: admissibility_residual(P, M, R, r)
    r_prev, f_prev = 0.0, f(0.0)
    r_lo, r = 0.0, 1e-6
    while r < rho_max:
        fr = f(r)
        if fr > f_prev:
            break
        r_lo, r_prev, f_prev = r_prev, r, fr
        r *= 4.0
    res = optimize.minimize_scalar(f, bounds=(r_lo, min(r, rho_max)), method="bounded",
                                   options={"xatol": 1e-12})
    cands = [(f_prev, r_prev), (float(res.fun), float(res.x)), (f(0.0), 0.0)]
    fbest, rbest = min(cands)
    return rbest, fbest


def admissibility_solve(P_list, M, structure: RStructure, n: int, rho_free: bool = True,
                        common_rho: bool = False, objective: str = "min_norm",
                        batch: int | None = 24) -> AdmissibilityResult:
    """Find R (per structure) and rho >= 0 satisfying the reset-map LMI for every P.

    ``rho_free=False`` pins rho = 0.  With free parameters in R, a second
    solve picks the admissible R of least spectral norm.

    Large P lists are handled by constraint generation: the stacked LMI is
    solved on a working subset, the candidate R is checked against every P
    (per-P rho search), and violators join the subset.  Infeasibility on a
    subset is infeasibility for the whole list.  ``batch=None`` disables it.
    """
    if isinstance(P_list, np.ndarray) and P_list.ndim == 2:
        P_list = [P_list]
    P_list = [np.atleast_2d(np.asarray(P, dtype=float)) for P in P_list]
    if not P_list:
        raise ValueError("empty P list")
    for P in P_list:
        psd_sqrt(P)  # precondition check
    if batch is None or len(P_list) <= batch or common_rho or not rho_free:
        return _admissibility_joint(P_list, M, structure, n, rho_free, common_rho, objective)
    K = len(P_list)
    work = sorted(set(np.linspace(0, K - 1, batch).round().astype(int).tolist()))
    for _ in range(K):
        sub = _admissibility_joint([P_list[i] for i in work], M, structure, n, True, False,
                                   objective)
        if not sub.feasible:
            return AdmissibilityResult(sub.status)
        checks = [best_rho(P, M, sub.R) for P in P_list]
        bad = [i for i, (_, res) in enumerate(checks) if res > TOL_LMI and i not in work]
        if not bad:
            rho = [r for r, _ in checks]
            res = max(r for _, r in checks)
            status = FEASIBLE if res <= TOL_LMI else INDETERMINATE
            return AdmissibilityResult(status, sub.R, rho, res)
        bad.sort(key=lambda i: -checks[i][1])
        work = sorted(set(work) | set(bad[:batch]))
    return AdmissibilityResult(INDETERMINATE)  # pragma: no cover


def _admissibility_joint(P_list, M, structure, n, rho_free, common_rho, objective):
    m = P_list[0].shape[0]
    blocks, n_rho, nvar = _admissibility_blocks(P_list, M, structure, m, n, common_rho,
                                                rho_fixed=None if rho_free else 0.0)
    prob = LmiProblem(blocks, n_scalar=nvar)
    feas = lmi_feasible(prob)
    if not feas.feasible:
        return AdmissibilityResult(feas.status)
    R0, Rmats = structure.basis(m)

    def unpack(x):
        R = R0 + sum(t * E for t, E in zip(x[n_rho:], Rmats))
        if n_rho == 0:
            rho = [0.0] * len(P_list)
        elif common_rho:
            rho = [max(float(x[0]), 0.0)] * len(P_list)
        else:
            rho = [max(float(v), 0.0) for v in x[:n_rho]]
        res = max(admissibility_residual(P, M, R, r) for P, r in zip(P_list, rho))
        return R, rho, res

    best = unpack(feas.x)
    polished = None
    if nvar > n_rho and objective == "min_norm":
        polished = _min_norm_R(blocks, n_rho, nvar, structure, m)
    elif n_rho and nvar == n_rho:
        c = np.ones(nvar)
        opt = lmi_optimize(LmiProblem(blocks, n_scalar=nvar, objective=c))
        if opt.x is not None:
            polished = opt.x.copy()
            polished[np.abs(polished) < 1e-9] = 0.0
    if polished is not None:
        cand = unpack(polished)
        if cand[2] <= TOL_LMI:
            best = cand
    R, rho, res = best
    status = FEASIBLE if res <= TOL_LMI else INDETERMINATE
    return AdmissibilityResult(status, R, rho, res)


def _min_norm_R(blocks, n_rho, nvar, structure, m):
    """Re-solve minimizing s with [[sI, R], [R^T, sI]] >= 0; returns x or None."""
    R0, Rmats = structure.basis(m)
    ntot = nvar + 1
    ext = []
    for b in blocks:
        c = np.concatenate([b.coeffs, np.zeros((1, b.size, b.size))])
        ext.append(LmiBlock(b.const, c, b.sense))
    const = np.zeros((2 * m, 2 * m))
    const[:m, m:] = R0
    const[m:, :m] = R0.T
    coeffs = np.zeros((ntot, 2 * m, 2 * m))
    for i, E in enumerate(Rmats):
        coeffs[n_rho + i, :m, m:] = E
        coeffs[n_rho + i, m:, :m] = E.T
    coeffs[nvar] = np.eye(2 * m)
    ext.append(LmiBlock(const, coeffs, "psd"))
    c = np.zeros(ntot)
    c[nvar] = 1.0
    prob = LmiProblem(ext, n_scalar=ntot, objective=c)
    res = lmi_optimize(prob)
    if res.x is None:
        return None
    x = res.x[:nvar].copy()
    # snap numerically-zero reset entries so that exact structures (e.g. R = 0) survive
    theta = x[n_rho:]
    theta[np.abs(theta) < 1e-7] = 0.0
    x[n_rho:] = theta
    return x
