"""Three-step reset controller synthesis: separation check, P collection, (R, M) search, selection."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator

from . import sdpcore
from .cert import (
    EPS_REG,
    MU_COUNT,
    MU_MIN,
    TOL_SEP,
    AdmissibilityReport,
    StabilityCertificate,
    base_hypotheses,
    check_admissible,
    check_stability,
    config_hash,
    h1_inverse_region,
)
from .linsys import StateSpace, as_ss, system_from_dict
from .resetsim import (
    DivergenceError,
    InputSignal,
    ResetSystem,
    simulate_closed_loop,
    step_metrics,
)
from .sgregions import patch_overapprox

log = logging.getLogger(__name__)

CRITERIA = ("l2_u1", "overshoot", "settling")


class DesignError(ValueError):
    pass


class Step1Failure(RuntimeError):
    """The base controller does not separate from the plant's inverse graph."""

    def __init__(self, certificate: StabilityCertificate):
        super().__init__(f"base controller fails the separation test: r_min={certificate.r_min:.6g} "
                         f"(need >= {certificate.tol_sep:g})")
        self.certificate = certificate
        self.distance = certificate.r_min


@dataclass(frozen=True)
class MStructure:
    """Conic jump set on (y, u): M = [C D; 0 I]' [[-k1, 1], [1, k2]] [C D; 0 I]."""

    k1: float
    k2: float = 0.0

    def __post_init__(self):
        if not self.k1 > self.k2:
            raise ValueError(f"need k1 > k2, got k1={self.k1}, k2={self.k2}")

    def build(self, ctrl: StateSpace):
        ctrl = as_ss(ctrl)
        m, n = ctrl.m, ctrl.n
        T = np.block([[ctrl.C, ctrl.D], [np.zeros((n, m)), np.eye(n)]])
        K = np.block([[-self.k1 * np.eye(n), np.eye(n)], [np.eye(n), self.k2 * np.eye(n)]])
        M = T.T @ K @ T
        return 0.5 * (M + M.T)


@dataclass(eq=False)
class FeasibleEntry:
    R: np.ndarray
    k1: float
    k2: float
    rho: list
    residual: float
    report: AdmissibilityReport | None = None

    @property
    def key(self):
        return (float(self.k1), tuple(float(v) for v in np.asarray(self.R).ravel()))

    def to_dict(self):
        return {"k1": self.k1, "k2": self.k2, "R": np.asarray(self.R).tolist(),
                "rho_max": max(self.rho) if self.rho else 0.0, "residual": self.residual,
                "recheck": None if self.report is None else
                {"admissible": self.report.admissible, "shortcut": self.report.shortcut}}


@dataclass
class DesignResult:
    feasible_set: list
    selected: FeasibleEntry
    scores: dict  # index in feasible_set -> metrics dict
    criterion: str
    baseline: dict | None = None
    config: dict = field(default_factory=dict)
    rejected: list = field(default_factory=list)

    def to_dict(self):
        idx = self.feasible_set.index(self.selected)
        return {"criterion": self.criterion,
                "selected": dict(self.selected.to_dict(), index=idx),
                "feasible_set": [e.to_dict() for e in self.feasible_set],
                "scores": {str(k): _clean(v) for k, v in sorted(self.scores.items())},
                "baseline": _clean(self.baseline) if self.baseline else None,
                "rejected": self.rejected,
                "config": self.config}

    def scores_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "k1", "R", "overshoot", "settling_time", "settled", "l2_u1", "l2_y1",
                    "jumps", "selected"])
        sel = self.feasible_set.index(self.selected)
        for i, e in enumerate(self.feasible_set):
            s = self.scores.get(i, {})
            w.writerow([i, repr(e.k1), " ".join(repr(float(v)) for v in np.ravel(e.R)),
                        s.get("overshoot"), s.get("settling_time"), s.get("settled"),
                        s.get("l2_u1"), s.get("l2_y1"), s.get("jumps"), int(i == sel)])
        return buf.getvalue()


def _clean(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            out[k] = "inf" if v > 0 else "nan"
        else:
            out[k] = v
    return out


# --- steps ------------------------------------------------------------------------------

def collect_P_set(bls: StateSpace, lambdas, threads=1, check=True):
    """PSD certificates over lambdas and the patch region they define."""
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if lambdas.size == 0:
        raise DesignError("lambda grid is empty")
    if check:
        hyp = base_hypotheses(bls)
        if hyp["failures"]:
            raise DesignError(f"base controller fails: {', '.join(hyp['failures'])}")
    region, _ = patch_overapprox(bls, lambdas, threads=threads)
    certs = [c for c in region.provenance if isinstance(c, sdpcore.KypCertificate)]
    if not certs:
        raise DesignError("no PSD certificate found on the lambda grid")
    return certs, region


def _structure(kind, p=0):
    if isinstance(kind, sdpcore.RStructure):
        return kind
    return sdpcore.RStructure(kind, p)


def synthesize_reset(P_set, k1_grid, k2, structure, ctrl: StateSpace, common_rho=False,
                     rejected=None):
    """Joint admissibility over all P for each k1; returns the feasible entries.

    ``rejected`` (a list) collects (k1, status) for grid points without a solution.
    """
    ctrl = as_ss(ctrl)
    k1_grid = [float(k) for k in k1_grid]
    if not k1_grid:
        raise DesignError("k1 grid is empty")
    st = _structure(structure)
    Ps = [c.P if isinstance(c, sdpcore.KypCertificate) else np.asarray(c, float) for c in P_set]
    out = []
    for k1 in k1_grid:
        M = MStructure(k1, k2).build(ctrl)
        res = sdpcore.admissibility_solve(Ps, M, st, ctrl.n, common_rho=common_rho)
        if res.feasible:
            out.append(FeasibleEntry(np.asarray(res.R), k1, float(k2), list(res.rho), res.residual))
        elif rejected is not None:
            rejected.append({"k1": k1, "status": res.status})
    return out


def _score_key(metric, e: FeasibleEntry):
    # 9 significant digits so bitwise-noise differences still count as ties
    return (float(f"{metric:.9e}") if math.isfinite(metric) else math.inf,) + e.key


def select_by_performance(feasible_set, plant, ctrl_bls, w=None, criterion="l2_u1", T_end=150.0,
                          dt=1e-3, delta=1e-2, M_of=None):
    """Simulate each candidate in closed loop and pick the best under ``criterion``.

    Ties go to the smaller k1, then the lexicographically smaller R.
    """
    if not feasible_set:
        raise DesignError("feasible set is empty")
    if criterion not in CRITERIA:
        raise DesignError(f"unknown criterion {criterion!r}")
    ctrl_bls = as_ss(ctrl_bls)
    w = w if w is not None else InputSignal("step", n=ctrl_bls.n)
    field_name = {"l2_u1": "l2_u1", "overshoot": "overshoot", "settling": "settling_time"}[criterion]
    scores, failures = {}, []
    for i, e in enumerate(feasible_set):
        M = MStructure(e.k1, e.k2).build(ctrl_bls) if M_of is None else M_of(e)
        sys = ResetSystem(ctrl_bls, e.R, M, delta)
        try:
            cl = simulate_closed_loop(plant, sys, w, T_end, dt)
        except DivergenceError as exc:
            failures.append({"index": i, "k1": e.k1, "error": str(exc)})
            continue
        m = step_metrics(cl.t, cl.y1, cl.u1).to_dict()
        m["jumps"] = len(cl.jumps)
        scores[i] = m
    if not scores:
        raise DesignError(f"every candidate diverged: {failures}")
    best = min(scores, key=lambda i: _score_key(scores[i][field_name], feasible_set[i]))
    cl0 = simulate_closed_loop(plant, ResetSystem.linear(ctrl_bls, delta), w, T_end, dt)
    base = step_metrics(cl0.t, cl0.y1, cl0.u1).to_dict()
    return DesignResult(list(feasible_set), feasible_set[best], scores, criterion, base,
                        rejected=failures)


# --- configuration ---------------------------------------------------------------------

class GridSpec(BaseModel):
    """Uniform (start, stop, step) or log (start, stop, num) grid, or explicit values."""

    model_config = ConfigDict(extra="forbid")
    kind: Literal["range", "logspace", "values"] = "range"
    start: float | None = None
    stop: float | None = None
    step: PositiveFloat | None = None
    num: int | None = None
    values: list[float] | None = None

    def array(self):
        if self.kind == "values":
            return np.asarray(self.values or [], dtype=float)
        if self.start is None or self.stop is None:
            raise ValueError("grid needs start and stop")
        if self.kind == "logspace":
            if not (self.num and self.num > 0) or self.start <= 0 or self.stop <= 0:
                raise ValueError("logspace grid needs positive start, stop and num")
            return np.logspace(np.log10(self.start), np.log10(self.stop), self.num)
        if self.step is None:
            raise ValueError("range grid needs a step")
        k = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        # rounding keeps grid points like 0.01*j exact to the printed decimals
        return np.round(self.start + self.step * np.arange(k + 1), 12)


SystemSpec = dict


class PipelineConfig(BaseModel):
    """All inputs of the design pipeline, with defaults."""

    model_config = ConfigDict(extra="forbid")
    schema_version: int = 1
    plant: SystemSpec
    controller: SystemSpec
    lambdas: GridSpec = Field(default_factory=lambda: GridSpec(kind="range", start=-1.0, stop=1.0,
                                                                step=0.01))
    k1_grid: GridSpec = Field(default_factory=lambda: GridSpec(kind="logspace", start=0.1,
                                                                stop=20.0, num=40))
    k2: float = 0.0
    r_structure: Literal["free", "scalar", "partial"] = "free"
    partial_p: int = 0
    common_rho: bool = False
    delta: PositiveFloat = 1e-2
    criterion: Literal["l2_u1", "overshoot", "settling"] = "l2_u1"
    T_end: PositiveFloat = 150.0
    dt: PositiveFloat = 1e-3
    w: dict = Field(default_factory=lambda: {"type": "step"})
    mode: Literal["soft", "hard"] = "soft"
    mu_count: int = MU_COUNT
    mu_min: PositiveFloat = MU_MIN
    tol_sep: PositiveFloat = TOL_SEP
    eps: PositiveFloat = EPS_REG
    h1_lambdas: GridSpec | None = None
    threads: int = 1
    seed: int = 0

    @field_validator("mu_count", "threads")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    def systems(self):
        return as_ss(system_from_dict(self.plant)), as_ss(system_from_dict(self.controller))

    def digest(self):
        return config_hash(self.model_dump(mode="json"))


@dataclass
class PipelineOutput:
    certificate: StabilityCertificate
    design: DesignResult
    reports: list


def step1(cfg: PipelineConfig, plant, ctrl, patch):
    """Separation certificate of the base controller against the plant."""
    c, r = patch.bounding_disk()
    h1l = cfg.h1_lambdas.array() if cfg.h1_lambdas is not None else None
    ig = h1_inverse_region(plant, cfg.eps, h1l, target=abs(c) + r, threads=cfg.threads)
    notes = []
    if ig.regularized:
        notes.append(f"plant regularized to A - eps I with eps={ig.eps:g} "
                     "(poles on the imaginary axis)")
    cert = check_stability(ig.region, patch, mode=cfg.mode, mu_count=cfg.mu_count,
                           mu_min=cfg.mu_min, tol_sep=cfg.tol_sep, caveats=notes,
                           threads=cfg.threads)
    cert.provenance = {"config_hash": cfg.digest(), "h1_lambdas": len(ig.lambdas),
                       "patch_lambdas": len(cfg.lambdas.array()),
                       "lambda_grid": "uniform step grid" if cfg.lambdas.kind == "range" else cfg.lambdas.kind}
    return cert, ig


def design_pipeline(cfg: PipelineConfig | dict) -> PipelineOutput:
    """Steps 1-3.  Raises Step1Failure (with the measured distance) before any synthesis."""
    if isinstance(cfg, dict):
        cfg = PipelineConfig.model_validate(cfg)
    plant, ctrl = cfg.systems()
    lambdas = cfg.lambdas.array()
    k1_grid = cfg.k1_grid.array()
    if k1_grid.size == 0:
        raise DesignError("k1 grid is empty")
    if np.any(k1_grid <= cfg.k2):
        raise DesignError("every k1 must exceed k2")
    certs, patch = collect_P_set(ctrl, lambdas, threads=cfg.threads)
    cert, _ = step1(cfg, plant, ctrl, patch)
    if not cert.stable:
        raise Step1Failure(cert)
    rejected = []
    st = sdpcore.RStructure(cfg.r_structure, cfg.partial_p)
    feas = synthesize_reset(certs, k1_grid, cfg.k2, st, ctrl, cfg.common_rho, rejected)
    if not feas:
        raise DesignError("no (R, k1) pair satisfies the admissibility LMI")
    reports = []
    for e in feas:
        sys = ResetSystem(ctrl, e.R, MStructure(e.k1, e.k2).build(ctrl), cfg.delta)
        e.report = check_admissible(sys, certs)
        reports.append(e.report)
    feas = [e for e in feas if e.report.admissible]
    w = InputSignal.from_dict(cfg.w, n=ctrl.n)
    res = select_by_performance(feas, plant, ctrl, w, cfg.criterion, cfg.T_end, cfg.dt, cfg.delta)
    res.rejected = rejected + res.rejected
    res.config = {"config_hash": cfg.digest(), "n_P": len(certs), "k1_grid": k1_grid.tolist(),
                  "lambda_count": int(lambdas.size)}
    return PipelineOutput(cert, res, reports)
