"""``resetgraph`` command line: JSON config in, JSON/CSV out.

Exit codes: 0 success or certified, 1 not certified, 2 configuration error,
3 numerical or solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

from . import __version__, sdpcore
from .cert import check_admissible, config_hash, h1_inverse_region, check_stability
from .design import (
    DesignError,
    GridSpec,
    MStructure,
    PipelineConfig,
    Step1Failure,
    collect_P_set,
    design_pipeline,
)
from .example import dumps, reproduce
from .linsys import NotHurwitzError, PoleOnAxisError, as_ss, system_from_dict
from .resetsim import (
    DivergenceError,
    InputSignal,
    ResetSystem,
    SimulationError,
    StepSizeError,
    TopologyError,
    cloud_points,
    sample_sg_cloud,
    simulate_closed_loop,
    simulate_reset,
    step_metrics,
)
from .sgregions import boundary_csv, membership, patch_overapprox, sg_overapprox

log = logging.getLogger("resetgraph")

EXIT_OK, EXIT_NOT_CERTIFIED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


# --- configs ---------------------------------------------------------------------

class _Cfg(BaseModel):
    model_config = ConfigDict(extra="forbid")
    schema_version: int = 1


class SgConfig(_Cfg):
    system: dict
    lambdas: GridSpec | None = None
    boundary_points: PositiveInt = 2048
    window: list[float] | None = None  # [re, im, radius] for unbounded regions


class ResetSpec(_Cfg):
    """Reset controller: base system plus R and either M or (k1, k2)."""

    system: dict
    R: list | None = None
    M: list | None = None
    k1: float | None = None
    k2: float = 0.0
    delta: PositiveFloat = 1e-2

    def build(self):
        base = as_ss(system_from_dict(self.system))
        R = np.zeros((base.m, base.m)) if self.R is None else np.asarray(self.R, dtype=float)
        if self.M is not None:
            M = np.asarray(self.M, dtype=float)
        elif self.k1 is not None:
            M = MStructure(self.k1, self.k2).build(base)
        else:
            M = np.eye(base.m + base.n)
        return ResetSystem(base, R.reshape(base.m, base.m), M, self.delta)


class AdmissibleConfig(ResetSpec):
    lambdas: GridSpec = Field(default_factory=lambda: GridSpec(kind="range", start=-1.0, stop=1.0,
                                                                step=0.01))
    force_lmi: bool = False


class StabilityConfig(_Cfg):
    plant: dict
    controller: dict
    lambdas: GridSpec = Field(default_factory=lambda: GridSpec(kind="range", start=-1.0, stop=1.0,
                                                                step=0.01))
    mode: Literal["soft", "hard"] = "soft"
    mu_count: PositiveInt = 20
    mu_min: PositiveFloat = 1e-3
    tol_sep: PositiveFloat = 1e-3
    eps: PositiveFloat = 1e-3
    h1_lambdas: GridSpec | None = None


class SimulateConfig(ResetSpec):
    plant: dict | None = None
    input: dict = Field(default_factory=lambda: {"type": "step"})
    T_end: PositiveFloat = 10.0
    dt: PositiveFloat = 1e-3


class CloudConfig(ResetSpec):
    n_inputs: int = 50
    T_grid: list[PositiveFloat] = Field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0])
    seed: int = 0
    dt: PositiveFloat | None = None
    lambdas: GridSpec | None = None  # containment check against the BLS patch when given


def _load(path, model):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _meta(cfg):
    return {"tool": "resetgraph", "version": __version__,
            "config_hash": config_hash(cfg.model_dump(mode="json"))}


def _write(out: Path, name, text):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text if text.endswith("\n") else text + "\n")


def _threads(args):
    if args.threads:
        return args.threads
    env = os.environ.get("RESETGRAPH_THREADS")
    return max(1, int(env)) if env and env.isdigit() else 1


def _system(spec):
    try:
        return as_ss(system_from_dict(spec))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"bad system description: {exc}") from exc


# --- commands -------------------------------------------------------------------------

def _region_cmd(args, patch):
    cfg = _load(args.config, SgConfig)
    G = _system(cfg.system)
    lams = cfg.lambdas.array() if cfg.lambdas else None
    if patch:
        region, _ = patch_overapprox(G, lams, threads=_threads(args))
    else:
        region = sg_overapprox(G, lams, threads=_threads(args))
    window = None
    if cfg.window is not None:
        if len(cfg.window) != 3 or cfg.window[2] <= 0:
            raise ConfigError("window must be [re, im, radius] with radius > 0")
        window = (complex(cfg.window[0], cfg.window[1]), cfg.window[2])
    elif not region.is_bounded:
        window = (0j, 10.0 * max(1.0, float(np.abs(lams).max()) if lams is not None else 1.0))
    doc = dict(_meta(cfg), region=region.to_dict(), kind="patch" if patch else "sg")
    if patch:
        doc["P_set"] = [{"sigma": c.sigma, "lambda": c.lam, "P": c.P.tolist()}
                        for c in region.provenance]
    out = Path(args.out)
    _write(out, "region.json", dumps(doc))
    _write(out, "boundary.csv", boundary_csv(region, cfg.boundary_points, window))
    if region.indeterminate:
        log.warning("%d indeterminate solves", len(region.indeterminate))
    return EXIT_OK


def cmd_sg(args):
    return _region_cmd(args, patch=False)


def cmd_patch(args):
    return _region_cmd(args, patch=True)


def cmd_admissible(args):
    cfg = _load(args.config, AdmissibleConfig)
    sysR = _build_reset(cfg)
    certs, _ = collect_P_set(sysR.base, cfg.lambdas.array(), threads=_threads(args), check=False)
    rep = check_admissible(sysR, certs, force_lmi=cfg.force_lmi)
    _write(Path(args.out), "admissibility.json", dumps(dict(_meta(cfg), report=rep.to_dict())))
    return EXIT_OK if rep.admissible else EXIT_NOT_CERTIFIED


def _build_reset(cfg):
    try:
        return cfg.build()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_stability(args):
    cfg = _load(args.config, StabilityConfig)
    plant, ctrl = _system(cfg.plant), _system(cfg.controller)
    patch, _ = patch_overapprox(ctrl, cfg.lambdas.array(), threads=_threads(args))
    if not patch.constraints:
        raise SolverFailure("no certificate for the controller patch")
    c, r = patch.bounding_disk()
    ig = h1_inverse_region(plant, cfg.eps, cfg.h1_lambdas.array() if cfg.h1_lambdas else None,
                           target=abs(c) + r, threads=_threads(args))
    notes = [f"plant regularized with eps={ig.eps:g}"] if ig.regularized else []
    cert = check_stability(ig.region, patch, mode=cfg.mode, mu_count=cfg.mu_count,
                           mu_min=cfg.mu_min, tol_sep=cfg.tol_sep, caveats=notes)
    cert.provenance = _meta(cfg)
    _write(Path(args.out), "certificate.json", dumps(cert.to_dict()))
    print(f"r_min={cert.r_min:.6g} stable={cert.stable}")
    return EXIT_OK if cert.stable else EXIT_NOT_CERTIFIED


def cmd_design(args):
    try:
        raw = json.loads(Path(args.config).read_text())
        cfg = PipelineConfig.model_validate(raw)
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.threads or os.environ.get("RESETGRAPH_THREADS"):
        cfg.threads = _threads(args)
    out = Path(args.out)
    try:
        res = design_pipeline(cfg)
    except Step1Failure as exc:
        _write(out, "certificate.json", dumps(exc.certificate.to_dict()))
        print(f"step 1 failed: measured distance {exc.distance:.6g}", file=sys.stderr)
        return EXIT_NOT_CERTIFIED
    except DesignError as exc:
        raise ConfigError(str(exc)) from exc
    meta = {"tool": "resetgraph", "version": __version__, "config_hash": cfg.digest()}
    _write(out, "certificate.json", dumps(dict(meta, **res.certificate.to_dict())))
    _write(out, "design.json", dumps(dict(meta, **res.design.to_dict())))
    _write(out, "scores.csv", res.design.scores_csv())
    sel = res.design.selected
    print(f"selected k1={sel.k1:.6g} R={np.asarray(sel.R).tolist()}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _load(args.config, SimulateConfig)
    sysR = _build_reset(cfg)
    try:
        if cfg.plant is not None:
            plant = _system(cfg.plant)
            w = InputSignal.from_dict(cfg.input, n=plant.n)
            cl = simulate_closed_loop(plant, sysR, w, cfg.T_end, cfg.dt)
            trace = cl.trace_ctrl
            metrics = step_metrics(cl.t, cl.y1, cl.u1).to_dict()
            metrics["jumps"] = len(cl.jumps)
            trace.u, trace.y = cl.u2, cl.y2
        else:
            u = InputSignal.from_dict(cfg.input, n=sysR.base.n)
            trace = simulate_reset(sysR, u, cfg.T_end, cfg.dt)
            metrics = step_metrics(trace.t, trace.y, trace.u).to_dict()
            metrics["jumps"] = len(trace.jumps)
    except (StepSizeError, TopologyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    clean = {k: (str(v) if isinstance(v, float) and not np.isfinite(v) else v)
             for k, v in metrics.items()}
    _write(out, "metrics.json", dumps(dict(_meta(cfg), metrics=clean, jumps=trace.jumps)))
    return EXIT_OK


def cmd_sgcloud(args):
    cfg = _load(args.config, CloudConfig)
    sysR = _build_reset(cfg)
    cloud = sample_sg_cloud(sysR, cfg.n_inputs, cfg.T_grid, seed=cfg.seed, dt=cfg.dt,
                            threads=_threads(args))
    lines = ["input,T,rho,theta,re,im"]
    per = len(cfg.T_grid)
    for k, p in enumerate(cloud):
        for z in p.points():
            lines.append(f"{k // per},{p.T!r},{p.rho!r},{p.theta!r},{z.real!r},{z.imag!r}")
    out = Path(args.out)
    _write(out, "cloud.csv", "\n".join(lines))
    doc = dict(_meta(cfg), points=len(cloud) * 2)
    code = EXIT_OK
    if cfg.lambdas is not None:
        region, _ = patch_overapprox(sysR.base, cfg.lambdas.array(), threads=_threads(args))
        pts = cloud_points(cloud)
        inside = int(sum(membership(region, z, 1e-2) for z in pts))
        doc["containment"] = {"inside": inside, "total": int(pts.size), "tol": 1e-2}
        code = EXIT_OK if inside == pts.size else EXIT_NOT_CERTIFIED
    _write(out, "cloud.json", dumps(doc))
    return code


def cmd_reproduce(args):
    report, certificate = reproduce(seed=args.seed, gain_scale=args.gain_scale)
    out = Path(args.out)
    _write(out, "certificate.json", dumps(certificate))
    _write(out, "report.json", dumps(report))
    for c in report["checks"]:
        print(f"[{'PASS' if c['pass'] else 'FAIL'}] {c['id']}: {c['name']}")
    print(report["status"])
    return EXIT_OK if report["status"] == "PASS" else EXIT_NOT_CERTIFIED


COMMANDS = {
    "sg": (cmd_sg, "scaled-graph over-approximation of an LTI system"),
    "patch": (cmd_patch, "patch over-approximation and P set of a base system"),
    "admissible": (cmd_admissible, "admissibility of a reset map against the P set"),
    "stability": (cmd_stability, "separation certificate for a plant and base controller"),
    "design": (cmd_design, "full synthesis pipeline"),
    "simulate": (cmd_simulate, "open- or closed-loop reset simulation"),
    "sgcloud": (cmd_sgcloud, "sampled scaled-graph point cloud of a reset system"),
    "reproduce-example": (cmd_reproduce, "pinned example with a pass/fail report"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="resetgraph", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        if name != "reproduce-example":
            sp.add_argument("config", help="JSON configuration file")
        else:
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--gain-scale", type=float, default=1.0,
                            help="multiply the base controller by this factor")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=None)
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepSizeError, TopologyError, PoleOnAxisError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, SimulationError, DivergenceError, NotHurwitzError,
            sdpcore.LmiPreconditionError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DesignError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
