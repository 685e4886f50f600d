"""Experiment drivers: single runs, convergence studies, mass audits, comparisons."""
from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ScenarioConfig
from .csvio import write_convergence, write_fd_profile, write_profile, write_table
from .densities import PolynomialWell
from .errors import HeleShawError, InsufficientData, InvalidArgument, StepFailure
from .fd import FdRun, FdState, fd_evolve
from .lagrangian import (
    PiecewiseConstantDensity,
    affine_interpolants,
    init_state_from_density,
    lp_distance,
    piecewise_constant_density,
)
from .massgrid import Domain, adapted_mass_grid, uniform_mass_grid
from .stepper import SolverConfig, StepDiagnostics, Trajectory, evolve

log = logging.getLogger(__name__)

NORMS = {"l1": 1, "l2": 2, "linf": math.inf}
PROFILES = ("affine", "constant")
EXIT_OK, EXIT_FAILURE = 0, 2


# --------------------------------------------------------------- utilities
def estimate_order(pairs) -> float:
    """Least-squares slope of log(error) against log(delta)."""
    pairs = [(float(d), float(e)) for d, e in pairs]
    if len(pairs) < 3:
        raise InsufficientData("order estimate needs at least 3 (delta, error) pairs")
    d, e = np.array(pairs).T
    if np.any(d <= 0.0) or np.any(e <= 0.0):
        raise InvalidArgument("deltas and errors must be positive")
    return float(np.polyfit(np.log(d), np.log(e), 1)[0])


def sweep_workers(n_jobs: int, requested: int | None = None) -> int:
    cap = requested
    if cap is None:
        env = os.environ.get("HELESHAW_THREADS", "").strip()
        cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(cap), n_jobs))


def run_jobs(jobs, workers: int):
    """Run ``(fn, args)`` jobs, in worker processes when ``workers > 1``.

    Jobs are submitted last-first so that a trailing expensive reference
    run starts early; results come back in job order.
    """
    if workers <= 1:
        return [fn(*args) for fn, args in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args) for fn, args in reversed(jobs)]
        return [f.result() for f in futures][::-1]


def _time_tag(t: float) -> str:
    return f"{t:.10g}"


def _versions() -> dict:
    return {"heleshaw": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def budgets(traj: Trajectory, cfg: ScenarioConfig, grid) -> dict:
    """A-priori budgets next to their accumulated counterparts.

    The dissipation and slope-variation budgets follow from the entropy
    identity and are only reported on uniform grids without potential.
    """
    mass = traj.series("mass")
    out = {
        "initial_energy": traj.initial_energy,
        "final_energy": float(traj.diagnostics[-1].energy),
        "initial_entropy": traj.initial_entropy,
        "final_entropy": float(traj.diagnostics[-1].entropy),
        "movement_total": traj.movement_total,
        "movement_budget": 2.0 * traj.initial_energy,
        "dissipation_total": traj.dissipation_total,
        "tv_squared_total": traj.tv_squared_total,
        "max_relative_mass_drift": float(np.max(np.abs(mass / grid.total_mass - 1.0))),
        "dissipation_budget": None,
        "tv_squared_budget": None,
    }
    if grid.uniform and cfg.potential().is_zero:
        L = cfg.domain().length
        gap = traj.initial_entropy - grid.total_mass * math.log(grid.total_mass / L)
        out["dissipation_budget"] = 4.0 * gap
        out["tv_squared_budget"] = 50.0 * L * gap
    return out


# --------------------------------------------------------------------- run
@dataclass
class RunResult:
    exit_code: int
    trajectory: Trajectory | None
    metadata: dict
    files: list = field(default_factory=list)


def run_scenario(cfg: ScenarioConfig, out_dir=None, progress=None) -> RunResult:
    """Evolve the Lagrangian scheme and write profiles, diagnostics and metadata.

    A solver failure keeps everything computed so far and is recorded in
    the metadata with a nonzero exit code.
    """
    out = Path(out_dir if out_dir is not None else cfg["output"]["directory"])
    t0 = time.perf_counter()
    grid = cfg.grid()
    state0 = init_state_from_density(cfg.datum(), grid, cfg.domain())
    tcfg = cfg["time"]
    meta = {"config": cfg.to_mapping(), "config_hash": cfg.config_hash(), "versions": _versions(),
            "scheme": "lagrangian", "status": "ok", "failure": None}
    failure = None
    try:
        traj = evolve(state0, tcfg["t_end"], tcfg["output_times"], cfg.solver(), cfg.potential(), grid,
                      progress=progress)
    except StepFailure as exc:
        traj = getattr(exc, "trajectory", None)
        failure = exc
        meta["status"] = "failed"
        meta["failure"] = {"message": str(exc), "step": exc.step, "time": exc.time,
                           "residual": exc.residual, "type": type(exc).__name__}
        log.error("run failed at step %s: %s", exc.step, exc)
    files = []
    if traj is not None:
        if cfg["output"]["csv"]:
            for t, s in zip(traj.output_times, traj.states):
                if s is None:
                    continue
                files.append(write_profile(out / f"profile_t{_time_tag(t)}.csv", piecewise_constant_density(s)))
            files.append(write_table(out / "diagnostics.csv", StepDiagnostics.COLUMNS,
                                     (d.as_row() for d in traj.diagnostics)))
        meta["budgets"] = budgets(traj, cfg, grid)
        meta["steps_completed"] = len(traj.diagnostics) - 1
    meta["wall_time_seconds"] = time.perf_counter() - t0
    meta["outputs"] = [str(p.name) for p in files]
    if cfg["output"]["json"]:
        _write_json(out / "metadata.json", meta)
        files.append(out / "metadata.json")
    code = EXIT_FAILURE if failure is not None else EXIT_OK
    return RunResult(code, traj, meta, files)


def run(cfg: ScenarioConfig, out_dir=None, progress=None) -> int:
    return run_scenario(cfg, out_dir, progress).exit_code


def fd_initial(cfg: ScenarioConfig, K_ref: int | None = None) -> FdState:
    return FdState.sample(cfg.datum(), K_ref or cfg["fd"]["K_ref"], cfg.domain())


def run_fd_scenario(cfg: ScenarioConfig, out_dir=None) -> tuple[int, FdRun | None, dict]:
    """Evolve the finite-difference reference and write its outputs."""
    out = Path(out_dir if out_dir is not None else cfg["output"]["directory"])
    t0 = time.perf_counter()
    tcfg, fcfg = cfg["time"], cfg["fd"]
    meta = {"config": cfg.to_mapping(), "config_hash": cfg.config_hash(), "versions": _versions(),
            "scheme": "finite-difference", "status": "ok", "failure": None}
    code = EXIT_OK
    try:
        fd = fd_evolve(fd_initial(cfg), fcfg["tau_ref"], tcfg["t_end"], tcfg["output_times"],
                       reference_mass=cfg.total_mass(), ghost=fcfg["ghost"])
    except StepFailure as exc:
        fd = getattr(exc, "run", None)
        code = EXIT_FAILURE
        meta["status"] = "failed"
        meta["failure"] = {"message": str(exc), "step": exc.step, "time": exc.time,
                           "residual": exc.residual, "type": type(exc).__name__}
        log.error("FD run failed at step %s: %s", exc.step, exc)
    files = []
    if fd is not None:
        if cfg["output"]["csv"]:
            for t, s in zip(fd.output_times, fd.states):
                if s is not None:
                    files.append(write_fd_profile(out / f"fd_profile_t{_time_tag(t)}.csv", s.profile()))
            files.append(write_table(out / "fd_diagnostics.csv", FdRun.COLUMNS, fd.rows()))
        meta["reference_mass"] = fd.reference_mass
        meta["final_mass_drift"] = float(fd.mass_drift[-1])
        meta["min_value"] = float(np.min(fd.min_value))
    meta["wall_time_seconds"] = time.perf_counter() - t0
    meta["outputs"] = [str(p.name) for p in files]
    if cfg["output"]["json"]:
        _write_json(out / "fd_metadata.json", meta)
    return code, fd, meta


# ------------------------------------------------------------ convergence
@dataclass(frozen=True)
class ReferenceSpec:
    kind: str  # "lagrangian", "fd" or "self"
    K: int = 0
    tau: float = 0.0
    ghost: str = "node"

    def __post_init__(self):
        if self.kind not in ("lagrangian", "fd", "self"):
            raise InvalidArgument("reference kind must be lagrangian, fd or self")

    def describe(self) -> str:
        if self.kind == "self":
            return "same scheme at identical K and tau"
        if self.kind == "fd":
            return f"finite-difference reference, K_ref={self.K}, tau_ref={self.tau:g}, ghost={self.ghost}"
        return f"Lagrangian reference, K_ref={self.K}, tau_ref={self.tau:g}"


@dataclass
class ConvergenceReport:
    Ks: list
    deltas: list
    errors: dict
    orders: dict | None
    failed: dict
    reference: str
    t_eval: float
    tau: float
    profile: str
    # worst relative mass drift over all steps of each Lagrangian run
    mass_drift: dict = field(default_factory=dict)

    def pairs(self, norm: str):
        return [(d, e) for d, e in zip(self.deltas, self.errors[norm]) if e is not None]

    def as_dict(self) -> dict:
        return {"Ks": self.Ks, "deltas": self.deltas, "errors": self.errors, "orders": self.orders,
                "failed": {str(k): v for k, v in self.failed.items()}, "reference": self.reference,
                "t_eval": self.t_eval, "tau": self.tau, "profile": self.profile,
                "mass_drift": {str(k): v for k, v in self.mass_drift.items()}}


def _lagrangian_job(mapping, base_dir, K, tau, t_eval):
    try:
        cfg = ScenarioConfig.from_mapping(mapping, base_dir=base_dir)
        grid = cfg.grid(K)
        s0 = init_state_from_density(cfg.datum(), grid, cfg.domain())
        traj = evolve(s0, t_eval, [t_eval], cfg.solver(tau), cfg.potential(), grid)
        drift = float(np.max(np.abs(traj.series("mass") / grid.total_mass - 1.0)))
        return traj.states[0], drift
    except HeleShawError as exc:
        return f"{type(exc).__name__}: {exc}"


def _fd_job(mapping, base_dir, K, tau, t_eval, ghost):
    try:
        cfg = ScenarioConfig.from_mapping(mapping, base_dir=base_dir)
        fd = fd_evolve(fd_initial(cfg, K), tau, t_eval, [t_eval], ghost=ghost)
        return fd.states[0]
    except HeleShawError as exc:
        return f"{type(exc).__name__}: {exc}"


def lagrangian_profile(state, profile: str):
    if profile == "affine":
        return affine_interpolants(state)[0]
    return piecewise_constant_density(state)


def cell_averages(pl, other_breakpoints) -> PiecewiseConstantDensity:
    """Average a piecewise-linear profile over the cells of the union grid."""
    bp = np.union1d(pl.breakpoints, other_breakpoints)
    v = pl(bp)
    return PiecewiseConstantDensity(bp, 0.5 * (v[1:] + v[:-1]))


def convergence_study(scenario: ScenarioConfig, Ks, tau: float, t_eval: float, ref: ReferenceSpec,
                      profile: str = "affine", workers: int | None = None) -> ConvergenceReport:
    """Errors of the Lagrangian scheme against a reference profile at ``t_eval``.

    ``profile="affine"`` compares the piecewise-affine reconstruction of
    each run (second order); ``"constant"`` compares the piecewise-constant
    densities (first order, limited by the jumps at the cell edges).
    """
    Ks = [int(k) for k in Ks]
    if profile not in PROFILES:
        raise InvalidArgument(f"profile must be one of {PROFILES}")
    if any(b <= a for a, b in zip(Ks, Ks[1:])):
        raise InvalidArgument("Ks must be strictly increasing")
    if ref.kind != "self" and not max(Ks) < ref.K:
        raise InvalidArgument("max(Ks) must be smaller than K_ref")
    mapping, base = scenario.to_mapping(), scenario.base_dir
    jobs = [(_lagrangian_job, (mapping, base, K, tau, t_eval)) for K in Ks]
    if ref.kind == "lagrangian":
        jobs.append((_lagrangian_job, (mapping, base, ref.K, ref.tau, t_eval)))
    elif ref.kind == "fd":
        jobs.append((_fd_job, (mapping, base, ref.K, ref.tau, t_eval, ref.ghost)))
    results = run_jobs(jobs, sweep_workers(len(jobs), workers))
    runs, ref_result = results[:len(Ks)], (results[-1] if ref.kind != "self" else None)
    if isinstance(ref_result, str):
        raise HeleShawError(f"reference run failed: {ref_result}")

    if ref.kind == "lagrangian":
        ref_result, ref_drift = ref_result
    M = scenario.total_mass()
    errors = {n: [] for n in NORMS}
    failed = {}
    drift = {}
    for K, res in zip(Ks, runs):
        if isinstance(res, str):
            failed[K] = res
            for n in NORMS:
                errors[n].append(None)
            continue
        res, drift[K] = res
        mine = lagrangian_profile(res, profile)
        if ref.kind == "self":
            other = mine
        elif ref.kind == "lagrangian":
            other = lagrangian_profile(ref_result, profile)
        elif profile == "affine":
            other = ref_result.profile()
        else:
            other = cell_averages(ref_result.profile(), mine.breakpoints)
        for n, p in NORMS.items():
            errors[n].append(lp_distance(mine, other, p))
    deltas = [M / K for K in Ks]
    orders = None
    if ref.kind != "self":
        try:
            orders = {n: estimate_order([(d, e) for d, e in zip(deltas, errors[n]) if e is not None])
                      for n in NORMS}
        except InsufficientData:
            log.warning("fewer than 3 successful runs; order fit skipped")
    if ref.kind == "lagrangian":
        drift[ref.K] = ref_drift
    return ConvergenceReport(Ks, deltas, errors, orders, failed, ref.describe(), t_eval, tau, profile, drift)


def write_convergence_outputs(report: ConvergenceReport, out_dir) -> list:
    out = Path(out_dir)
    files = [write_convergence(out / "convergence.csv", report)]
    _write_json(out / "convergence.json", report.as_dict())
    files.append(out / "convergence.json")
    return files


# --------------------------------------------------------------- mass audit
@dataclass
class MassAudit:
    times: np.ndarray
    columns: dict  # name -> drift series

    def write(self, path) -> Path:
        names = ["t"] + list(self.columns)
        rows = zip(self.times, *self.columns.values())
        return write_table(path, names, rows)

    def final(self, name: str) -> float:
        return float(self.columns[name][-1])


def _eps_tag(eps: float) -> str:
    return f"{eps:g}"


def _audit_fd_job(eps, K_ref, tau_ref, t_end, ghost):
    u0 = PolynomialWell(eps)
    return fd_evolve(FdState.sample(u0, K_ref), tau_ref, t_end,
                     reference_mass=u0.total_mass, ghost=ghost).mass_drift


def _audit_lagrangian_job(eps, K, tau, t_end, mode):
    u0, d = PolynomialWell(eps), Domain()
    if mode == "uniform":
        grid = uniform_mass_grid(K, u0.total_mass)
    else:
        grid = adapted_mass_grid(u0, K, d, total_mass=u0.total_mass)
    traj = evolve(init_state_from_density(u0, grid, d), t_end, [], SolverConfig(tau=tau), grid=grid)
    return np.abs(traj.series("mass") / grid.total_mass - 1.0)


def mass_audit(eps_list, K_ref: int, tau_ref: float, t_end: float, K_lagrangian: int = 100,
               grid_mode: str = "adapted", ghost: str = "node", workers: int | None = None) -> MassAudit:
    """Relative mass drift |mass(t) / M - 1| of both schemes on the polynomial well.

    The Lagrangian runs use the same time step as the FD runs so that the
    columns share one time axis.
    """
    eps_list = [float(e) for e in eps_list]
    jobs = [(_audit_fd_job, (e, K_ref, tau_ref, t_end, ghost)) for e in eps_list]
    jobs += [(_audit_lagrangian_job, (e, K_lagrangian, tau_ref, t_end, grid_mode)) for e in eps_list]
    res = run_jobs(jobs, sweep_workers(len(jobs), workers))
    cols = {}
    for e, r in zip(eps_list, res[:len(eps_list)]):
        cols[f"fd_eps_{_eps_tag(e)}"] = r
    for e, r in zip(eps_list, res[len(eps_list):]):
        cols[f"lagrangian_eps_{_eps_tag(e)}"] = r
    n = len(next(iter(cols.values())))
    return MassAudit(np.arange(n) * tau_ref, cols)


# ------------------------------------------------------------------ compare
COMPARE_COLUMNS = ("x", "u_fd", "u_lagrangian", "u_affine")


def compare(cfg: ScenarioConfig, out_dir=None) -> list[dict]:
    """Both schemes at the configured output times, sampled at the FD nodes.

    Returns per-time L1/L2/Linf distances between the FD profile and the
    piecewise-affine Lagrangian reconstruction.
    """
    out = Path(out_dir if out_dir is not None else cfg["output"]["directory"])
    tcfg, fcfg = cfg["time"], cfg["fd"]
    grid = cfg.grid()
    traj = evolve(init_state_from_density(cfg.datum(), grid, cfg.domain()), tcfg["t_end"],
                  tcfg["output_times"], cfg.solver(), cfg.potential(), grid)
    fd = fd_evolve(fd_initial(cfg), fcfg["tau_ref"], tcfg["t_end"], tcfg["output_times"], ghost=fcfg["ghost"])
    summary = []
    for t, s, f in zip(tcfg["output_times"], traj.states, fd.states):
        fp = f.profile()
        uh = affine_interpolants(s)[0]
        pc = piecewise_constant_density(s)
        x = fp.breakpoints
        write_table(out / f"compare_t{_time_tag(t)}.csv", COMPARE_COLUMNS, zip(x, fp.node_values, pc(x), uh(x)))
        summary.append({"t": t, **{n: lp_distance(uh, fp, p) for n, p in NORMS.items()}})
    write_table(out / "compare_summary.csv", ("t", "l1", "l2", "linf"), summary)
    return summary
