"""Implicit Euler / minimizing-movement time stepping with damped Newton."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.linalg import solve_banded

from .errors import InvalidArgument, NoConvergence, NumericalFailure, StepFailure
from .functionals import (
    Potential,
    entropy_dissipation,
    evaluate_functionals,
    metric_grad_energy,
    metric_hessian_energy,
)
from .lagrangian import LagrangianState, total_variation_of_slope
from .massgrid import MassGrid


@dataclass(frozen=True)
class SolverConfig:
    tau: float
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    damping_factor: float = 0.5
    max_substep_halvings: int = 20
    # Newton corrections below step_tol * (b - a) in max norm are at the
    # round-off level of the positions; the iteration is then converged
    step_tol: float = 1e-13
    # corrections below full_step_tol * (b - a) are taken undamped: the
    # residual may already sit at its round-off floor and cannot decrease
    full_step_tol: float = 1e-9
    max_backtracks: int = 40

    def __post_init__(self):
        for f in ("tau", "newton_tol", "step_tol", "full_step_tol"):
            if not getattr(self, f) > 0.0:
                raise InvalidArgument(f"{f} must be positive")
        if not 0.0 < self.damping_factor < 1.0:
            raise InvalidArgument("damping_factor must lie in (0, 1)")
        if self.max_newton_iters < 1 or self.max_substep_halvings < 0 or self.max_backtracks < 1:
            raise InvalidArgument("iteration limits must be positive")


@dataclass
class StepDiagnostics:
    n: int
    t: float
    energy: float
    entropy: float
    renyi: float
    mass: float
    newton_iters: int
    residual: float
    substeps: int
    tv_slope: float
    dissipation_increment: float
    movement_increment: float

    COLUMNS = ("n", "t", "energy", "entropy", "renyi", "mass", "newton_iters", "residual",
               "substeps", "tv_slope", "dissipation_increment", "movement_increment")

    def as_row(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Trajectory:
    """Sampled states plus the per-step diagnostic series.

    ``diagnostics[0]`` describes the initial state; entry ``n`` the state
    after step ``n``.  ``states[i]`` is the state at ``output_times[i]``
    under the left-continuous interpolant (step n covers ((n-1) tau, n tau]).
    """

    tau: float
    output_times: list
    states: list
    diagnostics: list
    all_states: list | None = None
    initial_energy: float = 0.0
    initial_entropy: float = 0.0

    @property
    def final_state(self) -> LagrangianState:
        return self._last_state

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(d, name) for d in self.diagnostics])

    @property
    def movement_total(self) -> float:
        """tau sum_n ||(x^n - x^{n-1}) / tau||_delta^2."""
        return float(np.sum(self.series("movement_increment")[1:]))

    @property
    def dissipation_total(self) -> float:
        """tau sum_n delta sum_kappa z^3 (D2 z)^2."""
        return self.tau * float(np.sum(self.series("dissipation_increment")[1:]))

    @property
    def tv_squared_total(self) -> float:
        return self.tau * float(np.sum(self.series("tv_slope")[1:] ** 2))


def step_count(t: float, tau: float) -> int:
    """Index n of the step with (n-1) tau < t <= n tau (0 for t = 0)."""
    q = t / tau
    r = round(q)
    if abs(q - r) <= 1e-9 * max(1.0, abs(q)):
        return int(r)
    return int(math.ceil(q))


class _SolveFailed(Exception):
    def __init__(self, residual):
        self.residual = residual


def _wnorm(v, w):
    return math.sqrt(float(np.dot(w * v, v)))


def _newton(prev_x: np.ndarray, tau: float, grid: MassGrid, pot, cfg: SolverConfig, length: float):
    """Solve (x - prev)/tau + grad E(x) = 0 from x = prev; returns (x, iters, residual)."""
    w = grid.node_weights
    y = prev_x[1:-1]
    x = prev_x.copy()

    def residual(xf):
        return (xf[1:-1] - y) / tau + metric_grad_energy(xf, grid, pot)

    F = residual(x)
    r = _wnorm(F, w)
    if not math.isfinite(r):
        raise NumericalFailure("non-finite residual at initial guess", residual=r)
    if r <= cfg.newton_tol:
        return x, 0, r
    step_floor = cfg.step_tol * length
    for it in range(1, cfg.max_newton_iters + 1):
        J = metric_hessian_energy(x, grid, pot)
        J[2] += 1.0 / tau
        try:
            d = solve_banded((2, 2), J, -F, check_finite=False)
        except np.linalg.LinAlgError:
            raise _SolveFailed(r)
        if not np.all(np.isfinite(d)):
            raise NumericalFailure("non-finite Newton direction", residual=r)
        if np.max(np.abs(d)) <= step_floor:
            cand = x.copy()
            cand[1:-1] += d
            if np.all(np.diff(cand) > 0.0):
                x = cand
                F = residual(x)
                r = min(r, _wnorm(F, w))
            return x, it, r
        lam = 1.0
        if np.max(np.abs(d)) <= cfg.full_step_tol * length:
            cand = x.copy()
            cand[1:-1] += d
            if np.all(np.diff(cand) > 0.0):
                F = residual(cand)
                x, r = cand, _wnorm(F, w)
                if not math.isfinite(r):
                    raise NumericalFailure("non-finite residual", residual=r)
                if r <= cfg.newton_tol:
                    return x, it, r
                continue
        for _ in range(cfg.max_backtracks):
            cand = x.copy()
            cand[1:-1] += lam * d
            if np.all(np.diff(cand) > 0.0):
                Fc = residual(cand)
                rc = _wnorm(Fc, w)
                if math.isfinite(rc) and rc < r:
                    break
            lam *= cfg.damping_factor
        else:
            raise _SolveFailed(r)
        x, F, r = cand, Fc, rc
        if r <= cfg.newton_tol:
            return x, it, r
    raise _SolveFailed(r)


def _guarded_step(prev_x, tau, grid, pot, cfg, length, e_prev, h_prev, h_slack):
    x, iters, r = _newton(prev_x, tau, grid, pot, cfg, length)
    dm = grid.cell_masses
    z = dm / np.diff(x)
    e_new = _energy_of(x, grid, pot)
    h_new = float(np.dot(dm, np.log(z)))
    guard = 10.0 * cfg.newton_tol
    if e_new > e_prev + guard or h_new > h_prev + guard + tau * h_slack:
        raise _SolveFailed(r)
    return x, iters, r, e_new, h_new


def _energy_of(x, grid, pot):
    dm, w = grid.cell_masses, grid.node_weights
    z = dm / np.diff(x)
    p, q = z[:-1], z[1:]
    e = float(np.sum(0.25 * (p + q) * (q - p) ** 2 / w))
    if pot is not None and not pot.is_zero:
        w0, wK = grid.boundary_weights
        V = pot.V(x)
        e += float(w0 * V[0] + np.dot(w, V[1:-1]) + wK * V[-1])
    return e


def _advance(prev_x, tau, grid, pot, cfg, length, depth, h_slack):
    dm = grid.cell_masses
    e_prev = _energy_of(prev_x, grid, pot)
    h_prev = float(np.dot(dm, np.log(dm / np.diff(prev_x))))
    try:
        x, iters, r, _, _ = _guarded_step(prev_x, tau, grid, pot, cfg, length, e_prev, h_prev, h_slack)
        return [(x, tau, iters, r)]
    except _SolveFailed as exc:
        if depth >= cfg.max_substep_halvings:
            raise StepFailure(f"step not solved after {depth} halvings of tau", residual=exc.residual)
        first = _advance(prev_x, 0.5 * tau, grid, pot, cfg, length, depth + 1, h_slack)
        second = _advance(first[-1][0], 0.5 * tau, grid, pot, cfg, length, depth + 1, h_slack)
        return first + second


def _diagnostics(state: LagrangianState, pot, n, t, iters, residual, substeps, diss, movement):
    fv = evaluate_functionals(state, pot)
    return StepDiagnostics(
        n=n, t=t, energy=fv.total, entropy=fv.entropy_h1, renyi=fv.renyi_h2, mass=state.mass(),
        newton_iters=iters, residual=residual, substeps=substeps,
        tv_slope=total_variation_of_slope(state), dissipation_increment=diss,
        movement_increment=movement,
    )


def implicit_euler_step(prev: LagrangianState, cfg: SolverConfig, pot: Potential | None = None,
                        grid: MassGrid | None = None, n: int = 1, t: float | None = None):
    """One implicit Euler step; returns ``(state, StepDiagnostics)``.

    Falls back to recursive halving of tau when Newton fails or when the
    result would increase the energy or the entropy beyond the guard slack.
    """
    grid = grid or prev.grid
    if not prev.grid.same_as(grid):
        raise InvalidArgument("state and grid differ")
    prev.widths()
    pot = pot or Potential.none()
    # entropy may grow by at most tau * M * max(0, -inf V_xx) per step
    h_slack = grid.total_mass * max(0.0, -pot.min_curvature)
    length = prev.domain.length
    subs = _advance(prev.positions, cfg.tau, grid, pot, cfg, length, 0, h_slack)
    x_new = subs[-1][0]
    state = LagrangianState(x_new, grid, prev.domain)
    iters = sum(s[2] for s in subs)
    diss = sum(s[1] * entropy_dissipation(grid.cell_masses / np.diff(s[0]), grid) for s in subs) / cfg.tau
    d = x_new[1:-1] - prev.interior
    movement = float(np.dot(grid.node_weights * d, d)) / cfg.tau
    if t is None:
        t = n * cfg.tau
    diag = _diagnostics(state, pot, n, t, iters, subs[-1][3], len(subs), diss, movement)
    return state, diag


def evolve(initial: LagrangianState, t_end: float, output_times, cfg: SolverConfig,
           pot: Potential | None = None, grid: MassGrid | None = None,
           record_states: bool = False, progress=None) -> Trajectory:
    """Run implicit Euler steps up to ``t_end`` (``ceil(t_end / tau)`` steps)."""
    grid = grid or initial.grid
    pot = pot or Potential.none()
    output_times = [float(t) for t in output_times]
    if any(t < 0.0 or t > t_end * (1 + 1e-12) for t in output_times):
        raise InvalidArgument("output times must lie in [0, t_end]")
    if any(b < a for a, b in zip(output_times, output_times[1:])):
        raise InvalidArgument("output times must be sorted")
    tau = cfg.tau
    n_total = step_count(t_end, tau) if t_end > 0 else 0
    wanted = {}
    for i, t in enumerate(output_times):
        wanted.setdefault(step_count(t, tau) if t > 0 else 0, []).append(i)

    state = initial
    d0 = _diagnostics(initial, pot, 0, 0.0, 0, 0.0, 0, 0.0, 0.0)
    traj = Trajectory(tau=tau, output_times=output_times, states=[None] * len(output_times),
                      diagnostics=[d0], all_states=[initial] if record_states else None,
                      initial_energy=d0.energy, initial_entropy=d0.entropy)
    for i in wanted.get(0, []):
        traj.states[i] = initial
    traj._last_state = initial
    for n in range(1, n_total + 1):
        try:
            state, diag = implicit_euler_step(state, cfg, pot, grid, n=n, t=n * tau)
        except StepFailure as exc:
            exc.step = n
            exc.time = n * tau
            exc.trajectory = traj
            raise
        traj.diagnostics.append(diag)
        traj._last_state = state
        if record_states:
            traj.all_states.append(state)
        for i in wanted.get(n, []):
            traj.states[i] = state
        if progress is not None:
            progress(n, n_total, diag)
    return traj


def minimize_yosida(prev: LagrangianState, cfg: SolverConfig, pot: Potential | None = None,
                    grid: MassGrid | None = None, max_iters: int = 100_000) -> LagrangianState:
    """Minimize the Yosida-regularized energy by metric gradient descent.

    Independent of the Newton path: only energy values and first
    derivatives are used, with Armijo backtracking that also rejects
    non-monotone candidates.
    """
    grid = grid or prev.grid
    pot = pot or Potential.none()
    tau = cfg.tau
    w = grid.node_weights
    y = prev.positions.copy()

    def Y(xf):
        d = xf[1:-1] - y[1:-1]
        return float(np.dot(w * d, d)) / (2.0 * tau) + _energy_of(xf, grid, pot)

    x = y.copy()
    fx = Y(x)
    alpha = tau
    for _ in range(max_iters):
        g = (x[1:-1] - y[1:-1]) / tau + metric_grad_energy(x, grid, pot)
        gn2 = float(np.dot(w * g, g))
        if gn2 == 0.0:
            break
        for _ in range(60):
            cand = x.copy()
            cand[1:-1] -= alpha * g
            if np.all(np.diff(cand) > 0.0):
                fc = Y(cand)
                if fc <= fx - 1e-4 * alpha * gn2:
                    break
            alpha *= 0.5
        else:
            break
        decrease = fx - fc
        x, fx = cand, fc
        alpha *= 2.0
        if decrease < 1e-14 * max(abs(fx), 1e-300):
            break
    else:
        raise NoConvergence(f"gradient descent did not converge in {max_iters} iterations")
    return LagrangianState(x, grid, prev.domain)
