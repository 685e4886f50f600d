"""Fully implicit finite-difference reference scheme on a uniform node grid.

Solves (u^n - u^{n-1}) / tau = -(u D4 u + D1 u D3 u) at the nodes
x_k = a + k h, k = 0..K.  Boundary ghost values come from even reflection,
either about the boundary node (``ghost="node"``: u_{-1} = u_1,
u_{-2} = u_2, second order) or about the half-cell outside it
(``ghost="cell"``: u_{-1} = u_0, u_{-2} = u_1, only first order on this
node grid).  Neither mass nor positivity is preserved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import FdStepFailure, InvalidArgument, NumericalFailure
from .lagrangian import PiecewiseLinearDensity
from .massgrid import Domain

# stencils over offsets -2..2
_C1 = np.array([0.0, -0.5, 0.0, 0.5, 0.0])
_C3 = np.array([-0.5, 1.0, 0.0, -1.0, 0.5])
_C4 = np.array([1.0, -4.0, 6.0, -4.0, 1.0])


@dataclass(frozen=True, eq=False)
class FdState:
    """Node values at time ``t``; the solve statistics of the step that produced them."""

    values: np.ndarray
    t: float = 0.0
    domain: Domain = field(default_factory=Domain)
    newton_iters: int = 0
    residual: float = 0.0

    def __post_init__(self):
        u = np.array(self.values, dtype=float)
        if u.ndim != 1 or u.size < 3:
            raise InvalidArgument("FD state needs at least 3 nodes")
        u.setflags(write=False)
        object.__setattr__(self, "values", u)

    @property
    def K(self) -> int:
        return self.values.size - 1

    @property
    def h(self) -> float:
        return self.domain.length / self.K

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.domain.a, self.domain.b, self.K + 1)

    def mass(self) -> float:
        u = self.values
        return self.h * (float(np.sum(u)) - 0.5 * (u[0] + u[-1]))

    def profile(self) -> PiecewiseLinearDensity:
        return PiecewiseLinearDensity(self.nodes, self.values)

    @classmethod
    def sample(cls, u0, K: int, domain: Domain = Domain()) -> "FdState":
        if int(K) != K or K < 2:
            raise InvalidArgument("K_ref must be an integer >= 2")
        x = np.linspace(domain.a, domain.b, int(K) + 1)
        return cls(np.asarray(u0(x), dtype=float), 0.0, domain)


GHOSTS = ("node", "cell")


def ghost_map(n: int, ghost: str = "node") -> np.ndarray:
    """Indices into u of the extended vector u_{-2}..u_{n+1}."""
    if ghost == "node":
        return np.concatenate([[2, 1], np.arange(n), [n - 2, n - 3]])
    if ghost == "cell":
        return np.concatenate([[1, 0], np.arange(n), [n - 1, n - 2]])
    raise InvalidArgument(f"ghost must be one of {GHOSTS}")


def _windows(u: np.ndarray, ghost: str):
    """5 x n array: row o holds u at offset o - 2 with ghost reflection."""
    n = u.size
    m = ghost_map(n, ghost)
    ext = u[m]
    return np.stack([ext[o:o + n] for o in range(5)]), m


def fd_operator(u: np.ndarray, h: float, ghost: str = "node") -> np.ndarray:
    """N(u) = u D4 u + D1 u D3 u (approximates (u u_xxx)_x)."""
    win, _ = _windows(u, ghost)
    d1 = _C1 @ win / h
    d3 = _C3 @ win / h ** 3
    d4 = _C4 @ win / h ** 4
    return u * d4 + d1 * d3


def fd_operator_jacobian(u: np.ndarray, h: float, ghost: str = "node") -> np.ndarray:
    """Banded (5, n) Jacobian of :func:`fd_operator`, ghost columns folded in."""
    n = u.size
    win, m = _windows(u, ghost)
    d1 = _C1 @ win / h
    d3 = _C3 @ win / h ** 3
    d4 = _C4 @ win / h ** 4
    ab = np.zeros((5, n))
    rows = np.arange(n)
    for o in range(5):
        coef = u * _C4[o] / h ** 4 + _C1[o] / h * d3 + d1 * _C3[o] / h ** 3
        if o == 2:
            coef = coef + d4
        cols = m[rows + o]
        np.add.at(ab, (2 + rows - cols, cols), coef)
    return ab


def residual_floor(u: np.ndarray, y: np.ndarray, tau: float, h: float,
                   ghost: str = "node") -> float:
    """Round-off level of max |u - y + tau N(u)| in double precision."""
    win, _ = _windows(u, ghost)
    a = np.abs(win)
    mag = (np.abs(u) * (np.abs(_C4) @ a) / h ** 4
           + np.abs(_C1 @ win) / h * (np.abs(_C3) @ a) / h ** 3)
    scale = np.abs(u) + np.abs(y) + tau * mag
    return float(64.0 * np.finfo(float).eps * np.max(scale))


def fd_step(prev: FdState, tau_ref: float, tol: float = 1e-12, max_iters: int = 50,
            step_tol: float = 1e-13, ghost: str = "node") -> FdState:
    """One implicit step of length ``tau_ref``.

    Convergence: max |u - u_prev + tau N(u)| <= tol (the residual scaled to
    units of u) or below its round-off floor, a Newton correction below ``step_tol * max|u|``, or a
    correction below ``1e-9 * max|u|`` that fails to halve the residual
    (the residual has hit its round-off floor).
    """
    if ghost not in GHOSTS:
        raise InvalidArgument(f"ghost must be one of {GHOSTS}")
    if not tau_ref > 0.0:
        raise InvalidArgument("tau_ref must be positive")
    y = prev.values
    if not np.all(np.isfinite(y)):
        raise NumericalFailure("non-finite FD state")
    h = prev.h
    u = y.copy()

    def residual(v):
        return v - y + tau_ref * fd_operator(v, h, ghost)

    R = residual(u)
    r = float(np.max(np.abs(R)))
    scale = max(float(np.max(np.abs(y))), 1e-300)
    it = 0
    while r > max(tol, residual_floor(u, y, tau_ref, h, ghost)):
        it += 1
        if it > max_iters:
            raise FdStepFailure(f"FD Newton did not converge in {max_iters} iterations", residual=r)
        J = tau_ref * fd_operator_jacobian(u, h, ghost)
        J[2] += 1.0
        du = solve_banded((2, 2), J, -R, check_finite=False)
        if not np.all(np.isfinite(du)):
            raise NumericalFailure("non-finite FD Newton direction", residual=r)
        small = float(np.max(np.abs(du)))
        if small <= 1e-9 * scale:
            u = u + du
            R = residual(u)
            r_new = float(np.max(np.abs(R)))
            # a round-off sized correction that no longer halves the
            # residual means the residual has reached its floor
            stalled = r_new > 0.5 * r
            r = r_new
            if small <= step_tol * scale or stalled:
                break
            continue
        lam = 1.0
        for _ in range(40):
            cand = u + lam * du
            Rc = residual(cand)
            rc = float(np.max(np.abs(Rc)))
            if math.isfinite(rc) and rc < r:
                break
            lam *= 0.5
        else:
            raise FdStepFailure("FD line search failed", residual=r)
        u, R, r = cand, Rc, rc
    if not np.all(np.isfinite(u)):
        raise NumericalFailure("non-finite FD solution", residual=r)
    return FdState(u, prev.t + tau_ref, prev.domain, it, r)


@dataclass
class FdRun:
    """Sampled states and per-step series (entry 0 is the initial state)."""

    tau: float
    output_times: list
    states: list
    times: np.ndarray
    mass: np.ndarray
    mass_drift: np.ndarray
    min_value: np.ndarray
    newton_iters: np.ndarray
    residual: np.ndarray
    reference_mass: float

    COLUMNS = ("n", "t", "mass", "mass_drift", "min_value", "newton_iters", "residual")

    def rows(self):
        for n in range(self.times.size):
            yield {"n": n, "t": float(self.times[n]), "mass": float(self.mass[n]),
                   "mass_drift": float(self.mass_drift[n]), "min_value": float(self.min_value[n]),
                   "newton_iters": int(self.newton_iters[n]), "residual": float(self.residual[n])}


def fd_evolve(initial: FdState, tau_ref: float, t_end: float, output_times=(),
              reference_mass: float | None = None, **step_kw) -> FdRun:
    """Evolve the FD scheme; drift is |mass(t) / M - 1| with trapezoidal mass.

    ``M`` defaults to the trapezoidal mass of the initial samples.  On
    failure the raised :class:`FdStepFailure` carries the partial run as
    ``exc.run``.
    """
    from .stepper import step_count

    output_times = [float(t) for t in output_times]
    if any(t < 0.0 or t > t_end * (1 + 1e-12) for t in output_times):
        raise InvalidArgument("output times must lie in [0, t_end]")
    n_total = step_count(t_end, tau_ref) if t_end > 0 else 0
    wanted = {}
    for i, t in enumerate(output_times):
        wanted.setdefault(step_count(t, tau_ref) if t > 0 else 0, []).append(i)
    M = initial.mass() if reference_mass is None else float(reference_mass)
    if not M > 0.0:
        raise InvalidArgument("reference mass must be positive")
    states = [None] * len(output_times)
    for i in wanted.get(0, []):
        states[i] = initial
    mass, mins, iters, res = [initial.mass()], [float(np.min(initial.values))], [0], [0.0]

    def collect():
        m = np.array(mass)
        return FdRun(tau_ref, output_times, states, np.arange(m.size) * tau_ref, m,
                     np.abs(m / M - 1.0), np.array(mins), np.array(iters), np.array(res), M)

    u = initial
    for n in range(1, n_total + 1):
        try:
            u = fd_step(u, tau_ref, **step_kw)
        except FdStepFailure as exc:
            exc.step, exc.time, exc.run = n, n * tau_ref, collect()
            raise
        u = FdState(u.values, n * tau_ref, u.domain, u.newton_iters, u.residual)
        mass.append(u.mass())
        mins.append(float(np.min(u.values)))
        iters.append(u.newton_iters)
        res.append(u.residual)
        for i in wanted.get(n, []):
            states[i] = u
    return collect()
