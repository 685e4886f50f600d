"""Discrete entropies, Dirichlet energy and potential with derivatives.

Coordinate derivatives are taken with respect to the interior positions
``x_1..x_{K-1}``; metric gradients divide row ``k`` by the node weight
``delta_k``.  Banded matrices use the LAPACK layout of
:func:`scipy.linalg.solve_banded`: ``ab[u + i - j, j] = A[i, j]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidArgument, InvalidDensity, InvalidState
from .lagrangian import DensityVector, LagrangianState, density_from_state
from .massgrid import Domain, MassGrid


class Potential:
    """External potential V with derivatives; ``kind`` in {none, quadratic, polynomial}.

    ``quadratic`` is V(x) = Lambda/2 x^2; ``polynomial`` takes coefficients
    in increasing degree.
    """

    def __init__(self, kind: str = "none", lam: float = 0.0, coefficients=None, domain: Domain | None = None):
        domain = domain or Domain()
        if kind == "none":
            poly = Polynomial([0.0])
        elif kind == "quadratic":
            poly = Polynomial([0.0, 0.0, 0.5 * float(lam)])
        elif kind == "polynomial":
            if coefficients is None:
                raise InvalidArgument("polynomial potential needs coefficients")
            poly = Polynomial(np.asarray(coefficients, dtype=float))
        else:
            raise InvalidArgument(f"unknown potential kind {kind!r}")
        self.kind = kind
        self.poly = poly
        self._dx = poly.deriv(1)
        self._dxx = poly.deriv(2)
        sample = np.linspace(domain.a, domain.b, 10_000)
        if np.any(poly(sample) < 0.0):
            raise InvalidArgument("potential must be non-negative on the domain")
        self.Lambda = float(np.max(np.abs(self._dxx(sample))))
        self.min_curvature = float(np.min(self._dxx(sample)))

    @classmethod
    def none(cls) -> "Potential":
        return cls("none")

    @property
    def is_zero(self) -> bool:
        return self.kind == "none"

    def V(self, x):
        return self.poly(np.asarray(x, dtype=float))

    def V_x(self, x):
        return self._dx(np.asarray(x, dtype=float))

    def V_xx(self, x):
        return self._dxx(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class FunctionalValue:
    entropy_h1: float
    renyi_h2: float
    dirichlet: float
    potential: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.potential


def _z(z) -> np.ndarray:
    z = z.values if isinstance(z, DensityVector) else np.asarray(z, dtype=float)
    if not np.all(z > 0.0):
        raise InvalidDensity("densities must be strictly positive")
    return z


def _check_len(z: np.ndarray, grid: MassGrid):
    if z.shape != (grid.K,):
        raise InvalidArgument(f"density vector must have K={grid.K} entries, got {z.shape}")


# -- entropies ---------------------------------------------------------------

def entropy_h1(z, grid: MassGrid) -> float:
    z = _z(z)
    _check_len(z, grid)
    return float(np.dot(grid.cell_masses, np.log(z)))


def renyi_h2(z, grid: MassGrid) -> float:
    z = _z(z)
    _check_len(z, grid)
    return 0.25 * float(np.dot(grid.cell_masses, z))


def _coord_grad_h1(z):
    return z[1:] - z[:-1]


def _coord_grad_h2(z):
    return 0.25 * (z[1:] ** 2 - z[:-1] ** 2)


def grad_h1(z, grid: MassGrid) -> np.ndarray:
    """Metric gradient (z_{k+1/2} - z_{k-1/2}) / delta_k."""
    z = _z(z)
    _check_len(z, grid)
    return _coord_grad_h1(z) / grid.node_weights


def grad_h2(z, grid: MassGrid) -> np.ndarray:
    z = _z(z)
    _check_len(z, grid)
    return _coord_grad_h2(z) / grid.node_weights


def _tridiag_from_cells(c: np.ndarray) -> np.ndarray:
    """Banded (3, K-1) form of sum_j c_j d_j d_j^T with d_j = e_j - e_{j+1}."""
    n = c.size - 1
    ab = np.zeros((3, n))
    ab[1] = c[:-1] + c[1:]
    ab[0, 1:] = -c[1:-1]
    ab[2, :-1] = -c[1:-1]
    return ab


def _tridiag_matvec(c: np.ndarray, v: np.ndarray) -> np.ndarray:
    vp = np.concatenate([[0.0], v, [0.0]])
    t = c * (vp[:-1] - vp[1:])
    return t[1:] - t[:-1]


def hessian_h1(z, grid: MassGrid) -> np.ndarray:
    """Coordinate Hessian sum_kappa (z_kappa^2 / delta_kappa) d d^T, banded (3, K-1)."""
    z = _z(z)
    _check_len(z, grid)
    return _tridiag_from_cells(z * z / grid.cell_masses)


def hessian_h2(z, grid: MassGrid) -> np.ndarray:
    z = _z(z)
    _check_len(z, grid)
    return _tridiag_from_cells(0.5 * z ** 3 / grid.cell_masses)


def banded_to_dense(ab: np.ndarray, lower: int, upper: int) -> np.ndarray:
    n = ab.shape[1]
    A = np.zeros((n, n))
    for d in range(-lower, upper + 1):
        row = upper - d
        if d >= 0:
            idx = np.arange(n - d)
            A[idx, idx + d] = ab[row, d:]
        else:
            idx = np.arange(n + d)
            A[idx - d, idx] = ab[row, : n + d]
    return A


# -- Dirichlet energy ----------------------------------------------------------

def dirichlet_energy(z, grid: MassGrid) -> float:
    """Entropy self-dissipation <grad H1, grad H2>_delta."""
    z = _z(z)
    _check_len(z, grid)
    w = grid.node_weights
    return float(np.dot(w * (_coord_grad_h1(z) / w), _coord_grad_h2(z) / w))


def dirichlet_energy_closed_form(z, grid: MassGrid) -> float:
    """sum_k (1/4)(z_{k+1/2} + z_{k-1/2})(z_{k+1/2} - z_{k-1/2})^2 / delta_k.

    On uniform grids this is (delta/2) sum_k z_k (D1 z)_k^2.
    """
    z = _z(z)
    _check_len(z, grid)
    p, q = z[:-1], z[1:]
    return float(np.sum(0.25 * (p + q) * (q - p) ** 2 / grid.node_weights))


def potential_energy(state: LagrangianState, pot: Potential, grid: MassGrid | None = None) -> float:
    grid = grid or state.grid
    if pot is None or pot.is_zero:
        return 0.0
    x = state.positions
    w0, wK = grid.boundary_weights
    V = pot.V(x)
    return float(w0 * V[0] + np.dot(grid.node_weights, V[1:-1]) + wK * V[-1])


def total_energy(state: LagrangianState, pot: Potential | None = None) -> float:
    z = density_from_state(state)
    return dirichlet_energy_closed_form(z, state.grid) + potential_energy(state, pot)


def evaluate_functionals(state: LagrangianState, pot: Potential | None = None) -> FunctionalValue:
    z = density_from_state(state)
    g = state.grid
    return FunctionalValue(
        entropy_h1=entropy_h1(z, g),
        renyi_h2=renyi_h2(z, g),
        dirichlet=dirichlet_energy_closed_form(z, g),
        potential=potential_energy(state, pot),
    )


# -- gradient and Hessian of E^V ----------------------------------------------

def _densities(x: np.ndarray, dm: np.ndarray) -> np.ndarray:
    s = np.diff(x)
    if not np.all(s > 0.0):
        raise InvalidState("positions not strictly increasing")
    return dm / s


def coord_grad_energy(x: np.ndarray, grid: MassGrid, pot: Potential | None = None) -> np.ndarray:
    """Coordinate gradient of E^V: H1'' W^-1 dH2 + H2'' W^-1 dH1 + W V_x."""
    dm, w = grid.cell_masses, grid.node_weights
    z = _densities(x, dm)
    g1 = _coord_grad_h1(z)
    g2 = _coord_grad_h2(z)
    grad = _tridiag_matvec(z * z / dm, g2 / w) + _tridiag_matvec(0.5 * z ** 3 / dm, g1 / w)
    if pot is not None and not pot.is_zero:
        grad = grad + w * pot.V_x(x[1:-1])
    return grad


def metric_grad_energy(x: np.ndarray, grid: MassGrid, pot: Potential | None = None) -> np.ndarray:
    return coord_grad_energy(x, grid, pot) / grid.node_weights


def coord_hessian_energy(x: np.ndarray, grid: MassGrid, pot: Potential | None = None) -> np.ndarray:
    """Exact coordinate Hessian of E^V, banded (5, K-1), symmetric.

    Computed by the chain rule through the cell densities z_j(s_j) with
    widths s_j = x_{j+1} - x_j; the energy couples neighbouring cells only.
    """
    dm, w = grid.cell_masses, grid.node_weights
    s = np.diff(x)
    if not np.all(s > 0.0):
        raise InvalidState("positions not strictly increasing")
    z = dm / s
    K = z.size
    p, q = z[:-1], z[1:]
    c = 0.25 / w
    dq = q - p
    G = np.zeros(K)
    G[:-1] += c * dq * (-3.0 * p - q)
    G[1:] += c * dq * (3.0 * q + p)
    Hzd = np.zeros(K)
    Hzd[:-1] += c * (6.0 * p - 2.0 * q)
    Hzd[1:] += c * (6.0 * q - 2.0 * p)
    Hzo = -2.0 * c * (p + q)
    dz = -z / s
    d2z = 2.0 * z / (s * s)
    Hsd = Hzd * dz * dz + G * d2z
    Hso = Hzo * dz[:-1] * dz[1:]

    n = K - 1
    ab = np.zeros((5, n))
    ab[2] = Hsd[:-1] + Hsd[1:] - 2.0 * Hso
    sup1 = Hso[:-1] - Hsd[1:-1] + Hso[1:]
    ab[1, 1:] = sup1
    ab[3, :-1] = sup1
    if n > 2:
        sup2 = -Hso[1:-1]
        ab[0, 2:] = sup2
        ab[4, :-2] = sup2
    if pot is not None and not pot.is_zero:
        ab[2] += w * pot.V_xx(x[1:-1])
    return ab


def metric_hessian_energy(x: np.ndarray, grid: MassGrid, pot: Potential | None = None) -> np.ndarray:
    """Jacobian of the metric gradient: rows of the coordinate Hessian over delta_k."""
    ab = coord_hessian_energy(x, grid, pot)
    w = grid.node_weights
    n = w.size
    for r in range(5):
        j = np.arange(n)
        i = j + r - 2
        ok = (i >= 0) & (i < n)
        ab[r, ok] /= w[i[ok]]
    return ab


def grad_total_energy(state: LagrangianState, pot: Potential | None = None, grid: MassGrid | None = None) -> np.ndarray:
    """Metric gradient nabla_delta E^V_delta at the interior nodes."""
    grid = grid or state.grid
    return metric_grad_energy(state.positions, grid, pot)


def hessian_total_energy(state: LagrangianState, pot: Potential | None = None, grid: MassGrid | None = None) -> np.ndarray:
    """Jacobian of :func:`grad_total_energy`, banded (5, K-1)."""
    grid = grid or state.grid
    return metric_hessian_energy(state.positions, grid, pot)


def yosida_energy(x: LagrangianState, y: LagrangianState, tau: float, pot: Potential | None = None,
                  grid: MassGrid | None = None) -> float:
    grid = grid or x.grid
    if not (x.grid.same_as(grid) and y.grid.same_as(grid)):
        raise InvalidArgument("states live on different mass grids")
    if not tau > 0.0:
        raise InvalidArgument("tau must be positive")
    d = x.interior - y.interior
    return float(np.dot(grid.node_weights * d, d)) / (2.0 * tau) + total_energy(x, pot)


# -- difference operators and dissipation diagnostics ------------------------

def d1_nodes(z, grid: MassGrid) -> np.ndarray:
    """(z_{k+1/2} - z_{k-1/2}) / delta_k at interior nodes."""
    z = _z(z)
    return (z[1:] - z[:-1]) / grid.node_weights


def d2_cells(z, grid: MassGrid) -> np.ndarray:
    """Second difference at cells with reflection z_{-1/2} = z_{1/2}.

    Uniform grids: (z_{kappa+1} - 2 z_kappa + z_{kappa-1}) / delta^2.
    """
    z = _z(z)
    d1 = np.concatenate([[0.0], d1_nodes(z, grid), [0.0]])
    return (d1[1:] - d1[:-1]) / grid.cell_masses


def entropy_dissipation(z, grid: MassGrid) -> float:
    """sum_kappa delta_kappa z_kappa^3 (D2 z)_kappa^2."""
    z = _z(z)
    return float(np.dot(grid.cell_masses, z ** 3 * d2_cells(z, grid) ** 2))


def quartic_slope_sum(z, grid: MassGrid) -> float:
    """sum_k delta_k z_k (D1 z)_k^4 with z_k the node value of hat-z."""
    zv = z if isinstance(z, DensityVector) else DensityVector(z)
    zk = zv.node_values(grid)
    return float(np.dot(grid.node_weights, zk * d1_nodes(zv, grid) ** 4))
