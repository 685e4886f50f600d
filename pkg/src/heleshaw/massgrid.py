"""Discretization of the mass interval [0, M].

Index conventions (paper-style half-integer indices mapped to 0-based arrays):

* nodes ``k = 0..K``            -> ``cumulative_masses[k]`` (xi_k)
* cells ``kappa = j + 1/2``     -> ``cell_masses[j]``, ``j = 0..K-1``
* interior nodes ``k = 1..K-1`` -> ``node_weights[k - 1]``

Reflected cell values (index -1/2 and K+1/2) are never stored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .densities import CumulativeDistribution
from .errors import InvalidArgument, InvalidDatum

# cells whose masses agree to this relative spread collapse to a uniform grid
_UNIFORM_RTOL = 1e-13


@dataclass(frozen=True)
class Domain:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise InvalidArgument(f"domain needs finite a < b, got ({self.a}, {self.b})")

    @property
    def length(self) -> float:
        return self.b - self.a


@dataclass(frozen=True, eq=False)
class MassGrid:
    total_mass: float
    cumulative_masses: np.ndarray
    cell_masses: np.ndarray
    uniform: bool = False
    node_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        xi = np.asarray(self.cumulative_masses, dtype=float)
        dm = np.asarray(self.cell_masses, dtype=float)
        if xi.ndim != 1 or xi.size < 3 or dm.size != xi.size - 1:
            raise InvalidArgument("mass grid needs K >= 2 cells")
        if np.any(dm <= 0.0) or np.any(np.diff(xi) <= 0.0):
            raise InvalidArgument("cell masses must be positive")
        w = 0.5 * (dm[1:] + dm[:-1])
        for arr in (xi, dm, w):
            arr.setflags(write=False)
        object.__setattr__(self, "cumulative_masses", xi)
        object.__setattr__(self, "cell_masses", dm)
        object.__setattr__(self, "node_weights", w)

    @property
    def K(self) -> int:
        return self.cell_masses.size

    @property
    def delta(self) -> float:
        """Nominal mass resolution M/K (the exact cell mass on uniform grids)."""
        return self.total_mass / self.K

    @property
    def cell_centers(self) -> np.ndarray:
        """xi_kappa for kappa = 1/2, ..., K - 1/2."""
        xi = self.cumulative_masses
        return 0.5 * (xi[1:] + xi[:-1])

    @property
    def boundary_weights(self) -> tuple[float, float]:
        """Weights of the two fixed end nodes in the potential sum."""
        if self.uniform:
            return self.delta, self.delta
        return 0.5 * self.cell_masses[0], 0.5 * self.cell_masses[-1]

    def same_as(self, other: "MassGrid") -> bool:
        return other is self or (
            self.K == other.K and np.array_equal(self.cumulative_masses, other.cumulative_masses)
        )


def uniform_mass_grid(K: int, M: float) -> MassGrid:
    if int(K) != K or K < 2:
        raise InvalidArgument(f"K must be an integer >= 2, got {K}")
    if not (np.isfinite(M) and M > 0):
        raise InvalidArgument(f"total mass must be positive, got {M}")
    K = int(K)
    M = float(M)
    xi = np.arange(K + 1) * (M / K)
    xi[-1] = M
    return MassGrid(M, xi, np.full(K, M / K), uniform=True)


def mass_grid_from_cumulative(xi) -> MassGrid:
    """Grid from a strictly increasing vector 0 = xi_0 < ... < xi_K = M."""
    xi = np.array(xi, dtype=float)
    if xi.ndim != 1 or xi.size < 3 or xi[0] != 0.0:
        raise InvalidArgument("cumulative masses must start at 0 and have K >= 2 cells")
    if np.any(np.diff(xi) <= 0.0):
        raise InvalidArgument("cumulative masses must be strictly increasing")
    return MassGrid(float(xi[-1]), xi, np.diff(xi))


def adapted_mass_grid(u0, K: int, domain: Domain, total_mass: float | None = None) -> MassGrid:
    """Push a uniform spatial grid through the initial distribution function.

    ``xi_k = U0(a + k (b - a) / K)`` with ``U0(x) = int_a^x u0``.  If
    ``total_mass`` is given it must match the quadrature mass to 1e-10
    relative and becomes ``xi_K``.
    """
    if int(K) != K or K < 2:
        raise InvalidArgument(f"K must be an integer >= 2, got {K}")
    K = int(K)
    cdf = CumulativeDistribution(u0, domain.a, domain.b, 64 * K)
    M = cdf.total
    if not M > 0.0:
        raise InvalidDatum("initial density has zero mass")
    if total_mass is not None:
        if abs(M - total_mass) > 1e-10 * total_mass:
            raise InvalidDatum(f"quadrature mass {M!r} does not match total_mass {total_mass!r}")
        M = float(total_mass)
    x = domain.a + np.arange(K + 1) * (domain.length / K)
    xi = cdf(x)
    xi[0] = 0.0
    xi[-1] = M
    dm = np.diff(xi)
    if np.any(dm <= 0.0):
        j = int(np.flatnonzero(dm <= 0.0)[0])
        raise InvalidDatum(f"initial density carries no mass on cell {j}")
    if np.ptp(dm) <= _UNIFORM_RTOL * M / K:
        return uniform_mass_grid(K, M)
    return MassGrid(M, xi, dm)


def weighted_inner_product(v, w, grid: MassGrid) -> float:
    """sum_k delta_k v_k w_k over interior nodes."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    n = grid.K - 1
    if v.shape != (n,) or w.shape != (n,):
        raise InvalidArgument(f"vectors must have length K-1={n}, got {v.shape} and {w.shape}")
    return float(np.dot(grid.node_weights * v, w))


def weighted_norm(v, grid: MassGrid) -> float:
    return float(np.sqrt(weighted_inner_product(v, v, grid)))
