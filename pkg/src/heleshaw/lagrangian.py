"""Monotone particle positions and the densities they induce."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .densities import CumulativeDistribution
from .errors import DegenerateDatum, InvalidArgument, InvalidDatum, InvalidState
from .massgrid import Domain, MassGrid


@dataclass(frozen=True, eq=False)
class LagrangianState:
    """Positions ``x_0 = a < x_1 < ... < x_K = b`` on a fixed mass grid.

    Monotonicity is not enforced here; every operation that needs densities
    validates it and raises :class:`InvalidState`.
    """

    positions: np.ndarray
    grid: MassGrid
    domain: Domain

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        if x.shape != (self.grid.K + 1,):
            raise InvalidState(f"expected {self.grid.K + 1} positions, got shape {x.shape}")
        if x[0] != self.domain.a or x[-1] != self.domain.b:
            raise InvalidState("end positions must equal the domain endpoints")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    @classmethod
    def from_interior(cls, interior, grid: MassGrid, domain: Domain) -> "LagrangianState":
        x = np.concatenate([[domain.a], np.asarray(interior, dtype=float), [domain.b]])
        return cls(x, grid, domain)

    @property
    def interior(self) -> np.ndarray:
        return self.positions[1:-1]

    @property
    def K(self) -> int:
        return self.grid.K

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.positions) > 0.0))

    def widths(self) -> np.ndarray:
        w = np.diff(self.positions)
        if not np.all(w > 0.0):
            j = int(np.flatnonzero(~(w > 0.0))[0])
            raise InvalidState(f"positions not strictly increasing at cell {j}")
        return w

    def mass(self) -> float:
        """Total mass of the piecewise constant density (exactly sum of cell masses)."""
        z = self.grid.cell_masses / self.widths()
        return float(np.sum(z * self.widths()))


@dataclass(frozen=True, eq=False)
class DensityVector:
    """Cell densities z_kappa = delta_kappa / (x_{kappa+1/2} - x_{kappa-1/2})."""

    values: np.ndarray

    def __post_init__(self):
        z = np.array(self.values, dtype=float)
        z.setflags(write=False)
        object.__setattr__(self, "values", z)

    def reflected(self) -> np.ndarray:
        """Values padded with z_{-1/2} = z_{1/2} and z_{K+1/2} = z_{K-1/2}."""
        z = self.values
        return np.concatenate([z[:1], z, z[-1:]])

    def node_values(self, grid: MassGrid) -> np.ndarray:
        """hat-z at interior nodes: mass-weighted interpolation of neighbours.

        Equals the plain midpoint average on uniform grids.
        """
        z = self.values
        dm = grid.cell_masses
        return (z[:-1] * dm[1:] + z[1:] * dm[:-1]) / (dm[1:] + dm[:-1])


@dataclass(frozen=True, eq=False)
class PiecewiseConstantDensity:
    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float)
        v = np.array(self.values, dtype=float)
        if bp.ndim != 1 or v.shape != (bp.size - 1,) or bp.size < 2:
            raise InvalidArgument("need one value per interval")
        if np.any(np.diff(bp) <= 0.0):
            raise InvalidArgument("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        # intervals are (left, right]; u_Delta = sum z I_(x_{k-1}, x_k]
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.breakpoints, x, side="left") - 1, 0, self.values.size - 1)
        return self.values[i]

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        bp = self.breakpoints
        cum = np.concatenate([[0.0], np.cumsum(self.values * np.diff(bp))])
        i = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, self.values.size - 1)
        return cum[i] + self.values[i] * (x - bp[i])

    def mass(self) -> float:
        return float(np.sum(self.values * np.diff(self.breakpoints)))

    def cell_arrays(self):
        return self.breakpoints[:-1], self.breakpoints[1:], self.values


@dataclass(frozen=True, eq=False)
class PiecewiseLinearDensity:
    breakpoints: np.ndarray
    node_values: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float)
        v = np.array(self.node_values, dtype=float)
        if bp.ndim != 1 or v.shape != bp.shape or bp.size < 2:
            raise InvalidArgument("need one value per breakpoint")
        if np.any(np.diff(bp) <= 0.0):
            raise InvalidArgument("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "node_values", v)

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.breakpoints, self.node_values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.node_values) / np.diff(self.breakpoints)

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        bp, v = self.breakpoints, self.node_values
        h = np.diff(bp)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (v[1:] + v[:-1]))])
        i = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, h.size - 1)
        t = x - bp[i]
        return cum[i] + v[i] * t + 0.5 * self.slopes()[i] * t * t

    def mass(self) -> float:
        return float(np.sum(0.5 * np.diff(self.breakpoints) * (self.node_values[1:] + self.node_values[:-1])))

    def l2_norm(self) -> float:
        h = np.diff(self.breakpoints)
        p, q = self.node_values[:-1], self.node_values[1:]
        return float(np.sqrt(np.sum(h * (p * p + p * q + q * q) / 3.0)))

    def h1_norm(self) -> float:
        h = np.diff(self.breakpoints)
        return float(np.sqrt(self.l2_norm() ** 2 + np.sum(h * self.slopes() ** 2)))


def init_state_from_density(u0, grid: MassGrid, domain: Domain) -> LagrangianState:
    """Invert the distribution function of ``u0`` at the grid's node masses."""
    M = grid.total_mass
    cdf = CumulativeDistribution(u0, domain.a, domain.b, 64 * grid.K)
    if abs(cdf.total - M) > 1e-10 * M:
        raise InvalidDatum(f"density has mass {cdf.total!r}, grid expects {M!r}")
    targets = grid.cumulative_masses[1:-1]

    # bracket on a fine sample of U, then bisect down to machine resolution
    t = np.linspace(domain.a, domain.b, 64 * grid.K + 1)
    ut = cdf(t)
    i = np.clip(np.searchsorted(ut, targets, side="left"), 1, t.size - 1)
    lo, hi = t[i - 1].copy(), t[i].copy()
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    # Newton polish, kept inside the bracket
    for _ in range(4):
        res = cdf(x) - targets
        dens = np.asarray(u0(x), dtype=float)
        ok = dens > 0.0
        step = np.where(ok, res / np.where(ok, dens, 1.0), 0.0)
        x = np.clip(x - step, lo, hi)
    res = np.abs(cdf(x) - targets)
    if np.any(res > 1e-12 * M):
        k = int(np.argmax(res)) + 1
        if hi[k - 1] <= np.nextafter(lo[k - 1], np.inf):
            # the bracket is a single float spacing: mass too concentrated to resolve
            raise DegenerateDatum(f"mass concentrated below float resolution at node {k}", index=k)
        raise InvalidDatum(f"could not invert distribution at node {k} (residual {res.max():.3e})")

    positions = np.concatenate([[domain.a], x, [domain.b]])
    gaps = np.diff(positions)
    if np.any(gaps <= 0.0):
        j = int(np.flatnonzero(gaps <= 0.0)[0])
        raise DegenerateDatum(f"coincident positions around node {j + 1}", index=j + 1)
    return LagrangianState(positions, grid, domain)


def density_from_state(state: LagrangianState) -> DensityVector:
    return DensityVector(state.grid.cell_masses / state.widths())


def piecewise_constant_density(state: LagrangianState) -> PiecewiseConstantDensity:
    z = density_from_state(state).values
    return PiecewiseConstantDensity(state.positions, z)


def affine_interpolants(state: LagrangianState):
    """Return ``(u_hat, z_hat)``: the piecewise affine reconstructions.

    ``u_hat`` lives on the double grid ``x_0, x_1/2, x_1, ..., x_K`` in space,
    ``z_hat`` on ``0, xi_1/2, ..., xi_{K-1/2}, M`` in mass; both are constant
    on the two boundary half-cells and satisfy ``u_hat(X(xi)) = z_hat(xi)``.
    """
    x = state.positions
    grid = state.grid
    zvec = density_from_state(state)
    z = zvec.values
    K = grid.K

    bp = np.empty(2 * K + 1)
    bp[0::2] = x
    bp[1::2] = 0.5 * (x[1:] + x[:-1])
    vals = np.empty(2 * K + 1)
    vals[1::2] = z
    vals[2:-1:2] = zvec.node_values(grid)
    vals[0] = z[0]
    vals[-1] = z[-1]
    u_hat = PiecewiseLinearDensity(bp, vals)

    xi_bp = np.concatenate([[0.0], grid.cell_centers, [grid.total_mass]])
    z_vals = np.concatenate([z[:1], z, z[-1:]])
    z_hat = PiecewiseLinearDensity(xi_bp, z_vals)
    return u_hat, z_hat


def lagrangian_map(state: LagrangianState, xi):
    """Piecewise linear X with X(xi_k) = x_k."""
    return np.interp(np.asarray(xi, dtype=float), state.grid.cumulative_masses, state.positions)


def total_variation_of_slope(state: LagrangianState) -> float:
    """Exact total variation of d/dx u_hat (sum of all slope jumps)."""
    u_hat, _ = affine_interpolants(state)
    return float(np.sum(np.abs(np.diff(u_hat.slopes()))))


def _one_sided_values(f, left, right):
    """Values of ``f`` at the right of ``left`` and the left of ``right``.

    ``left``/``right`` are the cells of a refinement of f's own partition.
    """
    if isinstance(f, PiecewiseConstantDensity):
        mid = 0.5 * (left + right)
        v = f(mid)
        return v, v
    if isinstance(f, PiecewiseLinearDensity):
        return f(left), f(right)
    raise InvalidArgument(f"unsupported profile type {type(f).__name__}")


def lp_distance(f, g, p) -> float:
    """Exact L^p(Omega) distance, p in {1, 2, inf}, of two profiles.

    Profiles are piecewise constant or piecewise linear; on the union of both
    breakpoint sets the difference is affine on every cell, so each norm is
    evaluated in closed form.
    """
    fb, gb = f.breakpoints, g.breakpoints
    span = max(fb[-1] - fb[0], gb[-1] - gb[0])
    if abs(fb[0] - gb[0]) > 1e-12 * span or abs(fb[-1] - gb[-1]) > 1e-12 * span:
        raise InvalidArgument("profiles are defined on different domains")
    pts = np.union1d(fb, gb)
    # drop near-duplicates introduced by endpoint rounding
    keep = np.concatenate([[True], np.diff(pts) > 1e-14 * span])
    pts = pts[keep]
    left, right = pts[:-1], pts[1:]
    h = right - left
    f0, f1 = _one_sided_values(f, left, right)
    g0, g1 = _one_sided_values(g, left, right)
    d0, d1 = f0 - g0, f1 - g1

    if p in (np.inf, "inf", float("inf")):
        return float(np.max(np.maximum(np.abs(d0), np.abs(d1))))
    if p == 1:
        same = d0 * d1 >= 0.0
        a0, a1 = np.abs(d0), np.abs(d1)
        denom = np.where(same, 1.0, a0 + a1)
        per = np.where(same, 0.5 * h * (a0 + a1), 0.5 * h * (d0 * d0 + d1 * d1) / denom)
        return float(np.sum(per))
    if p == 2:
        return float(np.sqrt(np.sum(h * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0)))
    raise InvalidArgument(f"p must be 1, 2 or inf, got {p!r}")
