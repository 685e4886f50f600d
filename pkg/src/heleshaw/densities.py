"""Density-function handles and their cumulative distributions.

A density handle is any vectorized callable ``u0(x)``.  Handles that also
provide ``antiderivative(x)`` are integrated exactly; plain callables are
integrated by composite Simpson quadrature.
"""
from __future__ import annotations

import csv

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidArgument, InvalidDatum


class PolynomialDensity:
    """Polynomial density with an exact antiderivative.

    ``coefficients`` are in increasing degree, ``u(x) = sum c_i x**i``.
    """

    def __init__(self, coefficients):
        self.poly = Polynomial(np.asarray(coefficients, dtype=float))
        self._anti = self.poly.integ()

    def __call__(self, x):
        return self.poly(np.asarray(x, dtype=float))

    def antiderivative(self, x):
        return self._anti(np.asarray(x, dtype=float))

    def mass(self, a, b):
        return float(self._anti(b) - self._anti(a))


class PolynomialWell(PolynomialDensity):
    """u(x) = (x - 1/2)**4 + eps on (0, 1), the rupture experiment datum."""

    def __init__(self, eps: float):
        if not eps >= 0.0:
            raise InvalidArgument(f"eps must be >= 0, got {eps}")
        self.eps = float(eps)
        # (x - 1/2)^4 expanded
        super().__init__([0.0625 + self.eps, -0.5, 1.5, -2.0, 1.0])

    @property
    def total_mass(self) -> float:
        # int_0^1 (x - 1/2)^4 dx = 1/80
        return 0.0125 + self.eps

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (x - 0.5) ** 4 + self.eps

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        return (x - 0.5) ** 5 / 5.0 + self.eps * x


def initial_datum_polynomial_well(eps: float) -> PolynomialWell:
    return PolynomialWell(eps)


class TabulatedDensity:
    """Piecewise-linear density through tabulated ``(x, u)`` samples."""

    def __init__(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.ndim != 1 or x.shape != u.shape or x.size < 2:
            raise InvalidArgument("tabulated density needs matching 1-d x, u with >= 2 samples")
        if np.any(np.diff(x) <= 0):
            raise InvalidArgument("tabulated x must be strictly increasing")
        self.x = x
        self.u = u
        h = np.diff(x)
        self._cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (u[1:] + u[:-1]))])

    @classmethod
    def from_csv(cls, path) -> "TabulatedDensity":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        data = np.array([[float(r[0]), float(r[1])] for r in rows])
        return cls(data[:, 0], data[:, 1])

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.u)

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, self.x.size - 2)
        t = x - self.x[i]
        slope = (self.u[i + 1] - self.u[i]) / (self.x[i + 1] - self.x[i])
        return self._cum[i] + self.u[i] * t + 0.5 * slope * t * t


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


class CumulativeDistribution:
    """U(x) = int_a^x u0, exact when the handle has an antiderivative.

    Otherwise composite Simpson on ``n`` equal panels; each panel uses its
    midpoint, and partial panels are integrated by a single Simpson panel
    so that U is continuous and nondecreasing for u0 >= 0.
    """

    def __init__(self, u0, a: float, b: float, n: int):
        self.u0 = u0
        self.a = float(a)
        self.b = float(b)
        n = int(n)
        t = np.linspace(self.a, self.b, n + 1)
        mids = 0.5 * (t[1:] + t[:-1])
        ut = np.asarray(u0(t), dtype=float)
        um = np.asarray(u0(mids), dtype=float)
        if not (np.all(np.isfinite(ut)) and np.all(np.isfinite(um))):
            raise InvalidDatum("initial density is not finite on the domain")
        neg = np.flatnonzero(ut < 0.0)
        if neg.size or np.any(um < 0.0):
            where = t[neg[0]] if neg.size else mids[np.flatnonzero(um < 0.0)[0]]
            raise InvalidDatum(f"initial density is negative at x={where!r}")
        self.exact = hasattr(u0, "antiderivative")
        if self.exact:
            self._f_a = float(u0.antiderivative(self.a))
        else:
            self.t = t
            self._ut = ut
            panels = np.diff(t) / 6.0 * (ut[:-1] + 4.0 * um + ut[1:])
            self.table = np.concatenate([[0.0], np.cumsum(panels)])
        self.total = float(self(self.b))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.exact:
            return np.asarray(self.u0.antiderivative(x), dtype=float) - self._f_a
        i = np.clip(np.searchsorted(self.t, x, side="right") - 1, 0, self.t.size - 2)
        left = self.t[i]
        h = x - left
        partial = h / 6.0 * (self._ut[i] + 4.0 * self.u0(left + 0.5 * h) + self.u0(x))
        return self.table[i] + partial
