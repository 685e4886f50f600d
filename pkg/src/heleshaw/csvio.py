"""CSV readers and writers for profiles, diagnostics and study tables.

Floats are written with ``repr`` so every file reads back bit-exactly.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .lagrangian import PiecewiseConstantDensity, PiecewiseLinearDensity

PROFILE_COLUMNS = ("x_left", "x_right", "u_value")
FD_PROFILE_COLUMNS = ("x", "u")
CONVERGENCE_COLUMNS = ("K", "delta", "l1", "l2", "linf")
INT_COLUMNS = {"n", "newton_iters", "substeps", "K"}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))


def _parse(name, s):
    if s == "":
        return None
    if name in INT_COLUMNS:
        return int(s)
    return float(s)


def write_table(path, columns, rows) -> Path:
    """Write an iterable of dicts (or sequences) under ``columns``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            vals = [row[c] for c in columns] if isinstance(row, dict) else list(row)
            if len(vals) != len(columns):
                raise InvalidArgument("row length does not match the header")
            w.writerow([_fmt(v) for v in vals])
    return path


def read_table(path, expected=None) -> list[dict]:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if expected is not None and tuple(header) != tuple(expected):
            raise InvalidArgument(f"{path}: header {header} differs from {list(expected)}")
        return [{h: _parse(h, s) for h, s in zip(header, line)} for line in r]


def read_columns(path, expected=None) -> dict[str, np.ndarray]:
    rows = read_table(path, expected)
    with Path(path).open(newline="") as fh:
        header = next(csv.reader(fh))
    return {h: np.array([row[h] for row in rows]) for h in header}


def write_profile(path, profile: PiecewiseConstantDensity) -> Path:
    x = profile.breakpoints
    return write_table(path, PROFILE_COLUMNS, zip(x[:-1], x[1:], profile.values))


def read_profile(path) -> PiecewiseConstantDensity:
    c = read_columns(path, PROFILE_COLUMNS)
    if not np.array_equal(c["x_left"][1:], c["x_right"][:-1]):
        raise InvalidArgument(f"{path}: cells are not contiguous")
    x = np.append(c["x_left"], c["x_right"][-1])
    return PiecewiseConstantDensity(x, c["u_value"])


def write_fd_profile(path, profile: PiecewiseLinearDensity) -> Path:
    return write_table(path, FD_PROFILE_COLUMNS, zip(profile.breakpoints, profile.node_values))


def read_fd_profile(path) -> PiecewiseLinearDensity:
    c = read_columns(path, FD_PROFILE_COLUMNS)
    return PiecewiseLinearDensity(c["x"], c["u"])


def write_convergence(path, report) -> Path:
    rows = zip(report.Ks, report.deltas, report.errors["l1"], report.errors["l2"], report.errors["linf"])
    return write_table(path, CONVERGENCE_COLUMNS, rows)


def read_convergence(path) -> dict[str, np.ndarray]:
    return read_columns(path, CONVERGENCE_COLUMNS)
