"""Scenario configuration: a sectioned INI file with a fixed key schema.

Every key has a default, unknown sections or keys are rejected, and
``--set section.key=value`` overrides are applied before parsing.  The
typed mapping returned by :meth:`ScenarioConfig.to_mapping` is what the
run metadata stores; feeding it back reproduces the run exactly.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .densities import CumulativeDistribution, PolynomialDensity, PolynomialWell, TabulatedDensity
from .errors import ConfigError, HeleShawError
from .functionals import Potential
from .lagrangian import init_state_from_density
from .massgrid import Domain, adapted_mass_grid, uniform_mass_grid
from .stepper import SolverConfig


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    s = str(s).strip()
    return [float(v) for v in s.replace(";", ",").split(",") if v.strip()] if s else []


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int(s):
    if isinstance(s, int):
        return s
    f = float(s)
    if f != int(f):
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


_SOLVER_DEFAULTS = SolverConfig(tau=1.0)

SCHEMA = {
    "domain": {"a": (float, 0.0), "b": (float, 1.0)},
    "initial": {"kind": (str, "polynomial-well"), "eps": (float, 1e-3), "file": (str, ""),
                "coefficients": (_floats, [])},
    "potential": {"kind": (str, "none"), "lambda": (float, 0.0), "coefficients": (_floats, [])},
    "grid": {"K": (_int, 400), "mode": (str, "adapted")},
    "time": {"tau": (float, 1e-7), "t_end": (float, 0.0), "output_times": (_floats, [])},
    "solver": {name: (type(getattr(_SOLVER_DEFAULTS, name)), getattr(_SOLVER_DEFAULTS, name))
               for name in ("newton_tol", "max_newton_iters", "damping_factor", "max_substep_halvings",
                            "step_tol", "full_step_tol", "max_backtracks")},
    "fd": {"K_ref": (_int, 6400), "tau_ref": (float, 5e-8), "ghost": (str, "node")},
    "output": {"directory": (str, "heleshaw-out"), "csv": (_bool, True), "json": (_bool, True)},
}
SCHEMA["solver"]["max_newton_iters"] = (_int, _SOLVER_DEFAULTS.max_newton_iters)
SCHEMA["solver"]["max_substep_halvings"] = (_int, _SOLVER_DEFAULTS.max_substep_halvings)
SCHEMA["solver"]["max_backtracks"] = (_int, _SOLVER_DEFAULTS.max_backtracks)

INITIAL_KINDS = ("polynomial-well", "tabulated", "polynomial")
POTENTIAL_KINDS = ("none", "quadratic", "polynomial")
GRID_MODES = ("uniform", "adapted")


def parse_override(text: str):
    """``"section.key=value"`` -> ``(section, key, value)``."""
    lhs, sep, value = text.partition("=")
    section, dot, key = lhs.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    return section, key, value.strip()


@dataclass(frozen=True)
class ScenarioConfig:
    values: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    # ----------------------------------------------------------- construction
    @classmethod
    def from_mapping(cls, mapping: dict, overrides=(), base_dir=None) -> "ScenarioConfig":
        raw = {sec: {} for sec in SCHEMA}
        for sec, items in (mapping or {}).items():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key, val in items.items():
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {sec}.{key}")
                raw[sec][key] = val
        for ov in overrides:
            sec, key, val = parse_override(ov) if isinstance(ov, str) else ov
            if sec not in SCHEMA or key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            raw[sec][key] = val
        typed = {}
        for sec, keys in SCHEMA.items():
            typed[sec] = {}
            for key, (conv, default) in keys.items():
                if key in raw[sec]:
                    try:
                        typed[sec][key] = conv(raw[sec][key])
                    except (TypeError, ValueError) as exc:
                        raise ConfigError(f"{sec}.{key}: {exc}") from None
                else:
                    typed[sec][key] = list(default) if isinstance(default, list) else default
        cfg = cls(typed, Path(base_dir) if base_dir is not None else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def from_ini(cls, path, overrides=()) -> "ScenarioConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        mapping = {sec: dict(cp[sec]) for sec in cp.sections()}
        return cls.from_mapping(mapping, overrides, base_dir=path.parent)

    @classmethod
    def from_metadata(cls, path, overrides=()) -> "ScenarioConfig":
        path = Path(path)
        with path.open() as fh:
            meta = json.load(fh)
        if "config" not in meta:
            raise ConfigError(f"{path}: no config record")
        return cls.from_mapping(meta["config"], overrides, base_dir=path.parent)

    @classmethod
    def load(cls, path, overrides=()) -> "ScenarioConfig":
        """INI file, or the metadata JSON written by a previous run."""
        if str(path).endswith(".json"):
            return cls.from_metadata(path, overrides)
        return cls.from_ini(path, overrides)

    def with_overrides(self, overrides) -> "ScenarioConfig":
        return ScenarioConfig.from_mapping(self.to_mapping(), overrides, self.base_dir)

    # ------------------------------------------------------------- validation
    def validate(self):
        v = self.values
        if v["initial"]["kind"] not in INITIAL_KINDS:
            raise ConfigError(f"initial.kind must be one of {INITIAL_KINDS}")
        if v["potential"]["kind"] not in POTENTIAL_KINDS:
            raise ConfigError(f"potential.kind must be one of {POTENTIAL_KINDS}")
        if v["grid"]["mode"] not in GRID_MODES:
            raise ConfigError(f"grid.mode must be one of {GRID_MODES}")
        if v["grid"]["K"] < 2:
            raise ConfigError("grid.K must be at least 2")
        if v["initial"]["kind"] == "tabulated" and not self.datum_file().is_file():
            raise ConfigError(f"initial.file not found: {self.datum_file()}")
        if v["initial"]["kind"] == "polynomial" and not v["initial"]["coefficients"]:
            raise ConfigError("initial.coefficients required for a polynomial datum")
        t = v["time"]
        if not t["tau"] > 0.0 or t["t_end"] < 0.0:
            raise ConfigError("time.tau must be positive and time.t_end non-negative")
        if not (t["t_end"] == 0.0 or t["tau"] < t["t_end"]):
            raise ConfigError("time.tau must be smaller than time.t_end (or t_end = 0)")
        if any(s < 0.0 or s > t["t_end"] * (1 + 1e-12) for s in t["output_times"]):
            raise ConfigError("time.output_times must lie in [0, t_end]")
        if sorted(t["output_times"]) != t["output_times"]:
            raise ConfigError("time.output_times must be sorted")
        if v["fd"]["ghost"] not in ("node", "cell"):
            raise ConfigError("fd.ghost must be node or cell")
        try:
            self.domain()
            self.solver()
        except HeleShawError as exc:
            raise ConfigError(str(exc)) from None

    # ---------------------------------------------------------------- access
    def __getitem__(self, section):
        return self.values[section]

    def to_mapping(self) -> dict:
        out = json.loads(json.dumps(self.values))
        if out["initial"]["file"]:
            out["initial"]["file"] = str(self.datum_file())
        return out

    def config_hash(self) -> str:
        text = json.dumps(self.to_mapping(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace_values(self, **sections) -> "ScenarioConfig":
        vals = json.loads(json.dumps(self.values))
        for sec, items in sections.items():
            vals[sec].update(items)
        cfg = replace(self, values=vals)
        cfg.validate()
        return cfg

    # --------------------------------------------------------------- builders
    def datum_file(self) -> Path:
        p = Path(self.values["initial"]["file"])
        return p if p.is_absolute() else self.base_dir / p

    def domain(self) -> Domain:
        return Domain(self.values["domain"]["a"], self.values["domain"]["b"])

    def datum(self):
        ini = self.values["initial"]
        if ini["kind"] == "polynomial-well":
            return PolynomialWell(ini["eps"])
        if ini["kind"] == "tabulated":
            return TabulatedDensity.from_csv(self.datum_file())
        return PolynomialDensity(ini["coefficients"])

    def total_mass(self, K: int | None = None) -> float:
        d = self.domain()
        K = K or self.values["grid"]["K"]
        return CumulativeDistribution(self.datum(), d.a, d.b, 64 * K).total

    def potential(self) -> Potential:
        p = self.values["potential"]
        return Potential(p["kind"], lam=p["lambda"], coefficients=p["coefficients"] or None,
                         domain=self.domain())

    def solver(self, tau: float | None = None) -> SolverConfig:
        return SolverConfig(tau=self.values["time"]["tau"] if tau is None else tau, **self.values["solver"])

    def grid(self, K: int | None = None):
        K = K or self.values["grid"]["K"]
        u0, d = self.datum(), self.domain()
        M = self.total_mass(K)
        if self.values["grid"]["mode"] == "uniform":
            return uniform_mass_grid(K, M)
        return adapted_mass_grid(u0, K, d, total_mass=M)

    def initial_state(self, K: int | None = None):
        grid = self.grid(K)
        return init_state_from_density(self.datum(), grid, self.domain())
