import json

import numpy as np
import pytest

from heleshaw.config import ScenarioConfig, parse_override
from heleshaw.csvio import (
    CONVERGENCE_COLUMNS,
    read_columns,
    read_convergence,
    read_fd_profile,
    read_profile,
    read_table,
    write_fd_profile,
    write_profile,
    write_table,
)
from heleshaw.densities import PolynomialWell
from heleshaw.errors import ConfigError, InsufficientData, InvalidArgument
from heleshaw.harness import (
    ReferenceSpec,
    cell_averages,
    compare,
    convergence_study,
    estimate_order,
    mass_audit,
    run_fd_scenario,
    run_scenario,
    sweep_workers,
    write_convergence_outputs,
)
from heleshaw.lagrangian import PiecewiseConstantDensity, PiecewiseLinearDensity
from heleshaw.stepper import StepDiagnostics


def scenario(tmp_path=None, **sections):
    base = {"initial": {"kind": "polynomial-well", "eps": 1e-3},
            "grid": {"K": 30, "mode": "adapted"},
            "time": {"tau": 1e-6, "t_end": 2e-5, "output_times": [0.0, 1e-5, 2e-5]},
            "fd": {"K_ref": 60, "tau_ref": 1e-6}}
    for sec, items in sections.items():
        base.setdefault(sec, {}).update(items)
    return ScenarioConfig.from_mapping(base, base_dir=tmp_path)


# --------------------------------------------------------------- config
def test_ini_parsing_and_defaults(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[initial]\nkind = polynomial-well  ; the well\neps = 1e-1\n"
                 "[grid]\nK = 50\n[time]\ntau = 1e-6\nt_end = 1e-4\noutput_times = 0, 5e-5, 1e-4\n")
    cfg = ScenarioConfig.from_ini(p)
    assert cfg["initial"]["eps"] == 0.1 and cfg["grid"]["K"] == 50
    assert cfg["time"]["output_times"] == [0.0, 5e-5, 1e-4]
    assert cfg["grid"]["mode"] == "adapted" and cfg["solver"]["newton_tol"] == 1e-10
    assert cfg.total_mass() == pytest.approx(0.1125, rel=1e-14)
    assert cfg.base_dir == tmp_path


@pytest.mark.parametrize("text", ["[grid]\nN = 3\n", "[mesh]\nK = 3\n"])
def test_unknown_keys_rejected(tmp_path, text):
    p = tmp_path / "s.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_ini(p)


@pytest.mark.parametrize("override", [
    "grid.K=1", "grid.mode=random", "time.tau=0", "time.t_end=-1", "initial.kind=gauss",
    "potential.kind=cubic", "solver.damping_factor=1.5", "time.output_times=1", "grid.K=2.5",
    "fd.ghost=mirror", "initial.kind=polynomial"])
def test_invalid_values_rejected(override):
    with pytest.raises(ConfigError):
        scenario().with_overrides([override])


def test_tau_must_be_below_t_end():
    with pytest.raises(ConfigError):
        scenario(time={"tau": 1e-3, "t_end": 1e-4, "output_times": []})
    assert scenario(time={"tau": 1.0, "t_end": 0.0, "output_times": [0.0]})["time"]["t_end"] == 0.0


def test_overrides():
    cfg = scenario().with_overrides(["grid.K=12", "potential.kind=quadratic", "potential.lambda=2"])
    assert cfg["grid"]["K"] == 12 and cfg.potential().Lambda == 2.0
    assert parse_override("a.b = c d") == ("a", "b", "c d")
    for bad in ("grid.K", "K=3", ".K=3"):
        with pytest.raises(ConfigError):
            parse_override(bad)
    with pytest.raises(ConfigError):
        scenario().with_overrides(["grid.N=3"])


def test_tabulated_datum_file_resolution(tmp_path):
    x = np.linspace(0.0, 1.0, 11)
    (tmp_path / "u0.csv").write_text("x,u\n" + "".join(f"{a!r},{1.0 + a!r}\n" for a in x.tolist()))
    p = tmp_path / "s.ini"
    p.write_text("[initial]\nkind = tabulated\nfile = u0.csv\n[grid]\nK = 10\n")
    cfg = ScenarioConfig.from_ini(p)
    assert cfg.datum_file() == tmp_path / "u0.csv"
    assert cfg.total_mass() == pytest.approx(1.5, rel=1e-12)
    assert cfg.to_mapping()["initial"]["file"] == str(tmp_path / "u0.csv")
    p.write_text("[initial]\nkind = tabulated\nfile = missing.csv\n")
    with pytest.raises(ConfigError):
        ScenarioConfig.from_ini(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_ini(tmp_path / "nope.ini")


def test_config_hash_stable():
    assert scenario().config_hash() == scenario().config_hash()
    assert scenario().config_hash() != scenario(grid={"K": 31}).config_hash()


def test_bundled_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.ini"))
    assert files
    for f in files:
        ScenarioConfig.from_ini(f)


# -------------------------------------------------------------- estimate_order
def test_estimate_order_exact_power_laws():
    d = [0.1, 0.05, 0.025, 0.0125]
    assert abs(estimate_order([(x, 3.0 * x * x) for x in d]) - 2.0) <= 1e-12
    assert estimate_order([(x, 0.7 * x) for x in d]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InsufficientData):
        estimate_order([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(InvalidArgument):
        estimate_order([(0.1, 1.0), (0.05, 0.0), (0.02, 0.1)])


def test_sweep_workers(monkeypatch):
    monkeypatch.setenv("HELESHAW_THREADS", "3")
    assert sweep_workers(10) == 3
    assert sweep_workers(2) == 2
    assert sweep_workers(10, 1) == 1
    monkeypatch.delenv("HELESHAW_THREADS")
    assert sweep_workers(1) == 1


# ------------------------------------------------------------------- CSV
def test_csv_round_trips(tmp_path):
    pc = PiecewiseConstantDensity(np.array([0.0, 0.1, 0.35, 1.0]), np.array([1.0 / 3.0, 2.0, np.pi]))
    back = read_profile(write_profile(tmp_path / "p.csv", pc))
    np.testing.assert_array_equal(back.breakpoints, pc.breakpoints)
    np.testing.assert_array_equal(back.values, pc.values)
    pl = PiecewiseLinearDensity(np.array([0.0, 0.5, 1.0]), np.array([0.1, 1.0 / 7.0, 2.0]))
    back = read_fd_profile(write_fd_profile(tmp_path / "f.csv", pl))
    np.testing.assert_array_equal(back.node_values, pl.node_values)
    rows = [{"n": 0, "x": 0.1}, {"n": 1, "x": None}]
    got = read_table(write_table(tmp_path / "t.csv", ("n", "x"), rows))
    assert got == rows and isinstance(got[0]["n"], int)
    with pytest.raises(InvalidArgument):
        read_table(tmp_path / "t.csv", ("n", "y"))
    with pytest.raises(InvalidArgument):
        write_table(tmp_path / "u.csv", ("a", "b"), [(1.0,)])


def test_profile_rejects_gaps(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("x_left,x_right,u_value\n0.0,0.5,1.0\n0.6,1.0,1.0\n")
    with pytest.raises(InvalidArgument):
        read_profile(p)


# ------------------------------------------------------------------- run
@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    res = run_scenario(scenario(), out)
    return out, res


def test_run_writes_outputs(run_dir):
    out, res = run_dir
    assert res.exit_code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["diagnostics.csv", "metadata.json", "profile_t0.csv", "profile_t1e-05.csv",
                     "profile_t2e-05.csv"]
    diag = read_columns(out / "diagnostics.csv", StepDiagnostics.COLUMNS)
    assert diag["n"].tolist() == list(range(21))
    np.testing.assert_array_equal(diag["energy"], res.trajectory.series("energy"))
    prof = read_profile(out / "profile_t2e-05.csv")
    assert prof.mass() == pytest.approx(0.0135, rel=1e-12)
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["status"] == "ok" and meta["steps_completed"] == 20
    assert meta["config_hash"] == scenario().config_hash()
    assert meta["wall_time_seconds"] > 0.0
    assert set(meta["versions"]) == {"heleshaw", "python", "numpy", "scipy"}
    b = meta["budgets"]
    assert b["movement_total"] <= b["movement_budget"] * (1 + 1e-6)
    assert b["max_relative_mass_drift"] <= 1e-14


def test_rerun_from_metadata_is_bit_identical(run_dir, tmp_path):
    out, _ = run_dir
    cfg = ScenarioConfig.load(out / "metadata.json")
    assert cfg.config_hash() == scenario().config_hash()
    run_scenario(cfg, tmp_path)
    assert (tmp_path / "diagnostics.csv").read_bytes() == (out / "diagnostics.csv").read_bytes()
    assert (tmp_path / "profile_t2e-05.csv").read_bytes() == (out / "profile_t2e-05.csv").read_bytes()


def test_zero_end_time_writes_initial_profile_only(tmp_path):
    cfg = scenario(time={"t_end": 0.0, "output_times": [0.0]})
    res = run_scenario(cfg, tmp_path)
    assert res.exit_code == 0
    assert sorted(p.name for p in tmp_path.glob("profile_*.csv")) == ["profile_t0.csv"]
    assert len(read_table(tmp_path / "diagnostics.csv")) == 1


def test_uniform_grid_mass_column_constant(tmp_path):
    cfg = scenario(grid={"K": 400, "mode": "uniform"},
                   time={"tau": 1e-7, "t_end": 5e-7, "output_times": [5e-7]})
    run_scenario(cfg, tmp_path)
    m = read_columns(tmp_path / "diagnostics.csv")["mass"]
    assert np.all(m == m[0])
    assert m[0] == pytest.approx(0.0135, rel=1e-14)


def test_run_failure_recorded(tmp_path):
    cfg = scenario(time={"tau": 1e-2, "t_end": 3e-2, "output_times": []},
                   solver={"max_newton_iters": 1, "max_substep_halvings": 0, "max_backtracks": 1})
    res = run_scenario(cfg, tmp_path)
    assert res.exit_code != 0
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["status"] == "failed"
    assert meta["failure"]["step"] == 1 and meta["failure"]["type"] == "StepFailure"
    assert (tmp_path / "diagnostics.csv").exists()


def test_budgets_reported_on_uniform_grid(tmp_path):
    res = run_scenario(scenario(grid={"mode": "uniform"}), tmp_path)
    b = res.metadata["budgets"]
    assert b["dissipation_total"] <= b["dissipation_budget"]
    assert b["tv_squared_total"] <= b["tv_squared_budget"]


def test_run_fd_scenario(tmp_path):
    code, fd, meta = run_fd_scenario(scenario(), tmp_path)
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "fd_diagnostics.csv", "fd_metadata.json", "fd_profile_t0.csv", "fd_profile_t1e-05.csv",
        "fd_profile_t2e-05.csv"]
    prof = read_fd_profile(tmp_path / "fd_profile_t2e-05.csv")
    assert prof.breakpoints.size == 61
    assert meta["final_mass_drift"] > 0.0


# ------------------------------------------------------------ convergence
def test_self_reference_gives_zero_errors():
    rep = convergence_study(scenario(), [10, 20], 1e-6, 5e-6, ReferenceSpec("self"), workers=1)
    assert all(e == 0.0 for n in rep.errors for e in rep.errors[n])
    assert rep.orders is None


def test_convergence_argument_checks():
    ref = ReferenceSpec("lagrangian", 40, 1e-6)
    with pytest.raises(InvalidArgument):
        convergence_study(scenario(), [20, 10], 1e-6, 5e-6, ref)
    with pytest.raises(InvalidArgument):
        convergence_study(scenario(), [10, 40], 1e-6, 5e-6, ref)
    with pytest.raises(InvalidArgument):
        convergence_study(scenario(), [10, 20], 1e-6, 5e-6, ref, profile="cubic")
    with pytest.raises(InvalidArgument):
        ReferenceSpec("analytic")


@pytest.fixture(scope="module")
def small_study():
    cfg = scenario(initial={"eps": 1e-1})
    ref = ReferenceSpec("lagrangian", 320, 1e-7)
    return convergence_study(cfg, [10, 20, 40, 80], 1e-7, 2e-5, ref, workers=2)


def test_small_convergence_study(small_study, tmp_path):
    rep = small_study
    assert rep.failed == {}
    assert set(rep.mass_drift) == {10, 20, 40, 80, 320}
    assert max(rep.mass_drift.values()) <= 1e-14
    for n in ("l1", "l2", "linf"):
        e = rep.errors[n]
        inversions = sum(b > a for a, b in zip(e, e[1:]))
        assert inversions <= 1
        assert rep.orders[n] > 1.5
    files = write_convergence_outputs(rep, tmp_path)
    back = read_convergence(files[0])
    np.testing.assert_array_equal(back["K"], rep.Ks)
    np.testing.assert_array_equal(back["l2"], rep.errors["l2"])
    assert tuple(back) == CONVERGENCE_COLUMNS
    assert json.loads(files[1].read_text())["orders"] == rep.orders


def test_failed_runs_are_marked(monkeypatch):
    import heleshaw.harness as harness

    real = harness._lagrangian_job

    def flaky(mapping, base_dir, K, tau, t_eval):
        return "StepFailure: forced" if K == 20 else real(mapping, base_dir, K, tau, t_eval)

    monkeypatch.setattr(harness, "_lagrangian_job", flaky)
    cfg = scenario(initial={"eps": 1e-1})
    rep = convergence_study(cfg, [10, 20, 40, 80], 1e-6, 1e-5, ReferenceSpec("fd", 160, 1e-6), workers=1)
    assert rep.failed == {20: "StepFailure: forced"}
    assert rep.errors["l1"][1] is None
    assert rep.orders is not None and len(rep.pairs("l1")) == 3
    rep = convergence_study(cfg, [10, 20, 40], 1e-6, 1e-5, ReferenceSpec("fd", 160, 1e-6), workers=1)
    assert rep.orders is None


def test_fd_reference_study_runs():
    cfg = scenario(initial={"eps": 1e-1})
    ref = ReferenceSpec("fd", 400, 1e-7)
    rep = convergence_study(cfg, [10, 20, 40], 1e-7, 1e-5, ref, workers=1)
    assert rep.failed == {} and all(o > 1.5 for o in rep.orders.values())
    pc = convergence_study(cfg, [10, 20, 40], 1e-7, 1e-5, ref, profile="constant", workers=1)
    assert all(o > 0.8 for o in pc.orders.values())


def test_cell_averages_preserve_mass():
    pl = PiecewiseLinearDensity(np.linspace(0.0, 1.0, 5), np.array([1.0, 2.0, 0.5, 3.0, 1.0]))
    pc = cell_averages(pl, np.array([0.1, 0.33, 0.9]))
    assert pc.mass() == pytest.approx(pl.mass(), rel=1e-14)


# ------------------------------------------------------------- mass audit
def test_mass_audit(tmp_path):
    audit = mass_audit([1e-1, 1e-3], K_ref=100, tau_ref=1e-6, t_end=2e-5, K_lagrangian=20, workers=1)
    assert list(audit.columns) == ["fd_eps_0.1", "fd_eps_0.001", "lagrangian_eps_0.1", "lagrangian_eps_0.001"]
    assert audit.times.size == 21
    assert np.max(audit.columns["lagrangian_eps_0.001"]) <= 1e-14
    assert np.max(audit.columns["lagrangian_eps_0.1"]) <= 1e-14
    assert audit.final("fd_eps_0.001") > 0.0
    cols = read_columns(audit.write(tmp_path / "m.csv"))
    np.testing.assert_array_equal(cols["fd_eps_0.1"], audit.columns["fd_eps_0.1"])


def test_constant_datum_fd_drift_is_zero(tmp_path):
    cfg = scenario(initial={"kind": "polynomial", "coefficients": [0.4]})
    code, fd, _ = run_fd_scenario(cfg, tmp_path)
    assert code == 0
    assert np.max(fd.mass_drift) <= 1e-15


def test_initial_datum_masses():
    assert PolynomialWell(1e-3).total_mass == pytest.approx(0.0135, rel=1e-15)
    assert PolynomialWell(0.0).total_mass == pytest.approx(0.0125, rel=1e-15)
    assert PolynomialWell(1e-1).total_mass == pytest.approx(0.1125, rel=1e-15)
    with pytest.raises(InvalidArgument):
        PolynomialWell(-1e-3)


# ---------------------------------------------------------------- compare
def test_compare_outputs(tmp_path):
    cfg = scenario(initial={"eps": 1e-1})
    summary = compare(cfg, tmp_path)
    assert [row["t"] for row in summary] == [0.0, 1e-5, 2e-5]
    assert all(row["l1"] < 1e-2 for row in summary)
    cols = read_columns(tmp_path / "compare_t2e-05.csv", ("x", "u_fd", "u_lagrangian", "u_affine"))
    assert cols["x"].size == 61
    assert (tmp_path / "compare_summary.csv").exists()
