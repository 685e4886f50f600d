"""Command-line entry point ``heleshaw``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ScenarioConfig
from .errors import HeleShawError
from .harness import (
    EXIT_FAILURE,
    NORMS,
    PROFILES,
    ReferenceSpec,
    compare,
    convergence_study,
    mass_audit,
    run_fd_scenario,
    run_scenario,
    write_convergence_outputs,
)

EXIT_USAGE = 1


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str):
    return [int(v) for v in text.split(",") if v.strip()]


def _config_args(p: argparse.ArgumentParser, required=True):
    p.add_argument("--config", required=required, help="INI scenario file or a metadata.json from a previous run")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (default: output.directory)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heleshaw", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    # -v is also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="evolve the Lagrangian scheme")
    _config_args(p)

    p = sub.add_parser("run-fd", parents=[common], help="evolve the finite-difference reference")
    _config_args(p)

    p = sub.add_parser("convergence", parents=[common], help="error-vs-K study with fitted orders")
    _config_args(p)
    p.add_argument("--ks", type=_ints, required=True, help="comma separated K values")
    p.add_argument("--tau", type=float, help="time step of the sweep (default: time.tau)")
    p.add_argument("--t-eval", type=float, required=True)
    p.add_argument("--ref", choices=("lagrangian", "fd", "self"), default="lagrangian")
    p.add_argument("--ref-k", type=int, default=0)
    p.add_argument("--ref-tau", type=float, default=0.0)
    p.add_argument("--profile", choices=PROFILES, default="affine")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("mass-audit", parents=[common], help="relative mass drift of both schemes")
    p.add_argument("--eps", type=_floats, required=True, help="comma separated well depths")
    p.add_argument("--k-ref", type=int, default=6400)
    p.add_argument("--tau-ref", type=float, default=5e-8)
    p.add_argument("--t-end", type=float, default=1e-4)
    p.add_argument("--k-lagrangian", type=int, default=100)
    p.add_argument("--grid-mode", choices=("uniform", "adapted"), default="adapted")
    p.add_argument("--ghost", choices=("node", "cell"), default="node")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="heleshaw-out")

    p = sub.add_parser("compare", parents=[common], help="side-by-side profiles of both schemes")
    _config_args(p)
    return ap


def _load(args) -> ScenarioConfig:
    return ScenarioConfig.load(args.config, args.overrides)


def _progress(every):
    def report(n, total, diag):
        if n % every == 0 or n == total:
            logging.info("step %d/%d  t=%.6g  E=%.10g  H=%.10g", n, total, diag.t, diag.energy, diag.entropy)
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = _load(args)
            res = run_scenario(cfg, args.out, progress=_progress(1000) if args.verbose else None)
            print(json.dumps({"status": res.metadata["status"], "steps": res.metadata.get("steps_completed"),
                              "wall_time_seconds": round(res.metadata["wall_time_seconds"], 3)}))
            return res.exit_code
        if args.command == "run-fd":
            code, _, meta = run_fd_scenario(_load(args), args.out)
            print(json.dumps({"status": meta["status"], "final_mass_drift": meta.get("final_mass_drift"),
                              "min_value": meta.get("min_value")}))
            return code
        if args.command == "convergence":
            cfg = _load(args)
            ref = ReferenceSpec(args.ref, args.ref_k, args.ref_tau, cfg["fd"]["ghost"])
            tau = args.tau if args.tau is not None else cfg["time"]["tau"]
            rep = convergence_study(cfg, args.ks, tau, args.t_eval, ref, args.profile, args.workers)
            write_convergence_outputs(rep, args.out or cfg["output"]["directory"])
            for K, *errs in zip(rep.Ks, *(rep.errors[n] for n in NORMS)):
                print(f"K={K:6d}  " + "  ".join(f"{n}={e!r}" for n, e in zip(NORMS, errs)))
            if rep.orders:
                print("orders: " + "  ".join(f"{n}={o:.4f}" for n, o in rep.orders.items()))
            return EXIT_FAILURE if rep.failed else 0
        if args.command == "mass-audit":
            audit = mass_audit(args.eps, args.k_ref, args.tau_ref, args.t_end, args.k_lagrangian,
                               args.grid_mode, args.ghost, args.workers)
            path = audit.write(Path(args.out) / "mass_audit.csv")
            for name in audit.columns:
                print(f"{name}: drift at t_end = {audit.final(name)!r}")
            print(f"wrote {path}")
            return 0
        if args.command == "compare":
            for row in compare(_load(args), args.out):
                print("  ".join(f"{k}={v!r}" for k, v in row.items()))
            return 0
    except HeleShawError as exc:
        print(f"heleshaw: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
