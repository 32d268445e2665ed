"""Batch front door: solve, oracle, simulate, verify, validate.

Exit codes are a stable contract: 0 success / all checks passed,
1 usage or validation failure, 2 numerical non-convergence (artifacts are
still written, flagged stale). Every command that consumes randomness
requires an explicit --seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import figures, serialize
from .dynamics import simulate_path
from .errors import ConvergenceError, DomainError, LatticeError, SchemeError, SpecError
from .mc import deviation_report, estimate_value, regularity_probe
from .model import read_spec, validate_assumptions
from .oracle import discrete_game_value, lattice_impulse_value, lattice_stopping_value
from .policy import extract_policy, mean_dpp_residual
from .qvi import SolverParams, build_grid, solve_qvi

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NONCONVERGED = 2

_USER_ERRORS = (SpecError, DomainError, SchemeError, LatticeError, OSError, ValueError)


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _parse_counts(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", required=True, help="problem document (JSON)")
    p.add_argument("--out", required=True, help="output directory")


def _grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nt", type=int, default=200, help="time steps")
    p.add_argument("--nx", type=str, default="200", help="space steps per axis, comma separated")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impulsegame",
        description="solve and verify impulse-controller-versus-stopper games",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the obstacle problem and write artifacts")
    _add_common(p)
    _grid_args(p)
    p.add_argument("--tol", type=float, default=None, help="outer fixed-point tolerance")
    p.add_argument("--max-outer", type=int, default=50)
    p.add_argument("--disable-stopping", action="store_true",
                   help="degenerate impulse-only mode (stopper idle before the horizon)")
    p.add_argument("--act-tol", type=float, default=None, help="active-set tolerance")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("oracle", help="brute-force lattice value")
    _add_common(p)
    _grid_args(p)
    p.add_argument("--mode", choices=["stopping", "impulse", "infsup", "supinf"],
                   required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("simulate", help="Monte-Carlo simulation under solved policies")
    _add_common(p)
    p.add_argument("--field", help="directory with value.csv/diagnostics.json to derive policies")
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--x0", type=str, default=None, help="initial state, comma separated")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("verify", help="run a named check suite")
    _add_common(p)
    p.add_argument("--mode", choices=["oracle", "mc", "dpp", "regularity", "assumptions"],
                   required=True)
    p.add_argument("--field", help="artifact directory from a solve run")
    p.add_argument("--seed", type=int, required=True,
                   help="required in every verify mode for reproducibility")
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--x0", type=str, default=None)
    p.add_argument("--n-probe", type=int, default=50)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("validate", help="check the standing assumptions of a document")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--n-probe", type=int, default=50)

    return parser


def _default_x0(spec) -> np.ndarray:
    lo = np.asarray(spec.domain.lower)
    hi = np.asarray(spec.domain.upper)
    return (lo + hi) / 2.0


def _load_field(field_dir: str):
    d = Path(field_dir)
    return serialize.read_value_field(d / "value.csv", d / "diagnostics.json")


def _write_solve_artifacts(spec, field, out: Path, act_tol, with_figures: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_value_csv(field, out / "value.csv", act_tol)
    serialize.write_field_meta(field, out / "diagnostics.json")
    if field.converged:
        controller, stopper = extract_policy(spec, field, act_tol)
        serialize.write_policy_csv(controller, out / "controller_policy.csv")
        serialize.write_policy_csv(stopper, out / "stopper_policy.csv")
        serialize.write_policy_meta(controller, out / "policy.json")
        if with_figures:
            figures.save_value_figure(field, out / "value.png")
            figures.save_policy_figure(controller, stopper, out / "policy.png")
    elif with_figures:
        figures.save_value_figure(field, out / "value.png")


def cmd_solve(args) -> int:
    spec = read_spec(args.spec)
    grid = build_grid(spec.domain, args.nt, _parse_counts(args.nx))
    params = SolverParams(fixed_point_tol=args.tol, max_outer_iters=args.max_outer)
    out = Path(args.out)
    try:
        field = solve_qvi(spec, grid, params, disable_stopping=args.disable_stopping)
    except ConvergenceError as err:
        print(f"solver did not converge: {err}", file=sys.stderr)
        if err.field is not None:
            _write_solve_artifacts(spec, err.field, out, args.act_tol, not args.no_figures)
        return EXIT_NONCONVERGED
    _write_solve_artifacts(spec, field, out, args.act_tol, not args.no_figures)
    print(f"converged; artifacts in {out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    spec = read_spec(args.spec)
    grid = build_grid(spec.domain, args.nt, _parse_counts(args.nx))
    if args.mode == "stopping":
        field = lattice_stopping_value(spec, grid)
    elif args.mode == "impulse":
        field = lattice_impulse_value(spec, grid)
    else:
        field = discrete_game_value(spec, grid, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_value_csv(field, out / "oracle_value.csv", 1e-9)
    serialize.write_field_meta(field, out / "oracle_diagnostics.json")
    if not args.no_figures:
        figures.save_value_figure(field, out / "oracle_value.png")
    print(f"oracle value written to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = read_spec(args.spec)
    x0 = np.asarray(_parse_floats(args.x0)) if args.x0 else _default_x0(spec)
    controller = stopper = None
    if args.field:
        field = _load_field(args.field)
        controller, stopper = extract_policy(spec, field)
    est = estimate_value(
        spec, controller, stopper, args.t0, x0, args.paths, args.dt, args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = est.to_json()
    payload["t0"] = args.t0
    payload["x0"] = list(map(float, x0))
    payload["policies"] = "extracted" if args.field else "none"
    serialize.write_json(payload, out / "simulate.json")
    sample = simulate_path(spec, args.t0, x0, controller, stopper, args.dt, args.seed)
    serialize.write_path_csv(spec, sample, out / "sample_path.csv")
    if not args.no_figures and spec.dimension == 1:
        trajs = []
        for i in range(8):
            o = simulate_path(spec, args.t0, x0, controller, stopper, args.dt, args.seed + i)
            trajs.append((o.times, o.states))
        figures.save_paths_figure(trajs, out / "paths.png")
    print(f"estimate {est.mean:.6f} +- {est.std_error:.6f}; report in {out}")
    return EXIT_OK


def _verify_assumptions(spec, args) -> dict:
    rep = validate_assumptions(spec, args.n_probe)
    entries = {}
    for name, value in rep.checks.items():
        entries[name] = {
            "passed": True if value is None else bool(value),
            "detail": rep.details.get(name, "vacuous" if value is None else ""),
        }
    return {
        "checks": entries,
        "lipschitz": rep.lipschitz,
        "growth": rep.growth,
        "passed": rep.all_passed,
    }


def _verify_oracle(spec, field, args, out: Path) -> dict:
    grid = field.grid
    g_sup = float(np.abs(field.bequest).max())
    report: dict = {"passed": True, "entries": {}}

    def entry(name, gap, tol):
        ok = bool(gap <= tol)
        report["entries"][name] = {"gap": float(gap), "tolerance": float(tol), "passed": ok}
        report["passed"] = report["passed"] and ok

    if len(spec.impulse_set) == 0:
        ref = lattice_stopping_value(spec, grid)
        entry("stopping_equivalence", np.abs(field.values - ref.values).max(),
              1e-3 * (1.0 + g_sup))
    elif field.diagnostics.get("disable_stopping"):
        ref = lattice_impulse_value(spec, grid)
        entry("impulse_equivalence", np.abs(field.values - ref.values).max(), 1e-3)
    else:
        lo = discrete_game_value(spec, grid, "infsup")
        hi = discrete_game_value(spec, grid, "supinf")
        entry("order_gap", np.abs(lo.values - hi.values).max(), 1e-6)
        dominance = float((lo.values - hi.values).min())
        ok = dominance >= -1e-12
        report["entries"]["order_dominance"] = {
            "min_infsup_minus_supinf": dominance,
            "tolerance": -1e-12,
            "passed": bool(ok),
        }
        report["passed"] = report["passed"] and ok
        entry("solver_agreement", np.abs(field.values - lo.values).max(), 1e-3)
    return report


def _verify_mc(spec, field, args, out: Path) -> dict:
    controller, stopper = extract_policy(spec, field)
    x0 = np.asarray(_parse_floats(args.x0)) if args.x0 else _default_x0(spec)
    grid = field.grid
    k = int(round((args.t0 - grid.times[0]) / grid.dt))
    v_ref = float(
        field.values[k][np.abs(grid.nodes() - x0).sum(axis=1).argmin()]
    )
    est = estimate_value(spec, controller, stopper, args.t0, x0, args.paths, args.dt, args.seed)
    slack = 0.05
    bound = 3.0 * est.std_error + slack
    closure_ok = bool(abs(est.mean - v_ref) <= bound)
    dev = deviation_report(
        spec, controller, stopper, args.t0, x0, v_ref, args.paths, args.dt, args.seed, slack
    )
    dev_ok = all(entry["holds"] for entry in dev.values())
    return {
        "inputs": {
            "t0": args.t0,
            "x0": list(map(float, x0)),
            "paths": args.paths,
            "dt": args.dt,
            "slack": slack,
        },
        "value_reference": v_ref,
        "estimate": est.to_json(),
        "closure": {
            "difference": abs(est.mean - v_ref),
            "bound": bound,
            "passed": closure_ok,
        },
        "deviations": dev,
        "passed": bool(closure_ok and dev_ok),
    }


def _coarse_ladder(nt: int, nx: list[int]) -> list[tuple[int, list[int]]]:
    ladder = []
    for divisor in (4, 2, 1):
        if nt % divisor or any(n % divisor for n in nx):
            continue
        if nt // divisor < 2 or any(n // divisor < 2 for n in nx):
            continue
        ladder.append((nt // divisor, [n // divisor for n in nx]))
    return ladder


def _verify_dpp(spec, field, args, out: Path) -> dict:
    grid = field.grid
    nx = [len(a) - 1 for a in grid.axes]
    ladder = _coarse_ladder(grid.nt, nx)
    entries = []
    for nt_i, nx_i in ladder:
        g_i = build_grid(spec.domain, nt_i, nx_i)
        f_i = (
            field
            if nt_i == grid.nt and nx_i == nx
            else solve_qvi(spec, g_i,
                           disable_stopping=bool(field.diagnostics.get("disable_stopping")))
        )
        r = mean_dpp_residual(spec, f_i)
        entries.append({
            "nt": nt_i,
            "nx": nx_i,
            "mean_residual": r,
            "constant": r / (g_i.dt + max(g_i.dx)),
        })
    ratios = [
        entries[i + 1]["mean_residual"] / entries[i]["mean_residual"]
        for i in range(len(entries) - 1)
    ]
    ok = all(r <= 0.7 for r in ratios) and len(entries) >= 2
    if not args.no_figures:
        figures.save_refinement_figure(
            [e["nt"] for e in entries],
            [e["mean_residual"] for e in entries],
            out / "dpp_refinement.png",
            "mean one-step residual",
        )
    return {"levels": entries, "ratios": ratios, "passed": bool(ok)}


def _verify_regularity(spec, field, args, out: Path) -> dict:
    grid = field.grid
    nx = [len(a) - 1 for a in grid.axes]
    ladder = _coarse_ladder(grid.nt, nx)
    entries = []
    for nt_i, nx_i in ladder:
        g_i = build_grid(spec.domain, nt_i, nx_i)
        f_i = (
            field
            if nt_i == grid.nt and nx_i == nx
            else solve_qvi(spec, g_i,
                           disable_stopping=bool(field.diagnostics.get("disable_stopping")))
        )
        probe = regularity_probe(f_i)
        entries.append({
            "nt": nt_i,
            "nx": nx_i,
            "lipschitz_x": probe.lipschitz_x,
            "holder_t": probe.holder_t,
        })
    changes = []
    for a, b in zip(entries, entries[1:]):
        changes.append({
            "lipschitz_x": abs(b["lipschitz_x"] - a["lipschitz_x"]) / max(a["lipschitz_x"], 1e-300),
            "holder_t": abs(b["holder_t"] - a["holder_t"]) / max(a["holder_t"], 1e-300),
        })
    ok = all(c["lipschitz_x"] <= 0.25 and c["holder_t"] <= 0.25 for c in changes)
    if not args.no_figures:
        figures.save_refinement_figure(
            [e["nt"] for e in entries],
            [e["lipschitz_x"] for e in entries],
            out / "regularity_probes.png",
            "spatial difference-quotient probe",
        )
    return {"levels": entries, "changes": changes, "passed": bool(ok and changes)}


def cmd_verify(args) -> int:
    spec = read_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    field = None
    if args.mode in ("oracle", "mc", "dpp", "regularity"):
        if not args.field:
            print(f"verify --mode {args.mode} requires --field", file=sys.stderr)
            return EXIT_USAGE
        field = _load_field(args.field)
    if args.mode == "assumptions":
        report = _verify_assumptions(spec, args)
    elif args.mode == "oracle":
        report = _verify_oracle(spec, field, args, out)
    elif args.mode == "mc":
        report = _verify_mc(spec, field, args, out)
    elif args.mode == "dpp":
        report = _verify_dpp(spec, field, args, out)
    else:
        report = _verify_regularity(spec, field, args, out)
    report["mode"] = args.mode
    report["seed"] = args.seed
    serialize.write_json(report, out / f"verify_{args.mode}.json")
    status = "pass" if report["passed"] else "FAIL"
    print(f"verify {args.mode}: {status}")
    return EXIT_OK if report["passed"] else EXIT_USAGE


def cmd_validate(args) -> int:
    spec = read_spec(args.spec)
    rep = validate_assumptions(spec, args.n_probe)
    lines = [f"probes: {rep.n_probe}"]
    for name, val in rep.checks.items():
        verdict = "skipped" if val is None else ("pass" if val else "FAIL")
        lines.append(f"{name}: {verdict} ({rep.details.get(name, '')})")
    for name, val in rep.lipschitz.items():
        lines.append(f"lipschitz[{name}]: {val:.6g}")
    for name, val in rep.growth.items():
        lines.append(f"growth[{name}]: {val:.6g}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        serialize.write_json(
            {
                "checks": {k: (None if v is None else bool(v)) for k, v in rep.checks.items()},
                "details": rep.details,
                "lipschitz": rep.lipschitz,
                "growth": rep.growth,
                "passed": rep.all_passed,
            },
            out / "validate.json",
        )
    return EXIT_OK if rep.all_passed else EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the documented contract is 1
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    handlers = {
        "solve": cmd_solve,
        "oracle": cmd_oracle,
        "simulate": cmd_simulate,
        "verify": cmd_verify,
        "validate": cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except _USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
