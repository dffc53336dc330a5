"""Command-line surface: simulate, filter-solve, constants, study, verify.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 invariant violation.
Option precedence: command-line flags > config file > built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .cli_io import (
    FLOAT_FMT,
    ConfigError,
    SnapshotError,
    format_config,
    load_config,
    parse_config,
    read_ledger_csv,
    read_snapshot,
    write_ledger_csv,
    write_snapshot,
)
from .constants import compute_chain, fractal_dimension_bound
from .evolution import ContractionError, EnergyInequalityError, initial_state, simulate
from .experiments import StudyAborted, default_spec, run_study
from .filters import FilterConvergenceError, solve_filter, verify_h1_bound, verify_h2_bound
from .spectral import EPS_DIV, GridMismatchError, sobolev_norm

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("nsalpha")

# shorthand flags and the config keys they override
_FLAGS = {
    "N": "grid.N",
    "L": "grid.L",
    "nu": "physics.nu",
    "alpha": "physics.alpha",
    "beta": "physics.beta",
    "indicator": "physics.indicator",
    "kappa": "physics.kappa",
    "T": "time.T",
    "dt": "time.dt",
    "scheme": "time.scheme",
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def _emit(key: str, value) -> None:
    print(f"{key}={_fmt(value)}")


def _overrides(args) -> dict:
    out = {}
    for name, dotted in _FLAGS.items():
        v = getattr(args, name, None)
        if v is not None:
            out[dotted] = v
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([f"--set expects SECTION.KEY=VALUE, got {item!r}"])
        out[key.strip()] = value.strip()
    return out


def _config(args):
    ov = _overrides(args)
    if getattr(args, "config", None):
        return load_config(args.config, ov)
    return parse_config("", ov)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.print_config:
        print(format_config(cfg), end="")
    out = Path(args.out)
    snap_dir = out / cfg.output["snapshot_dir"]
    snap_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.torus()
    problem = cfg.filter_problem(grid)
    forcing = cfg.forcing_spec(grid)
    step_cfg = cfg.step_config()
    every = cfg.output["snapshot_interval"]
    counter = {"n": 0}

    def snap(state):
        counter["n"] += 1
        if every and counter["n"] % every == 0:
            write_snapshot(state.u, state.t, snap_dir / f"step_{counter['n']:06d}.bin")

    state = initial_state(cfg.initial_field(grid), problem, forcing, step_cfg)
    ledger_path = out / cfg.output["ledger"]
    state = simulate(state, step_cfg, forcing, problem, steps=cfg.steps, callback=snap)
    final = snap_dir / "final.bin"
    write_snapshot(state.u, state.t, final)
    write_ledger_csv(state.ledger, ledger_path)
    rows = state.ledger.rows
    _emit("steps", cfg.steps)
    _emit("t", state.t)
    _emit("energy", rows[-1].energy)
    _emit("min_slack_margin", min(r.slack + r.allowance for r in rows))
    _emit("ledger", ledger_path)
    _emit("snapshot", final)
    return EXIT_OK


def cmd_filter_solve(args) -> int:
    cfg = _config(args)
    grid = cfg.torus()
    problem = cfg.filter_problem(grid)
    u = cfg.initial_field(grid)
    sol = solve_filter(problem, u, tol=args.tol)
    _emit("iterations", sol.iterations)
    _emit("residual", sol.residual)
    violated = False
    reports = [("h1_bound", lambda: verify_h1_bound(problem, u, sol)), ("h2_bound", lambda: verify_h2_bound(problem, u, sol))]
    for name, make in reports:
        try:
            rep = make()
        except ValueError as exc:
            _emit(f"{name}.skipped", str(exc))
            continue
        for key in ("measured", "bound", "explicit", "fudge"):
            _emit(f"{name}.{key}", getattr(rep, key))
        _emit(f"{name}.ratio", rep.ratio)
        _emit(f"{name}.violated", rep.violated)
        violated |= rep.violated
    return EXIT_INVARIANT if violated else EXIT_OK


def cmd_constants(args) -> int:
    cfg = _config(args)
    params = cfg.model_params()
    rep = compute_chain(params)
    for key, value in rep.as_dict().items():
        _emit(key, value)
    dim = fractal_dimension_bound(params)
    _emit("envelope_log10", dim.envelope_log10)
    return EXIT_OK


def cmd_study(args) -> int:
    if args.config:
        cfg = load_config(args.config, _overrides(args))
        if cfg.study["kind"] and cfg.study["kind"] != args.kind:
            raise ConfigError([f"[study] kind = {cfg.study['kind']} but {args.kind} was requested"])
        spec = cfg.study_spec(args.kind)
        if not spec.params:
            spec = type(spec)(args.kind, default_spec(args.kind).params, spec.scenario, spec.tolerances)
    else:
        if _overrides(args):
            cfg = parse_config("", _overrides(args))
            spec = type(default_spec(args.kind))(args.kind, default_spec(args.kind).params, cfg.scenario())
        else:
            spec = default_spec(args.kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{args.kind}.csv"
    try:
        res = run_study(spec, workers=args.workers)
    except StudyAborted as exc:
        exc.partial.write_csv(csv_path)
        print(exc.partial.verdict_text(), end="")
        raise
    res.write_csv(csv_path)
    (out / f"{args.kind}_verdict.txt").write_text(res.verdict_text())
    print(res.verdict_text(), end="")
    _emit("csv", csv_path)
    return EXIT_OK if res.verdict else EXIT_INVARIANT


def _verify_checks(u, t_snap, rows):
    grid = u.grid
    checks = {}
    kmax = float(np.max(grid.kmag))
    checks["divergence_free"] = u.max_divergence() <= EPS_DIV * max(np.abs(u.coeffs).max(), 1e-300) * kmax * 10
    checks["dealiased"] = bool(np.all(u.coeffs[:, ~grid.dealias_mask] == 0))
    checks["ledger_nonempty"] = len(rows) > 0
    checks["ledger_finite"] = all(all(math.isfinite(getattr(r, k)) for k in ("t", "energy", "dissipation", "work", "slack", "allowance")) for r in rows)
    checks["time_increasing"] = all(b.t > a.t for a, b in zip(rows, rows[1:]))
    checks["dissipation_nondecreasing"] = all(b.dissipation >= a.dissipation for a, b in zip(rows, rows[1:]))
    checks["energy_inequality"] = all(r.slack >= -r.allowance for r in rows)
    e0 = rows[0].energy if rows else 0.0
    checks["slack_consistent"] = all(
        abs(e0 + r.work - r.energy - r.dissipation - r.slack) <= 1e-9 * max(e0, r.energy, 1e-300) for r in rows)
    match = [r for r in rows if abs(r.t - t_snap) <= 1e-12 * max(1.0, abs(t_snap))]
    e_snap = sobolev_norm(u, 0) ** 2
    checks["snapshot_matches_ledger"] = bool(match) and abs(match[-1].energy - e_snap) <= 1e-12 * max(e_snap, 1e-300)
    return checks


def cmd_verify(args) -> int:
    grid = None
    if args.config:
        grid = load_config(args.config).torus()
    u, t = read_snapshot(args.snapshot, grid=grid)
    try:
        rows = read_ledger_csv(args.ledger)
    except (OSError, ValueError) as exc:
        raise ConfigError([f"cannot read ledger: {exc}"]) from None
    checks = _verify_checks(u, t, rows)
    for name, ok in checks.items():
        print(f"{name}={'PASS' if ok else 'FAIL'}")
    ok = all(checks.values())
    print(f"verdict={'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVARIANT


# ---------------------------------------------------------------- parser

def _add_overrides(p, with_config=True, config_optional=False):
    if with_config:
        if config_optional:
            p.add_argument("config", nargs="?", help="INI run configuration")
        else:
            p.add_argument("config", help="INI run configuration")
    for name, dotted in _FLAGS.items():
        p.add_argument(f"--{name}", metavar="V", help=f"override {dotted}")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsalpha", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate the model and write the energy ledger and snapshots")
    _add_overrides(p)
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--print-config", action="store_true", help="echo the canonical resolved config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter-solve", help="solve one filter problem and print the bound report")
    _add_overrides(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_filter_solve)

    p = sub.add_parser("constants", help="print the constant chain for a configuration")
    _add_overrides(p, config_optional=True)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("study", help="run a parameter study and write its CSV")
    p.add_argument("kind", choices=["alpha_to_zero", "beta_to_one", "continuous_dependence", "absorbing_set",
                                    "appendix_epsilon"])
    _add_overrides(p, config_optional=True)
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--workers", type=int, default=1, help="parameter points run concurrently")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("verify", help="check a snapshot and its ledger against the invariants")
    p.add_argument("snapshot")
    p.add_argument("ledger")
    p.add_argument("--config", help="reject snapshots from a different grid")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (SnapshotError, GridMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractionError, FilterConvergenceError, StudyAborted) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except EnergyInequalityError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
