"""Command-line entry point: ``rlbranch <subcommand> --config PATH [options]``."""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import export
from .extinction import extinction_curve, phi_limit
from .model import ConfigError, ModelSpec, load_config, validate
from .renewal import (
    SubcriticalError, clt_variance, limit_functionals, malthusian, mean_measure, second_moment,
)
from .simulator import observables, run_ensemble, trajectory_seed
from .verify import (
    check_clt, check_distributional, check_first_moments, check_variance, suite_passed,
    verify_all,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INPUT = 0, 1, 2, 3

SOLVE_TARGETS = ("malthusian", "mean", "second-moment", "limits", "extinction", "phi")
VERIFY_TARGETS = ("first-moments", "distributional", "variance", "clt", "all")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="model configuration (JSON)")
    common.add_argument("--out", default="./out", help="output directory (default ./out)")
    common.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    common.add_argument("--trajectories", type=int, default=None,
                        help="Monte Carlo sample size (simulate: 1000, verify: 10000)")
    common.add_argument("--threads", type=int, default=1, help="worker processes, 0 = auto")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of grid outputs; reports are always JSON")

    p = argparse.ArgumentParser(prog="rlbranch", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check the model hypotheses")
    s = sub.add_parser("solve", parents=[common], help="deterministic solvers")
    s.add_argument("target", choices=SOLVE_TARGETS)
    sub.add_parser("simulate", parents=[common], help="simulate an ensemble of trajectories")
    v = sub.add_parser("verify", parents=[common], help="Monte Carlo checks against the solvers")
    v.add_argument("target", choices=VERIFY_TARGETS)
    sub.add_parser("report", parents=[common], help="bundle all artifacts of --out")
    return p


def _flags(args) -> dict:
    return {"config": str(args.config), "out": str(args.out), "seed": args.seed,
            "trajectories": args.trajectories, "threads": args.threads, "format": args.format}


def _seed(args) -> int:
    if not 0 <= args.seed < 2 ** 64:
        raise ValueError("--seed must be an unsigned 64-bit integer")
    return args.seed


class _Run:
    def __init__(self, args, spec: ModelSpec, out: Path):
        self.args = args
        self.spec = spec
        self.out = out
        self.files: list[Path] = []

    def add(self, path: Path):
        self.files.append(Path(path))

    def columns(self, name: str, cols: dict):
        self.add(export.write_columns(self.out / f"{name}.csv", cols, self.args.format))

    def json(self, name: str, obj):
        self.add(export.write_json(self.out / f"{name}.json", obj))

    def manifest(self, stem: str, command: list):
        export.write_manifest(self.out, stem, spec_hash=self.spec.spec_hash, seed=self.args.seed,
                              command=command, flags=_flags(self.args), files=self.files)


# ---------------------------------------------------------------------------


def _grid_columns(grid, gamma=None) -> dict:
    n = len(grid.t)
    return {"t": grid.t, "rho": grid["rho"], "z": grid["z"], "M_f": grid["M_f"],
            "Gamma_f": gamma if gamma is not None else [None] * n}


def _solve(run: _Run, target: str):
    spec = run.spec
    if target == "malthusian":
        run.json("malthusian", malthusian(spec).to_dict())
    elif target == "mean":
        grid = mean_measure(spec)
        run.columns("grid", _grid_columns(grid))
    elif target == "second-moment":
        sol = _maybe_sol(spec)
        sm = second_moment(spec, sol, mean_measure(spec, sol))
        g = sm.grid
        run.columns("grid", _grid_columns(g, g["Gamma_f"]))
        run.columns("second_moment", {"t": g.t, "Q2": g["Q2"], "Gamma_f": g["Gamma_f"],
                                      "Var_f": g["Var_f"]})
        if sol is not None:
            cv = clt_variance(spec, sol, spec.sim["clt_s0"], sm)
            run.json("clt_variance", cv.to_dict())
    elif target == "limits":
        sol = malthusian(spec)
        lim = limit_functionals(spec, sol)
        run.json("limits", {**sol.to_dict(), **lim.to_dict()})
        x = spec.disc.node.x
        run.columns("limit_curves", {"x": x, "A": lim.A_curve(x), "V": lim.V_curve(x),
                                     "sigma": lim.sigma_curve(x), "omega": lim.omega(x)})
    elif target == "extinction":
        res = extinction_curve(spec)
        run.json("extinction", res.to_dict())
        run.columns("q_curve", {"t": res.q_curve.t, "q_t": res.q_curve["q_t"]})
    elif target == "phi":
        sol = malthusian(spec)
        curve = phi_limit(spec, sol)
        run.columns("phi", {"theta": curve.theta, "phi": curve.phi, "residual": curve.residual})
        run.json("phi_summary", {"c_slope": curve.c_slope, "horizon": curve.horizon,
                                 "converged": curve.converged,
                                 "max_abs_residual": float(np.max(np.abs(curve.residual)))})


def _maybe_sol(spec):
    try:
        return malthusian(spec)
    except SubcriticalError:
        return None


class _TrajRows:
    def __init__(self, spec, alpha_tilde):
        self.spec = spec
        self.a = alpha_tilde

    def __call__(self, res, rng):
        rows = []
        for s in res.snapshots:
            ob = observables(s, self.spec.f, self.a)
            rows.append((s.t, ob["pop"], ob["sum_f"], ob["W_f"], ob["A_f"]))
        return {"rows": rows, "extinct": res.extinct, "truncated": res.truncated}


def _simulate(run: _Run):
    spec, args = run.spec, run.args
    sol = _maybe_sol(spec)
    a = sol.alpha_tilde if sol is not None else 0.0
    n = args.trajectories or 1000
    seed = _seed(args)
    recs = run_ensemble(spec, sol, n, seed, spec.sim["obs_times"], max_pop=spec.sim["max_pop"],
                        reducer=_TrajRows(spec, a), threads=args.threads)
    header = ["traj", "seed", "t", "pop", "sum_f", "W_f", "A_f", "extinct", "truncated"]
    rows = []
    for i, r in enumerate(recs):
        ts = trajectory_seed(seed, i)
        for t, pop, sf, w, af in r["rows"]:
            rows.append((i, ts, t, pop, sf, w, af, r["extinct"], r["truncated"]))
    if args.format == "json":
        run.json("trajectories", {"columns": header, "rows": [list(x) for x in rows]})
    else:
        run.add(export.write_csv(run.out / "trajectories.csv", header, rows))
    run.json("ensemble", {"master_seed": seed, "trajectories": n, "spec_hash": spec.spec_hash,
                          "alpha_tilde": a, "obs_times": spec.sim["obs_times"],
                          "extinct": sum(r["extinct"] for r in recs),
                          "truncated": sum(r["truncated"] for r in recs)})


def _verify(run: _Run, target: str) -> int:
    spec, args = run.spec, run.args
    n = args.trajectories or 10000
    seed = _seed(args)
    sim = spec.sim
    mp = sim["max_pop"]
    sol = malthusian(spec)
    if target == "all":
        groups = verify_all(spec, sol, n, seed, args.threads, mp)
    elif target == "first-moments":
        groups = {target: check_first_moments(spec, sol, sim["first_moment_times"], n, seed,
                                              args.threads, mp)}
    elif target == "distributional":
        groups = {target: check_distributional(spec, sol, sim["distributional_t"], n, seed,
                                               args.threads, mp)}
    elif target == "variance":
        groups = {target: [check_variance(spec, sol, sim["variance_t"], n, seed,
                                          args.threads, mp)]}
    else:
        groups = {target: check_clt(spec, sol, sim["clt_t"], sim["clt_s0"], n, seed,
                                    args.threads, mp)}
    ok = True
    summary = {}
    for name, reps in groups.items():
        passed = suite_passed(reps)
        ok &= passed
        summary[name] = passed
        run.json(f"verify-{name}", {"check": name, "pass": passed,
                                    "reports": [r.to_dict() for r in reps]})
        for r in reps:
            tag = "diag" if r.diagnostic else ("PASS" if r.passed else "FAIL")
            print(f"[{tag}] {r.name}: estimate={_short(r.estimate)} target={_short(r.target)} "
                  f"statistic={_short(r.statistic)}")
    run.json(f"verify-{target}-summary", {"pass": ok, "groups": summary})
    return EXIT_OK if ok else EXIT_FAIL


def _short(v):
    if v is None:
        return "-"
    return format(float(v), ".6g")


def _report(run: _Run):
    out = run.out
    bundle = {"spec_hash": run.spec.spec_hash, "artifacts": {}}
    import json
    for p in sorted(out.iterdir()):
        if not p.is_file() or p.name == "summary.json" or p.name.startswith("summary."):
            continue
        entry = {"sha256": export.sha256(p), "bytes": p.stat().st_size}
        if p.suffix == ".json":
            try:
                entry["content"] = json.loads(p.read_text(encoding="utf-8"))
            except ValueError:
                entry["content"] = None
        elif p.suffix == ".csv":
            with open(p, encoding="utf-8") as fh:
                header = fh.readline().strip().split(",")
                entry["columns"] = header
                entry["rows"] = sum(1 for _ in fh)
        bundle["artifacts"][p.name] = entry
    run.json("summary", bundle)


# ---------------------------------------------------------------------------


def run_cli(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        spec = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        out = export.ensure_dir(args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    run = _Run(args, spec, out)
    status = EXIT_OK
    try:
        if args.command == "validate":
            rep = validate(spec)
            sys.stdout.write(export.dumps(rep.to_dict()))
            return EXIT_OK if rep.passed else EXIT_FAIL
        if args.command == "solve":
            _solve(run, args.target)
            stem, command = f"solve-{args.target}", ["solve", args.target]
        elif args.command == "simulate":
            _simulate(run)
            stem, command = "simulate", ["simulate"]
        elif args.command == "verify":
            status = _verify(run, args.target)
            stem, command = f"verify-{args.target}", ["verify", args.target]
        else:
            _report(run)
            stem, command = "report", ["report"]
    except (SubcriticalError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    run.manifest(stem, command)
    for f in run.files:
        print(f)
    return status


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
