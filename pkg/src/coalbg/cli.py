"""Command-line runner: figure datasets, cross-checks and single-module runs.

Every CSV is written with full double precision and ``NA`` for undefined
entries, next to a JSON manifest describing how it was produced.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from . import checks
from . import coalescent_mc as mc
from . import identity_ode as ode
from . import wf_exact
from .core import (
    FrequencyGrid,
    ModelParams,
    SampleState,
    load_config,
    params_from_mapping,
    params_to_mapping,
    to_diffusion_scale,
)
from .diffusion import stationary_density

FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5")


# output ---------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "NA"
        if math.isinf(v):
            raise ValueError("refusing to write a non-finite value")
        return "%.17g" % v
    return str(v)


class RunContext:
    """Collects outputs of one command and writes each CSV with its manifest."""

    def __init__(self, command: Sequence[str], out: Path, seed: int | None, params: ModelParams | None):
        self.command = list(command)
        self.out = out
        self.seed = seed
        self.params = params
        self.start = time.perf_counter()
        self.written: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, header: Sequence[str], rows: Iterable[Sequence], params: ModelParams | None = None,
              **settings) -> Path:
        path = self.out / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format_value(v) for v in row])
        prm = params if params is not None else self.params
        manifest = {
            "command": self.command,
            "output": path.name,
            "params": params_to_mapping(prm) if prm is not None else None,
            "scale": prm.scale if prm is not None else None,
            "seed": self.seed,
            "settings": settings,
            "version": __version__,
            "wall_time_s": time.perf_counter() - self.start,
        }
        with open(self.out / f"{name}.manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        self.written.append(path)
        return path


# parameters -----------------------------------------------------------------------


def _overrides(items: Sequence[str] | None) -> dict:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        out[key.strip()] = val.strip()
    return out


def resolve_params(args, base: ModelParams) -> ModelParams:
    prm = base
    if getattr(args, "config", None):
        prm = load_config(args.config, prm)
    sets = _overrides(getattr(args, "set", None))
    if sets:
        prm = params_from_mapping(sets, prm)
    return prm


def _grid(args) -> FrequencyGrid:
    return FrequencyGrid(args.grid)


# figures --------------------------------------------------------------------------


def _identity_rows(field: ode.TripleField):
    return field.to_rows()


def _density_rows(params: ModelParams, grid: FrequencyGrid):
    dens = stationary_density(params)
    return dens.to_rows(grid.points)


def figure(fig: str, args, ctx: RunContext) -> int:
    grid = _grid(args)
    if fig == "fig1":
        wf_params = resolve_params(args, checks.FIG1)
        if wf_params.N is None:
            raise ValueError("fig1 needs a population size N")
        vec = wf_exact.identity_fixed_point(wf_params)
        ctx.write("fig1_wf", ("j", "p", "f_PP", "f_PQ", "f_QQ"), vec.to_rows(), wf_params, tol=1e-10)
        # two readings of the per-generation values in diffusion units
        maps = {"wf": to_diffusion_scale(wf_params), "xN": to_diffusion_scale(wf_params.with_(scale="per_generation"))}
        for tag, d in maps.items():
            field = ode.solve_direct(d, grid)
            ctx.write(f"fig1_ode_{tag}", field.columns, _identity_rows(field), d, grid_interior=grid.n_interior)
            vals = field.values(vec.p)
            rows = []
            for k, (name, arr, pin) in enumerate((("f_PP", vec.f_PP, vec.pinned_PP), ("f_PQ", vec.f_PQ, None),
                                                 ("f_QQ", vec.f_QQ, vec.pinned_QQ))):
                ok = ~np.isnan(arr)
                free = ok & ~pin if pin is not None else ok
                e = float(np.max(np.abs(vals[k][free] - arr[free])))
                ep = float(np.max(np.abs(vals[k][pin] - arr[pin]))) if pin is not None else math.nan
                rows.append((name, e, ep, e <= 0.02))
            ctx.write(f"fig1_compare_{tag}", ("component", "sup_error", "pinned_error", "within_0.02"), rows, d,
                      grid_interior=grid.n_interior)
        ctx.write("fig1_density", ("p", "density"), _density_rows(maps["wf"], grid), maps["wf"],
                  grid_interior=grid.n_interior)
        return 0
    if fig in ("fig2", "fig3"):
        base = checks.FIG2 if fig == "fig2" else checks.FIG3
        prm = to_diffusion_scale(resolve_params(args, base))
        field = ode.solve_direct(prm, grid)
        ctx.write(f"{fig}_identity", field.columns, _identity_rows(field), prm, grid_interior=grid.n_interior)
        ctx.write(f"{fig}_density", ("p", "density"), _density_rows(prm, grid), prm, grid_interior=grid.n_interior)
        v = field.values()
        m = (field.nodes > 0) & (field.nodes <= 0.05)
        ordered = bool(np.all(v[ode.PP][m] >= v[ode.QQ][m]) and np.all(v[ode.QQ][m] >= v[ode.PQ][m]))
        print(f"{fig}: ordering f_PP >= f_QQ >= f_PQ near p=0: {'holds' if ordered else 'violated'}")
        return 0
    prm = to_diffusion_scale(resolve_params(args, checks.FIG2))
    s0 = [float(x) for x in args.s0.split(",")] if args.s0 else list(checks.SWEEP_S0)
    sweep = ode.selection_sweep(prm, s0, grid)
    b = ode.constant_p_baseline(prm.selection.p0 if prm.selection.kind == "balancing" else 0.5, prm)
    if fig == "fig4":
        ctx.write("fig4_sweep", ("s0", "avg_fbar", "Tbar_scaled"),
                  ((s.s0, s.avg_fbar, s.Tbar_scaled) for s in sweep), prm, grid_interior=grid.n_interior)
        ctx.write("fig4_baseline", ("convention", "fbar"),
                  (("constant_p_oracle", b.fbar), ("quoted", checks.QUOTED_BASELINE_FBAR)), prm)
    else:
        ctx.write("fig5_sweep", ("s0", "avg_fbar", "Tbar_scaled"),
                  ((s.s0, s.avg_fbar, s.Tbar_scaled) for s in sweep), prm, grid_interior=grid.n_interior)
        ctx.write("fig5_baseline", ("convention", "Tbar_scaled"),
                  (("constant_p_oracle", b.Tbar / 2.0), ("quoted", checks.QUOTED_BASELINE_TIME_N / 2.0)), prm)
    return 0


# commands -------------------------------------------------------------------------


def cmd_figure(args, ctx: RunContext) -> int:
    figs = FIGURES if args.id == "all" else (args.id,)
    for f in figs:
        figure(f, args, ctx)
    for p in ctx.written:
        print(p)
    return 0


def cmd_check(args, ctx: RunContext) -> int:
    results = checks.run_suite(args.suite)
    for r in results:
        print(r.line())
    rows = ((r.criterion, r.name, r.measured, r.threshold, r.passed if not r.informational else "info", r.detail)
            for r in results)
    ctx.write(f"check_{args.suite}", ("criterion", "check", "measured", "threshold", "pass", "detail"), rows)
    failed = [r.criterion for r in results if not r.informational and not r.passed]
    return failed[0] if failed else 0


def cmd_solve(args, ctx: RunContext) -> int:
    prm = to_diffusion_scale(resolve_params(args, checks.FIG2))
    grid = _grid(args)
    if args.what == "identity":
        field = ode.solve_direct(prm, grid, pairing=args.pairing)
        ctx.write("identity", field.columns, field.to_rows(), prm, grid_interior=grid.n_interior, pairing=args.pairing)
        print(f"stationary average of fbar: {ode.average_over_stationarity(field, stationary_density(prm)):.10f}")
    elif args.what == "iterative":
        res = ode.solve_iterative(prm, grid, tol=args.tol, pairing=args.pairing)
        ctx.write("identity_iterative", res.field.columns, res.field.to_rows(), prm, grid_interior=grid.n_interior,
                  tol=args.tol, iterations=res.iterations)
        print(f"iterations: {res.iterations}, monotone: {res.monotone}")
    elif args.what == "time":
        field = ode.mean_coalescence_times(prm, grid)
        ctx.write("mean_time", field.columns, field.to_rows(), prm, grid_interior=grid.n_interior)
        print(f"stationary average of Tbar: {ode.average_over_stationarity(field, stationary_density(prm)):.10f}")
    elif args.what == "cdf":
        cdf = ode.solve_time_dependent(prm, grid, dt=args.dt, horizon=args.horizon, laplace_nu=[prm.nu])
        rows = []
        for t, frame in zip(cdf.times, cdf.values):
            for k, p in enumerate(cdf.nodes):
                rows.append((t, p, frame[0, k], frame[1, k], frame[2, k]))
        ctx.write("cdf", ("t", "p", "F_PP", "F_PQ", "F_QQ"), rows, prm, grid_interior=grid.n_interior, dt=args.dt,
                  horizon=args.horizon)
        lap = cdf.laplace[prm.nu]
        ctx.write("cdf_laplace", ("p", "f_PP", "f_PQ", "f_QQ"),
                  ((p, lap[0, k], lap[1, k], lap[2, k]) for k, p in enumerate(cdf.nodes)), prm, dt=args.dt,
                  horizon=args.horizon)
    else:
        ctx.write("density", ("p", "density"), _density_rows(prm, grid), prm, grid_interior=grid.n_interior)
    return 0


def cmd_simulate(args, ctx: RunContext) -> int:
    prm = to_diffusion_scale(resolve_params(args, checks.FIG2))
    engine = mc.parse_engine(args.engine)
    initial = None if args.initial.lower() in ("random", "none") else SampleState.parse(args.initial)
    p0_range = None
    if args.p0_bin is not None:
        p0_range = mc.bin_containing(args.p0_bin, args.bins)
    reps = mc.run_replicates(prm, initial, args.replicates, args.seed, engine, p0_range, workers=args.workers)
    label = "bar" if initial is None else initial.label
    est = [mc.identity_estimate(reps, prm.nu, "fbar" if initial is None else f"f_{label}")]
    tv, tse = mc._mean_se(reps.times)
    est.append(mc.McEstimate("Tbar" if initial is None else f"T_{label}", tv, tse, len(reps), reps.seed, p0_range))
    settings = {"engine": str(engine), "initial": args.initial, "p0_range": p0_range, "replicates": args.replicates}
    ctx.write("estimate", mc.McEstimate.columns, (e.row() for e in est), prm, **settings)
    for e in est:
        print(f"{e.estimand}: {e.value:.6f} +- {e.std_error:.2e} ({e.replicates} replicates)")
    if args.times:
        ctx.write("replicates", ("replicate", "T", "p0", "n1", "n2", "jumps"),
                  zip(range(len(reps)), reps.times, reps.p0, reps.n1, reps.n2, reps.jumps), prm, **settings)
    return 0


def cmd_baseline(args, ctx: RunContext) -> int:
    prm = to_diffusion_scale(resolve_params(args, checks.FIG2))
    b = ode.constant_p_baseline(args.p0, prm)
    rows = [(k, getattr(b, k)) for k in ("f_PP", "f_PQ", "f_QQ", "fbar", "T_PP", "T_PQ", "T_QQ", "Tbar")]
    ctx.write("baseline", ("quantity", "value"), rows, prm, p0=args.p0)
    for k, v in rows:
        print(f"{k}: {v:.12g}")
    return 0


# parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coalbg", description="Genealogies of two genes linked to a selected locus.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="YAML parameter file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter (repeatable)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--grid", type=int, default=400, help="interior grid points")
        if seed:
            p.add_argument("--seed", type=int, default=12345)

    p = sub.add_parser("figure", help="datasets for one figure")
    p.add_argument("id", choices=FIGURES + ("all",))
    p.add_argument("--s0", help="comma-separated selection strengths for fig4/fig5")
    common(p)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("check", help="run a cross-validation suite")
    p.add_argument("suite", choices=sorted(checks.SUITES))
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="deterministic solvers")
    p.add_argument("what", choices=("identity", "iterative", "time", "cdf", "density"))
    p.add_argument("--pairing", choices=("dominant", "printed"), default="dominant")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--horizon", type=float, default=200.0)
    common(p, seed=False)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo estimates")
    p.add_argument("--engine", default="moran_exact(200)", help="moran_exact(N), euler(dt[,em]) or frozen(p0)")
    p.add_argument("--initial", default="random", help="PP, PQ, QQ or random")
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--p0-bin", type=float, default=None, help="condition p0 on the bin containing this value")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--times", action="store_true", help="also write the raw replicate table")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="constant-frequency structured coalescent")
    p.add_argument("--p0", type=float, default=0.5)
    common(p, seed=False)
    p.set_defaults(func=cmd_baseline)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    ctx = RunContext(["coalbg", *argv], Path(args.out), getattr(args, "seed", None), None)
    try:
        return int(args.func(args, ctx))
    except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"coalbg: error: {exc}", file=sys.stderr)
        return 2 if args.cmd != "check" else 99


if __name__ == "__main__":
    sys.exit(main())
