"""scaling-limit-lab command line: simulate, solve-pde, compare, roc, potential.

Exit codes: 0 success, 1 comparison outside its z bound, 2 invalid input,
3 numerical failure (divergence, fixed point or solver failure).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import experiments as ex
from ._csv import write_rows
from .config import ExperimentConfig, load_config, write_resolved
from .fixed_point import FixedPointError, solve_scaling_limit_pde
from .fokker_planck import SolverError
from .measure import Grid, OrderParameterPath, write_fields_csv
from .metrics import compare_sim_to_pde, roc_point
from .oracles import effective_potential
from .simulate import (DegenerateNormalizationError, DivergenceError, TrajectoryRecord, read_records_csv,
                       run_pca, run_regression, toy_sgd_1d_run, trial_seed, write_records_csv)

EXIT_OK, EXIT_COMPARE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    pass


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("SLL_THREADS")
    return max(1, int(env)) if env else 1


def _load(args) -> ExperimentConfig:
    if args.config is None:
        raise InputError("--config is required")
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        raise InputError(f"config file {args.config} not found") from None
    except json.JSONDecodeError as err:
        raise InputError(f"{args.config}: invalid JSON ({err})") from None
    except ValidationError as err:
        lines = [f"  {'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in err.errors()]
        raise InputError(f"{args.config}: invalid config\n" + "\n".join(lines)) from None
    updates = {}
    if args.seed is not None:
        updates["simulation"] = cfg.simulation.model_copy(update={"seed": args.seed})
    if args.out is not None:
        updates["outputs"] = cfg.outputs.model_copy(update={"dir": args.out})
    return cfg.model_copy(update=updates) if updates else cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.outputs.dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out / "resolved_config.json")
    return out


# ---------------------------------------------------------------- simulate


def _run_trial(cfg: ExperimentConfig, i: int) -> TrajectoryRecord:
    model, sim = cfg.model, cfg.simulation
    seed = trial_seed(sim.seed, i)
    snaps = sim.snapshot_times if cfg.outputs.snapshots else ()
    if model.kind == "regression":
        return run_regression(sim.n, sim.T, ex.regression_model(model), ex.vector_spec(model.x0),
                              ex.vector_spec(model.xi), seed, sim.times(), snaps, sim.backend)
    return run_pca(sim.n, sim.T, ex.pca_model(model), ex.vector_spec(model.x0), ex.vector_spec(model.xi),
                   seed, sim.times(), snaps, sim.backend)


def _simulate_toy(cfg: ExperimentConfig, out: Path) -> int:
    from .simulate import make_vector

    model, sim = cfg.model, cfg.simulation
    edges = np.asarray(sim.hist_edges or np.linspace(-3, 3, 61), dtype=float)
    spec = ex.vector_spec(model.x0)
    res = toy_sgd_1d_run(ex.f_prime(model), model.tau, model.sigma, sim.n, sim.T,
                         lambda rng, size: make_vector(spec, size, rng), sim.trials, sim.seed, sim.times(), edges)
    rows = []
    for t, h in zip(res.times, res.histograms):
        rows.extend((float(t), float(a), float(b), float(d)) for a, b, d in zip(edges[:-1], edges[1:], h))
    write_rows(out / "histograms.csv", ("t", "x_left", "x_right", "density"), rows)
    rec = TrajectoryRecord(res.times, {"mean": res.samples.mean(axis=1), "var": res.samples.var(axis=1)},
                           seed=sim.seed)
    rec.write_csv(out / "trajectories.csv")
    print(f"toy_sgd trials={sim.trials} t={res.times[-1]:g} mean={rec.observables['mean'][-1]:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    if cfg.model.kind == "toy_sgd":
        return _simulate_toy(cfg, out)
    if cfg.model.kind not in ("regression", "pca"):
        raise InputError(f"simulate does not support model kind {cfg.model.kind!r}")
    trials = cfg.simulation.trials
    records: list = [None] * trials
    failure = None

    def job(i):
        try:
            records[i] = _run_trial(cfg, i)
        except (DivergenceError, DegenerateNormalizationError) as err:
            return i, err
        return i, None

    threads = _threads(args.threads)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, range(trials)))
    else:
        results = [job(i) for i in range(trials)]
    done = [r for r in records if r is not None]
    write_records_csv(out / "trajectories.csv", done)
    for i, rec in enumerate(records):
        if rec is None:
            continue
        if rec.snapshots:
            rec.write_snapshots_csv(out / f"snapshots_trial{i}.csv")
        last = {k: v[-1] for k, v in rec.observables.items()}
        summary = " ".join(f"{k}={v:.6g}" for k, v in last.items())
        print(f"trial {i} seed {rec.seed} t={rec.times[-1]:g} {summary}")
    for i, err in results:
        if err is not None:
            failure = failure or (i, err)
    if failure:
        i, err = failure
        print(f"error: trial {i} failed: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------- PDE


def _solve(cfg: ExperimentConfig, save_times, threads):
    spec, mu0 = ex.pde_problem(cfg)
    s = cfg.solver
    return solve_scaling_limit_pde(spec, mu0, s.T, s.tol, s.max_iter, s.delta_T, s.dt, save_times, s.theta,
                                   threads)


def cmd_solve_pde(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    save = sorted(set(cfg.solver.save_times) | {0.0, cfg.solver.T})
    try:
        sol = _solve(cfg, save, _threads(args.threads))
    except FixedPointError as err:
        err.report.write_json(out / "fixed_point_report.json")
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    write_fields_csv(out / "fields.csv", sol.fields)
    if sol.path.r:
        sol.path.write_csv(out / "order_params.csv")
    sol.report.write_json(out / "fixed_point_report.json")
    its = sol.report.iterations_per_interval
    print(f"solved {cfg.model.kind} to T={cfg.solver.T:g}: {len(its)} intervals, "
          f"max iterations {max(its)}, final distance {sol.report.final_sup_distance:.3e}")
    return EXIT_OK


def cmd_roc(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    roc = cfg.outputs.roc
    sol = _solve(cfg, roc.times, _threads(args.threads))
    atoms = sol.fields[0].atoms
    xi_on = roc.xi_on if roc.xi_on is not None else float(atoms.values[np.argmax(np.abs(atoms.values))])
    rho = float(atoms.weights[atoms.index_of(xi_on)])
    cs = np.linspace(roc.c.min, roc.c.max, roc.c.num)
    rows = []
    for f in sol.fields:
        for c in cs:
            p = roc_point(f, c, rho, xi_on)
            rows.append((f.t, p.c, p.tpr, p.fpr))
    write_rows(out / "roc.csv", ("t", "c", "tpr", "fpr"), rows)
    print(f"roc: {len(sol.fields)} times x {cs.size} thresholds")
    return EXIT_OK


def cmd_potential(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    pc = cfg.outputs.potential
    phi = ex.regularizer(cfg.model)
    Phi = phi.Phi  # the sweep supplies the strength
    if pc.xi_value is not None:
        xi = pc.xi_value
    else:
        xi = float(np.max(ex.xi_atoms(cfg.model.xi).values))
    grid = Grid(pc.x_min, pc.x_max, pc.m)
    rows, counts = [], []
    for beta in pc.betas:
        E, minima = effective_potential(cfg.model.tau, beta, Phi, xi, grid)
        counts.append((beta, minima.size, " ".join(f"{x:.17g}" for x in minima)))
        rows.extend((beta, float(x), float(e), minima.size) for x, e in zip(grid.x, E))
    write_rows(out / "potential.csv", ("beta", "x", "E", "minima_count"), rows)
    write_rows(out / "minima.csv", ("beta", "minima_count", "locations"), counts)
    for beta, k, _ in counts:
        print(f"beta={beta:g} minima={k}")
    return EXIT_OK


# ---------------------------------------------------------------- compare


def cmd_compare(args) -> int:
    cc = None
    if args.config is not None:
        cfg = _load(args)
        cc = cfg.outputs.compare
        out = _outdir(cfg)
    else:
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
    sims = args.sim or (cc.sim if cc else [])
    pde = args.pde or (cc.pde if cc else None)
    observable = args.observable or (cc.observable if cc else "mse")
    param = args.param or (cc.param if cc else None)
    z_bound = args.z_bound if args.z_bound is not None else (cc.z_bound if cc else 4.0)
    if not sims or not pde:
        raise InputError("compare needs simulation CSVs (--sim) and a PDE order-parameter CSV (--pde)")
    try:
        records = [r for path in sims for r in read_records_csv(path)]
        path = OrderParameterPath.read_csv(pde)
        report = compare_sim_to_pde(records, path, observable, param, z_bound)
    except (ValueError, KeyError, FileNotFoundError) as err:
        raise InputError(str(err)) from None
    report.write_csv(out / "compare.csv")
    report.write_json(out / "compare.json")
    print(f"compare {observable}: {report.trials} trials, max |z| = {report.max_abs_z:.3g} "
          f"({'pass' if report.passed else 'FAIL'} at bound {z_bound:g})")
    return EXIT_OK if report.passed else EXIT_COMPARE


COMMANDS = {
    "simulate": cmd_simulate,
    "solve-pde": cmd_solve_pde,
    "compare": cmd_compare,
    "roc": cmd_roc,
    "potential": cmd_potential,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scaling-limit-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config")
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--sim", nargs="+", help="compare: trajectory CSV files")
    ap.add_argument("--pde", help="compare: order-parameter CSV")
    ap.add_argument("--observable")
    ap.add_argument("--param")
    ap.add_argument("--z-bound", type=float)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (FixedPointError, SolverError, DivergenceError, DegenerateNormalizationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
