"""Drift-diffusion solver for the limiting PDE with a frozen order-parameter path.

Each xi-atom density evolves under

    dp/dt = -d/dx (G p) + (Lambda/2) d^2p/dx^2

discretized with Chang-Cooper (exponentially fitted) interface fluxes, a
theta time scheme (Crank-Nicolson by default) and zero-flux ends.  The control
volumes coincide with the trapezoid weights of the grid, so trapezoid mass is
conserved to roundoff.  ``solve_frozen`` propagates a density under a given
Q path; the order parameters of the result are computed on the fly.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .algorithms import AlgorithmSpec
from .measure import DensityField, Grid, OrderParameterPath, density_field_eval

DEFAULT_M = 1025
DEFAULT_DT = 1e-3
MAX_DT = 0.1
MASS_TOL = 1e-8
_BLOCK_VALUES = 1 << 20  # interface velocities evaluated per block


class SolverError(RuntimeError):
    def __init__(self, msg, atom=None, step=None):
        super().__init__(msg)
        self.atom, self.step = atom, step


class ConservationError(SolverError):
    pass


def _check_dt(dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > MAX_DT:
        raise ValueError(f"dt={dt} exceeds the maximum {MAX_DT}")


def _check_theta(theta):
    if not 0.5 <= theta <= 1.0:
        raise ValueError("theta must lie in [0.5, 1]")


def fp_step(field: DensityField, drift: Callable, diffusion_coeff: float, dt: float,
            theta: float = 0.5) -> DensityField:
    """One theta-scheme step with drift G(x, xi) and constant diffusion Lambda."""
    _check_dt(dt)
    _check_theta(theta)
    if not diffusion_coeff >= 0:
        raise ValueError("diffusion coefficient must be >= 0")
    grid = field.grid
    xf = grid.interfaces
    D = np.full(2, 0.5 * diffusion_coeff)
    out = np.array(field.densities)
    empty_w = np.zeros((0, grid.m))
    no_rows = np.zeros(0, dtype=np.int64)
    for a, xi in enumerate(field.atoms.values):
        v = np.broadcast_to(np.asarray(drift(xf, xi), dtype=float), xf.shape)
        V = np.ascontiguousarray(np.broadcast_to(v, (2, xf.size)))
        diag = np.zeros(4)
        p = out[a]
        bad = _kernels.fp_sweep(p, V, D, grid.dx, dt, theta, 1, empty_w, 0, np.zeros((1, 0)),
                                no_rows, np.zeros((0, grid.m)), diag)
        if bad >= 0:
            raise SolverError(f"singular tridiagonal system for atom {a} (xi={xi})", atom=a)
        if diag[0] > MASS_TOL:
            raise ConservationError(f"atom {a} (xi={xi}) changed mass by {diag[0]:.3e} in one step", atom=a)
    return field.with_densities(out, field.t + dt)


@dataclass(frozen=True)
class FrozenPdeProblem:
    spec: AlgorithmSpec
    q_path: OrderParameterPath
    t_start: float
    t_end: float
    dt: float = DEFAULT_DT

    def __post_init__(self):
        _check_dt(self.dt)
        if self.t_end < self.t_start:
            raise ValueError("t_end must be >= t_start")
        eps = 1e-9 * max(1.0, abs(self.t_end))
        if self.t_start < self.q_path.t0 - eps or self.t_end > self.q_path.t_end + eps:
            raise ValueError(
                f"q_path covers [{self.q_path.t0}, {self.q_path.t_end}] but the problem needs "
                f"[{self.t_start}, {self.t_end}]"
            )
        if self.dt > self.q_path.dt * (1 + 1e-12):
            raise ValueError("solver dt must not exceed the path spacing")
        if self.spec.r != self.q_path.r:
            raise ValueError(f"spec has {self.spec.r} order parameters, path has {self.q_path.r}")

    @property
    def nsteps(self) -> int:
        span = self.t_end - self.t_start
        k = int(round(span / self.dt))
        if abs(k * self.dt - span) > 1e-9 * max(1.0, span):
            raise ValueError(f"interval length {span} is not a multiple of dt={self.dt}")
        return k


@dataclass
class FrozenSolution:
    fields: list  # DensityField at the saved times
    path: OrderParameterPath | None  # order parameters of the solution
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> DensityField:
        return self.fields[-1]


def _stride(problem: FrozenPdeProblem, nsteps: int) -> int:
    s = int(round(problem.q_path.dt / problem.dt))
    if s >= 1 and abs(s * problem.dt - problem.q_path.dt) <= 1e-9 * problem.q_path.dt and nsteps % s == 0:
        return s
    return 1


def _evolve_atom(spec, xi, p, grid, Q, D, dt, theta, stride, save_rows, probe_w):
    """Run one atom through all steps; returns (probes, saved densities, diag, fail step)."""
    m = grid.m
    xf = grid.interfaces
    nsteps = Q.shape[0] - 1
    block = max(stride, (_BLOCK_VALUES // m) // stride * stride)
    probes = np.empty((nsteps // stride + 1, probe_w.shape[0]))
    probes[0] = probe_w @ p
    saved = np.empty((len(save_rows), m))
    diag = np.zeros(4)
    nsaved = 0
    for k0 in range(0, nsteps, block):
        k1 = min(nsteps, k0 + block)
        V = np.ascontiguousarray(np.broadcast_to(spec.G(xf[None, :], xi, Q[k0:k1 + 1, None, :]), (k1 - k0 + 1, m - 1)))
        rel = np.array([s - k0 for s in save_rows if k0 < s <= k1 or (s == 0 and k0 == 0)], dtype=np.int64)
        out = np.empty((rel.size, m))
        pout = np.empty(((k1 - k0) // stride + 1, probe_w.shape[0]))
        bad = _kernels.fp_sweep(p, V, D[k0:k1 + 1], grid.dx, dt, theta, k1 - k0, probe_w, stride, pout, rel, out, diag)
        if bad >= 0:
            return probes, saved, diag, k0 + bad
        probes[k0 // stride + 1: k1 // stride + 1] = pout[1:]
        saved[nsaved:nsaved + rel.size] = out
        nsaved += rel.size
    return probes, saved, diag, -1


def solve_frozen(problem: FrozenPdeProblem, initial: DensityField, save_times: Sequence[float] | None = None,
                 theta: float = 0.5, threads: int = 1) -> FrozenSolution:
    """Propagate ``initial`` over [t_start, t_end] with Q frozen to the given path.

    Q is interpolated piecewise-linearly at every solver step and clipped to
    [-b, b].  The returned path holds the order parameters of the computed
    densities on the q_path grid (or every step when the spacings do not
    nest).  Fields are saved at ``save_times`` (default: every path node).
    """
    _check_theta(theta)
    spec = problem.spec
    nsteps = problem.nsteps
    t0, dt = problem.t_start, problem.dt
    if nsteps == 0:
        return FrozenSolution([initial.with_densities(initial.densities, t0)], None, {"steps": 0})
    stride = _stride(problem, nsteps)
    times = t0 + dt * np.arange(nsteps + 1)
    if save_times is None:
        save_rows = list(range(0, nsteps + 1, stride))
    else:
        save_rows = sorted({int(round((t - t0) / dt)) for t in save_times})
        if save_rows and (save_rows[0] < 0 or save_rows[-1] > nsteps):
            raise ValueError("save times must lie in [t_start, t_end]")
    Q = spec.capped(problem.q_path.at(times)) if spec.r else np.zeros((nsteps + 1, 0))
    D = 0.5 * spec.Lam(Q)
    grid = initial.grid
    h = grid.weights
    atoms = initial.atoms

    def run(a):
        xi = float(atoms.values[a])
        probe_w = np.ascontiguousarray(spec.probe(grid.x, xi) * h)
        return _evolve_atom(spec, xi, np.array(initial.densities[a]), grid, Q, D, dt, theta, stride,
                            save_rows, probe_w)

    if threads > 1 and len(atoms) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, range(len(atoms))))
    else:
        results = [run(a) for a in range(len(atoms))]

    diag = {"steps": nsteps, "dt": dt, "theta": theta, "max_step_mass_change": 0.0, "clip_count": 0,
            "clipped_mass": 0.0, "atoms": []}
    for a, (_, _, d, fail) in enumerate(results):
        if fail >= 0:
            raise SolverError(f"singular tridiagonal system for atom {a} at step {fail} (t={times[fail]})",
                              atom=a, step=fail)
        diag["max_step_mass_change"] = max(diag["max_step_mass_change"], float(d[0]))
        diag["clip_count"] += int(d[1])
        diag["clipped_mass"] += float(d[2])
        diag["atoms"].append({"xi": float(atoms.values[a]), "max_step_mass_change": float(d[0]),
                              "clip_count": int(d[1]), "clipped_mass": float(d[2])})
    if diag["max_step_mass_change"] > MASS_TOL:
        worst = int(np.argmax([r[2][0] for r in results]))
        raise ConservationError(
            f"atom {worst} changed mass by {diag['max_step_mass_change']:.3e} in one step", atom=worst)

    fields = [
        initial.with_densities(np.array([r[1][j] for r in results]), float(times[s]))
        for j, s in enumerate(save_rows)
    ]
    path = None
    if spec.r:
        vals = sum(w * r[0] for w, r in zip(atoms.weights, results))
        path = OrderParameterPath(t0, stride * dt, vals, spec.param_names)
    return FrozenSolution(fields, path, diag)


def order_params_from_density(fields: Sequence[DensityField], p_functions: Sequence[Callable],
                              names: Sequence[str] = ()) -> OrderParameterPath:
    """Q(t_j)(l) = <fields[j], p_l>; the fields must sit on a uniform time grid.

    A single field gives a two-node constant path of unit spacing.
    """
    if not fields:
        raise ValueError("need at least one field")
    vals = np.array([[density_field_eval(f, p) for p in p_functions] for f in fields], dtype=float)
    ts = np.array([f.t for f in fields])
    if len(fields) == 1:
        return OrderParameterPath(ts[0], 1.0, np.vstack([vals, vals]), tuple(names))
    dt = (ts[-1] - ts[0]) / (len(ts) - 1)
    if not dt > 0 or not np.allclose(np.diff(ts), dt, rtol=1e-9, atol=1e-12):
        raise ValueError("fields are not on a uniform increasing time grid")
    return OrderParameterPath(float(ts[0]), float(dt), vals, tuple(names))


def default_grid(spec: AlgorithmSpec, xi_values, support, q0, m: int = DEFAULT_M, floor: float = 10.0) -> Grid:
    """[min(xi, support) - 8s, max(xi, support) + 8s], s = sqrt(Lambda(q0) / (2 * rate)), at least [-floor, floor]."""
    lam = float(np.max(spec.Lam(np.atleast_1d(np.asarray(q0, dtype=float)))))
    s = math.sqrt(lam / (2.0 * spec.relax_rate))
    xi_values = np.atleast_1d(xi_values)
    lo = min(float(np.min(xi_values)), float(support[0])) - 8.0 * s
    hi = max(float(np.max(xi_values)), float(support[1])) + 8.0 * s
    return Grid(min(lo, -floor), max(hi, floor), m)


def write_diagnostics(path, diagnostics: dict):
    with open(path, "w") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True)
