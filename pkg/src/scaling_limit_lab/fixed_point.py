"""Self-consistent solution of the limiting PDE by fixed-point iteration.

On each time interval the order-parameter path Q is frozen, the densities are
propagated under it (``solve_frozen``), and Q is re-extracted from the
result.  Iteration stops once successive paths agree to ``tol`` in the sup
over time of the l1 norm over components.  An interval that fails to
converge is halved and retried; the next interval starts again at the full
length.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .algorithms import AlgorithmSpec, make_pca_spec, make_regression_spec  # noqa: F401
from .fokker_planck import DEFAULT_DT, FrozenPdeProblem, solve_frozen
from .measure import DensityField, OrderParameterPath, density_field_eval

MAX_HALVINGS = 8


@dataclass
class FixedPointReport:
    iterations_per_interval: list = field(default_factory=list)
    interval_lengths: list = field(default_factory=list)
    distances: list = field(default_factory=list)  # per interval, d_k for every iteration
    final_sup_distance: float = 0.0
    converged: bool = True
    halvings: int = 0
    max_step_mass_change: float = 0.0
    clip_count: int = 0
    clipped_mass: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


class FixedPointError(RuntimeError):
    def __init__(self, msg, report: FixedPointReport):
        super().__init__(msg)
        self.report = report


@dataclass
class PdeSolution:
    fields: list  # DensityField at the saved times
    path: OrderParameterPath
    report: FixedPointReport

    def field_at(self, t: float, atol: float = 1e-9) -> DensityField:
        for f in self.fields:
            if abs(f.t - t) <= atol:
                return f
        raise KeyError(f"no saved field at t={t}; saved times are {[f.t for f in self.fields]}")


def initial_order_params(spec: AlgorithmSpec, mu: DensityField) -> np.ndarray:
    return np.array([density_field_eval(mu, p) for p in spec.order_params], dtype=float)


def _sup_l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(a - b), axis=1))) if a.size else 0.0


def _solve_interval(spec, start: DensityField, k0, nsteps, dt, tol, max_iter, save_times, theta, threads):
    t_a, t_b = k0 * dt, (k0 + nsteps) * dt
    q = initial_order_params(spec, start)
    guess = OrderParameterPath.constant(q, t_a, t_b, dt, spec.param_names)
    dists = []
    for _ in range(max_iter if spec.r else 1):
        sol = solve_frozen(FrozenPdeProblem(spec, guess, t_a, t_b, dt), start, save_times, theta, threads)
        if not spec.r:
            return True, sol, dists
        d = _sup_l1(sol.path.values, guess.values)
        dists.append(d)
        guess = sol.path
        if d < tol:
            return True, sol, dists
    return False, sol, dists


def solve_scaling_limit_pde(spec: AlgorithmSpec, mu0: DensityField, T: float, tol: float = 1e-6,
                            max_iter: int = 50, delta_T: float = 5.0, dt: float = DEFAULT_DT,
                            save_times: Sequence[float] | None = None, theta: float = 0.5,
                            threads: int = 1) -> PdeSolution:
    """Solve the coupled PDE on [mu0.t, mu0.t + T].

    Each interval starts from Q frozen at the order parameters of its initial
    density.  ``save_times`` are absolute times (default: every interval
    end); the returned path covers every solver step.
    """
    if not T > 0 or not tol > 0 or max_iter < 1 or not delta_T > 0:
        raise ValueError("need T > 0, tol > 0, max_iter >= 1 and delta_T > 0")
    t_origin = mu0.t
    k_origin = int(round(t_origin / dt))
    if abs(k_origin * dt - t_origin) > 1e-9 * max(1.0, abs(t_origin)):
        raise ValueError("the initial time must be a multiple of dt")
    total = max(1, int(round(T / dt)))
    full = max(1, int(round(delta_T / dt)))
    save_rows = None
    if save_times is not None:
        save_rows = sorted({int(round(t / dt)) - k_origin for t in save_times})
        if save_rows and (save_rows[0] < 0 or save_rows[-1] > total):
            raise ValueError("save times must lie in the solved range")

    report = FixedPointReport()
    fields = []
    values = [initial_order_params(spec, mu0)]
    current = mu0
    if save_rows is not None and save_rows and save_rows[0] == 0:
        fields.append(mu0)
    k = 0
    while k < total:
        n = min(full, total - k)
        halvings = 0
        while True:
            if save_rows is None:
                wanted = [(k_origin + k + n) * dt]
            else:
                wanted = [(k_origin + s) * dt for s in save_rows if k < s <= k + n]
            ok, sol, dists = _solve_interval(spec, current, k_origin + k, n, dt, tol, max_iter,
                                             wanted + [(k_origin + k + n) * dt], theta, threads)
            report.max_step_mass_change = max(report.max_step_mass_change, sol.diagnostics["max_step_mass_change"])
            report.clip_count += sol.diagnostics["clip_count"]
            report.clipped_mass += sol.diagnostics["clipped_mass"]
            if ok:
                break
            if halvings == MAX_HALVINGS or n // 2 < 2:
                report.converged = False
                report.iterations_per_interval.append(len(dists))
                report.interval_lengths.append(n * dt)
                report.distances.append(dists)
                report.final_sup_distance = dists[-1]
                raise FixedPointError(
                    f"fixed point did not converge on [{(k_origin + k) * dt}, {(k_origin + k + n) * dt}] "
                    f"after {halvings} halvings (last distance {dists[-1]:.3e})", report)
            n //= 2
            halvings += 1
            report.halvings += 1
        report.iterations_per_interval.append(max(1, len(dists)))
        report.interval_lengths.append(n * dt)
        report.distances.append(dists)
        report.final_sup_distance = dists[-1] if dists else 0.0
        fields.extend(f for f in sol.fields if f.t <= (k_origin + k + n) * dt + 1e-12
                      and any(abs(f.t - w) <= 1e-9 for w in wanted))
        current = sol.final
        if sol.path is not None:
            values.extend(sol.path.values[1:])
        else:
            values.extend([values[-1]] * n)
        k += n
    path = OrderParameterPath(t_origin, dt, np.array(values).reshape(total + 1, -1) if spec.r else
                              np.zeros((total + 1, 0)), spec.param_names)
    return PdeSolution(fields, path, report)
