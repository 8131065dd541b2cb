"""Performance functionals on empirical states and density fields, and
simulation-vs-PDE comparison reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._csv import write_rows
from .measure import (DensityField, EmpiricalState, Grid, OrderParameterPath, density_field_eval,
                      empirical_measure_eval)

COMPARE_CSV_HEADER = ("t", "sim_mean", "sim_stderr", "pde_value", "z")
DEFAULT_PARAM = {"mse": "e", "overlap_q": "Q", "reg_r": "R"}


def _eval(measure, f):
    if isinstance(measure, EmpiricalState):
        return empirical_measure_eval(measure, f)
    if isinstance(measure, DensityField):
        return density_field_eval(measure, f)
    raise TypeError(f"expected EmpiricalState or DensityField, got {type(measure).__name__}")


def mse_of(measure) -> float:
    return _eval(measure, lambda x, xi: (x - xi) ** 2)


def overlap_q(measure) -> float:
    return _eval(measure, lambda x, xi: x * xi)


def reg_r(measure, phi: Callable) -> float:
    return _eval(measure, lambda x, xi: x * phi(x))


def cumulative_mass(density: np.ndarray, grid: Grid, points) -> np.ndarray:
    """Integral from x_min to each point of the piecewise-linear interpolant of ``density``.

    Agrees with the trapezoid rule at grid nodes; clamps outside the grid.
    """
    p = np.asarray(density, dtype=float)
    dx = grid.dx
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dx * (p[1:] + p[:-1]))])
    pts = np.asarray(points, dtype=float)
    s = np.clip((pts - grid.x_min) / dx, 0.0, grid.m - 1)
    j = np.minimum(np.floor(s).astype(int), grid.m - 2)
    u = (s - j) * dx
    slope = (p[j + 1] - p[j]) / dx
    return cum[j] + p[j] * u + 0.5 * slope * u * u


def tail_mass(density, grid: Grid, c) -> np.ndarray:
    """Mass of the interpolated density on [c, x_max] (partial-cell exact)."""
    p = np.asarray(density, dtype=float)
    total = cumulative_mass(p, grid, grid.x_max)
    return total - cumulative_mass(p, grid, c)


@dataclass(frozen=True)
class RocPoint:
    c: float
    tpr: float
    fpr: float
    tp_mass: float  # <mu, 1(x >= c, xi = on)>
    fp_mass: float  # <mu, 1(x >= c, xi = 0)>


def roc_point(field: DensityField, c: float, rho: float, xi_on_value: float) -> RocPoint:
    """Support-recovery rates of the rule x >= c, normalized by the class masses rho and 1 - rho."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    try:
        on = field.atoms.index_of(xi_on_value)
        off = field.atoms.index_of(0.0)
    except KeyError as err:
        raise ValueError(f"ROC needs atoms at 0 and {xi_on_value}: {err}") from None
    g = field.grid
    tp = field.atoms.weights[on] * float(tail_mass(field.densities[on], g, c))
    fp = field.atoms.weights[off] * float(tail_mass(field.densities[off], g, c))
    return RocPoint(float(c), tp / rho, fp / (1.0 - rho), tp, fp)


def roc_curve(field: DensityField, cs: Sequence[float], rho: float, xi_on_value: float) -> list[RocPoint]:
    return [roc_point(field, c, rho, xi_on_value) for c in cs]


def conditional_density_slice(field: DensityField, xi_value: float) -> np.ndarray:
    return np.array(field.densities[field.atoms.index_of(xi_value)])


def l1_density_distance(a, b, grid: Grid, grid_b: Grid | None = None) -> float:
    """Trapezoid integral of |a - b|."""
    if grid_b is not None and grid_b != grid:
        raise ValueError(f"densities live on different grids: {grid} vs {grid_b}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (grid.m,) or b.shape != (grid.m,):
        raise ValueError(f"densities must have shape ({grid.m},), got {a.shape} and {b.shape}")
    return float(grid.integrate(np.abs(a - b)))


def bin_average(density, grid: Grid, edges) -> np.ndarray:
    """Average of the interpolated density over each bin."""
    edges = np.asarray(edges, dtype=float)
    cum = cumulative_mass(density, grid, edges)
    return np.diff(cum) / np.diff(edges)


def histogram_l1_distance(hist, edges, density, grid: Grid) -> float:
    """L1 distance between a histogram density and a grid density at bin resolution.

    Compares bin masses; mass of the grid density outside the bins counts too.
    """
    edges = np.asarray(edges, dtype=float)
    w = np.diff(edges)
    inside = float(np.sum(bin_average(density, grid, edges) * w))
    outside = max(0.0, float(grid.integrate(density)) - inside)
    return float(np.sum(np.abs(np.asarray(hist) - bin_average(density, grid, edges)) * w)) + outside


@dataclass
class ComparisonReport:
    observable: str
    param: str
    times: np.ndarray
    sim_mean: np.ndarray
    sim_stderr: np.ndarray
    pde_value: np.ndarray
    z: np.ndarray
    trials: int
    z_bound: float

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.z_bound

    def summary(self) -> dict:
        return {"observable": self.observable, "param": self.param, "trials": self.trials,
                "max_abs_z": self.max_abs_z, "z_bound": self.z_bound, "passed": self.passed,
                "max_abs_deviation": float(np.max(np.abs(self.sim_mean - self.pde_value)))}

    def write_csv(self, path):
        write_rows(path, COMPARE_CSV_HEADER,
                   zip(self.times.tolist(), self.sim_mean.tolist(), self.sim_stderr.tolist(),
                       self.pde_value.tolist(), self.z.tolist()))

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def compare_sim_to_pde(records: Sequence, path: OrderParameterPath, observable: str,
                       param: str | None = None, z_bound: float = 4.0) -> ComparisonReport:
    """Trial mean and standard error of ``observable`` against the PDE path at shared times.

    ``param`` names the path component (default: e for mse, Q for overlap_q,
    R for reg_r).  Times outside the path range are skipped.  A zero standard
    error demands an exact match (z = 0 or inf).
    """
    if not records:
        raise ValueError("no trajectory records")
    param = param or DEFAULT_PARAM.get(observable, observable)
    if param not in path.names:
        raise ValueError(f"path has components {path.names}, not {param!r}")
    common = None
    for rec in records:
        if observable not in rec.observables:
            raise ValueError(f"record {rec.seed!r} has no observable {observable!r}")
        ts = set(np.round(rec.times, 12).tolist())
        common = ts if common is None else common & ts
    eps = 1e-9 * max(1.0, abs(path.t_end))
    times = np.array(sorted(t for t in common if path.t0 - eps <= t <= path.t_end + eps))
    if times.size == 0:
        raise ValueError("simulation records and PDE path share no times")
    vals = np.empty((len(records), times.size))
    for i, rec in enumerate(records):
        lookup = dict(zip(np.round(rec.times, 12).tolist(), rec.observables[observable]))
        vals[i] = [lookup[t] for t in times]
    k = len(records)
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(times.size)
    pde = path.at(np.clip(times, path.t0, path.t_end))[:, path.names.index(param)]
    diff = mean - pde
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                     np.where(np.abs(diff) <= 1e-12 * np.maximum(1.0, np.abs(pde)), 0.0, np.inf))
    return ComparisonReport(observable, param, times, mean, se, pde, z, k, z_bound)

