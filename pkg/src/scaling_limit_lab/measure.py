"""Empirical measures of finite-n states and discretized limiting densities.

Two representations of a probability measure on (x, xi) live here:

* ``EmpiricalState`` -- the n coordinate pairs (x^i, xi^i) of an algorithm,
  i.e. the measure putting mass 1/n on each pair.
* ``DensityField`` -- a finite set of xi-atoms, each carrying a probability
  density in x sampled on a shared uniform grid.

Functionals <mu, f> are evaluated on both with ``empirical_measure_eval`` and
``density_field_eval``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ._csv import read_rows, write_rows

FIELD_CSV_HEADER = ("t", "xi", "weight", "x", "density")


class EvaluationError(ValueError):
    """A functional produced a non-finite value."""


class EmptySelectionError(ValueError):
    """No coordinates match the requested xi value."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EmpiricalState:
    """Paired estimate/target vectors of a finite-n algorithm at step ``k``."""

    x: np.ndarray
    xi: np.ndarray
    k: int = 0

    def __post_init__(self):
        x = _frozen(self.x)
        xi = _frozen(self.xi)
        if x.ndim != 1 or xi.ndim != 1:
            raise ValueError("x and xi must be 1-D vectors")
        if x.shape != xi.shape:
            raise ValueError(f"x has length {x.size} but xi has length {xi.size}")
        if x.size < 1:
            raise ValueError("dimension n must be at least 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValueError("state entries must be finite")
        if self.k < 0:
            raise ValueError("iteration index k must be nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "k", int(self.k))

    @property
    def n(self) -> int:
        return self.x.size

    def permuted(self, perm) -> "EmpiricalState":
        perm = np.asarray(perm)
        return EmpiricalState(self.x[perm], self.xi[perm], self.k)


def empirical_measure_eval(state: EmpiricalState, f: Callable) -> float:
    """(1/n) sum_i f(x^i, xi^i).

    ``f`` must be vectorized over numpy arrays.  The sum is correctly rounded
    (``math.fsum``), so the result does not depend on coordinate order.
    """
    vals = np.broadcast_to(np.asarray(f(state.x, state.xi), dtype=float), state.x.shape)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(
            f"f returned {vals[i]} at index {i} (x={state.x[i]}, xi={state.xi[i]})"
        )
    return math.fsum(vals.tolist()) / state.n


@dataclass(frozen=True)
class XiAtomSet:
    """Discrete xi-marginal: distinct atom locations with positive weights summing to 1."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = _frozen(np.atleast_1d(self.values))
        w = _frozen(np.atleast_1d(self.weights))
        if v.shape != w.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("values and weights must be matching non-empty 1-D arrays")
        if np.any(w <= 0):
            raise ValueError("atom weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom weights sum to {w.sum()!r}, not 1")
        if np.unique(v).size != v.size:
            raise ValueError("atom xi values must be distinct")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.values.size

    @classmethod
    def single(cls, value: float) -> "XiAtomSet":
        return cls([value], [1.0])

    @classmethod
    def sparse(cls, rho: float, on_value: float) -> "XiAtomSet":
        """Two atoms: 0 with weight 1-rho and ``on_value`` with weight rho."""
        return cls([0.0, on_value], [1.0 - rho, rho])

    def index_of(self, xi_value: float, atol: float = 1e-12) -> int:
        hits = np.flatnonzero(np.abs(self.values - xi_value) <= atol)
        if hits.size == 0:
            raise KeyError(f"no xi atom at {xi_value}; atoms are {self.values.tolist()}")
        return int(hits[0])


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``m`` nodes on [x_min, x_max]."""

    x_min: float
    x_max: float
    m: int

    def __post_init__(self):
        if self.m < 2 or not self.x_max > self.x_min:
            raise ValueError(f"invalid grid [{self.x_min}, {self.x_max}] with m={self.m}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.m - 1)

    @property
    def x(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.m)
        if self.x_min == -self.x_max:
            # exact mirror symmetry, so even functions give even arrays
            x = 0.5 * (x - x[::-1])
        return x

    @property
    def interfaces(self) -> np.ndarray:
        x = self.x
        return 0.5 * (x[1:] + x[:-1])

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights; also the control-volume widths of the FP scheme."""
        h = np.full(self.m, self.dx)
        h[0] = h[-1] = 0.5 * self.dx
        return h

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid integral along the last axis."""
        return np.asarray(values) @ self.weights


def gaussian_density(grid: Grid, mean: float, var: float) -> np.ndarray:
    x = grid.x
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


def delta_bump(grid: Grid, center: float) -> np.ndarray:
    """Normalized triangular bump of half-width 2*dx standing in for a point mass."""
    hw = 2.0 * grid.dx
    p = np.clip(1.0 - np.abs(grid.x - center) / hw, 0.0, None)
    mass = grid.integrate(p)
    if mass <= 0:
        raise ValueError(f"point mass at {center} lies outside the grid")
    return p / mass


@dataclass(frozen=True)
class DensityField:
    """Discretized limiting measure: per-atom x-densities on a common grid."""

    atoms: XiAtomSet
    grid: Grid
    densities: np.ndarray
    t: float = 0.0
    mass_tol: float = field(default=1e-8, repr=False, compare=False)

    def __post_init__(self):
        d = _frozen(self.densities)
        if d.shape != (len(self.atoms), self.grid.m):
            raise ValueError(
                f"densities must have shape {(len(self.atoms), self.grid.m)}, got {d.shape}"
            )
        if not np.all(np.isfinite(d)):
            raise ValueError("density values must be finite")
        if np.any(d < 0):
            raise ValueError("density values must be nonnegative")
        mass = self.grid.integrate(d)
        worst = int(np.argmax(np.abs(mass - 1.0)))
        if abs(mass[worst] - 1.0) > self.mass_tol:
            raise ValueError(
                f"atom {worst} (xi={self.atoms.values[worst]}) has mass {mass[worst]!r}"
            )
        object.__setattr__(self, "densities", d)

    @classmethod
    def from_callable(cls, atoms: XiAtomSet, grid: Grid, density_fn: Callable, t=0.0):
        """Build from ``density_fn(x, xi) -> array``, renormalizing each atom on the grid."""
        rows = []
        for xi in atoms.values:
            p = np.clip(np.asarray(density_fn(grid.x, xi), dtype=float), 0.0, None)
            rows.append(p / grid.integrate(p))
        return cls(atoms, grid, np.array(rows), t)

    @classmethod
    def gaussian(cls, atoms: XiAtomSet, grid: Grid, mean, var, t=0.0):
        """Each atom gets N(mean, var); ``mean`` may be a callable of xi."""
        mean_fn = mean if callable(mean) else (lambda xi: mean)
        return cls.from_callable(atoms, grid, lambda x, xi: gaussian_density(grid, mean_fn(xi), var), t)

    @classmethod
    def point_masses(cls, atoms: XiAtomSet, grid: Grid, location, t=0.0):
        """x concentrated at ``location(xi)`` (or a constant) for every atom."""
        loc = location if callable(location) else (lambda xi: location)
        return cls(atoms, grid, np.array([delta_bump(grid, loc(xi)) for xi in atoms.values]), t)

    def with_densities(self, densities, t) -> "DensityField":
        return DensityField(self.atoms, self.grid, densities, t, self.mass_tol)

    def masses(self) -> np.ndarray:
        return self.grid.integrate(self.densities)


def density_field_eval(field: DensityField, f: Callable) -> float:
    """sum over atoms of weight * trapezoid integral of f(x, xi_atom) * density(x)."""
    x = field.grid.x
    total = 0.0
    for w, xi, p in zip(field.atoms.weights, field.atoms.values, field.densities):
        fx = np.broadcast_to(np.asarray(f(x, xi), dtype=float), x.shape)
        total += w * field.grid.integrate(fx * p)
    return float(total)


def histogram(state: EmpiricalState, xi_value: float, bins: Sequence[float]) -> np.ndarray:
    """Density histogram of {x^i : xi^i == xi_value} over the bin edges ``bins``.

    Normalized by the number of selected coordinates, so it integrates to 1
    when the edges cover every selected x (mass outside the edges is dropped).
    """
    edges = np.asarray(bins, dtype=float)
    sel = state.x[np.abs(state.xi - xi_value) <= 1e-12]
    if sel.size == 0:
        raise EmptySelectionError(f"no coordinates with xi == {xi_value}")
    counts, _ = np.histogram(sel, bins=edges)
    return counts / (sel.size * np.diff(edges))


def write_fields_csv(path, fields: Iterable[DensityField]):
    rows = []
    for fld in fields:
        x = fld.grid.x
        for xi, w, p in zip(fld.atoms.values, fld.atoms.weights, fld.densities):
            rows.extend((float(fld.t), float(xi), float(w), float(xv), float(pv)) for xv, pv in zip(x, p))
    write_rows(path, FIELD_CSV_HEADER, rows)


def read_fields_csv(path, mass_tol: float = 1e-8) -> list[DensityField]:
    data = np.array(read_rows(path, FIELD_CSV_HEADER), dtype=float)
    fields = []
    for t in np.unique(data[:, 0]):
        block = data[data[:, 0] == t]
        xis, first = np.unique(block[:, 1], return_index=True)
        order = np.argsort(first)
        xis = xis[order]
        weights = block[first[order], 2]
        xs = block[block[:, 1] == xis[0], 3]
        grid = Grid(float(xs[0]), float(xs[-1]), xs.size)
        dens = np.array([block[block[:, 1] == xi, 4] for xi in xis])
        fields.append(DensityField(XiAtomSet(xis, weights), grid, dens, float(t), mass_tol))
    return fields


PATH_CSV_HEADER = ("t", "param_name", "value")


@dataclass(frozen=True)
class OrderParameterPath:
    """Order-parameter vectors on the uniform time grid t0 + j*dt."""

    t0: float
    dt: float
    values: np.ndarray  # (len, r)
    names: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if not self.dt > 0:
            raise ValueError("path dt must be positive")
        if v.shape[0] < 2:
            raise ValueError("an order-parameter path needs at least 2 nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("order-parameter values must be finite")
        names = tuple(self.names) or tuple(f"q{l}" for l in range(v.shape[1]))
        if len(names) != v.shape[1]:
            raise ValueError(f"{len(names)} names for {v.shape[1]} components")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", names)

    @classmethod
    def constant(cls, q, t0, t1, dt, names=()):
        nodes = max(2, int(round((t1 - t0) / dt)) + 1)
        return cls(t0, dt, np.tile(np.atleast_1d(np.asarray(q, dtype=float)), (nodes, 1)), names)

    @classmethod
    def from_function(cls, fn, t0, t1, dt, names=()):
        nodes = max(2, int(round((t1 - t0) / dt)) + 1)
        ts = t0 + dt * np.arange(nodes)
        return cls(t0, dt, np.array([np.atleast_1d(fn(t)) for t in ts], dtype=float), names)

    @property
    def r(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[0])

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.values.shape[0] - 1)

    def at(self, t) -> np.ndarray:
        """Piecewise-linear interpolation; ``t`` may be an array (result (..., r))."""
        t = np.asarray(t, dtype=float)
        s = (t - self.t0) / self.dt
        last = self.values.shape[0] - 1
        if np.any(s < -1e-9) or np.any(s > last + 1e-9):
            raise ValueError(f"time outside path range [{self.t0}, {self.t_end}]")
        s = np.clip(s, 0.0, last)
        j = np.minimum(np.floor(s).astype(int), last - 1)
        frac = (s - j)[..., None]
        return (1.0 - frac) * self.values[j] + frac * self.values[j + 1]

    def component(self, name) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def write_csv(self, path):
        ts = self.times
        write_rows(path, PATH_CSV_HEADER,
                   ((float(t), nm, float(v)) for j, t in enumerate(ts) for nm, v in zip(self.names, self.values[j])))

    @classmethod
    def read_csv(cls, path) -> "OrderParameterPath":
        rows = read_rows(path, PATH_CSV_HEADER)
        names = list(dict.fromkeys(r[1] for r in rows))
        cols = {nm: sorted((float(t), float(v)) for t, n2, v in rows if n2 == nm) for nm in names}
        ts = np.array([t for t, _ in cols[names[0]]])
        vals = np.column_stack([[v for _, v in cols[nm]] for nm in names])
        if ts.size < 2:
            raise ValueError(f"{path}: path needs at least 2 time nodes")
        dt = (ts[-1] - ts[0]) / (ts.size - 1)
        if not np.allclose(np.diff(ts), dt, rtol=1e-9, atol=1e-12):
            raise ValueError(f"{path}: times are not on a uniform grid")
        return cls(float(ts[0]), float(dt), vals, tuple(names))
