"""Translate an ExperimentConfig into models, PDE specs and initial measures."""

from __future__ import annotations

import math

import numpy as np

from .algorithms import (AlgorithmSpec, make_double_well_spec, make_frozen_spec, make_pca_spec,
                         make_regression_spec)
from .config import ExperimentConfig, ModelConfig, VectorConfig
from .fixed_point import initial_order_params
from .fokker_planck import default_grid
from .measure import DensityField, Grid, XiAtomSet, delta_bump, gaussian_density
from .regularizers import Regularizer
from .simulate import PcaModel, RegressionModel


def regularizer(model: ModelConfig) -> Regularizer:
    p = model.phi
    return Regularizer(p.name, p.strength, p.eps, p.alpha, p.lam1, p.lam2)


def f_prime(model: ModelConfig):
    if model.f.name == "quadratic":
        return lambda x: x
    tilt = model.f.tilt
    return lambda x: x**3 - x - tilt


def f_value(model: ModelConfig):
    if model.f.name == "quadratic":
        return lambda x: 0.5 * x * x
    tilt = model.f.tilt
    return lambda x: 0.25 * x**4 - 0.5 * x**2 - tilt * x


def regression_model(model: ModelConfig) -> RegressionModel:
    return RegressionModel(model.tau, model.sigma, regularizer(model), model.sensing_dist, "gaussian")


def pca_model(model: ModelConfig) -> PcaModel:
    return PcaModel(model.tau, model.omega, model.beta, regularizer(model), model.spike_dist, model.noise_dist)


def vector_spec(v: VectorConfig):
    """Argument for simulate.make_vector."""
    if v.kind == "gaussian":
        return {"kind": "gaussian", "mean": v.mean, "var": v.var}
    if v.kind == "constant":
        return {"kind": "constant", "value": v.value}
    if v.kind == "sparse":
        return {"kind": "sparse", "rho": v.rho, "value": v.value}
    if v.kind == "rademacher":
        return {"kind": "rademacher"}
    values = np.asarray(v.values, dtype=float)
    weights = np.asarray(v.weights, dtype=float)

    def atoms(rng, n):
        counts = np.floor(weights * n).astype(int)
        counts[-1] = n - counts[:-1].sum()
        return np.repeat(values, counts)

    return atoms


def xi_atoms(v: VectorConfig) -> XiAtomSet:
    if v.kind == "constant":
        return XiAtomSet.single(v.value)
    if v.kind == "sparse":
        return XiAtomSet.sparse(v.rho, v.value)
    if v.kind == "rademacher":
        return XiAtomSet([-1.0, 1.0], [0.5, 0.5])
    if v.kind == "atoms":
        return XiAtomSet(v.values, v.weights)
    raise ValueError("a continuous xi distribution needs quantizing: use kind 'atoms' for the PDE")


def _x0_points(v: VectorConfig):
    """(locations, weights) when x0 is discrete, else None."""
    if v.kind == "constant":
        return [v.value], [1.0]
    if v.kind == "sparse":
        return [0.0, v.value], [1.0 - v.rho, v.rho]
    if v.kind == "rademacher":
        return [-1.0, 1.0], [0.5, 0.5]
    if v.kind == "atoms":
        return v.values, v.weights
    return None


def x0_support(v: VectorConfig) -> tuple[float, float]:
    pts = _x0_points(v)
    if pts is None:
        s = 8.0 * math.sqrt(v.var)
        return v.mean - s, v.mean + s
    return min(pts[0]), max(pts[0])


def initial_field(atoms: XiAtomSet, grid: Grid, x0: VectorConfig) -> DensityField:
    """x0 is independent of xi: every atom carries the same x-density."""
    pts = _x0_points(x0)
    if pts is None:
        p = gaussian_density(grid, x0.mean, x0.var)
    else:
        p = sum(w * delta_bump(grid, c) for c, w in zip(*pts))
    p = p / grid.integrate(p)
    return DensityField(atoms, grid, np.tile(p, (len(atoms), 1)))


def pde_spec(model: ModelConfig, cap: float = 1e6) -> AlgorithmSpec:
    """Limiting coefficients.  For PCA the simulator's beta maps to beta/tau."""
    if model.kind == "regression":
        return make_regression_spec(model.tau, model.sigma, regularizer(model), cap)
    if model.kind == "pca":
        return make_pca_spec(model.tau, model.omega, model.beta / model.tau, regularizer(model), cap)
    if model.kind == "toy_sgd":
        return make_double_well_spec(f_prime(model), model.tau, model.sigma)
    k, c = model.drift_k, model.drift_c
    return make_frozen_spec(lambda x, xi: -k * (x - xi) + c, model.diffusion, "custom")


def pde_problem(cfg: ExperimentConfig):
    """(spec, initial DensityField) with the grid from the config or the default rule."""
    model, solver = cfg.model, cfg.solver
    spec = pde_spec(model, solver.cap)
    atoms = XiAtomSet.single(0.0) if model.kind in ("toy_sgd", "custom") else xi_atoms(model.xi)
    if solver.x_min is not None:
        grid = Grid(solver.x_min, solver.x_max, solver.m)
    else:
        lo, hi = x0_support(model.x0)
        probe = Grid(min(lo, -10.0), max(hi, 10.0), solver.m)
        q0 = initial_order_params(spec, initial_field(atoms, probe, model.x0)) if spec.r else np.zeros(0)
        grid = default_grid(spec, atoms.values, (lo, hi), q0, solver.m)
    return spec, initial_field(atoms, grid, model.x0)
