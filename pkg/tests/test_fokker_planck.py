import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scaling_limit_lab.algorithms import make_double_well_spec, make_frozen_spec, make_regression_spec
from scaling_limit_lab.fokker_planck import (ConservationError, FrozenPdeProblem, default_grid, fp_step, order_params_from_density,
                                             solve_frozen)
from scaling_limit_lab.measure import DensityField, Grid, OrderParameterPath, XiAtomSet, gaussian_density
from scaling_limit_lab.oracles import ou_stationary_density

K, LAM = 1.0, 0.5


def ou_exact(grid, t, m0=1.0, v0=0.2, xi=0.5):
    m = xi + (m0 - xi) * math.exp(-K * t)
    v = v0 * math.exp(-2 * K * t) + LAM / (2 * K) * (1 - math.exp(-2 * K * t))
    return gaussian_density(grid, m, v)


def ou_error(m, dt, T=2.0):
    spec = make_frozen_spec(lambda x, xi: -K * (x - xi), LAM)
    g = Grid(-4, 5, m)
    f = DensityField(XiAtomSet.single(0.5), g, gaussian_density(g, 1.0, 0.2)[None])
    path = OrderParameterPath(0.0, 0.04, np.zeros((51, 0)))
    s = solve_frozen(FrozenPdeProblem(spec, path, 0.0, T, dt), f, save_times=[T])
    return g.integrate(np.abs(s.final.densities[0] - ou_exact(g, T)))


def test_ou_transient_and_convergence():
    errs = [ou_error(m, dt) for m, dt in [(129, 0.02), (257, 0.01), (513, 0.005)]]
    assert errs[-1] < 1e-4
    assert errs[0] / errs[1] >= 3 and errs[1] / errs[2] >= 3, errs


def test_zero_coefficients_identity():
    g = Grid(-3, 3, 101)
    f = DensityField.gaussian(XiAtomSet([0.0, 1.0], [0.5, 0.5]), g, lambda xi: xi, 0.3)
    out = fp_step(f, lambda x, xi: np.zeros_like(x), 0.0, 0.05)
    assert np.array_equal(out.densities, f.densities)
    assert out.t == pytest.approx(0.05)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.0, 2.0), st.floats(1e-4, 0.1))
def test_implicit_step_conserves_mass_and_positivity(c, lam, dt):
    # fully implicit Chang-Cooper gives an M-matrix: positive for any step
    g = Grid(-5, 5, 201)
    f = DensityField.gaussian(XiAtomSet.single(0.0), g, 1.0, 0.05)
    out = fp_step(f, lambda x, xi: c - 2.0 * x**3, lam, dt, 1.0)
    assert abs(g.integrate(out.densities[0]) - 1.0) <= 1e-8
    assert np.all(out.densities >= 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(0.05, 2.0), st.floats(1e-4, 2e-3), st.sampled_from([0.5, 0.75]))
def test_theta_step_conserves_mass_at_moderate_cfl(c, lam, dt, theta):
    g = Grid(-5, 5, 201)
    f = DensityField.gaussian(XiAtomSet.single(0.0), g, 1.0, 0.05)
    out = fp_step(f, lambda x, xi: c - x, lam, dt, theta)
    assert abs(g.integrate(out.densities[0]) - 1.0) <= 1e-12
    assert np.all(out.densities >= 0)


def test_crank_nicolson_overshoot_is_reported():
    g = Grid(-5, 5, 201)
    f = DensityField.gaussian(XiAtomSet.single(0.0), g, 1.0, 0.05)
    with pytest.raises(ConservationError):
        fp_step(f, lambda x, xi: -2.0 * x**3, 0.0, 0.0625, 0.5)


def test_fp_step_rejects_bad_args():
    g = Grid(-1, 1, 11)
    f = DensityField.gaussian(XiAtomSet.single(0.0), g, 0.0, 0.1)
    with pytest.raises(ValueError):
        fp_step(f, lambda x, xi: 0 * x, -1.0, 0.01)
    with pytest.raises(ValueError):
        fp_step(f, lambda x, xi: 0 * x, 1.0, 0.5)
    with pytest.raises(ValueError):
        fp_step(f, lambda x, xi: 0 * x, 1.0, 0.01, theta=0.2)


def test_ou_stationary_state_is_steady():
    tau, sigma = 0.5, 1.0
    spec = make_frozen_spec(lambda x, xi: -tau * x, tau**2 * sigma**2)
    g = Grid(-5, 5, 401)
    p = ou_stationary_density(tau, sigma, g)
    f = DensityField(XiAtomSet.single(0.0), g, (p / g.integrate(p))[None])
    path = OrderParameterPath(0.0, 1.0, np.zeros((11, 0)))
    s = solve_frozen(FrozenPdeProblem(spec, path, 0.0, 10.0, 0.01), f, save_times=[10.0])
    assert g.integrate(np.abs(s.final.densities[0] - f.densities[0])) < 1e-3


def test_frozen_problem_validation():
    spec = make_regression_spec(0.2, 1.0)
    path = OrderParameterPath.constant([1.0], 0.0, 1.0, 0.01, ("e",))
    with pytest.raises(ValueError, match="covers"):
        FrozenPdeProblem(spec, path, 0.0, 2.0, 0.01)
    with pytest.raises(ValueError):
        FrozenPdeProblem(spec, path, 0.0, 1.0, 0.02)
    with pytest.raises(ValueError):
        FrozenPdeProblem(make_frozen_spec(lambda x, xi: x, 1.0), path, 0.0, 1.0, 0.01)


def test_solve_frozen_path_is_order_parameter_of_fields():
    spec = make_regression_spec(0.2, 1.0)
    g = Grid(-10, 10, 513)
    mu = DensityField.gaussian(XiAtomSet([0.0, 1.0], [0.9, 0.1]), g, 0.0, 1.0)
    path = OrderParameterPath.constant([2.0], 0.0, 1.0, 0.1, ("e",))
    s = solve_frozen(FrozenPdeProblem(spec, path, 0.0, 1.0, 0.01), mu)
    assert len(s.fields) == 11 and s.path.dt == pytest.approx(0.1)
    back = order_params_from_density(s.fields, spec.order_params, ("e",))
    assert np.allclose(back.values, s.path.values, rtol=0, atol=1e-12)
    assert s.diagnostics["max_step_mass_change"] <= 1e-8


def test_double_well_settles_in_global_minimum():
    # f = x^4/4 - x^2/2 - 0.2 x: the right well is deeper
    fp = lambda x: x**3 - x - 0.2
    spec = make_double_well_spec(fp, 1.0, 0.7)
    g = Grid(-3, 3, 401)
    f = DensityField.gaussian(XiAtomSet.single(0.0), g, -1.0, 0.05)
    path = OrderParameterPath(0.0, 1.0, np.zeros((201, 0)))
    s = solve_frozen(FrozenPdeProblem(spec, path, 0.0, 200.0, 0.05), f, save_times=[200.0], theta=1.0)
    p = s.final.densities[0]
    # Gibbs density exp(-2 f / (tau sigma^2)) is the steady state of dX = -f' dt + sqrt(tau sigma^2) dB
    F = 0.25 * g.x**4 - 0.5 * g.x**2 - 0.2 * g.x
    gibbs = np.exp(-2 * (F - F.min()) / 0.49)
    gibbs /= g.integrate(gibbs)
    assert g.integrate(np.abs(p - gibbs)) < 0.02
    right = g.integrate(np.where(g.x > 0, p, 0))
    assert right > 0.5 and right == pytest.approx(g.integrate(np.where(g.x > 0, gibbs, 0)), abs=0.01)


def test_default_grid_floor_and_span():
    spec = make_regression_spec(0.2, 1.0)
    g = default_grid(spec, [0.0, 1.0], (-8.0, 8.0), [1.0], 1025)
    assert g.x_min <= -10 and g.x_max >= 10 and g.m == 1025
    g = default_grid(spec, [0.0, 30.0], (-1.0, 1.0), [1.0])
    assert g.x_max > 30
