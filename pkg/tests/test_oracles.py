import math

import numpy as np
import pytest

from scaling_limit_lab.algorithms import make_frozen_spec, make_pca_spec
from scaling_limit_lab.measure import Grid, OrderParameterPath
from scaling_limit_lab.oracles import (EnsembleDivergenceError, ModelViolationError, decoupled_sde_ensemble,
                                       effective_potential, ou_stationary_density, pca_overlap_ode,
                                       pca_overlap_rhs, regression_mse_exact, regression_mse_fixed_point,
                                       regression_mse_ode, rk4)
from scaling_limit_lab.regularizers import Regularizer


def test_regression_fixed_point_values():
    assert regression_mse_fixed_point(0.2, 1.0) == pytest.approx(0.2 / 1.8)
    assert regression_mse_exact(0.2, 1.0, 0.2 / 1.8, 5.0) == pytest.approx(0.2 / 1.8)
    o = regression_mse_ode(0.2, 1.0, 1.0, 10.0)
    assert o.values[0] == 1.0 and o.times[-1] == pytest.approx(10.0)
    assert np.all(np.diff(o.values) < 0)


def test_regression_ode_warns_unstable():
    with pytest.warns(RuntimeWarning):
        regression_mse_ode(2.5, 1.0, 1.0, 1.0)


def test_rk4_exponential():
    t, y = rk4(lambda y: -y, 1.0, 1.0, 0.01)
    assert y[-1] == pytest.approx(math.exp(-1), abs=1e-10)


def test_pca_overlap_ode():
    o = pca_overlap_ode(0.2, 2.0, 0.2, 50.0)
    # positive root of omega (1 - Q^2) = (tau/2)(1 + omega Q^2)
    tau, w = 0.2, 2.0
    q_star = math.sqrt((w - tau / 2) / (w + tau * w / 2))
    assert o.values[-1] == pytest.approx(q_star, abs=1e-6)
    assert pca_overlap_rhs(tau, w, 0.0) == 0.0
    assert pca_overlap_ode(0.2, 2.0, 0.0, 5.0).values[-1] == 0.0


def test_pca_overlap_ode_flags_violation():
    with pytest.raises(ModelViolationError):
        pca_overlap_ode(10.0, 1.0, 0.5, 5.0, dt=1.0)  # a coarse step overshoots past -1


def test_ensemble_matches_ou_moments():
    k, lam = 1.0, 0.5
    spec = make_frozen_spec(lambda x, xi: -k * (x - xi), lam)
    ens = decoupled_sde_ensemble(spec, None, 0.5, lambda rng, n: 1.0 + math.sqrt(0.2) * rng.standard_normal(n),
                                 20_000, 2.0, 1e-3, 0, [1.0, 2.0], np.linspace(-4, 5, 91))
    m = 0.5 + 0.5 * math.exp(-2.0)
    v = 0.2 * math.exp(-4.0) + 0.25 * (1 - math.exp(-4.0))
    s = ens.samples[-1]
    assert abs(s.mean() - m) < 4 * math.sqrt(v / s.size)
    assert abs(s.var() - v) < 4 * v * math.sqrt(2 / s.size) + 2e-3
    assert ens.diverged == 0 and ens.times.tolist() == pytest.approx([1.0, 2.0])


def test_euler_maruyama_weak_order_one():
    # mean of a linear SDE: E X_T = x0 (1 - k dt)^(T/dt), bias ~ dt
    k = 2.0
    spec = make_frozen_spec(lambda x, xi: -k * x, 0.0)
    biases = []
    for dt in (0.1, 0.05, 0.025):
        ens = decoupled_sde_ensemble(spec, None, 0.0, lambda rng, n: np.ones(n), 1000, 1.0, dt, 0, [1.0],
                                     [-1.0, 2.0])
        biases.append(abs(ens.samples[-1][0] - math.exp(-k)))
    assert 1.6 < biases[0] / biases[1] < 2.4 and 1.6 < biases[1] / biases[2] < 2.4


def test_ensemble_divergence():
    spec = make_frozen_spec(lambda x, xi: 50.0 * x, 0.0)
    with pytest.raises(EnsembleDivergenceError):
        decoupled_sde_ensemble(spec, None, 0.0, lambda rng, n: rng.standard_normal(n), 1000, 10.0, 0.1, 0,
                               [10.0], [-1, 1])


def test_ensemble_uses_path():
    spec = make_pca_spec(0.2, 2.0)
    path = OrderParameterPath.constant([0.5, 0.0], 0.0, 1.0, 0.1, ("Q", "R"))
    ens = decoupled_sde_ensemble(spec, path, 1.0, lambda rng, n: np.zeros(n), 1000, 1.0, 0.01, 0, [1.0],
                                 np.linspace(-3, 3, 31))
    assert np.sum(ens.histograms[-1] * 0.2) == pytest.approx(1.0)


def test_ou_stationary_variance():
    g = Grid(-5, 5, 1001)
    p = ou_stationary_density(0.2, 1.0, g)
    assert g.integrate(p) == pytest.approx(1.0, abs=1e-10)
    assert g.integrate(g.x**2 * p) == pytest.approx(0.1, rel=1e-6)


def test_effective_potential_examples():
    g = Grid(-4, 6, 2001)
    tanh = Regularizer("tanh", alpha=2.0).Phi
    _, mins = effective_potential(0.2, 0.0, tanh, 3.0, g)
    assert mins == pytest.approx([3.0])
    _, mins = effective_potential(0.2, 0.8, tanh, 3.0, g)
    assert mins.size == 2 and abs(mins[0]) < 0.05 and mins[1] > 2.5
    counts = [effective_potential(0.2, b, tanh, 3.0, g)[1].size for b in np.linspace(0, 1, 21)]
    first_two = counts.index(2)
    assert set(counts[:first_two]) == {1} and set(counts[first_two:]) == {2}


@pytest.mark.parametrize("phi", [Regularizer("l1").Phi, Regularizer("elastic", lam1=0.5, lam2=0.2).Phi,
                                 Regularizer("smoothed_l1", eps=0.1).Phi, lambda x: np.zeros_like(x)])
@pytest.mark.parametrize("beta", [0.0, 0.1, 0.5, 2.0])
def test_convex_penalty_single_minimum(phi, beta):
    g = Grid(-4, 6, 2001)
    assert effective_potential(0.2, beta, phi, 3.0, g)[1].size == 1
