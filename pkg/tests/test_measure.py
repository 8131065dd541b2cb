import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scaling_limit_lab.measure import (DensityField, EmpiricalState, EmptySelectionError, EvaluationError, Grid,
                                       OrderParameterPath, XiAtomSet, delta_bump, density_field_eval,
                                       empirical_measure_eval, gaussian_density, histogram, read_fields_csv,
                                       write_fields_csv)


def test_empirical_eval_examples():
    assert empirical_measure_eval(EmpiricalState([1, 1], [1, 1]), lambda x, xi: (x - xi) ** 2) == 0
    assert empirical_measure_eval(EmpiricalState([0, 0], [1, -1]), lambda x, xi: (x - xi) ** 2) == 1
    v = empirical_measure_eval(EmpiricalState([0.5, -0.5, 2], [1, 1, 1]), lambda x, xi: x * xi)
    assert v == pytest.approx(2 / 3, abs=1e-15)


def test_empirical_eval_names_bad_index():
    s = EmpiricalState([1.0, 0.0, 2.0], [0, 0, 0])
    with pytest.raises(EvaluationError, match="index 1"), np.errstate(divide="ignore"):
        empirical_measure_eval(s, lambda x, xi: 1.0 / x)


def test_state_invariants():
    with pytest.raises(ValueError):
        EmpiricalState([1, 2], [1])
    with pytest.raises(ValueError):
        EmpiricalState([np.nan], [0])
    with pytest.raises(ValueError):
        EmpiricalState([], [])
    s = EmpiricalState([1.0, 2.0], [0.0, 1.0], k=3)
    assert s.n == 2 and s.k == 3
    with pytest.raises(ValueError):
        s.x[0] = 5.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_empirical_eval_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    s = EmpiricalState(rng.standard_normal(n) * 10, rng.standard_normal(n))
    perm = rng.permutation(n)
    f = lambda x, xi: np.sin(x) * xi + x**2
    assert empirical_measure_eval(s, f) == empirical_measure_eval(s.permuted(perm), f)


def test_atom_set_invariants():
    with pytest.raises(ValueError):
        XiAtomSet([0, 1], [0.5, 0.6])
    with pytest.raises(ValueError):
        XiAtomSet([0, 0], [0.5, 0.5])
    with pytest.raises(ValueError):
        XiAtomSet([0, 1], [1.0, 0.0])
    a = XiAtomSet.sparse(0.1, 1.0)
    assert a.index_of(1.0) == 1
    with pytest.raises(KeyError):
        a.index_of(2.0)


def test_density_eval_examples():
    g = Grid(-8, 8, 1025)
    f = DensityField.gaussian(XiAtomSet.single(0.0), g, 0.0, 1.0)
    assert density_field_eval(f, lambda x, xi: 1.0) == pytest.approx(1, abs=1e-8)
    assert density_field_eval(f, lambda x, xi: x**2) == pytest.approx(1, abs=1e-4)
    two = DensityField.point_masses(XiAtomSet([0.0, 1.0], [0.9, 0.1]), g, 0.0)
    assert density_field_eval(two, lambda x, xi: float(xi == 1.0)) == pytest.approx(0.1, abs=1e-12)


def test_density_field_validation():
    g = Grid(-1, 1, 5)
    at = XiAtomSet.single(0.0)
    with pytest.raises(ValueError, match="mass"):
        DensityField(at, g, np.ones((1, 5)))
    with pytest.raises(ValueError, match="nonnegative"):
        DensityField(at, g, np.array([[0.5, -0.1, 0.6, 0.5, 0.5]]))
    with pytest.raises(ValueError, match="shape"):
        DensityField(at, g, np.ones((2, 5)) / 2)
    with pytest.raises(ValueError):
        Grid(1, 1, 10)


def test_delta_bump_is_normalized_triangle():
    g = Grid(-1, 1, 201)
    p = delta_bump(g, 0.3)
    assert g.integrate(p) == pytest.approx(1, abs=1e-14)
    assert np.count_nonzero(p) <= 4  # half-width 2 dx
    assert g.x[np.argmax(p)] == pytest.approx(0.3)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 2.0))
def test_density_eval_linear(a, b, var):
    g = Grid(-10, 10, 513)
    f = DensityField.gaussian(XiAtomSet([0.0, 1.0], [0.3, 0.7]), g, lambda xi: xi, var)
    u = lambda x, xi: x**2
    v = lambda x, xi: np.cos(x) + xi
    lhs = density_field_eval(f, lambda x, xi: a * u(x, xi) + b * v(x, xi))
    rhs = a * density_field_eval(f, u) + b * density_field_eval(f, v)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_histogram_examples():
    s = EmpiricalState(np.zeros(5), np.zeros(5))
    h = histogram(s, 0.0, [-1, -0.5, 0.5, 1])
    assert h[1] * 1.0 == pytest.approx(1.0) and h[0] == 0 and h[2] == 0
    s = EmpiricalState([0.0, 1.0], [0.0, 0.0])
    assert np.allclose(histogram(s, 0.0, [-0.5, 0.5, 1.5]), [0.5, 0.5])
    with pytest.raises(EmptySelectionError):
        histogram(s, 1.0, [-0.5, 0.5])


def test_histogram_of_normal_sample():
    rng = np.random.default_rng(3)
    s = EmpiricalState(rng.standard_normal(100_000), np.zeros(100_000))
    edges = np.linspace(-6, 6, 121)
    h = histogram(s, 0.0, edges)
    w = np.diff(edges)
    assert np.all(h >= 0)
    assert np.sum(h * w) == pytest.approx(1, abs=1e-12)
    centers = 0.5 * (edges[1:] + edges[:-1])
    # bin masses of N(0,1) from the error function
    cdf = 0.5 * (1 + np.vectorize(math.erf)(edges / math.sqrt(2)))
    assert np.sum(np.abs(h * w - np.diff(cdf))) < 0.02
    assert centers.size == h.size


def test_fields_csv_roundtrip(tmp_path):
    g = Grid(-5, 5, 101)
    f = DensityField.gaussian(XiAtomSet.sparse(0.1, 1.0), g, lambda xi: xi, 0.5, t=0.25)
    p = tmp_path / "f.csv"
    write_fields_csv(p, [f, f.with_densities(f.densities, 0.5)])
    back = read_fields_csv(p)
    assert [b.t for b in back] == [0.25, 0.5]
    assert np.array_equal(back[0].densities, f.densities)
    assert np.array_equal(back[0].atoms.weights, f.atoms.weights)
    assert p.read_text().splitlines()[0] == "t,xi,weight,x,density"


def test_order_parameter_path(tmp_path):
    path = OrderParameterPath.from_function(lambda t: [t, 2 * t], 0.0, 1.0, 0.25, ("a", "b"))
    assert path.values.shape == (5, 2)
    assert np.allclose(path.at(0.3), [0.3, 0.6])
    assert np.allclose(path.at([0.1, 0.9]), [[0.1, 0.2], [0.9, 1.8]])
    with pytest.raises(ValueError):
        path.at(1.5)
    with pytest.raises(ValueError):
        OrderParameterPath(0.0, 0.1, [[1.0]])
    with pytest.raises(ValueError):
        OrderParameterPath(0.0, 0.0, [[1.0], [1.0]])
    p = tmp_path / "q.csv"
    path.write_csv(p)
    back = OrderParameterPath.read_csv(p)
    assert back.names == ("a", "b")
    assert np.array_equal(back.values, path.values)


def test_grid_is_mirror_symmetric():
    x = Grid(-10, 10, 1025).x
    assert np.array_equal(x, -x[::-1])
    assert x[512] == 0.0


def test_gaussian_density_normalized():
    g = Grid(-10, 10, 2001)
    assert g.integrate(gaussian_density(g, 1.0, 0.5)) == pytest.approx(1, abs=1e-12)
