import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scaling_limit_lab.measure import DensityField, EmpiricalState, Grid, OrderParameterPath, XiAtomSet
from scaling_limit_lab.metrics import (bin_average, compare_sim_to_pde, cumulative_mass, histogram_l1_distance,
                                       l1_density_distance, mse_of, overlap_q, reg_r, roc_curve, roc_point,
                                       tail_mass)
from scaling_limit_lab.regularizers import Regularizer
from scaling_limit_lab.simulate import TrajectoryRecord

G = Grid(-8, 8, 1601)


def test_functionals_on_both_measure_types():
    s = EmpiricalState([1.0, 3.0], [1.0, 1.0])
    assert mse_of(s) == 2.0 and overlap_q(s) == 2.0
    assert reg_r(s, Regularizer("l1")) == 2.0
    f = DensityField.gaussian(XiAtomSet([0.0, 2.0], [0.5, 0.5]), G, 0.0, 1.0)
    assert mse_of(f) == pytest.approx(1 + 0.5 * 4, abs=1e-8)
    assert overlap_q(f) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(TypeError):
        mse_of([1, 2])


def test_tail_mass_partial_cells():
    g = Grid(0, 1, 11)
    p = np.ones(11)
    assert float(tail_mass(p, g, 0.25)) == pytest.approx(0.75)
    assert float(cumulative_mass(p, g, 2.0)) == pytest.approx(1.0)
    assert np.allclose(bin_average(p, g, [0, 0.5, 1.0]), 1.0)


def sparse_field(mean_on, var=0.25):
    atoms = XiAtomSet.sparse(0.1, 1.0)
    return DensityField.gaussian(atoms, G, lambda xi: mean_on * xi, var)


def test_roc_point_values():
    f = sparse_field(2.0)
    p = roc_point(f, 1.0, 0.1, 1.0)
    # tail of N(2, .25) above 1 and of N(0, .25) above 1
    assert p.tpr == pytest.approx(0.5 * math.erfc(-2 / math.sqrt(2)), abs=1e-5)
    assert p.fpr == pytest.approx(0.5 * math.erfc(2 / math.sqrt(2)), abs=1e-5)
    with pytest.raises(ValueError):
        roc_point(f, 0.0, 0.1, 5.0)
    with pytest.raises(ValueError):
        roc_point(f, 0.0, 1.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 3), st.floats(0.05, 2.0))
def test_roc_monotone_in_threshold(mean_on, var):
    f = sparse_field(mean_on, var)
    pts = roc_curve(f, np.linspace(-3, 4, 71), 0.1, 1.0)
    tpr = np.array([p.tpr for p in pts])
    fpr = np.array([p.fpr for p in pts])
    assert np.all(np.diff(tpr) <= 1e-15) and np.all(np.diff(fpr) <= 1e-15)
    assert np.all((tpr >= -1e-12) & (tpr <= 1 + 1e-8))


def gauss(m, v):
    return np.exp(-0.5 * (G.x - m) ** 2 / v) / math.sqrt(2 * math.pi * v)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_l1_metric_properties(a, b, c):
    pa, pb, pc = gauss(a, 1.0), gauss(b, 0.5), gauss(c, 2.0)
    d = lambda u, v: l1_density_distance(u, v, G)
    assert d(pa, pa) == 0.0
    assert d(pa, pb) == d(pb, pa)
    assert d(pa, pc) <= d(pa, pb) + d(pb, pc) + 1e-12
    assert d(pa, pb) <= 2.0 + 1e-8


def test_l1_distance_validation():
    with pytest.raises(ValueError):
        l1_density_distance(gauss(0, 1), gauss(0, 1), G, Grid(-1, 1, 5))
    with pytest.raises(ValueError):
        l1_density_distance(np.ones(3), np.ones(3), G)


def test_histogram_l1_counts_outside_mass():
    edges = np.linspace(-1, 1, 21)
    p = gauss(0.0, 1.0)
    h = bin_average(p, G, edges)
    outside = 1 - float(cumulative_mass(p, G, 1.0) - cumulative_mass(p, G, -1.0))
    assert histogram_l1_distance(h, edges, p, G) == pytest.approx(outside, abs=1e-8)


def recs(vals, times=(0.0, 1.0, 2.0)):
    return [TrajectoryRecord(list(times), {"mse": np.array(v, dtype=float)}, seed=i) for i, v in enumerate(vals)]


def test_compare_self_gives_zero_z(tmp_path):
    path = OrderParameterPath(0.0, 1.0, [[1.0], [0.5], [0.25]], ("e",))
    rep = compare_sim_to_pde(recs([[1.0, 0.5, 0.25]] * 3), path, "mse")
    assert rep.max_abs_z == 0.0 and rep.passed
    rep.write_csv(tmp_path / "c.csv")
    rep.write_json(tmp_path / "c.json")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "t,sim_mean,sim_stderr,pde_value,z"
    assert json.loads((tmp_path / "c.json").read_text())["passed"] is True


def test_compare_z_scores():
    path = OrderParameterPath(0.0, 1.0, [[1.0], [0.5], [0.25]], ("e",))
    rep = compare_sim_to_pde(recs([[1.0, 0.6, 0.3], [1.0, 0.4, 0.3]]), path, "mse")
    assert rep.sim_stderr[1] == pytest.approx(0.1)
    assert rep.z[1] == pytest.approx(0.0)
    assert rep.z[2] == np.inf and not rep.passed
    with pytest.raises(ValueError):
        compare_sim_to_pde(recs([[1, 1, 1]]), path, "overlap_q")
    with pytest.raises(ValueError):
        compare_sim_to_pde(recs([[1, 1]], times=(5.0, 6.0)), path, "mse")
