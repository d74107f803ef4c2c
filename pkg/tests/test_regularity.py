import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnflow.errors import GeometryError, ParameterWindowError
from dnflow.grid import BoxDomain, ParabolicCylinder, Trajectory
from dnflow.regularity import (Region, backwards_decay_check, backwards_decay_constant, beta_window,
                               covering_number, decay_classification, dyadic_radii, fixture_points,
                               fractional_quotient_exponent, gagliardo_space_seminorm, gagliardo_time_seminorm,
                               greedy_covering_number, higher_integrability_report, local_energy,
                               p_for_dimension, parabolic_dimension, singular_candidates, theorem1_budget,
                               thresholds)


def polynomial_trajectory(func, cells=39, N=60, T=0.06):
    dom = BoxDomain(1, (0.0,), (1.0,), (cells,))
    x = dom.node_coords()[..., 0]
    t = T / N * np.arange(N + 1)
    snaps = np.stack([func(x, tk) for tk in t])[..., None]
    return Trajectory(dom, 1, T / N, snaps)


# thresholds -----------------------------------------------------------------


def test_threshold_arithmetic():
    p = thresholds(epsilon=0.1, vartheta=0.25, n=1, L=1.0, gamma=0.75, alpha=1.0)
    assert p.epsilon1 == 0.015625
    assert p.mu == 0.25
    assert theorem1_budget(1.0, 4.0, 1)[2] == 2.75


def test_default_thresholds():
    p = thresholds()
    eps1 = min(0.1, 0.25 ** 1.5 * 10 / 8)
    rho1 = min(0.5, (0.25 ** 8 * eps1 ** 2 / 240) ** (1 / 1.5))
    assert p.epsilon1 == pytest.approx(eps1, rel=1e-15)
    assert p.rho1 == pytest.approx(rho1, rel=1e-12)
    assert p.rho1 == pytest.approx(7.3939e-7, rel=1e-4)
    assert p.mu < p.alpha / 2 < p.gamma


@pytest.mark.parametrize("kw", [dict(vartheta=0.5), dict(epsilon=0.5), dict(rho=0.6), dict(gamma=0.5),
                                dict(gamma=1.0), dict(L=0.0), dict(alpha=0.0)])
def test_threshold_windows(kw):
    with pytest.raises(ParameterWindowError):
        thresholds(**kw)


def test_rho_window_is_closed_above():
    assert thresholds(rho=0.5).rho == 0.5


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.49), st.floats(0.01, 0.49), st.floats(0.1, 100.0), st.integers(1, 2))
def test_threshold_ordering(vartheta, eps, L, n):
    p = thresholds(epsilon=eps, vartheta=vartheta, L=L, n=n)
    assert 0 < p.epsilon1 <= eps
    assert 0 < p.rho1 <= p.rho
    assert p.mu == pytest.approx(0.5 * math.log(0.5) / math.log(vartheta))


def test_budget_windows():
    beta, eps, ceiling = theorem1_budget(0.5, 3.0, 2)
    assert beta == pytest.approx(1.0 / 12.0) and eps == pytest.approx(1.0 / 24.0)
    assert ceiling == pytest.approx(4.0 - 1.0 / 6.0)
    with pytest.raises(ParameterWindowError):
        theorem1_budget(1.0, 2.0)


# local energy --------------------------------------------------------------


def test_local_energy_vanishes_for_polynomial_field():
    tr = polynomial_trajectory(lambda x, t: 2.0 * t + 0.5 * x * x + 3.0 * x)
    s = local_energy(tr, ParabolicCylinder((0.5,), 0.03, 0.15))
    assert s.E == pytest.approx(0.0, abs=1e-18)
    assert float(s.avg_vt[0]) == pytest.approx(2.0)


def test_local_energy_of_linear_in_time_rate():
    # v_t = t has mean-square oscillation equal to the variance of the sampled times
    tr = polynomial_trajectory(lambda x, t: 0.5 * t * t + 0.0 * x)
    cyl = ParabolicCylinder((0.5,), 0.03, 0.2)
    s = local_energy(tr, cyl)
    from dnflow.grid import cylinder_points
    pts = cylinder_points(tr.domain, tr.N, tr.tau, cyl)
    rates = (tr.times[pts.steps] - 0.5 * tr.tau)
    assert s.T1 == pytest.approx(np.var(rates), rel=1e-9)
    assert s.T2 == pytest.approx(0.0, abs=1e-20) and s.T3 == pytest.approx(0.0, abs=1e-20)


def test_local_energy_decays_on_smooth_run(heat_run):
    radii = np.array([0.2, 0.14, 0.1, 0.07, 0.05])
    E = [local_energy(heat_run, ParabolicCylinder((0.5,), 0.05, r)).E for r in radii]
    assert np.all(np.diff(E) < 0)
    assert np.polyfit(np.log(radii), np.log(E), 1)[0] >= 1.5


def test_local_energy_geometry(heat_run):
    with pytest.raises(GeometryError):
        local_energy(heat_run, ParabolicCylinder((0.5,), 0.0005, 0.03))


def test_backwards_decay():
    assert backwards_decay_constant(0.5, 1) == 12 * 2 ** 8
    assert backwards_decay_constant(0.5, 2) == 12 * 2 ** 10


@pytest.mark.parametrize("run", ["heat_run", "soft_run"])
def test_backwards_decay_on_runs(run, request):
    tr = request.getfixturevalue(run)
    for x, t, r in (((0.5,), 0.05, 0.15), ((0.3,), 0.04, 0.12), ((0.6,), 0.06, 0.2)):
        chk = backwards_decay_check(tr, ParabolicCylinder(x, t, r), 0.5)
        assert chk.passed and chk.margin > 0


def test_decay_classification_paths(heat_run):
    p = thresholds()
    ev = decay_classification(heat_run, (0.5,), 0.05, 0.1, p)
    assert ev.flag == "unverified" and "rho1" in ev.reason
    ev = decay_classification(heat_run, (0.5,), 0.05, 0.5 * p.rho1, p)
    assert ev.truncated and ev.reason == "resolution floor"
    ev = decay_classification(heat_run, (0.5,), 0.05, 0.1, p, enforce_rho1=False)
    assert ev.reason == "entry condition"


def test_decay_classification_regular_for_quiet_field():
    tr = polynomial_trajectory(lambda x, t: 1e-3 * (t + x * x), cells=199, N=400, T=0.1)
    p = thresholds(vartheta=0.45)
    ev = decay_classification(tr, (0.5,), 0.05, 0.2, p, K=2, enforce_rho1=False)
    assert ev.regular, ev.reason


# fractional quotients -----------------------------------------------------------


@pytest.mark.parametrize("run", ["heat_run", "soft_run"])
@pytest.mark.parametrize("name", ["vt", "D2v"])
def test_fractional_slope(run, name, request):
    tr = request.getfixturevalue(run)
    fit = fractional_quotient_exponent(tr, name, Region((0.2,), (0.8,), 0.03, 0.07),
                                       [tr.tau * 2 ** j for j in range(4)])
    assert 1.8 <= fit.slope <= 2.2
    assert fit.passed and fit.floor == (0.25 if name == "vt" else 0.5)


def test_fractional_arguments(heat_run):
    region = Region((0.2,), (0.8,), 0.03, 0.07)
    with pytest.raises(ParameterWindowError):
        fractional_quotient_exponent(heat_run, "vt", region, [1.5e-3])
    with pytest.raises(GeometryError):
        fractional_quotient_exponent(heat_run, "vt", Region((0.0,), (0.8,), 0.03, 0.07), [1e-3])
    with pytest.raises(GeometryError):
        Region((0.5,), (0.2,), 0.03, 0.07)


def test_seminorms_and_integrability(heat_run):
    region = Region((0.3,), (0.7,), 0.04, 0.06)
    assert beta_window("vt", 1) == 0.25 and beta_window("D2v", 1, alpha=0.6) == 0.3
    s_t = gagliardo_time_seminorm(heat_run, "vt", 0.2, region)
    s_x = gagliardo_space_seminorm(heat_run, "D2v", 0.4, region)
    assert np.isfinite(s_t) and s_t > 0 and np.isfinite(s_x) and s_x > 0
    with pytest.raises(ParameterWindowError):
        gagliardo_time_seminorm(heat_run, "vt", 0.25, region)
    rep = higher_integrability_report(heat_run, region)
    assert rep.p == p_for_dimension(1) == 4.0
    assert rep.vt_ratio > 0 and rep.D2v_ratio > 0


# coverings and dimension -----------------------------------------------------


def test_fixture_dimensions():
    radii = dyadic_radii()
    for kind, target, tol in (("point", 0.0, 0.05), ("slice", 1.0, 0.15), ("box", 3.0, 0.2)):
        est = parabolic_dimension(fixture_points(kind), radii)
        assert abs(est.dimension - target) <= tol
        assert abs(est.dimension - est.dimension_without_finest) <= 0.05
    est = parabolic_dimension(fixture_points("slice", n=2), radii)
    assert abs(est.dimension - 2.0) <= 0.15


def test_empty_set_dimension():
    est = parabolic_dimension(np.empty((0, 2)), dyadic_radii())
    assert est.empty and est.dimension == 0.0


def test_dimension_needs_a_decade():
    with pytest.raises(ValueError):
        parabolic_dimension(fixture_points("point"), [0.2, 0.1, 0.05])


point_sets = st.lists(st.tuples(st.floats(0, 0.1), st.floats(0, 1)), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(point_sets, point_sets, st.sampled_from([0.2, 0.1, 0.05]))
def test_covering_monotone_under_supersets(a, b, r):
    A = np.array(a)
    AB = np.vstack([A, np.array(b)])
    assert covering_number(A, r) <= covering_number(AB, r)


@settings(max_examples=100, deadline=None)
@given(point_sets, st.sampled_from([0.2, 0.1, 0.05]))
def test_covering_is_a_cover(a, r):
    # every point lies in a cylinder centred on some point of its own cell
    P = np.array(a)
    side = np.array([0.5 * r * r, r])
    keys = np.floor(P / side).astype(int)
    for key in np.unique(keys, axis=0):
        members = P[np.all(keys == key, axis=1)]
        c = members[0]
        assert np.all(np.abs(members[:, 1] - c[1]) < r)
        assert np.all(np.abs(members[:, 0] - c[0]) < 0.5 * r * r)
    assert greedy_covering_number(P, r) <= covering_number(P, r)


def test_singular_candidates(heat_run):
    centers = np.array([[0.05, 0.5], [0.06, 0.3]])
    assert len(singular_candidates(heat_run, centers, 0.1, threshold=1e9)) == 0
    assert len(singular_candidates(heat_run, centers, 0.1, threshold=0.0)) == 2
