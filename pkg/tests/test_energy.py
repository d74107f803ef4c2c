import numpy as np
import pytest

from dnflow.energy import (CutoffFunction, bound1_constant, bound2_constant, caccioppoli_check,
                           caccioppoli_constant, compute_ledger, continuum_identity_residual,
                           discrete_bound1_check, discrete_bound2_check, dissipation_defect,
                           energy_bound2_constant, second_identity_defect, trajectory_bounds)
from dnflow.errors import ContractError, GeometryError
from dnflow.grid import BoxDomain, ParabolicCylinder
from dnflow.potentials import ConvexityBounds, soft_quadratic_F, soft_quadratic_psi
from dnflow.stepper import SolverConfig, run_scheme


@pytest.mark.parametrize("run", ["heat_run", "soft_run", "square_run"])
def test_identity_defects_within_slack(run, request):
    tr = request.getfixturevalue(run)
    L = compute_ledger(tr)
    d = dissipation_defect(tr, ledger=L)
    e = second_identity_defect(tr, ledger=L)
    assert d.passed and e.passed and d.summed_pass and e.summed_pass
    assert d.telescoping_error <= 1e-12


def test_ledger_of_zero_trajectory(unit_interval):
    tr = run_scheme(np.zeros((99, 1)), soft_quadratic_psi(1, 0.5), soft_quadratic_F(1, 1, 0.5), 4, 0.01,
                    SolverConfig(), unit_interval)
    L = compute_ledger(tr)
    for name in ("potential", "dissipation", "dual", "d", "e"):
        assert not np.any(getattr(L, name)[1:])
    assert L.potential[0] == 0.0


def test_energy_is_nonincreasing(soft_run):
    L = compute_ledger(soft_run)
    assert np.all(np.diff(L.potential) <= 1e-14)
    # the implicit scheme dissipates at least what it loses, up to the convexity gap of order tau
    drop = L.potential[0] - L.potential[-1]
    assert L.cumulative_dissipation[-1] <= drop + 1e-12
    assert L.cumulative_dissipation[-1] >= 0.99 * drop


def test_bound_constants():
    assert bound1_constant(ConvexityBounds()) == 1.5
    soft = ConvexityBounds(theta=1.0, Theta=1.5, lam=1.0, Lam=1.5)
    assert bound1_constant(soft) == 2.25
    assert bound2_constant(ConvexityBounds()) == 1.5
    assert energy_bound2_constant(ConvexityBounds()) == 6.0
    assert caccioppoli_constant(ConvexityBounds()) == 48.0
    assert caccioppoli_constant(soft) == 144.0


@pytest.mark.parametrize("run, C", [("heat_run", 1.5), ("soft_run", 2.25)])
def test_global_bounds(run, C, request):
    tr = request.getfixturevalue(run)
    b1 = discrete_bound1_check(tr)
    assert b1.constant == C and b1.passed and b1.ratio < 1
    for d in (0.01, 0.025, 0.04):
        assert discrete_bound2_check(tr, d).passed


def test_bound2_preconditions(heat_run):
    with pytest.raises(ValueError):
        discrete_bound2_check(heat_run, 0.06)
    with pytest.raises(ValueError):
        discrete_bound2_check(heat_run, 0.003)


def test_trajectory_bounds(soft_run):
    b = trajectory_bounds(soft_run)
    assert (b.theta, b.Theta, b.lam, b.Lam) == (1.0, 1.5, 1.0, 1.5)


def test_cutoff_bounds(unit_interval):
    eta = CutoffFunction((0.5,), 0.05, 0.1)
    assert eta.check_bounds(unit_interval, np.linspace(0, 0.1, 101))
    assert eta.value(np.array([[0.55]]), 0.05)[0] == 1.0
    assert eta.value(np.array([[0.75]]), 0.05)[0] == 0.0
    assert eta.eta1(0.05 + 0.02) == 0.0


def test_squared_cutoff_derivatives():
    phi = CutoffFunction((0.5, 0.5), 0.1, 0.2).squared()
    X = np.array([[0.7, 0.62]])
    s, e = 0.13, 1e-6
    fd_t = (phi.value(X, s + e) - phi.value(X, s - e)) / (2 * e)
    fd_x = (phi.value(X + [e, 0], s) - phi.value(X - [e, 0], s)) / (2 * e)
    assert phi.dt(X, s)[0] == pytest.approx(fd_t[0], rel=1e-6)
    assert phi.grad(X, s)[0, 0] == pytest.approx(fd_x[0], rel=1e-6)


def test_continuum_residual_converges():
    phi = CutoffFunction((0.5,), 0.15, 0.25).squared()
    res = []
    for cells, N in ((24, 30), (49, 120)):
        dom = BoxDomain(1, (0.0,), (1.0,), (cells,))
        g = np.sin(np.pi * dom.node_coords()[..., :1])
        tr = run_scheme(g, soft_quadratic_psi(1, 0.5), soft_quadratic_F(1, 1, 0.5), N, 0.3, SolverConfig(), dom)
        res.append(continuum_identity_residual(tr, phi).max_abs)
    # first order in tau: quartering tau cuts the residual about fourfold
    assert res[0] / res[1] > 3.5


def test_continuum_residual_rejects_bad_test_function(heat_run):
    with pytest.raises(ContractError):
        continuum_identity_residual(heat_run, CutoffFunction((0.5,), 0.05, 0.3).squared())


@pytest.mark.parametrize("run", ["heat_run", "soft_run"])
@pytest.mark.parametrize("x, t, r", [((0.5,), 0.05, 0.1), ((0.3,), 0.06, 0.08), ((0.7,), 0.05, 0.12)])
def test_caccioppoli(run, x, t, r, request):
    assert caccioppoli_check(request.getfixturevalue(run), ParabolicCylinder(x, t, r)).passed


def test_caccioppoli_geometry(heat_run):
    with pytest.raises(GeometryError):
        caccioppoli_check(heat_run, ParabolicCylinder((0.5,), 0.05, 0.2))
