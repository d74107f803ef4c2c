import math

import numpy as np
import pytest

from dnflow.errors import NumericError
from dnflow.grid import BoxDomain
from dnflow.potentials import quadratic_F, quadratic_psi, soft_quadratic_F, soft_quadratic_psi
from dnflow.stepper import SolverConfig, StepProblem, interpolants, run_scheme, solve_step, step_residual


def test_heat_eigenmode_matches_discrete_decay(heat_run):
    h = 0.01
    lam = (2 - 2 * math.cos(math.pi * h)) / h ** 2
    g = heat_run.snapshots[0]
    for k in (1, 10, 100):
        np.testing.assert_allclose(heat_run.snapshots[k], (1 + lam * 1e-3) ** (-k) * g, atol=1e-9)


def test_single_node_closed_form():
    dom = BoxDomain(1, (0.0,), (0.2,), (1,))
    v, rep = solve_step(np.ones((1, 1)), 0.01, quadratic_psi(1), quadratic_F(1, 1), SolverConfig(tol=1e-13), dom)
    assert float(v[0, 0]) == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert rep.residual <= 1e-13


def test_residual_formula():
    dom = BoxDomain(1, (0.0,), (0.2,), (1,))
    r = step_residual(np.full((1, 1), 0.5), np.ones((1, 1)), 0.01, quadratic_psi(1), quadratic_F(1, 1), dom)
    assert float(r[0, 0]) == pytest.approx(50.0)


def test_soft_step_is_stationary_and_descends(unit_interval):
    psi, F = soft_quadratic_psi(1, 0.5), soft_quadratic_F(1, 1, 0.5)
    g = np.sin(np.pi * unit_interval.node_coords()[..., :1]) * 3
    v, rep = solve_step(g, 1e-3, psi, F, SolverConfig(), unit_interval)
    r = step_residual(v, g, 1e-3, psi, F, unit_interval)
    assert np.abs(r).max() <= 1e-10
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(rep.J, rep.J[1:]))


def test_hessian_matches_finite_differences():
    dom = BoxDomain(2, (0.0, 0.0), (1.0, 1.0), (3, 3))
    rng = np.random.default_rng(0)
    prob = StepProblem(dom, rng.normal(size=(3, 3, 2)), 0.05, soft_quadratic_psi(2, 0.5),
                       soft_quadratic_F(2, 2, 0.5))
    v = rng.normal(size=(3, 3, 2))
    H = prob.hessian(v).toarray()
    x = v.transpose(2, 0, 1).ravel()
    eps = 1e-6
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        vp = (x + e).reshape(2, 3, 3).transpose(1, 2, 0)
        vm = (x - e).reshape(2, 3, 3).transpose(1, 2, 0)
        gp = prob.residual(vp).transpose(2, 0, 1).ravel()
        gm = prob.residual(vm).transpose(2, 0, 1).ravel()
        cols.append((gp - gm) / (2 * eps))
    fd = np.array(cols).T
    np.testing.assert_allclose(H, fd, atol=1e-5 * np.abs(H).max())


def test_iteration_cap_raises(unit_interval):
    g = np.sin(np.pi * unit_interval.node_coords()[..., :1]) * 50
    cfg = SolverConfig(tol=1e-14, max_newton=1)
    with pytest.raises(NumericError):
        run_scheme(g, soft_quadratic_psi(1, 0.5), soft_quadratic_F(1, 1, 0.5), 3, 0.003, cfg, unit_interval)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    with pytest.raises(ValueError):
        SolverConfig(armijo_c=1.5)


def test_zero_datum_stays_zero(unit_interval):
    tr = run_scheme(np.zeros((99, 1)), soft_quadratic_psi(1, 0.5), soft_quadratic_F(1, 1, 0.5), 5, 0.01,
                    SolverConfig(), unit_interval)
    assert not np.any(tr.snapshots)
    assert all(r.iterations == 0 for r in tr.reports)


def test_forcing_manufactured_solution():
    # v = t sin(pi x) solves D psi(v_t) - v_xx = f with f = sin(pi x)(1 + pi^2 t) for quadratic potentials
    dom = BoxDomain(1, (0.0,), (1.0,), (49,))
    x = dom.node_coords()[..., :1]

    def forcing(t):
        return np.sin(np.pi * x) * (1 + np.pi ** 2 * t)

    errs = []
    for N in (10, 20):
        tr = run_scheme(np.zeros((49, 1)), quadratic_psi(1), quadratic_F(1, 1), N, 0.1,
                        SolverConfig(forcing=True), dom, forcing=forcing)
        errs.append(np.abs(tr.snapshots[-1] - 0.1 * np.sin(np.pi * x)).max())
    assert errs[1] < errs[0] or errs[1] < 1e-3


def test_interpolants(heat_run):
    pc, pl = interpolants(heat_run, 0.0105)
    np.testing.assert_array_equal(pc, heat_run.snapshots[11])
    np.testing.assert_allclose(pl, 0.5 * (heat_run.snapshots[10] + heat_run.snapshots[11]))
    with pytest.raises(ValueError):
        interpolants(heat_run, 0.2)


def test_reports(heat_run):
    assert len(heat_run.reports) == 100
    d = heat_run.reports[0].as_dict()
    assert set(d) == {"k", "iterations", "residual", "J"}
    assert all(r.residual <= 1e-10 for r in heat_run.reports)
