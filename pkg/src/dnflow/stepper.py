"""Implicit time stepping for D psi(v_t) = div DF(Dv) with zero Dirichlet data.

Each step minimises the strictly convex functional

    J(v) = sum_nodes w * tau * psi((v - v_prev) / tau) + sum_elements |e| * F(D_e v)

whose gradient, divided by the nodal weight w, is the strong residual returned
by :func:`step_residual`.  Minimisation uses damped Newton with Armijo
backtracking; Newton systems are solved by Jacobi-preconditioned CG.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, LinearOperator

from .errors import ContractError, NumericError
from .grid import BoxDomain, ElementGradient, Trajectory
from .potentials import MatrixPotential, ScalarPotential


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_newton: int = 50
    armijo_c: float = 1e-4
    armijo_factor: float = 0.5
    max_backtracks: int = 60
    cg_rtol: float = 1e-2       # loosest inner tolerance; tightened as the residual drops
    cg_maxiter: int = 10000
    forcing: bool = False       # enables the manufactured-solution source term

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_newton < 1 or self.max_backtracks < 1 or self.cg_maxiter < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0 < self.armijo_c < 1 or not 0 < self.armijo_factor < 1:
            raise ValueError("Armijo parameters must lie in (0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepReport:
    k: int
    iterations: int
    residual: float
    J: list = field(default_factory=list)   # functional value at each accepted iterate
    wall_time: float = 0.0

    def as_dict(self, with_time: bool = False) -> dict:
        out = {"k": self.k, "iterations": self.iterations, "residual": self.residual,
               "J": self.J[-1] if self.J else None}
        if with_time:
            out["wall_time"] = self.wall_time
        return out


class StepProblem:
    """Step functional J, its gradient and Hessian for fixed v_prev, tau, psi, F."""

    def __init__(self, domain: BoxDomain, v_prev: np.ndarray, tau: float,
                 psi: ScalarPotential, F: MatrixPotential, forcing=None, boundary=None,
                 eg: ElementGradient | None = None):
        self.domain = domain
        self.eg = eg if eg is not None else ElementGradient(domain)
        self.v_prev = np.asarray(v_prev, dtype=float)
        self.tau = float(tau)
        self.psi, self.F = psi, F
        self.m = self.v_prev.shape[-1]
        self.w = domain.cellvol
        self.forcing = None if forcing is None else np.asarray(forcing, dtype=float)
        self.boundary = boundary

    def _rate(self, v):
        return (v - self.v_prev) / self.tau

    def value(self, v: np.ndarray) -> float:
        a = self._rate(v)
        J = self.w * self.tau * float(np.sum(self.psi.value(a)))
        J += self.eg.integrate(self.F.value(self.eg.apply(v, self.boundary)))
        if self.forcing is not None:
            J -= self.w * float(np.sum(self.forcing * v))
        return J

    def residual(self, v: np.ndarray) -> np.ndarray:
        """Strong residual: gradient of J divided by the nodal weight."""
        a = self._rate(v)
        flux = self.F.gradient(self.eg.apply(v, self.boundary)) * self.eg.weights[:, None, None]
        r = self.psi.gradient(a) + self.eg.adjoint(flux) / self.w
        if self.forcing is not None:
            r = r - self.forcing
        return r

    def hessian(self, v: np.ndarray) -> sp.csr_matrix:
        """Hessian of J / w in component-major ordering (block (i, k) is m_i x m_k nodes)."""
        m, n, nn = self.m, self.domain.n, self.domain.num_nodes
        Hpsi = self.psi.hessian(self._rate(v)).reshape(nn, m, m) / self.tau
        HF = self.F.hessian(self.eg.apply(v, self.boundary))   # (E, m, n, m, n)
        wts = self.eg.weights / self.w
        G = self.eg.G
        blocks = [[None] * m for _ in range(m)]
        for i in range(m):
            for k in range(m):
                B = sp.diags(Hpsi[:, i, k])
                for d in range(n):
                    for e in range(n):
                        coef = wts * HF[:, i, d, k, e]
                        if np.any(coef):
                            B = B + G[d].T @ sp.diags(coef) @ G[e]
                blocks[i][k] = B
        return sp.bmat(blocks, format="csr")


def _to_flat(v: np.ndarray) -> np.ndarray:
    # component-major: all nodes of component 0, then component 1, ...
    m = v.shape[-1]
    return np.moveaxis(v.reshape(-1, m), -1, 0).ravel()


def _from_flat(x: np.ndarray, cells: tuple, m: int) -> np.ndarray:
    return np.moveaxis(x.reshape(m, -1), 0, -1).reshape(cells + (m,))


def step_residual(v, v_prev, tau, psi, F, domain: BoxDomain, forcing=None, boundary=None) -> np.ndarray:
    """Discrete D psi((v - v_prev)/tau) - div DF(Dv) at every interior node.

    Pairing with a nodal test field w under the lumped weight reproduces the
    quadrature of  int D psi . w + int DF(Dv) : Dw.
    """
    return StepProblem(domain, v_prev, tau, psi, F, forcing, boundary).residual(np.asarray(v, dtype=float))


def solve_step(v_prev, tau, psi, F, cfg: SolverConfig, domain: BoxDomain, v0=None,
               forcing=None, boundary=None, k: int = 1, eg: ElementGradient | None = None):
    """Minimise the step functional; returns (v, StepReport)."""
    start = time.perf_counter()
    prob = StepProblem(domain, v_prev, tau, psi, F, forcing if cfg.forcing else None, boundary, eg)
    cells, m = domain.cells, prob.m
    v = np.array(prob.v_prev if v0 is None else v0, dtype=float)
    J = prob.value(v)
    r = prob.residual(v)
    rnorm = float(np.max(np.abs(r)))
    Js, trace = [J], [rnorm]
    eps = np.finfo(float).eps
    it = 0
    while rnorm > cfg.tol:
        if it >= cfg.max_newton:
            raise NumericError(f"step {k}: Newton did not reach tol {cfg.tol:g} in {it} iterations",
                               rnorm, trace)
        it += 1
        H = prob.hessian(v)
        g = _to_flat(r)
        diag = H.diagonal()
        M = LinearOperator(H.shape, matvec=lambda x: x / diag)
        rtol = float(np.clip(0.1 * cfg.tol / max(np.linalg.norm(g, np.inf), 1e-300), 1e-14, cfg.cg_rtol))
        p, info = cg(H, -g, rtol=rtol, atol=0.0, maxiter=cfg.cg_maxiter, M=M)
        if info < 0:
            raise NumericError(f"step {k}: CG breakdown", rnorm, trace)
        slope = float(np.dot(g, p)) * prob.w
        if slope >= 0:
            p, slope = -g / diag, -float(np.dot(g, g / diag)) * prob.w
        step = _from_flat(p, cells, m)
        s, accepted = 1.0, False
        for _ in range(cfg.max_backtracks):
            v_new = v + s * step
            J_new = prob.value(v_new)
            if J_new <= J + cfg.armijo_c * s * slope:
                accepted = True
                break
            # near roundoff J can no longer resolve the decrease: fall back on the residual
            if abs(s * slope) < 10 * eps * max(abs(J), 1.0) and J_new <= J + 10 * eps * max(abs(J), 1.0):
                r_new = prob.residual(v_new)
                if np.max(np.abs(r_new)) < rnorm:
                    accepted = True
                    break
            s *= cfg.armijo_factor
        if not accepted:
            raise ContractError(f"step {k}: line search found no decrease (residual {rnorm:.3e}); "
                                "check the convexity certification of the potentials")
        v, J = v_new, min(J_new, J)
        r = prob.residual(v)
        rnorm = float(np.max(np.abs(r)))
        Js.append(J)
        trace.append(rnorm)
    return v, StepReport(k, it, rnorm, Js, time.perf_counter() - start)


def run_scheme(g, psi, F, N: int, T: float, cfg: SolverConfig, domain: BoxDomain,
               forcing=None, boundary=None) -> Trajectory:
    """Apply solve_step N times from v^0 = g.

    ``forcing(t)`` returns a nodal source field and ``boundary(t)`` an m-vector
    of constant Dirichlet data; both are extensions used only for validation.
    """
    g = np.asarray(g, dtype=float)
    if N < 1:
        raise ValueError("N must be >= 1")
    if not np.all(np.isfinite(g)):
        raise ValueError("initial datum must be finite")
    tau = T / N
    eg = ElementGradient(domain)
    snaps = np.empty((N + 1,) + g.shape)
    snaps[0] = g
    reports = []
    for k in range(1, N + 1):
        t = k * tau
        f = forcing(t) if forcing is not None else None
        b = boundary(t) if boundary is not None else None
        try:
            v, rep = solve_step(snaps[k - 1], tau, psi, F, cfg, domain, forcing=f, boundary=b, k=k, eg=eg)
        except NumericError as exc:
            exc.step = k
            raise
        snaps[k] = v
        reports.append(rep)
    return Trajectory(domain, g.shape[-1], tau, snaps, psi.metadata(), F.metadata(), cfg.tol, reports)


def interpolants(traj: Trajectory, t: float):
    """Piecewise-constant (right-continuous) and piecewise-linear interpolants at time t."""
    if not 0.0 <= t <= traj.T * (1 + 1e-14):
        raise ValueError(f"t = {t} outside [0, {traj.T}]")
    if t <= 0.0:
        return traj.snapshots[0].copy(), traj.snapshots[0].copy()
    s = t / traj.tau
    k = int(np.ceil(s - 1e-12))
    k = min(max(k, 1), traj.N)
    frac = min(max(s - (k - 1), 0.0), 1.0)
    vk, vprev = traj.snapshots[k], traj.snapshots[k - 1]
    return vk.copy(), vprev + frac * (vk - vprev)
