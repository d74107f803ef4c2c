"""Energy identities and a-priori bounds evaluated on computed trajectories.

All step-level quantities use the same quadrature as the scheme (lumped
nodal weight for psi terms, element gradients for F terms), so that the
discrete identities hold up to a slack proportional to the solver tolerance:
with every strong residual bounded by ``tol`` in max norm,

    d_k <= sum_nodes w r_k . delta_k          <= tol * |delta_k|_1
    e_k <= sum_nodes w (r_k - r_{k-1}) . delta_k <= 2 tol * |delta_k|_1

where the first uses convexity of F and the second convexity of psi*.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, GeometryError
from .grid import (BoxDomain, ElementGradient, ParabolicCylinder, Trajectory, contains,
                   cylinder_points, gradient, restrict)
from .potentials import ConvexityBounds, fenchel_dual_at_gradient, potentials_from_metadata

TELESCOPE_TOL = 1e-12


def _potentials(traj: Trajectory, psi=None, F=None):
    if psi is None or F is None:
        p, f = potentials_from_metadata(traj.psi_meta, traj.F_meta)
        psi = psi if psi is not None else p
        F = F if F is not None else f
    return psi, F


def trajectory_bounds(traj: Trajectory) -> ConvexityBounds:
    """theta, Theta from psi and lambda, Lambda, alpha from F."""
    bp = ConvexityBounds.from_dict(traj.psi_meta["bounds"])
    bf = ConvexityBounds.from_dict(traj.F_meta["bounds"])
    return ConvexityBounds(theta=bp.theta, Theta=bp.Theta, lam=bf.lam, Lam=bf.Lam,
                           alpha=bf.alpha, holder_const=bf.holder_const)


@dataclass
class EnergyLedger:
    """Per-step energy terms; arrays have length N + 1 and entry 0 refers to g."""

    times: np.ndarray
    potential: np.ndarray     # int F(Dv^k)
    dissipation: np.ndarray   # int D psi(delta_k / tau) . delta_k
    dual: np.ndarray          # int psi*(D psi(delta_k / tau))
    d: np.ndarray
    e: np.ndarray             # e_1 is stored as 0
    slack_d: np.ndarray
    slack_e: np.ndarray
    grad_sq: np.ndarray       # int |Dv^k|^2
    rate_sq: np.ndarray       # int |delta_k / tau|^2
    dgrad_sq: np.ndarray      # int |D delta_k|^2
    tau: float

    @property
    def N(self) -> int:
        return len(self.times) - 1

    @property
    def d_pass(self) -> np.ndarray:
        return self.d <= self.slack_d

    @property
    def e_pass(self) -> np.ndarray:
        return self.e <= self.slack_e

    @property
    def cumulative_dissipation(self) -> np.ndarray:
        return np.cumsum(self.dissipation)

    def rows(self):
        for k in range(self.N + 1):
            yield (k, self.times[k], self.potential[k], self.dissipation[k], self.dual[k],
                   self.d[k], self.e[k], int(self.d_pass[k]), int(self.e_pass[k]))


LEDGER_COLUMNS = ("k", "t", "potential", "dissipation", "dual", "d_k", "e_k", "d_pass", "e_pass")


def compute_ledger(traj: Trajectory, psi=None, F=None) -> EnergyLedger:
    psi, F = _potentials(traj, psi, F)
    dom, tau, w = traj.domain, traj.tau, traj.domain.cellvol
    eg = ElementGradient(dom)
    S = traj.snapshots
    N = traj.N
    pot = np.empty(N + 1)
    gsq = np.empty(N + 1)
    grads = []
    for k in range(N + 1):
        G = eg.apply(S[k])
        grads.append(G)
        pot[k] = eg.integrate(F.value(G))
        gsq[k] = eg.integrate(np.sum(G * G, axis=(-2, -1)))
    diss, dual, rsq, dgsq, l1 = (np.zeros(N + 1) for _ in range(5))
    e = np.zeros(N + 1)
    for k in range(1, N + 1):
        delta = S[k] - S[k - 1]
        a = delta / tau
        diss[k] = w * float(np.sum(psi.gradient(a) * delta))
        dual[k] = w * float(np.sum(fenchel_dual_at_gradient(psi, a)))
        rsq[k] = w * float(np.sum(a * a))
        l1[k] = w * float(np.sum(np.abs(delta)))
        dG = grads[k] - grads[k - 1]
        dgsq[k] = eg.integrate(np.sum(dG * dG, axis=(-2, -1)))
        if k >= 2:
            flux = F.gradient(grads[k]) - F.gradient(grads[k - 1])
            e[k] = eg.integrate(np.sum(flux * dG, axis=(-2, -1))) + tau * dual[k] - tau * dual[k - 1]
    d = np.zeros(N + 1)
    d[1:] = diss[1:] + pot[1:] - pot[:-1]
    slack_d = traj.tol * (1.0 + l1)
    slack_e = 2.0 * traj.tol * (1.0 + l1)
    slack_d[0] = slack_e[0] = slack_e[1 if N >= 1 else 0] = 0.0
    return EnergyLedger(traj.times, pot, diss, dual, d, e, slack_d, slack_e, gsq, rsq, dgsq, tau)


@dataclass
class DefectReport:
    k: np.ndarray
    defects: np.ndarray
    slack: np.ndarray
    passed: bool
    summed_lhs: float = 0.0
    summed_rhs: float = 0.0
    summed_pass: bool = True
    telescoping_error: float = 0.0

    @property
    def max_excess(self) -> float:
        return float(np.max(self.defects - self.slack)) if len(self.defects) else -np.inf


def dissipation_defect(traj: Trajectory, psi=None, F=None, ledger: EnergyLedger | None = None) -> DefectReport:
    """d_k = int D psi(delta/tau).delta + int F(Dv^k) - int F(Dv^{k-1}) <= slack_k.

    The summed form checks max_j [int F(Dv^j) + sum_{k<=j} dissipation_k]
    against int F(Dg) plus the accumulated slack.
    """
    L = ledger if ledger is not None else compute_ledger(traj, psi, F)
    ks = np.arange(1, L.N + 1)
    d, s = L.d[1:], L.slack_d[1:]
    partial = L.potential[1:] + np.cumsum(L.dissipation[1:])
    lhs = float(partial.max()) if len(partial) else 0.0
    rhs = float(L.potential[0])
    tele = abs(float(np.sum(d)) - (float(np.sum(L.dissipation)) + L.potential[-1] - L.potential[0]))
    return DefectReport(ks, d, s, bool(np.all(d <= s)), lhs, rhs,
                        lhs <= rhs + float(np.sum(s)), tele)


def second_identity_defect(traj: Trajectory, psi=None, F=None, ledger: EnergyLedger | None = None) -> DefectReport:
    """e_k = int (DF^k - DF^{k-1}).(Dv^k - Dv^{k-1}) + tau int psi*^k - tau int psi*^{k-1}, k >= 2."""
    L = ledger if ledger is not None else compute_ledger(traj, psi, F)
    ks = np.arange(2, L.N + 1)
    e, s = L.e[2:], L.slack_e[2:]
    return DefectReport(ks, e, s, bool(np.all(e <= s)))


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    slack: float
    constant: float
    passed: bool

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else np.inf)

    @property
    def margin(self) -> float:
        return self.rhs + self.slack - self.lhs


def bound1_constant(b: ConvexityBounds) -> float:
    # sum_k int |delta|^2/tau <= (1/theta) sum dissipation <= (1/theta) int F(Dg)
    # max_k int |Dv^k|^2      <= (2/lambda) int F(Dg),  int F(Dg) <= (Lambda/2) int |Dg|^2
    return b.Lam / (2.0 * b.theta) + b.Lam / b.lam


def bound2_constant(b: ConvexityBounds) -> float:
    # min{lambda, theta/2} * lhs <= (Theta/d) sum_k int |delta|^2/tau <= (Theta/d)(Lambda/(2 theta)) int |Dg|^2
    # and 1/min{lambda, theta/2} <= 1/lambda + 2/theta
    return b.Theta * (b.Lam / (2.0 * b.theta)) * (1.0 / b.lam + 2.0 / b.theta)


def discrete_bound1_check(traj: Trajectory, psi=None, F=None, ledger: EnergyLedger | None = None) -> BoundCheck:
    L = ledger if ledger is not None else compute_ledger(traj, psi, F)
    b = trajectory_bounds(traj)
    C = bound1_constant(b)
    lhs = float(np.sum(L.rate_sq[1:]) * L.tau + L.grad_sq[1:].max()) if L.N else 0.0
    rhs = C * float(L.grad_sq[0])
    slack = (1.0 / b.theta + 2.0 / b.lam) * float(np.sum(L.slack_d))
    return BoundCheck(lhs, rhs, slack, C, lhs <= rhs + slack)


def discrete_bound2_check(traj: Trajectory, d: float, psi=None, F=None,
                          ledger: EnergyLedger | None = None) -> BoundCheck:
    """Interior-in-time bound with the piecewise-linear cutoff ramping on [d/2, d]."""
    T, tau = traj.T, traj.tau
    if not 0 < d < T / 2:
        raise ValueError(f"need 0 < d < T/2, got d={d}, T={T}")
    if 2 * tau > d / 2:
        raise ValueError(f"time step too coarse: the cutoff must vanish on [0, 2 tau], need tau <= d/4")
    L = ledger if ledger is not None else compute_ledger(traj, psi, F)
    b = trajectory_bounds(traj)
    C = bound2_constant(b)
    t = L.times
    sel = np.flatnonzero((t >= d - 1e-12 * T) & (t <= T - d + 1e-12 * T))
    sel = sel[sel >= 2]
    lhs = float(np.sum(L.dgrad_sq[sel]) / tau + (L.rate_sq[sel - 1].max() if len(sel) else 0.0))
    rhs = C / d * float(L.grad_sq[0])
    mu = min(b.lam, b.theta / 2.0)
    slack = (float(np.sum(L.slack_e)) / tau
             + b.Theta / d / b.theta * float(np.sum(L.slack_d))) / mu
    return BoundCheck(lhs, rhs, slack, C, lhs <= rhs + slack)


# ---------------------------------------------------------------------------
# cutoffs and the time-continuous identities


def _smootherstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _smootherstep_d(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30.0 * u * u * (1.0 - u) ** 2, 0.0)


@dataclass(frozen=True)
class CutoffFunction:
    """eta = eta0(y) eta1(s): eta0 = 1 on B_r(x), 0 off B_2r(x); eta1 = 1 on |s-t| <= r^2/2, 0 beyond 2r^2.

    Both profiles are C^2 smootherstep ramps, with |D eta0| <= 1.875/r and
    |eta1'| <= 1.25/r^2, inside the declared 2/r and 2/r^2.
    """

    x: tuple
    t: float
    r: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(np.atleast_1d(np.asarray(self.x, dtype=float)).tolist()))

    def _radial(self, X):
        off = np.asarray(X, dtype=float) - np.asarray(self.x)
        rho = np.sqrt(np.sum(off * off, axis=-1))
        return off, rho

    def eta0(self, X):
        _, rho = self._radial(X)
        return 1.0 - _smootherstep((rho - self.r) / self.r)

    def grad_eta0(self, X):
        off, rho = self._radial(X)
        ds = -_smootherstep_d((rho - self.r) / self.r) / self.r
        unit = off / np.where(rho > 0, rho, 1.0)[..., None]
        return ds[..., None] * unit

    def eta1(self, s):
        return 1.0 - _smootherstep((np.abs(s - self.t) - 0.5 * self.r ** 2) / (1.5 * self.r ** 2))

    def deta1(self, s):
        u = (np.abs(s - self.t) - 0.5 * self.r ** 2) / (1.5 * self.r ** 2)
        return -np.sign(s - self.t) * _smootherstep_d(u) / (1.5 * self.r ** 2)

    def value(self, X, s):
        return self.eta0(X) * self.eta1(s)

    def check_bounds(self, domain: BoxDomain, times) -> bool:
        """Verify 0 <= eta <= 1 and the derivative bounds on the sampled grid."""
        X = domain.node_coords()
        g = np.sqrt(np.sum(self.grad_eta0(X) ** 2, axis=-1))
        s = np.asarray(times, dtype=float)
        vals = [self.value(X, tk) for tk in s]
        ok = all(np.all((v >= 0) & (v <= 1)) for v in vals)
        return bool(ok and g.max() <= 2.0 / self.r and np.abs(self.deta1(s)).max() <= 2.0 / self.r ** 2)

    def squared(self) -> "SquaredCutoff":
        return SquaredCutoff(self)


@dataclass(frozen=True)
class SquaredCutoff:
    """phi = eta^2 with analytic derivatives."""

    eta: CutoffFunction

    def value(self, X, s):
        return self.eta.value(X, s) ** 2

    def grad(self, X, s):
        e0, e1 = self.eta.eta0(X), self.eta.eta1(s)
        return (2.0 * e0 * e1 * e1)[..., None] * self.eta.grad_eta0(X)

    def dt(self, X, s):
        e0, e1 = self.eta.eta0(X), self.eta.eta1(s)
        return 2.0 * e0 * e0 * e1 * self.eta.deta1(s)


def _lattice_boundary(domain: BoxDomain) -> np.ndarray:
    axes = [domain.lo[d] + domain.h[d] * np.arange(domain.cells[d] + 2) for d in range(domain.n)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mask = np.ones(X.shape[:-1], dtype=bool)
    mask[tuple(slice(1, -1) for _ in range(domain.n))] = False
    return X[mask], X.reshape(-1, domain.n)


@dataclass
class ContinuumResidual:
    t_first: np.ndarray
    first: np.ndarray
    t_second: np.ndarray
    second: np.ndarray

    @property
    def max_abs(self) -> float:
        vals = [np.abs(self.first).max() if len(self.first) else 0.0,
                np.abs(self.second).max() if len(self.second) else 0.0]
        return float(max(vals))


def continuum_identity_residual(traj: Trajectory, phi, psi=None, F=None) -> ContinuumResidual:
    """Residuals of the two localised energy identities for a test function phi.

    ``phi`` provides ``value(X, t)``, ``grad(X, t)`` and ``dt(X, t)``.  The
    first identity is sampled at half steps, the second at interior integer
    steps; both use centred space stencils and nodal quadrature.
    """
    psi, F = _potentials(traj, psi, F)
    dom, tau, N = traj.domain, traj.tau, traj.N
    bnd, every = _lattice_boundary(dom)
    for tk in traj.times:
        if np.any(np.abs(phi.value(bnd, tk)) > 1e-14):
            raise ContractError("test function does not vanish on the spatial boundary")
    for tk in (0.0, traj.T):
        if np.any(np.abs(phi.value(every, tk)) > 1e-14):
            raise ContractError(f"test function does not vanish at t = {tk:g}")

    X = dom.node_coords()
    w = dom.cellvol
    S = traj.snapshots
    Dv = traj.Dv
    FD = F.value(Dv)

    def integral(f):
        return w * float(np.sum(f))

    t = traj.times
    first = np.empty(N)
    for k in range(1, N + 1):
        a = (S[k] - S[k - 1]) / tau
        tm = t[k] - 0.5 * tau
        ph, gph, dph = phi.value(X, tm), phi.grad(X, tm), phi.dt(X, tm)
        Dbar = 0.5 * (Dv[k] + Dv[k - 1])
        A = (integral(phi.value(X, t[k]) * FD[k]) - integral(phi.value(X, t[k - 1]) * FD[k - 1])) / tau
        B = integral(ph * np.sum(psi.gradient(a) * a, axis=-1))
        flux = np.einsum("...ij,...j->...i", F.gradient(Dbar), gph)
        C = integral(F.value(Dbar) * dph - np.sum(a * flux, axis=-1))
        first[k - 1] = A + B - C

    second = np.empty(max(N - 1, 0))
    rates = [None] + [(S[k] - S[k - 1]) / tau for k in range(1, N + 1)]
    duals = [None] + [fenchel_dual_at_gradient(psi, rates[k]) for k in range(1, N + 1)]
    for k in range(1, N):
        tk = t[k]
        A = (integral(phi.value(X, tk + 0.5 * tau) * duals[k + 1])
             - integral(phi.value(X, tk - 0.5 * tau) * duals[k])) / tau
        vt = 0.5 * (rates[k] + rates[k + 1])
        Dvt = gradient((S[k + 1] - S[k - 1]) / (2.0 * tau), dom)
        H = F.hessian(Dv[k])
        HD = np.einsum("...ijkl,...kl->...ij", H, Dvt)
        B = integral(phi.value(X, tk) * np.sum(HD * Dvt, axis=(-2, -1)))
        cross = np.sum(vt * np.einsum("...ij,...j->...i", HD, phi.grad(X, tk)), axis=-1)
        C = integral(0.5 * (duals[k] + duals[k + 1]) * phi.dt(X, tk) - cross)
        second[k - 1] = A + B - C
    return ContinuumResidual(t[1:] - 0.5 * tau, first, t[1:N], second)


# ---------------------------------------------------------------------------
# Caccioppoli inequality


def energy_bound2_constant(b: ConvexityBounds) -> float:
    """(Theta + 2 Lambda^2/lambda) / (min{theta, lambda}/2); equals 6 for unit bounds."""
    return (b.Theta + 2.0 * b.Lam ** 2 / b.lam) / (0.5 * min(b.theta, b.lam))


def caccioppoli_constant(b: ConvexityBounds) -> float:
    # Apply the localised energy bound to v - c t (c = (v_t)_{Q_2r}) with eta = 1 on Q_r and
    # supported in Q_2r.  The smootherstep cutoff has eta |eta_t| + |D eta|^2 <= 6 / r^2, so
    # 6 C1 already works; the constant below is larger and hence also admissible.
    return 8.0 * energy_bound2_constant(b) * max(1.0, b.Theta) / min(b.theta, b.lam)


def caccioppoli_check(traj: Trajectory, cyl: ParabolicCylinder, bounds: ConvexityBounds | None = None) -> BoundCheck:
    """int_{Q_r} |D v_t|^2  <=  C / r^2 int_{Q_2r} |v_t - (v_t)_{Q_2r}|^2."""
    big = cyl.scaled(2.0)
    if not contains(traj.domain, traj.T, big):
        raise GeometryError(f"Q_2r for {cyl} leaves the domain")
    b = bounds if bounds is not None else trajectory_bounds(traj)
    C = caccioppoli_constant(b)
    vol = traj.domain.cellvol * traj.tau
    inner = cylinder_points(traj.domain, traj.N, traj.tau, cyl)
    outer = cylinder_points(traj.domain, traj.N, traj.tau, big)
    Dvt = restrict(traj.Dvt, inner)
    vt = restrict(traj.vt, outer)
    if np.isnan(Dvt).any() or np.isnan(vt).any():
        raise GeometryError("cylinder touches the initial time level")
    lhs = float(np.sum(Dvt * Dvt)) * vol
    osc = vt - vt.mean(axis=(0, 1))
    rhs = C / cyl.r ** 2 * float(np.sum(osc * osc)) * vol
    slack = 1e-12 * max(lhs, rhs)
    return BoundCheck(lhs, rhs, slack, C, lhs <= rhs + slack)
