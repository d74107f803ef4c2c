"""Convex nonlinearities psi (on R^m) and F (on m x n matrices).

All evaluators are vectorised over leading axes:

    psi.value(W)    (..., m)    -> (...)
    psi.gradient(W) (..., m)    -> (..., m)
    psi.hessian(W)  (..., m)    -> (..., m, m)
    F.value(M)      (..., m, n) -> (...)
    F.gradient(M)   (..., m, n) -> (..., m, n)
    F.hessian(M)    (..., m, n) -> (..., m, n, m, n)

Three families ship with the library: quadratic, soft-quadratic
(quadratic plus eps*(sqrt(1+|.|^2) - 1)) and anisotropic quadratic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError, ParameterWindowError

ARMIJO_C = 1e-4
ARMIJO_FACTOR = 0.5
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class ConvexityBounds:
    """Two-sided monotonicity constants plus Hoelder data of D^2 F."""

    theta: float = 1.0
    Theta: float = 1.0
    lam: float = 1.0
    Lam: float = 1.0
    alpha: float = 1.0
    holder_const: float = 0.0

    def __post_init__(self):
        if not (0 < self.theta <= self.Theta):
            raise ParameterWindowError(f"need 0 < theta <= Theta, got {self.theta}, {self.Theta}")
        if not (0 < self.lam <= self.Lam):
            raise ParameterWindowError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")
        if not (0 < self.alpha <= 1):
            raise ParameterWindowError(f"need alpha in (0, 1], got {self.alpha}")
        if self.holder_const < 0:
            raise ParameterWindowError("holder_const must be nonnegative")

    def as_dict(self) -> dict:
        return {
            "theta": self.theta,
            "Theta": self.Theta,
            "lambda": self.lam,
            "Lambda": self.Lam,
            "alpha": self.alpha,
            "holder_const": self.holder_const,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConvexityBounds":
        return cls(theta=d["theta"], Theta=d["Theta"], lam=d["lambda"], Lam=d["Lambda"],
                   alpha=d.get("alpha", 1.0), holder_const=d.get("holder_const", 0.0))


@dataclass(frozen=True)
class ScalarPotential:
    m: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    bounds: ConvexityBounds
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {"family": self.name, "m": self.m, "params": dict(self.params),
                "bounds": self.bounds.as_dict()}


@dataclass(frozen=True)
class MatrixPotential:
    m: int
    n: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    bounds: ConvexityBounds
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {"family": self.name, "m": self.m, "n": self.n, "params": dict(self.params),
                "bounds": self.bounds.as_dict()}


# ---------------------------------------------------------------------------
# built-in families

def _soft_holder_const(eps: float, dim: int) -> float:
    # |d/du Hess(eps*sqrt(1+|x|^2))|_F <= eps*(sqrt(d)*max r/s^3 + 2 max r/s^3 + 3 max r^3/s^5)
    return eps * (0.385 * math.sqrt(dim) + 0.77 + 0.56)


def _random_orthogonal(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def quadratic_psi(m: int = 1, center=None) -> ScalarPotential:
    """psi(w) = |w - center|^2 / 2.  A nonzero center gives an un-normalized potential."""
    c = np.zeros(m) if center is None else np.asarray(center, dtype=float).reshape(m)
    eye = np.eye(m)

    def value(w):
        d = np.asarray(w, dtype=float) - c
        return 0.5 * np.sum(d * d, axis=-1)

    def gradient(w):
        return np.asarray(w, dtype=float) - c

    def hessian(w):
        w = np.asarray(w, dtype=float)
        return np.broadcast_to(eye, w.shape + (m,)).copy()

    params = {} if center is None else {"center": c.tolist()}
    return ScalarPotential(m, value, gradient, hessian, ConvexityBounds(), "quadratic", params)


def soft_quadratic_psi(m: int = 1, eps: float = 0.5) -> ScalarPotential:
    if eps < 0:
        raise ParameterWindowError("soft-quadratic eps must be >= 0")
    eye = np.eye(m)

    def value(w):
        w = np.asarray(w, dtype=float)
        r2 = np.sum(w * w, axis=-1)
        return 0.5 * r2 + eps * (np.sqrt(1.0 + r2) - 1.0)

    def gradient(w):
        w = np.asarray(w, dtype=float)
        s = np.sqrt(1.0 + np.sum(w * w, axis=-1))[..., None]
        return w + eps * w / s

    def hessian(w):
        w = np.asarray(w, dtype=float)
        s = np.sqrt(1.0 + np.sum(w * w, axis=-1))[..., None, None]
        outer = w[..., :, None] * w[..., None, :]
        return eye + eps * (eye / s - outer / s**3)

    bounds = ConvexityBounds(theta=1.0, Theta=1.0 + eps, holder_const=_soft_holder_const(eps, m))
    return ScalarPotential(m, value, gradient, hessian, bounds, "soft_quadratic", {"eps": eps})


def anisotropic_psi(m: int, eigenvalues, seed: int = 0) -> ScalarPotential:
    """psi(w) = <A w, w>/2 with A = Q diag(eigenvalues) Q^T for a seeded rotation Q."""
    ev = np.asarray(eigenvalues, dtype=float).reshape(m)
    if np.any(ev <= 0):
        raise ParameterWindowError("anisotropic eigenvalues must be positive")
    q = _random_orthogonal(m, seed)
    A = (q * ev) @ q.T
    A = 0.5 * (A + A.T)

    def value(w):
        w = np.asarray(w, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", w, A, w)

    def gradient(w):
        return np.asarray(w, dtype=float) @ A

    def hessian(w):
        w = np.asarray(w, dtype=float)
        return np.broadcast_to(A, w.shape + (m,)).copy()

    bounds = ConvexityBounds(theta=float(ev.min()), Theta=float(ev.max()))
    return ScalarPotential(m, value, gradient, hessian, bounds, "anisotropic",
                           {"eigenvalues": ev.tolist(), "seed": seed})


def quadratic_F(m: int = 1, n: int = 1, offset=None) -> MatrixPotential:
    """F(M) = |M - offset|^2 / 2 (Frobenius)."""
    A = np.zeros((m, n)) if offset is None else np.asarray(offset, dtype=float).reshape(m, n)
    eye = np.eye(m * n).reshape(m, n, m, n)

    def value(M):
        d = np.asarray(M, dtype=float) - A
        return 0.5 * np.sum(d * d, axis=(-2, -1))

    def gradient(M):
        return np.asarray(M, dtype=float) - A

    def hessian(M):
        M = np.asarray(M, dtype=float)
        return np.broadcast_to(eye, M.shape[:-2] + eye.shape).copy()

    params = {} if offset is None else {"offset": A.tolist()}
    return MatrixPotential(m, n, value, gradient, hessian, ConvexityBounds(), "quadratic", params)


def soft_quadratic_F(m: int = 1, n: int = 1, eps: float = 0.5) -> MatrixPotential:
    if eps < 0:
        raise ParameterWindowError("soft-quadratic eps must be >= 0")
    eye = np.eye(m * n).reshape(m, n, m, n)

    def value(M):
        M = np.asarray(M, dtype=float)
        r2 = np.sum(M * M, axis=(-2, -1))
        return 0.5 * r2 + eps * (np.sqrt(1.0 + r2) - 1.0)

    def gradient(M):
        M = np.asarray(M, dtype=float)
        s = np.sqrt(1.0 + np.sum(M * M, axis=(-2, -1)))[..., None, None]
        return M + eps * M / s

    def hessian(M):
        M = np.asarray(M, dtype=float)
        s = np.sqrt(1.0 + np.sum(M * M, axis=(-2, -1)))[..., None, None, None, None]
        outer = M[..., :, :, None, None] * M[..., None, None, :, :]
        return eye + eps * (eye / s - outer / s**3)

    bounds = ConvexityBounds(lam=1.0, Lam=1.0 + eps, alpha=1.0,
                             holder_const=_soft_holder_const(eps, m * n))
    return MatrixPotential(m, n, value, gradient, hessian, bounds, "soft_quadratic", {"eps": eps})


def anisotropic_F(m: int, n: int, eigenvalues, seed: int = 0) -> MatrixPotential:
    """F(M) = <A M, M>/2 with A symmetric positive definite on the flattened matrix space."""
    k = m * n
    ev = np.asarray(eigenvalues, dtype=float).reshape(k)
    if np.any(ev <= 0):
        raise ParameterWindowError("anisotropic eigenvalues must be positive")
    q = _random_orthogonal(k, seed)
    A = (q * ev) @ q.T
    A = 0.5 * (A + A.T)
    A4 = A.reshape(m, n, m, n)

    def value(M):
        M = np.asarray(M, dtype=float)
        return 0.5 * np.einsum("...ij,ijkl,...kl->...", M, A4, M)

    def gradient(M):
        M = np.asarray(M, dtype=float)
        return np.einsum("ijkl,...kl->...ij", A4, M)

    def hessian(M):
        M = np.asarray(M, dtype=float)
        return np.broadcast_to(A4, M.shape[:-2] + A4.shape).copy()

    bounds = ConvexityBounds(lam=float(ev.min()), Lam=float(ev.max()))
    return MatrixPotential(m, n, value, gradient, hessian, bounds, "anisotropic",
                           {"eigenvalues": ev.tolist(), "seed": seed})


PSI_FAMILIES = {
    "quadratic": lambda m, **kw: quadratic_psi(m, **kw),
    "soft_quadratic": lambda m, **kw: soft_quadratic_psi(m, **kw),
    "anisotropic": lambda m, **kw: anisotropic_psi(m, **kw),
}
F_FAMILIES = {
    "quadratic": lambda m, n, **kw: quadratic_F(m, n, **kw),
    "soft_quadratic": lambda m, n, **kw: soft_quadratic_F(m, n, **kw),
    "anisotropic": lambda m, n, **kw: anisotropic_F(m, n, **kw),
}


def make_psi(family: str, m: int, **params) -> ScalarPotential:
    try:
        factory = PSI_FAMILIES[family]
    except KeyError:
        raise ConfigError(f"unknown psi family {family!r}; choose from {sorted(PSI_FAMILIES)}")
    return factory(m, **params)


def make_F(family: str, m: int, n: int, **params) -> MatrixPotential:
    try:
        factory = F_FAMILIES[family]
    except KeyError:
        raise ConfigError(f"unknown F family {family!r}; choose from {sorted(F_FAMILIES)}")
    return factory(m, n, **params)


# ---------------------------------------------------------------------------
# damped Newton for small uniformly convex problems, batched over points

def _batched_newton(value, gradient, hessian, x0, z, tol, max_iter):
    """Minimise value(x) - z.x independently for every row of x0 (shape (B, m)).

    Armijo backtracking (factor 1/2, slope 1e-4).  When the predicted decrease
    drops below the rounding resolution of the objective the step is accepted
    on gradient-norm decrease instead.
    """
    x = np.array(x0, dtype=float)
    z = np.asarray(z, dtype=float)
    for _ in range(max_iter):
        g = gradient(x) - z
        gnorm = np.linalg.norm(g, axis=-1)
        active = gnorm > tol
        if not active.any():
            return x, gnorm
        xa, za, ga = x[active], z[active], g[active]
        p = -np.linalg.solve(hessian(xa), ga[..., None])[..., 0]
        fa = value(xa) - np.sum(za * xa, axis=-1)
        slope = np.sum(ga * p, axis=-1)
        step = np.ones(len(xa))
        pending = np.ones(len(xa), dtype=bool)
        for _ls in range(60):
            trial = xa + step[:, None] * p
            ft = value(trial) - np.sum(za * trial, axis=-1)
            flat = np.abs(slope) * step <= 64 * np.finfo(float).eps * (1.0 + np.abs(fa))
            gt = np.linalg.norm(gradient(trial) - za, axis=-1)
            ok = (ft <= fa + ARMIJO_C * step * slope) | (flat & (gt < gnorm[active]))
            pending &= ~ok
            if not pending.any():
                break
            step = np.where(pending, step * ARMIJO_FACTOR, step)
        x[active] = xa + step[:, None] * p
    gnorm = np.linalg.norm(gradient(x) - z, axis=-1)
    if np.any(gnorm > tol):
        raise NumericError("damped Newton iteration cap exceeded", float(gnorm.max()))
    return x, gnorm


# ---------------------------------------------------------------------------
# normalisation and Legendre transform

def normalize_scalar(psi: ScalarPotential, tol: float = 1e-12, max_iter: int = 100):
    """Shift psi so that its minimum sits at the origin with value 0.

    Returns ``(psi_tilde, a)`` where ``psi_tilde(w) = psi(w + a) - psi(a)`` and
    ``a = argmin psi``.  A solution v of the original system gives a solution
    ``v - a t`` of the normalized one.
    """
    try:
        a, _ = _batched_newton(psi.value, psi.gradient, psi.hessian,
                               np.zeros((1, psi.m)), np.zeros((1, psi.m)), tol, max_iter)
    except NumericError as exc:
        raise ConfigError(f"argmin of psi not found; declared convexity bounds are suspect ({exc})")
    a = a[0]
    psi_a = float(psi.value(a))
    if not np.any(a) and psi_a == 0.0:
        return psi, a

    def value(w):
        return psi.value(np.asarray(w, dtype=float) + a) - psi_a

    def gradient(w):
        return psi.gradient(np.asarray(w, dtype=float) + a)

    def hessian(w):
        return psi.hessian(np.asarray(w, dtype=float) + a)

    params = dict(psi.params)
    params["shift"] = (np.asarray(params.get("shift", np.zeros(psi.m))) + a).tolist()
    return replace(psi, value=value, gradient=gradient, hessian=hessian, params=params), a


def normalize_matrix(F: MatrixPotential) -> MatrixPotential:
    """F(M) - F(O) - DF(O).M; the Hessian is untouched."""
    O = np.zeros((F.m, F.n))
    F0 = float(F.value(O))
    DF0 = np.asarray(F.gradient(O), dtype=float)
    if F0 == 0.0 and not np.any(DF0):
        return F

    def value(M):
        M = np.asarray(M, dtype=float)
        return F.value(M) - F0 - np.sum(DF0 * M, axis=(-2, -1))

    def gradient(M):
        return F.gradient(M) - DF0

    params = dict(F.params)
    params["affine_removed"] = True
    return replace(F, value=value, gradient=gradient, params=params)


def legendre_dual_grad(psi: ScalarPotential, z, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """D psi*(z): the w solving D psi(w) = z, by damped Newton on psi(w) - z.w."""
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1, psi.m)
    w, _ = _batched_newton(psi.value, psi.gradient, psi.hessian, flat / psi.bounds.Theta,
                           flat, tol, max_iter)
    return w.reshape(z.shape)


def legendre_value(psi: ScalarPotential, z, tol: float = 1e-12) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    w = legendre_dual_grad(psi, z, tol)
    return np.sum(z * w, axis=-1) - psi.value(w)


def fenchel_dual_at_gradient(psi: ScalarPotential, w) -> np.ndarray:
    """psi*(D psi(w)) = D psi(w).w - psi(w), exact without any inversion."""
    w = np.asarray(w, dtype=float)
    return np.sum(psi.gradient(w) * w, axis=-1) - psi.value(w)


# ---------------------------------------------------------------------------
# sampling-based certification

@dataclass
class BoundsReport:
    lower: float
    upper: float
    lines: dict
    violations: list
    passed: bool

    def summary(self) -> str:
        rows = [f"{k:>20s}: [{lo:.6g}, {hi:.6g}]" for k, (lo, hi) in self.lines.items()]
        head = f"declared [{self.lower:g}, {self.upper:g}] -> {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + rows + [f"  violation {v[0]} at {v[1]}: {v[2]:.6g}" for v in self.violations])


def _ball(rng, count, dim, radius):
    d = rng.standard_normal((count, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * rng.random((count, 1)) ** (1.0 / dim)


def verify_bounds(potential, sample_count: int = 1000, radius: float = 5.0, seed: int = 0) -> BoundsReport:
    """Sample-based check of the monotonicity constants and the derived growth bounds.

    Works for both potential kinds; for ``MatrixPotential`` matrices are
    flattened and the Frobenius product is used.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    rng = np.random.default_rng(seed)
    if isinstance(potential, ScalarPotential):
        dim, shape = potential.m, (potential.m,)
        lo, hi = potential.bounds.theta, potential.bounds.Theta
    else:
        dim, shape = potential.m * potential.n, (potential.m, potential.n)
        lo, hi = potential.bounds.lam, potential.bounds.Lam

    x1 = _ball(rng, sample_count, dim, radius)
    x2 = _ball(rng, sample_count, dim, radius)
    X1, X2 = x1.reshape((-1,) + shape), x2.reshape((-1,) + shape)
    G1 = potential.gradient(X1).reshape(sample_count, dim)
    G2 = potential.gradient(X2).reshape(sample_count, dim)
    d = x1 - x2
    dd = np.sum(d * d, axis=1)
    keep = dd > 1e-16
    ratios = {}
    ratios["monotonicity"] = (np.sum((G1 - G2) * d, axis=1)[keep] / dd[keep], x1[keep])

    H = potential.hessian(X1).reshape(sample_count, dim, dim)
    eig = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, 1, 2)))
    ratios["hessian_min_eig"] = (eig[:, 0], x1)
    ratios["hessian_max_eig"] = (eig[:, -1], x1)

    r2 = np.sum(x1 * x1, axis=1)
    nz = r2 > 1e-16
    val = potential.value(X1)
    pair = np.sum(G1 * x1, axis=1)
    ratios["value"] = (val[nz] / (0.5 * r2[nz]), x1[nz])
    ratios["dual"] = ((pair - val)[nz] / (0.5 * r2[nz]), x1[nz])
    ratios["pairing"] = (pair[nz] / r2[nz], x1[nz])
    ratios["gradient_norm"] = (np.linalg.norm(G1, axis=1)[nz] / np.sqrt(r2[nz]), x1[nz])

    lines, violations = {}, []
    for name, (vals, pts) in ratios.items():
        lines[name] = (float(vals.min()), float(vals.max()))
        i = int(np.argmin(vals))
        if vals[i] < lo - BOUND_SLACK:
            violations.append((name, pts[i].reshape(shape).tolist(), float(vals[i])))
        i = int(np.argmax(vals))
        if vals[i] > hi + BOUND_SLACK:
            violations.append((name, pts[i].reshape(shape).tolist(), float(vals[i])))
    return BoundsReport(lo, hi, lines, violations, not violations)


def effective_alpha(alpha: float, p: float) -> float:
    """Largest Hoelder exponent <= alpha with alpha * p/(p-2) <= 2."""
    if not (0 < alpha <= 1):
        raise ParameterWindowError(f"alpha must lie in (0, 1], got {alpha}")
    if not p > 2:
        raise ParameterWindowError(f"p must exceed 2, got {p}")
    return min(alpha, 2.0 * (p - 2.0) / p)


@dataclass
class HolderEstimate:
    alpha_hat: float
    const_hat: float
    declared_alpha: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.alpha_hat >= self.declared_alpha - 0.05


def hessian_holder_estimate(F: MatrixPotential, sample_count: int = 10_000, seed: int = 0,
                            radius: float = 2.0, dmin: float = 1e-3, dmax: float = 1.0) -> HolderEstimate:
    """Empirical Hoelder exponent of D^2 F from a log-log fit over sampled pairs.

    Pairs are (M, M + d u) with |u| = 1 and d log-uniform in [dmin, dmax].
    A constant Hessian reports alpha_hat = 1, const_hat = 0.
    """
    if sample_count < 10:
        raise ValueError("sample_count must be >= 10")
    rng = np.random.default_rng(seed)
    k = F.m * F.n
    M1 = _ball(rng, sample_count, k, radius)
    u = rng.standard_normal((sample_count, k))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    dist = np.exp(rng.uniform(np.log(dmin), np.log(dmax), sample_count))
    M2 = M1 + dist[:, None] * u
    H1 = F.hessian(M1.reshape(-1, F.m, F.n)).reshape(sample_count, -1)
    H2 = F.hessian(M2.reshape(-1, F.m, F.n)).reshape(sample_count, -1)
    diff = np.linalg.norm(H1 - H2, axis=1)
    keep = diff > 0
    if not keep.any():
        return HolderEstimate(1.0, 0.0, F.bounds.alpha, sample_count)
    logd, logh = np.log(dist[keep]), np.log(diff[keep])
    if keep.sum() < 2 or np.std(logd) < 1e-3:
        raise NumericError("degenerate sample spread for Hoelder fit", float(np.std(logd)))
    slope, intercept = np.polyfit(logd, logh, 1)
    alpha_hat = float(min(max(slope, np.finfo(float).tiny), 1.0))
    return HolderEstimate(alpha_hat, float(np.exp(intercept)), F.bounds.alpha, sample_count)


def potentials_from_metadata(psi_meta: dict, F_meta: dict):
    """Rebuild (psi, F) from the metadata stored with a trajectory."""
    p = dict(psi_meta.get("params", {}))
    shift = p.pop("shift", None)
    psi = make_psi(psi_meta["family"], psi_meta["m"], **p)
    if shift is not None:
        psi, _ = normalize_scalar(psi)
    q = dict(F_meta.get("params", {}))
    affine = q.pop("affine_removed", False)
    F = make_F(F_meta["family"], F_meta["m"], F_meta["n"], **q)
    if affine:
        F = normalize_matrix(F)
    return psi, F
