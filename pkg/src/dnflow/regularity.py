"""Partial-regularity analytics: local energy decay, fractional exponents, dimension.

The local space-time energy over Q = Q_r(x, t) is

    E = avg_Q |v_t - (v_t)_Q|^2
        + avg_Q |(Dv - (Dv)_Q - (D^2 v)_Q (y - x)) / r|^2
        + avg_Q |D^2 v - (D^2 v)_Q|^2

with averages over the discrete point set of the cylinder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, ParameterWindowError
from .grid import ParabolicCylinder, Trajectory, cylinder_points, restrict


# ---------------------------------------------------------------------------
# local energy


@dataclass(frozen=True)
class LocalEnergySample:
    cyl: ParabolicCylinder
    T1: float
    T2: float
    T3: float
    avg_vt: np.ndarray
    avg_Dv: np.ndarray
    avg_D2v: np.ndarray

    @property
    def E(self) -> float:
        return self.T1 + self.T2 + self.T3

    @property
    def max_average(self) -> float:
        """Largest Euclidean norm among the three cylinder averages."""
        return float(max(np.linalg.norm(self.avg_vt), np.linalg.norm(self.avg_Dv),
                         np.linalg.norm(self.avg_D2v)))


def local_energy(traj: Trajectory, cyl: ParabolicCylinder) -> LocalEnergySample:
    pts = cylinder_points(traj.domain, traj.N, traj.tau, cyl)
    vt = restrict(traj.vt, pts)
    Dv = restrict(traj.Dv, pts)
    D2 = restrict(traj.D2v, pts)
    if np.isnan(vt).any():
        raise GeometryError("cylinder touches the initial time level")
    mv, mD, mH = vt.mean(axis=(0, 1)), Dv.mean(axis=(0, 1)), D2.mean(axis=(0, 1))
    affine = np.einsum("ijk,pk->pij", mH, pts.offsets)
    t1 = float(np.mean(np.sum((vt - mv) ** 2, axis=-1)))
    dev = (Dv - mD - affine[None]) / cyl.r
    t2 = float(np.mean(np.sum(dev ** 2, axis=(-2, -1))))
    t3 = float(np.mean(np.sum((D2 - mH) ** 2, axis=(-3, -2, -1))))
    return LocalEnergySample(cyl, t1, t2, t3, mv, mD, mH)


def backwards_decay_constant(vartheta: float, n: int) -> float:
    return 12.0 / vartheta ** (2 * (n + 3))


@dataclass(frozen=True)
class DecayCheck:
    lhs: float
    rhs: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def backwards_decay_check(traj: Trajectory, cyl: ParabolicCylinder, vartheta: float) -> DecayCheck:
    """E(x, t, vartheta r) <= 12 / vartheta^(2(n+3)) E(x, t, r)."""
    if not 0 < vartheta < 1:
        raise ParameterWindowError("vartheta must lie in (0, 1)")
    big = local_energy(traj, cyl).E
    small = local_energy(traj, cyl.scaled(vartheta)).E
    rhs = backwards_decay_constant(vartheta, traj.domain.n) * big
    slack = 1e-12 * (1.0 + rhs)
    return DecayCheck(small, rhs, small <= rhs + slack)


# ---------------------------------------------------------------------------
# decay thresholds and classification


def _check_open(name, value, lo, hi, closed_hi=False):
    ok = lo < value < hi or (closed_hi and value == hi)
    if not ok:
        bracket = "]" if closed_hi else ")"
        raise ParameterWindowError(f"{name}={value} outside ({lo:g}, {hi:g}{bracket}")


@dataclass(frozen=True)
class DecayParams:
    L: float
    gamma: float
    epsilon: float
    rho: float
    vartheta: float
    n: int
    alpha: float
    epsilon1: float
    rho1: float
    mu: float


def thresholds(epsilon: float = 0.1, rho: float = 0.5, vartheta: float = 0.25, L: float = 10.0,
               gamma: float = 0.75, n: int = 1, alpha: float = 1.0) -> DecayParams:
    """Derived thresholds epsilon1, rho1 and the decay rate mu."""
    if not 0 < alpha <= 1:
        raise ParameterWindowError("alpha must lie in (0, 1]")
    cap = 0.5 ** (1.0 / alpha)
    _check_open("vartheta", vartheta, 0.0, cap)
    _check_open("epsilon", epsilon, 0.0, cap)
    _check_open("rho", rho, 0.0, cap, closed_hi=True)
    _check_open("gamma", gamma, alpha / 2.0, alpha)
    if not L > 0:
        raise ParameterWindowError("L must be positive")
    eps1 = min(epsilon, vartheta ** (n / 2.0 + 1.0) * L / 8.0)
    rho1 = min(rho, (vartheta ** (2 * (n + 3)) * eps1 ** 2 / (24.0 * L)) ** (1.0 / (2.0 * gamma)))
    # 1/2 ln(1/2) / ln(vartheta), via log2 so that powers of 1/2 come out exact
    mu = -0.5 / math.log2(vartheta)
    return DecayParams(L, gamma, epsilon, rho, vartheta, n, alpha, eps1, rho1, mu)


@dataclass
class DecayEvidence:
    flag: str                      # "regular" or "unverified"
    reason: str
    radii: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    truncated: bool = False
    exponent: float | None = None  # fitted slope of log E against log r
    target_exponent: float = 0.0   # 2 mu

    @property
    def regular(self) -> bool:
        return self.flag == "regular"


def _fit_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def decay_classification(traj: Trajectory, x, t: float, r0: float, params: DecayParams, K: int = 3,
                         enforce_rho1: bool = True) -> DecayEvidence:
    """Regular iff the entry conditions hold at r0 and E(vartheta^k r0) <= 2^-k eps1^2, k = 1..K.

    With ``enforce_rho1`` the starting radius must lie below rho1; otherwise
    the point is reported unverified.  Scales below the grid resolution
    truncate the sequence, which also leaves the point unverified.
    """
    ev = DecayEvidence("unverified", "", target_exponent=2.0 * params.mu)
    if enforce_rho1 and not r0 < params.rho1:
        ev.reason = f"r0={r0:g} not below rho1={params.rho1:.3g}"
        return ev
    cyl = ParabolicCylinder(x, t, r0)
    try:
        s0 = local_energy(traj, cyl)
    except GeometryError:
        ev.reason = "resolution floor"
        ev.truncated = True
        return ev
    ev.radii.append(r0)
    ev.energies.append(s0.E)
    bound = params.epsilon1 ** 2
    if s0.max_average >= params.L / 2.0 or not s0.E < bound:
        ev.reason = "entry condition"
        return ev
    ok = True
    for k in range(1, K + 1):
        r = params.vartheta ** k * r0
        try:
            E = local_energy(traj, ParabolicCylinder(x, t, r)).E
        except GeometryError:
            ev.truncated = True
            break
        ev.radii.append(r)
        ev.energies.append(E)
        if E > bound / 2 ** k:
            ok = False
    ev.exponent = _fit_slope(ev.radii, ev.energies)
    if ev.truncated:
        ev.reason = f"resolution floor after {len(ev.radii) - 1} of {K} scales"
    elif not ok:
        ev.reason = "decay"
    else:
        ev.flag, ev.reason = "regular", "ok"
    return ev


# ---------------------------------------------------------------------------
# integrability exponents


def p_for_dimension(n: int) -> float:
    if n == 1:
        return 4.0
    if n == 2:
        return 3.9
    return 2.0 + 4.0 / n


@dataclass(frozen=True)
class Region:
    """Spatial box [lo, hi] (closed, on nodes) times the time interval [t0, t1]."""

    lo: tuple
    hi: tuple
    t0: float
    t1: float

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(np.atleast_1d(np.asarray(self.lo, dtype=float)).tolist()))
        object.__setattr__(self, "hi", tuple(np.atleast_1d(np.asarray(self.hi, dtype=float)).tolist()))
        if self.t1 <= self.t0 or any(b <= a for a, b in zip(self.lo, self.hi)):
            raise GeometryError("empty region")

    def node_mask(self, traj: Trajectory) -> np.ndarray:
        X = traj.domain.node_coords()
        tol = 1e-12
        return np.all((X >= np.asarray(self.lo) - tol) & (X <= np.asarray(self.hi) + tol), axis=-1)

    def steps(self, traj: Trajectory) -> np.ndarray:
        t = traj.times
        eps = 1e-9 * traj.tau
        return np.flatnonzero((t >= self.t0 - eps) & (t <= self.t1 + eps))

    def check_interior(self, traj: Trajectory):
        dom = traj.domain
        if len(self.lo) != dom.n:
            raise GeometryError("region dimension does not match the domain")
        if any(a <= l for a, l in zip(self.lo, dom.lo)) or any(b >= h for b, h in zip(self.hi, dom.hi)):
            raise GeometryError("region must lie strictly inside the spatial domain")
        if not (0 < self.t0 and self.t1 < traj.T):
            raise GeometryError("region must lie strictly inside (0, T)")
        if self.t0 < traj.tau:
            raise GeometryError("region starts before the first time derivative is available")


def _field(traj: Trajectory, name: str) -> np.ndarray:
    if name not in ("vt", "D2v"):
        raise ValueError(f"field must be 'vt' or 'D2v', got {name!r}")
    return traj.field(name)


def _flat_nodes(arr, mask):
    # (steps, *cells, ...) -> (steps, nodes, components)
    sub = arr[:, mask]
    return sub.reshape(sub.shape[0], sub.shape[1], -1)


@dataclass
class QuotientFit:
    h: np.ndarray
    values: np.ndarray
    slope: float
    floor: float
    passed: bool


def fractional_quotient_exponent(traj: Trajectory, field_name: str, region: Region, h_list,
                                 alpha: float | None = None, p: float | None = None,
                                 fit_tol: float = 0.1) -> QuotientFit:
    """D_h = int_{t0}^{t1} int_V |w(t+h) - w(t)|^2 and the slope of log D_h against log h."""
    region.check_interior(traj)
    hs = np.asarray(h_list, dtype=float)
    limit = 0.5 * min(1.0, region.t0, traj.T - region.t1)
    if np.any(hs <= 0) or np.any(hs >= limit):
        raise ParameterWindowError(f"every h must lie in (0, {limit:g})")
    shifts = np.rint(hs / traj.tau).astype(int)
    if np.any(np.abs(shifts * traj.tau - hs) > 1e-9 * traj.tau) or np.any(shifts < 1):
        raise ParameterWindowError("every h must be a positive multiple of tau")
    W = _field(traj, field_name)
    mask = region.node_mask(traj)
    ks = region.steps(traj)
    weight = traj.domain.cellvol * traj.tau
    vals = np.empty(len(hs))
    for i, s in enumerate(shifts):
        a = _flat_nodes(W[ks + s], mask)
        b = _flat_nodes(W[ks], mask)
        vals[i] = float(np.sum((a - b) ** 2)) * weight
    if alpha is None:
        alpha = float(traj.F_meta.get("bounds", {}).get("alpha", 1.0))
    if p is None:
        p = p_for_dimension(traj.domain.n)
    floor = 0.5 - 1.0 / p if field_name == "vt" else alpha / 2.0
    if np.all(vals == 0):
        slope = math.inf
    else:
        fitted = _fit_slope(hs, vals)
        slope = fitted if fitted is not None else math.nan
    return QuotientFit(hs, vals, slope, floor, bool(slope >= floor - fit_tol))


def beta_window(field_name: str, n: int, alpha: float = 1.0, p: float | None = None) -> float:
    p = p_for_dimension(n) if p is None else p
    return 0.5 - 1.0 / p if field_name == "vt" else alpha / 2.0


def gagliardo_time_seminorm(traj: Trajectory, field_name: str, beta: float, region: Region,
                            alpha: float | None = None, p: float | None = None) -> float:
    """sum_{k != l} int_V |w(t_k) - w(t_l)|^2 / |t_k - t_l|^(1+beta) tau^2 dx."""
    region.check_interior(traj)
    if alpha is None:
        alpha = float(traj.F_meta.get("bounds", {}).get("alpha", 1.0))
    hi = beta_window(field_name, traj.domain.n, alpha, p)
    if not 0 < beta < hi:
        raise ParameterWindowError(f"beta={beta} outside (0, {hi:g})")
    W = _flat_nodes(_field(traj, field_name)[region.steps(traj)], region.node_mask(traj))
    t = traj.times[region.steps(traj)]
    total = 0.0
    for i in range(len(t)):
        diff = W[i + 1:] - W[i]
        sq = np.sum(diff ** 2, axis=(1, 2))
        total += 2.0 * float(np.sum(sq / np.abs(t[i + 1:] - t[i]) ** (1.0 + beta)))
    return total * traj.tau ** 2 * traj.domain.cellvol


def gagliardo_space_seminorm(traj: Trajectory, field_name: str, kappa: float, region: Region) -> float:
    """sum_t int_V int_V |w(x) - w(y)|^2 / |x - y|^(n + 2 kappa) dx dy dt."""
    region.check_interior(traj)
    if not 0 < kappa < 1:
        raise ParameterWindowError("kappa must lie in (0, 1)")
    mask = region.node_mask(traj)
    X = traj.domain.node_coords()[mask]
    W = _flat_nodes(_field(traj, field_name)[region.steps(traj)], mask)
    n = traj.domain.n
    dist = np.sqrt(np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1))
    np.fill_diagonal(dist, np.inf)
    kernel = dist ** -(n + 2.0 * kappa)
    total = 0.0
    for w in W:
        sq = np.sum((w[:, None, :] - w[None, :, :]) ** 2, axis=-1)
        total += float(np.sum(sq * kernel))
    return total * traj.domain.cellvol ** 2 * traj.tau


@dataclass
class IntegrabilityReport:
    p: float
    vt_p: float
    vt_2: float
    D2v_p: float
    D2v_2: float

    @property
    def vt_ratio(self) -> float:
        return self.vt_p / self.vt_2 if self.vt_2 > 0 else 0.0

    @property
    def D2v_ratio(self) -> float:
        return self.D2v_p / self.D2v_2 if self.D2v_2 > 0 else 0.0


def higher_integrability_report(traj: Trajectory, region: Region, p: float | None = None) -> IntegrabilityReport:
    region.check_interior(traj)
    p = p_for_dimension(traj.domain.n) if p is None else p
    mask, ks = region.node_mask(traj), region.steps(traj)
    weight = traj.domain.cellvol * traj.tau

    def norms(name):
        W = _flat_nodes(traj.field(name)[ks], mask)
        mag = np.sqrt(np.sum(W ** 2, axis=-1))
        return (float(np.sum(mag ** p) * weight) ** (1.0 / p), float(np.sum(mag ** 2) * weight) ** 0.5)

    vp, v2 = norms("vt")
    dp, d2 = norms("D2v")
    return IntegrabilityReport(p, vp, v2, dp, d2)


# ---------------------------------------------------------------------------
# singular candidates and parabolic dimension


def singular_candidates(traj: Trajectory, centers, r_min: float, threshold: float,
                        L: float | None = None) -> np.ndarray:
    """Centers (t, x...) with E(x, t, r_min) > threshold or an average of size >= L/2."""
    flagged = []
    for c in np.atleast_2d(np.asarray(centers, dtype=float)):
        t, x = c[0], c[1:]
        s = local_energy(traj, ParabolicCylinder(x, t, r_min))
        if s.E > threshold or (L is not None and s.max_average >= L / 2.0):
            flagged.append(c)
    n = traj.domain.n
    return np.array(flagged, dtype=float).reshape(-1, n + 1)


def greedy_covering_number(points: np.ndarray, r: float) -> int:
    """Greedy cover by cylinders |x - x_c| < r, |t - t_c| < r^2/2 centred on uncovered points.

    ``points`` has rows (t, x_1, ..., x_n) and is swept in lexicographic order.
    Not monotone under adding points; see :func:`covering_number`.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return 0
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    scaled = pts.copy()
    scaled[:, 0] *= 2.0 / r
    tree = cKDTree(scaled)
    covered = np.zeros(len(pts), dtype=bool)
    reach = r * (1.0 - 1e-12)
    spatial_dims = pts.shape[1] - 1
    count = 0
    for i in range(len(pts)):
        if covered[i]:
            continue
        count += 1
        idx = np.asarray(tree.query_ball_point(scaled[i], reach, p=np.inf), dtype=int)
        if spatial_dims > 1:
            off = pts[idx, 1:] - pts[i, 1:]
            idx = idx[np.sum(off * off, axis=1) < reach ** 2]
        covered[idx] = True
    return count


def covering_number(points: np.ndarray, r: float) -> int:
    """Lattice-anchored greedy cover: one cylinder per occupied parabolic cell.

    Cells are half-open boxes of side r/sqrt(n) in space and r^2/2 in time, so
    a cylinder centred on any point of a cell covers the whole cell.  The
    count is therefore a genuine cover and, unlike the plain greedy sweep, can
    only grow when points are added.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return 0
    pts = pts.reshape(len(pts), -1)
    n = pts.shape[1] - 1
    side = np.empty(n + 1)
    side[0] = 0.5 * r * r
    side[1:] = r / math.sqrt(n)
    keys = np.floor(pts / side).astype(np.int64)
    return int(len(np.unique(keys, axis=0)))


@dataclass
class DimensionEstimate:
    radii: np.ndarray
    counts: np.ndarray
    dimension: float
    residual: float
    empty: bool = False
    descriptor: str = ""
    dimension_without_finest: float | None = None


def _dimension_fit(radii, counts, n_max):
    x = np.log(1.0 / radii)
    y = np.log(counts.astype(float))
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    resid = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0
    return float(np.clip(coef[0], 0.0, n_max)), resid


def parabolic_dimension(points, radii, n: int | None = None, descriptor: str = "") -> DimensionEstimate:
    """Fit dim from the greedy covering numbers N(r) ~ r^-dim."""
    pts = np.asarray(points, dtype=float)
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    if len(radii) < 3 or radii[0] / radii[-1] < 10.0 * (1 - 1e-9):
        raise ValueError("need at least 3 radii spanning at least one decade")
    if n is None:
        n = pts.shape[1] - 1 if pts.ndim == 2 and pts.shape[0] else 1
    if pts.size == 0:
        return DimensionEstimate(radii, np.zeros(len(radii), dtype=int), 0.0, 0.0, True, descriptor, 0.0)
    pts = pts.reshape(len(pts), -1)
    counts = np.array([covering_number(pts, r) for r in radii])
    dim, resid = _dimension_fit(radii, counts, n + 2)
    drop = _dimension_fit(radii[:-1], counts[:-1], n + 2)[0] if len(radii) > 3 else None
    return DimensionEstimate(radii, counts, dim, resid, False, descriptor, drop)


def dyadic_radii(r_max: float = 0.2, levels: int = 5) -> np.ndarray:
    return r_max * 0.5 ** np.arange(levels)


def fixture_points(kind: str, n: int = 1, T: float = 0.04, r_min: float = 0.0125,
                   t0: float | None = None) -> np.ndarray:
    """Synthetic sets for the dimension estimator: 'point', 'slice' (U x {t0}) or 'box' (U x (0, T)).

    U is the unit cube.  Nodes are spaced r_min/2 in space and r_min^2/4 in
    time, so dyadic radii down to r_min are commensurate with the lattice and
    greedy counts carry no aliasing from the sampling.
    """
    t0 = T / 2 if t0 is None else t0
    dx = r_min / 2.0
    xs = np.arange(dx / 2, 1.0, dx)
    grids = np.meshgrid(*([xs] * n), indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=-1)
    if kind == "point":
        return np.array([[t0] + [0.5] * n])
    if kind == "slice":
        return np.column_stack([np.full(len(X), t0), X])
    if kind == "box":
        dt = r_min ** 2 / 4.0
        ts = np.arange(dt / 2, T, dt)
        tt = np.repeat(ts, len(X))
        return np.column_stack([tt, np.tile(X, (len(ts), 1))])
    raise ValueError(f"unknown fixture {kind!r}")


def theorem1_budget(alpha: float, p: float, n: int = 1):
    """Split the open budget min{alpha/2, 1/2 - 1/p} as beta = budget/2, eps = budget/4.

    Returns (beta, eps, n + 2 - 2 beta).
    """
    if not 0 < alpha <= 1:
        raise ParameterWindowError("alpha must lie in (0, 1]")
    if not p > 2:
        raise ParameterWindowError("p must exceed 2")
    budget = min(alpha / 2.0, 0.5 - 1.0 / p)
    beta = budget / 2.0
    return beta, budget / 4.0, n + 2.0 - 2.0 * beta
