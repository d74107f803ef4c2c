"""Box domains, difference stencils, quadrature and parabolic cylinders.

Fields live on interior lattice nodes and are stored as arrays of shape
``(*cells, m)``; the zero Dirichlet value on the boundary is implicit.
Trajectories stack ``N + 1`` such snapshots along a leading time axis.

Two gradient discretisations coexist:

* :func:`gradient` / :func:`hessian_field` -- centred node stencils used by
  the regularity analytics;
* :class:`ElementGradient` -- piecewise-linear element gradients (intervals
  in 1-D, two triangles per lattice square in 2-D).  The implicit scheme is
  built on these, and so are all energy identities, so that the discrete
  divergence is exactly the negative adjoint of the discrete gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError

_EPS = 1e-12


@dataclass(frozen=True)
class BoxDomain:
    n: int
    lo: tuple
    hi: tuple
    cells: tuple

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1 or n = 2 is supported")
        for name in ("lo", "hi", "cells"):
            val = getattr(self, name)
            val = tuple(val) if np.ndim(val) else (val,)
            if len(val) != self.n:
                raise ValueError(f"{name} needs {self.n} entries")
            object.__setattr__(self, name, tuple(float(v) for v in val) if name != "cells"
                               else tuple(int(v) for v in val))
        if any(c < 1 for c in self.cells):
            raise ValueError("need at least one interior node per axis")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("need lo < hi on every axis")

    @property
    def h(self) -> tuple:
        return tuple((b - a) / (c + 1) for a, b, c in zip(self.lo, self.hi, self.cells))

    @property
    def cellvol(self) -> float:
        return float(np.prod(self.h))

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.cells))

    def axis_coords(self, d: int) -> np.ndarray:
        return self.lo[d] + self.h[d] * np.arange(1, self.cells[d] + 1)

    def node_coords(self) -> np.ndarray:
        """Array of shape (*cells, n) with the coordinates of every interior node."""
        axes = [self.axis_coords(d) for d in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def sample(self, func, m: int = 1) -> np.ndarray:
        """Evaluate ``func(X)`` (X of shape (..., n)) on the nodes, returning (*cells, m)."""
        vals = np.asarray(func(self.node_coords()), dtype=float)
        return vals.reshape(self.cells + (m,))


def _pad(values: np.ndarray, n: int, boundary=None) -> np.ndarray:
    pad = [(1, 1)] * n + [(0, 0)] * (values.ndim - n)
    out = np.pad(values, pad)
    if boundary is not None:
        b = np.asarray(boundary, dtype=float)
        inner = tuple(slice(1, -1) for _ in range(n))
        mask = np.ones(out.shape[:n], dtype=bool)
        mask[inner] = False
        out[mask] = b
    return out


def gradient(values: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """Centred differences; boundary-adjacent nodes use the zero boundary value.

    ``values`` has shape (*cells, m) and the result (*cells, m, n).
    """
    n = domain.n
    P = _pad(values, n)
    comps = []
    for d in range(n):
        plus = [slice(1, -1)] * n
        minus = [slice(1, -1)] * n
        plus[d], minus[d] = slice(2, None), slice(None, -2)
        comps.append((P[tuple(plus)] - P[tuple(minus)]) / (2.0 * domain.h[d]))
    return np.stack(comps, axis=-1)


def hessian_field(values: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """Second differences, shape (*cells, m, n, n), symmetric in the last two slots."""
    n, h = domain.n, domain.h
    P = _pad(values, n)
    out = np.empty(values.shape + (n, n))

    def shifted(offsets):
        idx = tuple(slice(1 + o, P.shape[d] - 1 + o) for d, o in enumerate(offsets))
        return P[idx]

    centre = shifted([0] * n)
    for d in range(n):
        e = [0] * n
        e[d] = 1
        fwd = shifted(e)
        e[d] = -1
        bwd = shifted(e)
        out[..., d, d] = (fwd - 2.0 * centre + bwd) / h[d] ** 2
    for d in range(n):
        for k in range(d + 1, n):
            def s(a, b):
                e = [0] * n
                e[d], e[k] = a, b
                return shifted(e)
            mixed = (s(1, 1) - s(1, -1) - s(-1, 1) + s(-1, -1)) / (4.0 * h[d] * h[k])
            out[..., d, k] = mixed
            out[..., k, d] = mixed
    return out


class ElementGradient:
    """Piecewise-linear element gradients on the lattice including boundary nodes.

    ``apply`` maps interior nodal values (*cells, m) to per-element gradient
    matrices (n_elem, m, n); ``adjoint`` is its exact transpose.  Element
    measures are ``weights``; the lumped nodal weight is ``domain.cellvol``.
    """

    def __init__(self, domain: BoxDomain):
        self.domain = domain
        n, cells = domain.n, domain.cells
        pshape = tuple(c + 2 for c in cells)
        flat = np.arange(int(np.prod(pshape))).reshape(pshape)
        interior = -np.ones(pshape, dtype=np.int64)
        interior[tuple(slice(1, -1) for _ in range(n))] = np.arange(domain.num_nodes).reshape(cells)
        self._interior = interior.ravel()

        if n == 1:
            E = flat[:-1]
            self.plus = [flat[1:]]
            self.minus = [E]
            self.weights = np.full(cells[0] + 1, domain.h[0])
        else:
            base = flat[:-1, :-1]
            right, up, diag = flat[1:, :-1], flat[:-1, 1:], flat[1:, 1:]
            # lower triangle (I,J),(I+1,J),(I,J+1); upper (I+1,J+1),(I,J+1),(I+1,J)
            self.plus = [np.concatenate([right.ravel(), diag.ravel()]),
                         np.concatenate([up.ravel(), diag.ravel()])]
            self.minus = [np.concatenate([base.ravel(), up.ravel()]),
                          np.concatenate([base.ravel(), right.ravel()])]
            self.weights = np.full(2 * base.size, domain.h[0] * domain.h[1] / 2.0)
        self.plus = [np.ravel(p) for p in self.plus]
        self.minus = [np.ravel(p) for p in self.minus]
        self.num_elements = len(self.weights)
        self.G = [self._build(d) for d in range(n)]

    def _build(self, d: int) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        inv_h = 1.0 / self.domain.h[d]
        for idx, sign in ((self.plus[d], inv_h), (self.minus[d], -inv_h)):
            col = self._interior[idx]
            keep = col >= 0
            rows.append(np.flatnonzero(keep))
            cols.append(col[keep])
            vals.append(np.full(keep.sum(), sign))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.num_elements, self.domain.num_nodes))

    def apply(self, values: np.ndarray, boundary=None) -> np.ndarray:
        n = self.domain.n
        m = values.shape[-1]
        P = _pad(values, n, boundary).reshape(-1, m)
        comps = [(P[self.plus[d]] - P[self.minus[d]]) / self.domain.h[d] for d in range(n)]
        return np.stack(comps, axis=-1)

    def adjoint(self, Q: np.ndarray) -> np.ndarray:
        """Transpose of ``apply`` (zero boundary): (n_elem, m, n) -> (*cells, m)."""
        out = sum(self.G[d].T @ Q[:, :, d] for d in range(self.domain.n))
        return np.asarray(out).reshape(self.domain.cells + (Q.shape[1],))

    def integrate(self, elem_values: np.ndarray) -> float:
        return float(np.dot(self.weights, elem_values))


@dataclass
class Trajectory:
    """Snapshots v^0..v^N, shape (N+1, *cells, m), on a uniform time grid."""

    domain: BoxDomain
    m: int
    tau: float
    snapshots: np.ndarray
    psi_meta: dict = field(default_factory=dict)
    F_meta: dict = field(default_factory=dict)
    tol: float = 0.0
    reports: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.snapshots.shape[0] - 1

    @property
    def T(self) -> float:
        return self.N * self.tau

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)

    @cached_property
    def vt(self) -> np.ndarray:
        """Backward differences; index k holds (v^k - v^{k-1})/tau, k = 0 is NaN."""
        out = np.full_like(self.snapshots, np.nan)
        out[1:] = np.diff(self.snapshots, axis=0) / self.tau
        return out

    @cached_property
    def Dv(self) -> np.ndarray:
        return np.stack([gradient(s, self.domain) for s in self.snapshots])

    @cached_property
    def D2v(self) -> np.ndarray:
        return np.stack([hessian_field(s, self.domain) for s in self.snapshots])

    @cached_property
    def Dvt(self) -> np.ndarray:
        out = np.full(self.Dv.shape, np.nan)
        out[1:] = np.diff(self.Dv, axis=0) / self.tau
        return out

    def field(self, quantity: str) -> np.ndarray:
        try:
            return {"vt": self.vt, "Dv": self.Dv, "D2v": self.D2v, "Dvt": self.Dvt,
                    "v": self.snapshots}[quantity]
        except KeyError:
            raise ValueError(f"unknown quantity {quantity!r}")


def time_derivative(traj: Trajectory, k: int) -> np.ndarray:
    if not 1 <= k <= traj.N:
        raise IndexError(f"step index {k} outside 1..{traj.N}")
    return (traj.snapshots[k] - traj.snapshots[k - 1]) / traj.tau


@dataclass(frozen=True)
class ParabolicCylinder:
    """Q_r(x, t) = B_r(x) x (t - r^2/2, t + r^2/2)."""

    x: tuple
    t: float
    r: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(np.atleast_1d(np.asarray(self.x, dtype=float)).tolist()))
        if self.r <= 0:
            raise GeometryError("cylinder radius must be positive")

    def scaled(self, factor: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.x, self.t, self.r * factor)

    @property
    def half_time(self) -> float:
        return 0.5 * self.r ** 2


@dataclass
class CylinderPoints:
    steps: np.ndarray        # time indices k
    nodes: tuple             # index arrays into the spatial axes
    offsets: np.ndarray      # y - x for each spatial node, shape (P, n)

    @property
    def count(self) -> int:
        return len(self.steps) * len(self.offsets)


def contains(domain: BoxDomain, T: float, cyl: ParabolicCylinder) -> bool:
    if len(cyl.x) != domain.n:
        return False
    for d in range(domain.n):
        if cyl.x[d] - cyl.r < domain.lo[d] - _EPS or cyl.x[d] + cyl.r > domain.hi[d] + _EPS:
            return False
    return cyl.t - cyl.half_time >= -_EPS and cyl.t + cyl.half_time <= T + _EPS


def cylinder_points(domain: BoxDomain, N: int, tau: float, cyl: ParabolicCylinder) -> CylinderPoints:
    """Discrete point set of Q_r: strict inequalities in space and time.

    Raises GeometryError if the cylinder leaves U x (0, T) or resolves fewer
    than 3 distinct nodes on some spatial axis or fewer than 3 time levels.
    """
    T = N * tau
    if not contains(domain, T, cyl):
        raise GeometryError(f"cylinder {cyl} leaves the domain x (0, {T:g})")
    X = domain.node_coords()
    off = X - np.asarray(cyl.x)
    # strict membership, with a margin far below the grid spacing so that nodes
    # lying exactly on the sphere are excluded symmetrically despite rounding
    reach = cyl.r - 1e-9 * min(domain.h)
    inside = np.sum(off * off, axis=-1) < reach ** 2
    nodes = np.nonzero(inside)
    for d in range(domain.n):
        if len(np.unique(nodes[d])) < 3:
            raise GeometryError(f"cylinder r={cyl.r:g} resolves fewer than 3 nodes on axis x{d}")
    t = tau * np.arange(N + 1)
    steps = np.flatnonzero(np.abs(t - cyl.t) < cyl.half_time - 1e-9 * tau)
    if len(steps) < 3:
        raise GeometryError(f"cylinder r={cyl.r:g} resolves fewer than 3 time levels")
    return CylinderPoints(steps, nodes, off[nodes])


def admissible(domain: BoxDomain, N: int, tau: float, cyl: ParabolicCylinder) -> bool:
    try:
        cylinder_points(domain, N, tau, cyl)
    except GeometryError:
        return False
    return True


def restrict(values: np.ndarray, pts: CylinderPoints) -> np.ndarray:
    """Values on the cylinder, shape (steps, nodes, ...) from a (N+1, *cells, ...) array."""
    sub = values[pts.steps]
    return sub[(slice(None),) + pts.nodes]


def integrate(values: np.ndarray, domain: BoxDomain, cyl: ParabolicCylinder | None = None,
              tau: float | None = None) -> np.ndarray:
    """Midpoint-rule integral over U (values (*cells, ...)) or over a cylinder.

    For a cylinder ``values`` carries a leading time axis of length N + 1 and
    ``tau`` is required; the weight per point is cellvol * tau.
    """
    if cyl is None:
        axes = tuple(range(domain.n))
        return np.sum(values, axis=axes) * domain.cellvol
    if tau is None:
        raise ValueError("tau is required for cylinder integrals")
    pts = cylinder_points(domain, values.shape[0] - 1, tau, cyl)
    sub = restrict(values, pts)
    return np.sum(sub, axis=(0, 1)) * domain.cellvol * tau


def cylinder_measure(domain: BoxDomain, N: int, tau: float, cyl: ParabolicCylinder) -> float:
    return cylinder_points(domain, N, tau, cyl).count * domain.cellvol * tau


def cylinder_average(traj: Trajectory, quantity: str, cyl: ParabolicCylinder) -> np.ndarray:
    """Discrete space-time mean of vt, Dv or D2v over Q_r."""
    pts = cylinder_points(traj.domain, traj.N, traj.tau, cyl)
    sub = restrict(traj.field(quantity), pts)
    return sub.mean(axis=(0, 1))
