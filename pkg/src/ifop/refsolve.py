"""Finite-difference ground-truth solvers.

``solve_elliptic_interface`` uses the 2d+1 point stencil on grid points. An arm
whose endpoints lie in different regions is replaced by the exact flux of the
1D two-phase problem along that arm: linear pieces on each side of the crossing,
joined by the value jump and by the normal flux jump projected on the arm
direction. This is first order at curved interfaces and exact for piecewise
linear solutions along grid lines.

``run_transport`` is a node-centred finite-volume scheme with backward Euler in
time. Fluxes across the interface follow a resistance law, which is applied in
series with the diffusive resistance on both sides of the crossing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .encode import ChannelTensor
from .geometry import EPS_REL, Geometry
from .grid import GridSpec
from .problem import InterfaceProblem, NumericError, boundary_values, region_values

BISECTION_TOL = 1e-12
DIRECT_MAX_UNKNOWNS = 400_000
DIRECT_MAX_UNKNOWNS_3D = 8_000  # sparse LU fill-in grows fast in 3D


def _neighbours(grid: GridSpec):
    """For each axis and sign: (point ids with a neighbour, neighbour ids)."""
    idx = np.indices(grid.shape).reshape(grid.d, -1).T
    out = []
    for k in range(grid.d):
        stride = int(np.prod(grid.shape[k + 1:]))
        for sign in (1, -1):
            ok = idx[:, k] < grid.n - 1 if sign > 0 else idx[:, k] > 0
            p = np.flatnonzero(ok)
            out.append((k, sign, p, p + sign * stride))
    return idx, out


def _separating_interface(lp, lq):
    """Index of the interface crossed between labels ``lp`` and ``lq`` (both >= 1)."""
    inner = np.maximum(lp, lq)
    if np.any(np.minimum(lp, lq) != 1):
        raise NumericError("a stencil arm joins two different interface interiors; refine the grid")
    return inner - 2


def _crossings(geometry: Geometry, pts_p, pts_q, inside_p, iface_idx, h):
    """Fraction ``theta`` of the arm from p where the interface is crossed, and the outward normal there."""
    theta = np.empty(len(pts_p))
    normal = np.empty_like(pts_p)
    iters = max(1, math.ceil(math.log2(max(h, BISECTION_TOL) / BISECTION_TOL)))
    eps = EPS_REL
    for i in np.unique(iface_idx):
        sel = np.flatnonzero(iface_idx == i)
        curve = geometry.interfaces[i]
        p, q = pts_p[sel], pts_q[sel]
        # bracket with the inside end at ``lo``
        lo = np.where(inside_p[sel], 0.0, 1.0)
        hi = 1.0 - lo
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            x = p + mid[:, None] * (q - p)
            ins = curve.sdf(x) <= eps
            lo = np.where(ins, mid, lo)
            hi = np.where(ins, hi, mid)
        t = 0.5 * (lo + hi)
        theta[sel] = t
        normal[sel] = curve.normal(p + t[:, None] * (q - p))
    return theta, normal


@dataclass
class _Arms:
    p: np.ndarray
    q: np.ndarray
    k: np.ndarray
    sign: np.ndarray
    theta: np.ndarray
    ns: np.ndarray  # normal . arm direction (0 on same-region arms)
    cross: np.ndarray


def _arms(geometry: Geometry, grid: GridSpec, labels, pts):
    _, nbrs = _neighbours(grid)
    P, Q, K, S = [], [], [], []
    for k, sign, p, q in nbrs:
        keep = (labels[p] >= 1) & (labels[q] >= 1)
        P.append(p[keep])
        Q.append(q[keep])
        K.append(np.full(np.count_nonzero(keep), k))
        S.append(np.full(np.count_nonzero(keep), sign))
    p, q, k, s = (np.concatenate(v) for v in (P, Q, K, S))
    cross = labels[p] != labels[q]
    theta = np.ones(len(p))
    ns = np.zeros(len(p))
    if np.any(cross):
        c = np.flatnonzero(cross)
        iface = _separating_interface(labels[p[c]], labels[q[c]])
        inside_p = labels[p[c]] > labels[q[c]]
        th, nrm = _crossings(geometry, pts[p[c]], pts[q[c]], inside_p, iface, grid.h)
        theta[c] = th
        ns[c] = nrm[np.arange(len(c)), k[c]] * s[c]
    return _Arms(p, q, k, s, theta, ns, cross)


def solve_elliptic_interface(problem: InterfaceProblem, grid: GridSpec) -> ChannelTensor:
    geometry = problem.geometry
    if geometry.d != grid.d:
        raise ValueError("problem and grid dimensions differ")
    h = grid.h
    pts = grid.points()
    labels = geometry.region_label(pts, EPS_REL * grid.length)
    omega = labels >= 1
    a = region_values(problem.a, labels, pts)
    b = region_values(problem.b, labels, pts)
    f = region_values(problem.f, labels, pts)
    if np.any(a[omega] <= 0) or np.any(b[omega] < 0):
        raise NumericError("elliptic reference solver needs a > 0 and b >= 0")
    idx, nbrs = _neighbours(grid)
    # Dirichlet points: canvas edge or next to a point outside the domain
    dirichlet = omega & np.any((idx == 0) | (idx == grid.n - 1), axis=1)
    for _, _, p, q in nbrs:
        dirichlet[p[omega[p] & ~omega[q]]] = True
    u = np.zeros(len(pts))
    u[dirichlet] = boundary_values(problem.g, pts[dirichlet])
    free = omega & ~dirichlet
    if not np.any(free):
        return ChannelTensor(grid, u.reshape(grid.shape))
    number = np.full(len(pts), -1, dtype=np.int64)
    number[free] = np.arange(np.count_nonzero(free))

    arms = _arms(geometry, grid, labels, pts)
    on = free[arms.p]
    p, q, th, ns, cross = arms.p[on], arms.q[on], arms.theta[on], arms.ns[on], arms.cross[on]
    # same region: harmonic mean with theta = 1/2; crossing: harmonic weights split at the crossing
    th_eff = np.where(cross, th, 0.5)
    ahat = 1.0 / (th_eff / a[p] + (1 - th_eff) / a[q])
    alpha_off = problem.alpha_offsets()
    beta_off = problem.beta_offsets()
    jv = np.where(cross, alpha_off[labels[p]] - alpha_off[labels[q]], 0.0)
    jf = np.where(cross, (beta_off[labels[p]] - beta_off[labels[q]]) * ns, 0.0)
    w = ahat / h**2
    rhs = f[free].copy()
    np.add.at(rhs, number[p], w * jv + ahat * (1 - th_eff) * jf / (a[q] * h))
    diag = b[free].copy()
    np.add.at(diag, number[p], w)
    coupled = free[q]
    rows = np.concatenate([np.arange(len(diag)), number[p[coupled]]])
    cols = np.concatenate([np.arange(len(diag)), number[q[coupled]]])
    vals = np.concatenate([diag, -w[coupled]])
    np.add.at(rhs, number[p[~coupled]], w[~coupled] * u[q[~coupled]])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(diag),) * 2)
    x = _spd_solve(A, rhs, DIRECT_MAX_UNKNOWNS if grid.d == 2 else DIRECT_MAX_UNKNOWNS_3D)
    u[free] = x
    return ChannelTensor(grid, u.reshape(grid.shape))


def _spd_solve(A, rhs, direct_max=DIRECT_MAX_UNKNOWNS):
    if A.shape[0] <= direct_max:
        x = spla.spsolve(A.tocsc(), rhs)
    else:
        M = sp.diags(1.0 / A.diagonal())
        x, info = spla.cg(A, rhs, M=M, rtol=1e-12, atol=0.0, maxiter=20 * A.shape[0])
        if info != 0:
            raise NumericError(f"CG did not converge (info={info})")
    bn = np.linalg.norm(rhs)
    res = np.linalg.norm(A @ x - rhs) / bn if bn > 0 else np.linalg.norm(A @ x)
    if not np.all(np.isfinite(x)) or res > 1e-9:
        raise NumericError(f"reference solve failed, relative residual {res:.3e}")
    return x


@dataclass(frozen=True)
class TransportParams:
    rho: float = 0.2
    gamma_star: float = 1.0
    d_in: float = 0.1
    d_out: float = 0.5
    dt: float = 0.01
    t_end: float = 0.1

    def __post_init__(self):
        for name in ("rho", "gamma_star", "d_in", "d_out"):
            if not getattr(self, name) > 0:
                raise NumericError(f"{name} must be positive")
        if not 0 < self.dt <= self.t_end:
            raise NumericError(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.t_end / self.dt))


def node_volumes(geometry: Geometry, grid: GridSpec) -> np.ndarray:
    """Control volume of every grid point (halved per canvas face it sits on, 0 outside the domain)."""
    idx = np.indices(grid.shape).reshape(grid.d, -1).T
    edge = (idx == 0) | (idx == grid.n - 1)
    vol = grid.h**grid.d * np.prod(np.where(edge, 0.5, 1.0), axis=1)
    labels = geometry.region_label(grid.points(), EPS_REL * grid.length)
    return np.where(labels >= 1, vol, 0.0)


def transport_masses(geometry: Geometry, grid: GridSpec, phi) -> tuple[float, float]:
    """(mass inside the interfaces, mass between them) for a nodal field."""
    v = phi.values if isinstance(phi, ChannelTensor) else np.asarray(phi)
    labels = geometry.region_label(grid.points(), EPS_REL * grid.length)
    m = node_volumes(geometry, grid) * v.ravel()
    return float(m[labels >= 2].sum()), float(m[labels == 1].sum())


def transport_operator(geometry: Geometry, params: TransportParams, grid: GridSpec):
    """Sparse ``K`` with ``V dphi/dt = -K phi`` and the node volumes ``V``."""
    h = grid.h
    pts = grid.points()
    labels = geometry.region_label(pts, EPS_REL * grid.length)
    vol = node_volumes(geometry, grid)
    D = np.where(labels >= 2, params.d_in, params.d_out)
    arms = _arms(geometry, grid, labels, pts)
    fwd = arms.sign > 0  # one entry per face
    p, q, th, cross = arms.p[fwd], arms.q[fwd], arms.theta[fwd], arms.cross[fwd]
    area = h ** (grid.d - 1)
    # flux p -> q is c_p phi_p - c_q phi_q
    same = ~cross
    cp = np.zeros(len(p))
    cq = np.zeros(len(p))
    dh = 2.0 / (1.0 / D[p[same]] + 1.0 / D[q[same]])
    cp[same] = cq[same] = area * dh / h
    if np.any(cross):
        c = np.flatnonzero(cross)
        p_in = labels[p[c]] > labels[q[c]]
        th_in = np.where(p_in, th[c], 1 - th[c])
        g = params.gamma_star
        resist = params.rho + th_in * h / params.d_in + g * (1 - th_in) * h / params.d_out
        k = area / resist
        # J (inside -> outside) = k (phi_in - g phi_out)
        cp[c] = np.where(p_in, k, g * k)
        cq[c] = np.where(p_in, g * k, k)
    n = len(pts)
    rows = np.concatenate([p, p, q, q])
    cols = np.concatenate([p, q, p, q])
    vals = np.concatenate([cp, -cq, -cp, cq])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return K, vol, labels


def run_transport(geometry: Geometry, params: TransportParams, phi0, grid: GridSpec, *,
                  history: list | None = None) -> ChannelTensor:
    """Backward-Euler transport to ``t_end``. ``history`` (if given) receives the field after every step."""
    v0 = phi0.values if isinstance(phi0, ChannelTensor) else np.asarray(phi0, dtype=np.float64)
    if v0.shape != grid.shape:
        raise ValueError(f"initial state shape {v0.shape} does not match grid {grid.shape}")
    K, vol, labels = transport_operator(geometry, params, grid)
    omega = labels >= 1
    ids = np.flatnonzero(omega)
    K = K[ids][:, ids]
    V = vol[ids]
    dt = params.t_end / params.n_steps
    lu = spla.splu((sp.diags(V / dt) + K).tocsc())
    phi = v0.ravel()[ids].copy()
    out = np.zeros(grid.size)
    for _ in range(params.n_steps):
        rhs = V / dt * phi
        phi = lu.solve(rhs)
        res = np.linalg.norm((V / dt) * phi + K @ phi - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.all(np.isfinite(phi)) or res > 1e-9:
            raise NumericError(f"transport step failed, relative residual {res:.3e}")
        if history is not None:
            out[ids] = phi
            history.append(out.reshape(grid.shape).copy())
    out[ids] = phi
    return ChannelTensor(grid, out.reshape(grid.shape))
