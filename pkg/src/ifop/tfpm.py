"""Tailored finite point method for the piecewise-constant interface problem.

On every grid cell the coefficients are frozen at the cell center, so the PDE
reduces to ``-Lap u + mu^2 u = F`` whose solutions are spanned by

    F / mu^2 + sum_k c_{2k} exp(mu x_k) + c_{2k+1} exp(-mu x_k)

in cell-local coordinates measured from the cell's lower corner. Neighbouring
cells are glued at face midpoints: continuity of ``u`` and ``a du/dn`` inside a
region, the prescribed jumps across an interface, and ``u = g`` on the outer
boundary. Cells are assigned to the region containing their center, so a
curved interface is resolved as a staircase of cell faces.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .encode import ChannelTensor
from .grid import DomainError, GridSpec
from .problem import InterfaceProblem, NumericError, UnsupportedRegimeError, boundary_values, region_values

DIRECT_SOLVER_MAX_N = 128
RESIDUAL_TOL = 1e-10


class AssemblyDiagnosticError(NumericError):
    def __init__(self, message, deficient_cells=()):
        super().__init__(message)
        self.deficient_cells = list(deficient_cells)


@dataclass
class TfpmField:
    """Per-cell TFPM representation. Cell arrays have shape ``grid.cell_shape``."""

    grid: GridSpec
    mu: np.ndarray
    particular: np.ndarray
    coeffs: np.ndarray
    active: np.ndarray | None = None

    def __post_init__(self):
        cs = self.grid.cell_shape
        self.mu = np.broadcast_to(np.asarray(self.mu, dtype=np.float64), cs).copy()
        self.particular = np.broadcast_to(np.asarray(self.particular, dtype=np.float64), cs).copy()
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != cs + (2 * self.grid.d,):
            raise ValueError(f"coeffs shape {self.coeffs.shape} != {cs + (2 * self.grid.d,)}")
        if self.active is None:
            self.active = np.ones(cs, dtype=bool)
        if np.any(self.mu[self.active] <= 0):
            raise UnsupportedRegimeError("TFPM needs mu > 0 in every active cell")

    @property
    def n_coeffs(self) -> int:
        return 2 * self.grid.d


@dataclass
class TfpmSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    cells: np.ndarray  # flat ids of active cells, in unknown order
    mu: np.ndarray
    particular: np.ndarray
    active: np.ndarray
    labels: np.ndarray
    n_internal: int
    n_interface: int
    n_boundary: int


def _local_values(mu, xi):
    """Basis values ``[e^{mu xi_0}, e^{-mu xi_0}, ...]`` for ``xi`` of shape (..., d)."""
    e = np.exp(mu[..., None] * xi)
    out = np.empty(xi.shape[:-1] + (2 * xi.shape[-1],))
    out[..., 0::2] = e
    out[..., 1::2] = 1.0 / e
    return out


def modal_values(mu, xi, h):
    """Same span as ``_local_values``, rescaled so every function ranges over O(1) on the cell.

    With ``z = xi - h/2`` and ``s = mu h/2`` the modes are: the mean of
    ``cosh(mu z_k) / cosh(s)``; ``sinh(mu z_k) / sinh(s)`` per axis; and
    ``(cosh(mu z_k) - cosh(mu z_{k+1})) / (cosh(s) - 1)`` for consecutive axes.
    The exponentials alone are nearly collinear on small cells, which makes
    them a poor parametrization for a learned head.
    """
    mu = np.asarray(mu, dtype=np.float64)[..., None]
    d = xi.shape[-1]
    z = xi - 0.5 * h
    s = 0.5 * mu * h
    out = np.empty(xi.shape[:-1] + (2 * d,))
    out[..., 0] = np.mean(np.cosh(mu * z) / np.cosh(s), axis=-1)
    out[..., 1:d + 1] = np.sinh(mu * z) / np.sinh(s)
    half = np.sinh(0.5 * mu * z) ** 2
    out[..., d + 1:] = (half[..., :-1] - half[..., 1:]) / np.sinh(0.5 * s) ** 2
    return out


def modal_to_exponential(coeffs, mu, h):
    """Convert ``modal_values`` coefficients (..., 2d) to ``_local_values`` coefficients."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    d = coeffs.shape[-1] // 2
    mu = np.asarray(mu, dtype=np.float64)
    s = 0.5 * mu * h
    A = np.repeat((coeffs[..., 0] / (d * np.cosh(s)))[..., None], d, axis=-1)
    contrast = coeffs[..., d + 1:] / (np.cosh(s) - 1.0)[..., None]
    A[..., :-1] += contrast
    A[..., 1:] -= contrast
    B = coeffs[..., 1:d + 1] / np.sinh(s)[..., None]
    out = np.empty_like(coeffs)
    out[..., 0::2] = 0.5 * (A + B) * np.exp(-s)[..., None]
    out[..., 1::2] = 0.5 * (A - B) * np.exp(s)[..., None]
    return out


def _local_derivative(mu, xi, axis):
    d = xi.shape[-1]
    out = np.zeros(xi.shape[:-1] + (2 * d,))
    e = np.exp(mu * xi[..., axis])
    out[..., 2 * axis] = mu * e
    out[..., 2 * axis + 1] = -mu / e
    return out


def cell_context(problem: InterfaceProblem, grid: GridSpec):
    """Region labels, ``mu`` and the particular term ``F / mu^2`` at cell centers."""
    geom = problem.geometry
    if geom.d != grid.d:
        raise ValueError("problem and grid dimensions differ")
    centers = grid.cell_centers()
    labels = geom.region_label(centers, 1e-12 * grid.length)
    active = labels >= 1
    a = region_values(problem.a, labels, centers)
    b = region_values(problem.b, labels, centers)
    f = region_values(problem.f, labels, centers)
    if np.any(a[active] <= 0):
        raise UnsupportedRegimeError("diffusion coefficient a must be positive")
    if np.any(b[active] <= 0):
        raise UnsupportedRegimeError("TFPM requires b > 0 in every cell (mu must be real and positive)")
    mu = np.where(active, np.sqrt(np.where(active, b / np.where(active, a, 1.0), 1.0)), 1.0)
    part = np.where(active, (f / np.where(active, a, 1.0)) / mu**2, 0.0)
    return labels, active, a, mu, part


def tfpm_assemble(problem: InterfaceProblem, grid: GridSpec) -> TfpmSystem:
    d, n, h = grid.d, grid.n, grid.h
    cs = grid.cell_shape
    labels, active, a, mu, part = cell_context(problem, grid)
    n_cells = len(labels)
    if not np.any(active):
        raise AssemblyDiagnosticError("no cell lies inside the domain")
    unknown = np.full(n_cells, -1, dtype=np.int64)
    unknown[active] = np.arange(np.count_nonzero(active))
    idx = np.indices(cs).reshape(d, -1).T  # (n_cells, d), C order
    lower = grid.s + idx * h
    alpha_off = problem.alpha_offsets()
    beta_off = problem.beta_offsets()
    nb = 2 * d
    rows, cols, vals, rhs = [], [], [], []
    row = 0
    counts = {"internal": 0, "interface": 0, "boundary": 0}

    def add_block(r, cells, coeff_rows):
        k = len(cells)
        rows.append(np.repeat(r, nb))
        cols.append((unknown[cells][:, None] * nb + np.arange(nb)).ravel())
        vals.append(coeff_rows.reshape(k * nb))

    half = np.full(d, h / 2)
    for k in range(d):
        xi_hi = half.copy()
        xi_hi[k] = h
        xi_lo = half.copy()
        xi_lo[k] = 0.0
        stride = int(np.prod(cs[k + 1:]))
        # faces shared by two cells
        left = np.flatnonzero(idx[:, k] < n - 2)
        right = left + stride
        both = active[left] & active[right]
        L, R = left[both], right[both]
        if len(L):
            m = len(L)
            r_val = row + 2 * np.arange(m)
            r_flux = r_val + 1
            vL = _local_values(mu[L], np.broadcast_to(xi_hi, (m, d)))
            vR = _local_values(mu[R], np.broadcast_to(xi_lo, (m, d)))
            add_block(r_val, L, vL)
            add_block(r_val, R, -vR)
            scale = 0.5 * (a[L] * mu[L] + a[R] * mu[R])
            dL = a[L, None] * _local_derivative(mu[L], np.broadcast_to(xi_hi, (m, d)), k) / scale[:, None]
            dR = a[R, None] * _local_derivative(mu[R], np.broadcast_to(xi_lo, (m, d)), k) / scale[:, None]
            add_block(r_flux, L, dL)
            add_block(r_flux, R, -dR)
            lL, lR = labels[L], labels[R]
            differ = lL != lR
            b_val = (alpha_off[lL] - alpha_off[lR]) - (part[L] - part[R])
            b_flux = np.where(differ, beta_off[lL] + beta_off[lR], 0.0) / scale
            block = np.empty(2 * m)
            block[0::2] = b_val
            block[1::2] = b_flux
            rhs.append(block)
            row += 2 * m
            counts["interface"] += 2 * int(np.count_nonzero(differ))
            counts["internal"] += 2 * int(np.count_nonzero(~differ))
        # boundary faces: canvas edge, or an active cell next to an inactive one
        for cells, xi in (
            (np.concatenate([np.flatnonzero(idx[:, k] == n - 2), left[active[left] & ~active[right]]]), xi_hi),
            (np.concatenate([np.flatnonzero(idx[:, k] == 0), right[active[right] & ~active[left]]]), xi_lo),
        ):
            cells = np.sort(cells[active[cells]])
            m = len(cells)
            if not m:
                continue
            face = lower[cells] + xi
            g = boundary_values(problem.g, face)
            add_block(row + np.arange(m), cells, _local_values(mu[cells], np.broadcast_to(xi, (m, d))))
            rhs.append(g - part[cells])
            row += m
            counts["boundary"] += m
    n_unknowns = nb * int(np.count_nonzero(active))
    if row != n_unknowns:
        raise AssemblyDiagnosticError(f"non-square TFPM system: {row} equations for {n_unknowns} unknowns")
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, n_unknowns)
    )
    return TfpmSystem(matrix, np.concatenate(rhs), np.flatnonzero(active), mu, part, active, labels,
                      counts["internal"], counts["interface"], counts["boundary"])


def _deficient_cells(system: TfpmSystem, nb: int) -> list:
    col_norm = np.sqrt(np.asarray(system.matrix.multiply(system.matrix).sum(axis=0))).ravel()
    bad = np.flatnonzero(col_norm == 0) // nb
    return sorted(set(int(system.cells[i]) for i in bad))


def _solve(system: TfpmSystem, n: int) -> np.ndarray:
    A, b = system.matrix, system.rhs
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            if n <= DIRECT_SOLVER_MAX_N:
                x = spla.spsolve(A.tocsc(), b)
            else:
                # a loose ILU is singular on these systems; a tight one converges in a few sweeps
                ilu = spla.spilu(A.tocsc(), drop_tol=1e-8, fill_factor=30)
                M = spla.LinearOperator(A.shape, ilu.solve)
                x, info = spla.gmres(A, b, M=M, rtol=1e-12, atol=0.0, restart=100, maxiter=50)
                if info != 0:
                    raise NumericError(f"GMRES did not converge (info={info})")
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            if isinstance(exc, NumericError):
                raise
            cells = _deficient_cells(system, A.shape[1] // len(system.cells))
            raise AssemblyDiagnosticError(f"singular TFPM system ({exc}); deficient cells: {cells}", cells) from exc
    if not np.all(np.isfinite(x)):
        cells = _deficient_cells(system, A.shape[1] // len(system.cells))
        raise AssemblyDiagnosticError(f"singular TFPM system; deficient cells: {cells}", cells)
    res = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300)
    if res >= RESIDUAL_TOL and np.linalg.norm(b) > 0:
        raise NumericError(f"TFPM solve relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    return x


def tfpm_solve(problem: InterfaceProblem, grid: GridSpec) -> TfpmField:
    system = tfpm_assemble(problem, grid)
    nb = 2 * grid.d
    x = _solve(system, grid.n)
    coeffs = np.zeros((len(system.labels), nb))
    coeffs[system.cells] = x.reshape(-1, nb)
    cs = grid.cell_shape
    return TfpmField(grid, system.mu.reshape(cs), system.particular.reshape(cs), coeffs.reshape(cs + (nb,)),
                     system.active.reshape(cs))


def tfpm_reconstruct(field: TfpmField, points) -> np.ndarray:
    flat, local = field.grid.locate(points)
    mu = field.mu.ravel()[flat]
    basis = _local_values(mu, local)
    coeffs = field.coeffs.reshape(-1, field.n_coeffs)[flat]
    u = field.particular.ravel()[flat] + np.einsum("pk,pk->p", basis, coeffs)
    return np.where(field.active.ravel()[flat], u, 0.0)


def upsample_tfpm(field: TfpmField, fine_grid: GridSpec) -> ChannelTensor:
    if fine_grid.d != field.grid.d or fine_grid.s != field.grid.s or fine_grid.t != field.grid.t:
        raise DomainError("fine grid must cover the same canvas")
    vals = tfpm_reconstruct(field, fine_grid.points())
    return ChannelTensor(fine_grid, vals.reshape(fine_grid.shape))


def face_jumps(field: TfpmField, problem: InterfaceProblem):
    """Evaluate ``[u]`` and ``[a du/dn]`` at every interface face midpoint.

    Returns ``(u_jump, flux_jump, expected_alpha, expected_beta)`` arrays, with
    jumps oriented inside minus outside.
    """
    grid = field.grid
    d, n, h = grid.d, grid.n, grid.h
    cs = grid.cell_shape
    labels, active, a, _, _ = cell_context(problem, grid)
    idx = np.indices(cs).reshape(d, -1).T
    alpha_off, beta_off = problem.alpha_offsets(), problem.beta_offsets()
    mu = field.mu.ravel()
    coeffs = field.coeffs.reshape(-1, 2 * d)
    part = field.particular.ravel()
    out = ([], [], [], [])
    half = np.full(d, h / 2)
    for k in range(d):
        stride = int(np.prod(cs[k + 1:]))
        L = np.flatnonzero(idx[:, k] < n - 2)
        R = L + stride
        keep = active[L] & active[R] & (labels[L] != labels[R])
        L, R = L[keep], R[keep]
        if not len(L):
            continue
        xi_hi, xi_lo = half.copy(), half.copy()
        xi_hi[k], xi_lo[k] = h, 0.0
        uL = part[L] + np.einsum("pk,pk->p", _local_values(mu[L], np.broadcast_to(xi_hi, (len(L), d))), coeffs[L])
        uR = part[R] + np.einsum("pk,pk->p", _local_values(mu[R], np.broadcast_to(xi_lo, (len(R), d))), coeffs[R])
        fL = a[L] * np.einsum("pk,pk->p", _local_derivative(mu[L], np.broadcast_to(xi_hi, (len(L), d)), k), coeffs[L])
        fR = a[R] * np.einsum("pk,pk->p", _local_derivative(mu[R], np.broadcast_to(xi_lo, (len(R), d)), k), coeffs[R])
        l_inside = labels[L] > labels[R]
        # inside minus outside; the flux along +x_k becomes the normal flux with the sign of n
        out[0].append(np.where(l_inside, uL - uR, uR - uL))
        out[1].append(fL - fR)
        out[2].append(np.where(l_inside, alpha_off[labels[L]], alpha_off[labels[R]]))
        out[3].append(np.where(l_inside, beta_off[labels[L]], beta_off[labels[R]]))
    return tuple(np.concatenate(o) if o else np.zeros(0) for o in out)
