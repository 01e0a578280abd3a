"""Convergence, continuity and basis studies, plus CSV/PGM writers for their output."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .datagen import Dataset, ExperimentSpec, downsample, generate, paired_samples
from .encode import ChannelTensor, Scheme
from .fno import FnoModel, TrainConfig, init_model, predict, quadrature_weights, relative_l2, train
from .geometry import Curve, Ellipse, Geometry, GeometryError, PerturbationError, StarPolar, curve_vertices, perturb, \
    Perturbation
from .gp import sample_periodic_gp
from .grid import GridSpec
from .problem import InterfaceProblem
from .refsolve import solve_elliptic_interface

MIN_OVERSAMPLE = 8
ROW_CHUNK = 16


class QuadratureError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass
class ConvergenceRecord:
    resolutions: list
    errors: list
    fitted_slope: float
    intercept: float
    fit_r2: float


def fit_rate(resolutions, errors) -> ConvergenceRecord:
    """Least squares line through ``(log n, log E)``."""
    n = np.asarray(resolutions, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if n.shape != e.shape or n.size < 2:
        raise FitError("need at least two (resolution, error) pairs")
    if np.any(e <= 0) or np.any(n <= 0):
        raise FitError("resolutions and errors must be positive")
    if np.any(np.diff(n) <= 0):
        raise FitError("resolutions must be strictly increasing")
    fit = stats.linregress(np.log(n), np.log(e))
    return ConvergenceRecord(n.tolist(), e.tolist(), float(fit.slope), float(fit.intercept), float(fit.rvalue**2))


def _inside(curve: Curve, pts) -> np.ndarray:
    return curve.sdf(pts) <= 0.0


def encoding_error(curve: Curve, grid: GridSpec, scheme, oversample: int = 16) -> float:
    """L2 distance on the canvas between a curve's exact field and its grid encoding.

    Characteristic: indicator of the inside against its nearest-grid-point
    sampling. SDF: exact signed distance against the bilinear interpolant of its
    grid samples. Integrals use the midpoint rule on ``oversample`` sub-cells
    per cell axis.
    """
    scheme = Scheme(scheme)
    if grid.d != 2:
        raise ValueError("encoding_error is two-dimensional")
    if oversample < MIN_OVERSAMPLE:
        raise QuadratureError(f"need at least {MIN_OVERSAMPLE} quadrature points per cell axis, got {oversample}")
    lo, hi = curve.bbox()
    if np.any(lo < grid.s) or np.any(hi > grid.t):
        raise GeometryError("curve leaves the canvas")
    q, h, nc = oversample, grid.h, grid.n - 1
    u = (np.arange(q) + 0.5) / q
    axis = grid.axis()
    if scheme is Scheme.SDF:
        node = curve.sdf(grid.points()).reshape(grid.shape)
    total = 0.0
    for r0 in range(0, nc, ROW_CHUNK):
        rows = np.arange(r0, min(r0 + ROW_CHUNK, nc))
        xq = (axis[rows][:, None] + h * u[None, :]).ravel()
        yq = (axis[:-1][:, None] + h * u[None, :]).ravel()
        X, Y = np.meshgrid(xq, yq, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        if scheme is Scheme.CHARACTERISTIC:
            exact = _inside(curve, pts).astype(np.float64)
            ix = np.rint((pts[:, 0] - grid.s) / h).astype(int)
            iy = np.rint((pts[:, 1] - grid.s) / h).astype(int)
            near = _inside(curve, np.stack([axis[ix], axis[iy]], axis=1)).astype(np.float64)
            diff = exact - near
        else:
            exact = curve.sdf(pts)
            # bilinear interpolant, cell by cell: shape (rows, q, cols, q)
            v00, v10 = node[rows][:, :-1], node[rows + 1][:, :-1]
            v01, v11 = node[rows][:, 1:], node[rows + 1][:, 1:]
            a, b = u[None, :, None, None], u[None, None, None, :]
            interp = ((1 - a) * (1 - b) * v00[:, None, :, None] + a * (1 - b) * v10[:, None, :, None]
                      + (1 - a) * b * v01[:, None, :, None] + a * b * v11[:, None, :, None])
            diff = exact - interp.ravel()
        total += np.sum(diff * diff)
    return float(np.sqrt(total * (h / q) ** 2))


def encoding_study(curve: Curve, resolutions, scheme, canvas=(0.0, 1.0), oversample: int = 16) -> ConvergenceRecord:
    errs = [encoding_error(curve, GridSpec(canvas[0], canvas[1], n), scheme, oversample) for n in resolutions]
    return fit_rate(resolutions, errs)


# --- interface continuity -------------------------------------------------------------------------

@dataclass
class ContinuityResult:
    rows: list  # (direction, amplitude, r_inf, du_l2)
    slope: float | None
    ratio_spread: float | None
    max_ratio: float | None
    skipped: list = field(default_factory=list)


def _normal_family(curve: Curve, m: int):
    """``amplitude * delta -> perturbed curve`` moving the curve along its normals."""
    if isinstance(curve, Ellipse) and curve.is_circle:
        center, r0 = curve.center, curve.a
        return lambda disp: StarPolar(center, r0 + disp)
    if isinstance(curve, StarPolar):
        return lambda disp: StarPolar(curve.center, curve.radii + disp)
    verts = curve_vertices(curve, m)
    normals = curve.normal(verts)
    return lambda disp: perturb(curve, Perturbation(disp[:, None] * normals))[0]


def _l2(grid: GridSpec, v) -> float:
    return float(np.sqrt(np.sum(quadrature_weights(grid) * v * v)))


def continuity_probe(base: InterfaceProblem, grid: GridSpec, amplitudes, n_directions: int = 4, seed: int = 0,
                     *, interface: int = 0, n_vertices: int = 256, lengthscale: float = 0.8,
                     directions=None) -> ContinuityResult:
    """Change of the reference solution when one interface moves by ``amplitude`` along its normal.

    Directions are smooth periodic Gaussian fields on the curve, scaled to unit
    sup norm; ``directions`` may supply them explicitly as (k, n_vertices).
    """
    geom = base.geometry
    curve = geom.interfaces[interface]
    if isinstance(curve, StarPolar):
        n_vertices = curve.radii.size
    family = _normal_family(curve, n_vertices)
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = []
        for _ in range(n_directions):
            z = sample_periodic_gp(n_vertices, lengthscale, rng)
            directions.append(z / np.max(np.abs(z)))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))

    def solve(c):
        ifaces = list(geom.interfaces)
        ifaces[interface] = c
        return solve_elliptic_interface(base.with_geometry(Geometry(geom.outer, ifaces).validate()), grid).values

    u0 = solve(family(np.zeros(n_vertices)))
    rows, skipped = [], []
    for k, delta in enumerate(directions):
        for amp in amplitudes:
            disp = amp * delta
            try:
                du = solve(family(disp)) - u0
            except (GeometryError, PerturbationError) as exc:
                skipped.append((k, float(amp), str(exc)))
                continue
            rows.append((k, float(amp), float(np.max(np.abs(disp))), _l2(grid, du)))
    pos = [(r, d) for _, _, r, d in rows if r > 0 and d > 0]
    slope = spread = max_ratio = None
    if pos:
        r, d = np.array(pos).T
        ratios = d / r
        spread, max_ratio = float(ratios.max() / ratios.min()), float(ratios.max())
        if len(set(r)) >= 2:
            slope = float(stats.linregress(np.log(r), np.log(d)).slope)
    return ContinuityResult(rows, slope, spread, max_ratio, skipped)


# --- basis comparison -----------------------------------------------------------------------------

def _predictor(model):
    if isinstance(model, FnoModel):
        return lambda s: predict(model, s)
    return model


def basis_comparison(coarse: Dataset, model_field, model_tfpm, fine_grid: GridSpec | None = None,
                     indices=None) -> dict:
    """Mean relative L2 error of both heads against the full-resolution targets.

    Models may be ``FnoModel`` instances or callables mapping a paired sample to
    a ``ChannelTensor`` on the fine grid.
    """
    fine = fine_grid or coarse.fine_grid or coarse.grid
    if coarse.fine_grid is not None and fine != coarse.fine_grid:
        raise ValueError(f"fine grid {fine} does not match dataset fine grid {coarse.fine_grid}")
    pairs = paired_samples(coarse, coarse.split[1] if indices is None else indices)
    out = {"field": [], "tfpm": []}
    for s in pairs:
        truth = ChannelTensor(fine, np.asarray(s.target).reshape(fine.shape))
        for key, model in (("field", model_field), ("tfpm", model_tfpm)):
            pred = _predictor(model)(s)
            if pred.grid != fine:
                raise ValueError(f"{key} prediction on {pred.grid}, expected {fine}")
            out[key].append(relative_l2(pred, truth)[0])
    return {"field": float(np.mean(out["field"])), "tfpm": float(np.mean(out["tfpm"])),
            "per_sample": list(zip(out["field"], out["tfpm"])), "n": len(pairs)}


def basis_study(seed: int = 0, n_samples: int = 200, factor: int = 5, fine_n: int = 101, epochs: int = 100,
                d_v: int = 24, n_layers: int = 3, k_max: int = 8, batch_size: int = 5, learning_rate: float = 1e-3,
                workers: int = 1, precision: str = "f64", dataset: Dataset | None = None) -> dict:
    """Train a field head and a TFPM head on the same coarse square-interface data and compare them."""
    if dataset is None:
        spec = ExperimentSpec("SquareTfpm", n_samples=n_samples, seed=seed, grid=GridSpec(0.0, 1.0, fine_n))
        dataset = generate(spec, workers=workers)
    coarse = downsample(dataset, factor)
    train_set = paired_samples(coarse, coarse.split[0])
    cin = len(coarse.manifest)
    k = min(k_max, coarse.grid.n // 2)
    cfg = TrainConfig(learning_rate=learning_rate, batch_size=batch_size, epochs=epochs, seed=seed, precision=precision)
    result = {}
    models = {}
    for head in ("field", "tfpm"):
        m = init_model(cin, d=coarse.grid.d, d_v=d_v, n_layers=n_layers, k_max=k, head=head, seed=seed,
                       manifest=coarse.manifest)
        res = train(m, train_set, cfg)
        models[head] = res.model
        result[f"{head}_final_loss"] = res.loss_history[-1] if res.loss_history else float("nan")
    result.update(basis_comparison(coarse, models["field"], models["tfpm"]))
    result["models"] = models
    result["coarse_cells"] = coarse.grid.n - 1
    return result


# --- output ----------------------------------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])


def write_pgm(path, values, lo=None, hi=None) -> None:
    """8-bit binary PGM, first array axis along x (image columns), y upward."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 3:
        v = v[:, :, v.shape[2] // 2]
    if v.ndim != 2:
        raise ValueError("write_pgm needs a 2D field (3D fields are sliced at mid-depth)")
    lo = float(np.min(v)) if lo is None else lo
    hi = float(np.max(v)) if hi is None else hi
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    img = np.clip(np.rint(255 * scaled), 0, 255).astype(np.uint8).T[::-1]
    head = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(head + img.tobytes())
