"""Synthetic datasets for the five experiment families.

Every sample is drawn from its own generator seeded by ``(seed, index)``, so any
single sample can be regenerated without the rest of the run.
"""
from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .encode import EncodedSample, Scheme, assemble_input
from .geometry import AxisSquare, Box, Ellipse, Geometry, GeometryError, LineX, PlaneZ, star_curve
from .gp import GridFunction, sample_gp_field, sample_periodic_gp
from .grid import GridSpec
from .problem import InterfaceProblem
from .refsolve import TransportParams, run_transport, solve_elliptic_interface
from .tfpm import cell_context, tfpm_solve, upsample_tfpm

MAX_RETRIES = 20
STAR_VERTICES = 100
STAR_LENGTHSCALE = 0.8
STAR_RADIUS = (0.35, 0.05, 0.25, 0.45)  # mean, spread, clip low, clip high
SQUARE_SIDE = 0.4
FIXED_STREAM = 2**31 - 1
SPLIT_STREAM = 2**31 - 2


class Kind(str, Enum):
    OUTER_STAR = "OuterStar"
    INNER_STAR = "InnerStar"
    SQUARE_TFPM = "SquareTfpm"
    PLANAR_3D = "Planar3D"
    TRANSPORT = "Transport"


DEFAULT_GRIDS = {
    Kind.OUTER_STAR: GridSpec(-0.5, 0.5, 100),
    Kind.INNER_STAR: GridSpec(0.0, 1.0, 100),
    Kind.SQUARE_TFPM: GridSpec(0.0, 1.0, 101),
    Kind.PLANAR_3D: GridSpec(0.0, 1.0, 41, 3),
    Kind.TRANSPORT: GridSpec(0.0, 1.0, 101),
}

DEFAULT_SCHEMES = {
    Kind.OUTER_STAR: Scheme.CHARACTERISTIC,
    Kind.INNER_STAR: Scheme.CHARACTERISTIC,
    Kind.SQUARE_TFPM: Scheme.SDF,
    Kind.PLANAR_3D: Scheme.SDF,
    Kind.TRANSPORT: Scheme.CHARACTERISTIC,
}

DEFAULT_JUMPS = {
    Kind.OUTER_STAR: {"alpha": [0.0, 0.5], "beta": [0.0, 0.5]},
    Kind.INNER_STAR: {"alpha": [0.0, 0.1], "beta": [0.0, 0.1]},
    Kind.SQUARE_TFPM: {"alpha": [0.02, 0.02], "beta": [0.02, 0.02]},
    Kind.PLANAR_3D: {"alpha": [0.2, 0.2], "beta": [0.0, 0.0], "kappa": [0.2, 0.8]},
    Kind.TRANSPORT: {"axis": [0.15, 0.3]},
}

DEFAULT_OPTIONS = {
    Kind.OUTER_STAR: {"variant": "beta"},
    Kind.INNER_STAR: {"f": 1.0},
    Kind.SQUARE_TFPM: {"a": 1.0, "b": 1.0, "f": 1.0},
    Kind.PLANAR_3D: {"a": 1.0, "b": 1.0, "f": 1.0},
    Kind.TRANSPORT: {"rho": 0.2, "gamma_star": 1.0, "d_in": 0.1, "d_out": 0.5, "dt": 0.01, "t_end": 0.1},
}


@dataclass
class ExperimentSpec:
    kind: Kind
    n_samples: int = 200
    grid: GridSpec | None = None
    scheme: Scheme | None = None
    seed: int = 0
    jump_ranges: dict = field(default_factory=dict)
    gp: tuple = (None, 1.0)  # lengthscale (None: 0.2 of the canvas), variance
    options: dict = field(default_factory=dict)
    test_fraction: float = 0.2

    def __post_init__(self):
        self.kind = Kind(self.kind)
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        self.grid = self.grid or DEFAULT_GRIDS[self.kind]
        self.scheme = Scheme(self.scheme or DEFAULT_SCHEMES[self.kind])
        self.jump_ranges = {**DEFAULT_JUMPS[self.kind], **self.jump_ranges}
        self.options = {**DEFAULT_OPTIONS[self.kind], **self.options}
        ls, var = self.gp
        self.gp = (float(ls) if ls is not None else 0.2 * self.grid.length, float(var))
        if self.kind is Kind.PLANAR_3D and self.grid.d != 3 or self.kind is not Kind.PLANAR_3D and self.grid.d != 2:
            raise ValueError(f"{self.kind.value} needs a {3 if self.kind is Kind.PLANAR_3D else 2}D grid")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "n_samples": self.n_samples, "grid": self.grid.to_dict(),
                "scheme": self.scheme.value, "seed": self.seed, "jump_ranges": self.jump_ranges,
                "gp": list(self.gp), "options": self.options, "test_fraction": self.test_fraction}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        d["grid"] = GridSpec.from_dict(d["grid"])
        d["gp"] = tuple(d["gp"])
        return cls(**d)

    @property
    def has_tfpm_context(self) -> bool:
        return self.kind in (Kind.SQUARE_TFPM, Kind.PLANAR_3D)


@dataclass
class Dataset:
    spec: ExperimentSpec
    samples: list
    split: tuple  # (train indices, test indices)
    fine_grid: GridSpec | None = None

    def __post_init__(self):
        train, test = (list(map(int, s)) for s in self.split)
        if set(train) & set(test) or sorted(train + test) != list(range(len(self.samples))):
            raise ValueError("split must be disjoint and cover every sample")
        self.split = (train, test)
        if self.samples:
            names, grid = self.samples[0].names, self.samples[0].grid
            if any(s.names != names or s.grid != grid for s in self.samples):
                raise ValueError("all samples must share grid and channel manifest")

    @property
    def grid(self) -> GridSpec:
        return self.samples[0].grid if self.samples else self.spec.grid

    @property
    def manifest(self) -> list:
        return list(self.samples[0].names) if self.samples else []

    def train_samples(self):
        return [self.samples[i] for i in self.split[0]]

    def test_samples(self):
        return [self.samples[i] for i in self.split[1]]


def _uniform(rng, lohi):
    lo, hi = lohi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def star_radii(rng, m: int = STAR_VERTICES) -> np.ndarray:
    mean, spread, lo, hi = STAR_RADIUS
    return np.clip(mean + spread * sample_periodic_gp(m, STAR_LENGTHSCALE, rng), lo, hi)


def sample_parameters(spec: ExperimentSpec, rng) -> dict:
    """Scalar and geometric parameters of one sample (no solves)."""
    jr, k = spec.jump_ranges, spec.kind
    if k is Kind.OUTER_STAR:
        p = {"radii": star_radii(rng).tolist(), "alpha": 0.0, "beta": 0.0}
        jump = "alpha" if spec.options["variant"] == "alpha" else "beta"
        p[jump] = _uniform(rng, jr[jump])
        return p
    if k is Kind.INNER_STAR:
        return {"radii": star_radii(rng).tolist(), "alpha": _uniform(rng, jr["alpha"]),
                "beta": _uniform(rng, jr["beta"])}
    if k is Kind.SQUARE_TFPM:
        lo, hi = spec.grid.s, spec.grid.t
        margin = 0.5 * SQUARE_SIDE + 0.05 * (hi - lo)
        return {"center": rng.uniform(lo + margin, hi - margin, 2).tolist(), "alpha": _uniform(rng, jr["alpha"]),
                "beta": _uniform(rng, jr["beta"])}
    if k is Kind.PLANAR_3D:
        return {"kappa": _uniform(rng, jr["kappa"]), "alpha": _uniform(rng, jr["alpha"]),
                "beta": _uniform(rng, jr["beta"])}
    return {"a": _uniform(rng, jr["axis"]), "b": _uniform(rng, jr["axis"])}


def build_geometry(spec: ExperimentSpec, params: dict) -> Geometry:
    k, g = spec.kind, spec.grid
    mid = 0.5 * (g.s + g.t)
    if k is Kind.OUTER_STAR:
        return Geometry(star_curve((mid, mid), params["radii"]), [LineX(mid)])
    if k is Kind.INNER_STAR:
        return Geometry(Box.cube(g.s, g.t), [star_curve((mid, mid), params["radii"])])
    if k is Kind.SQUARE_TFPM:
        return Geometry(Box.cube(g.s, g.t), [AxisSquare(params["center"], SQUARE_SIDE)])
    if k is Kind.PLANAR_3D:
        return Geometry(Box.cube(g.s, g.t, 3), [PlaneZ(params["kappa"])])
    return Geometry(Box.cube(g.s, g.t), [Ellipse((mid, mid), params["a"], params["b"])])


def _planar_g(p):
    return np.sin(p.sum(axis=1))


def build_problem(spec: ExperimentSpec, params: dict, geometry: Geometry, f=None) -> InterfaceProblem:
    o = spec.options
    if spec.kind in (Kind.SQUARE_TFPM, Kind.PLANAR_3D):
        g = _planar_g if spec.kind is Kind.PLANAR_3D else 0.0
        return InterfaceProblem(geometry, a=o["a"], b=o["b"], f=o["f"], g=g, alpha=params["alpha"], beta=params["beta"])
    return InterfaceProblem(geometry, a=1.0, b=0.0, f=o.get("f", 1.0) if f is None else f, g=0.0,
                            alpha=params["alpha"], beta=params["beta"])


def tfpm_context(spec: ExperimentSpec, params: dict, grid: GridSpec) -> dict:
    """Per-cell ``mu``, particular term and activity for the TFPM head on ``grid``."""
    geometry = build_geometry(spec, params)
    _, active, _, mu, part = cell_context(build_problem(spec, params, geometry), grid)
    cs = grid.cell_shape
    return {"mu": mu.reshape(cs), "particular": part.reshape(cs), "active": active.reshape(cs)}


def _fixed_source(spec: ExperimentSpec):
    return sample_gp_field(spec.grid, *spec.gp, seed=np.random.default_rng([spec.seed, FIXED_STREAM])).values


def generate_sample(spec: ExperimentSpec, index: int) -> EncodedSample:
    rng = np.random.default_rng([spec.seed, index])
    grid = spec.grid
    for _ in range(MAX_RETRIES):
        params = sample_parameters(spec, rng)
        try:
            geometry = build_geometry(spec, params).validate()
            break
        except GeometryError:
            continue
    else:
        raise GeometryError(f"sample {index}: no valid geometry after {MAX_RETRIES} draws")
    k = spec.kind
    extra = {}
    if k is Kind.OUTER_STAR:
        fvals = _fixed_source(spec) if spec.options["variant"] == "alpha" else \
            sample_gp_field(grid, *spec.gp, seed=rng).values
        problem = build_problem(spec, params, geometry, GridFunction(grid, fvals))
        jump = "alpha" if spec.options["variant"] == "alpha" else "beta"
        functions = {"f": fvals, jump: params[jump]}
        target = solve_elliptic_interface(problem, grid).values
    elif k is Kind.INNER_STAR:
        problem = build_problem(spec, params, geometry)
        functions = {"alpha": params["alpha"], "beta": params["beta"]}
        target = solve_elliptic_interface(problem, grid).values
    elif k is Kind.SQUARE_TFPM:
        problem = build_problem(spec, params, geometry)
        functions = {}
        target = upsample_tfpm(tfpm_solve(problem, grid), grid).values
    elif k is Kind.PLANAR_3D:
        problem = build_problem(spec, params, geometry)
        functions = {}
        target = solve_elliptic_interface(problem, grid).values
    else:
        o = spec.options
        tp = TransportParams(o["rho"], o["gamma_star"], o["d_in"], o["d_out"], o["dt"], o["t_end"])
        labels = geometry.region_label(grid.points()).reshape(grid.shape)
        gp = sample_gp_field(grid, *spec.gp, seed=rng).values
        phi0 = np.where(labels == 1, np.clip(1.0 + 0.25 * gp, 0.0, None), 0.0)
        functions = {}
        extra = {"init/phi0": phi0}
        target = run_transport(geometry, tp, phi0, grid).values
    sample = assemble_input(geometry, functions, spec.scheme, grid, extra=extra)
    sample.target = target
    sample.extras["params"] = params
    if spec.has_tfpm_context:
        sample.extras.update(tfpm_context(spec, params, grid))
    return sample


def _split(spec: ExperimentSpec, n: int):
    perm = np.random.default_rng([spec.seed, SPLIT_STREAM]).permutation(n)
    n_test = int(round(spec.test_fraction * n)) if n > 1 else 0
    return sorted(perm[n_test:].tolist()), sorted(perm[:n_test].tolist())


def _gen_one(args):
    return generate_sample(*args)


def generate(spec: ExperimentSpec, workers: int = 1) -> Dataset:
    jobs = [(spec, i) for i in range(spec.n_samples)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            samples = list(pool.map(_gen_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        samples = [_gen_one(j) for j in jobs]
    return Dataset(spec, samples, _split(spec, len(samples)))


def downsample(dataset: Dataset, factor: int) -> Dataset:
    """Keep every ``factor``-th grid point; the full-resolution target stays in ``extras["fine_target"]``."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    grid = dataset.grid
    coarse = grid.coarsen(factor)
    if factor == 1:
        return copy.deepcopy(dataset)
    stride = (slice(None, None, factor),) * grid.d
    samples = []
    for s in dataset.samples:
        extras = {"params": copy.deepcopy(s.extras.get("params", {})),
                  "fine_target": np.array(s.extras.get("fine_target", s.target), copy=True)}
        if dataset.spec.has_tfpm_context:
            extras.update(tfpm_context(dataset.spec, extras["params"], coarse))
        samples.append(EncodedSample(coarse, list(s.names), np.ascontiguousarray(s.data[(slice(None),) + stride]),
                                     np.ascontiguousarray(np.asarray(s.target)[stride]), None, extras))
    return Dataset(dataset.spec, samples, dataset.split, dataset.fine_grid or grid)


def paired_samples(dataset: Dataset, indices=None) -> list:
    """Coarse inputs paired with full-resolution targets (for end-to-end training and evaluation)."""
    fine = dataset.fine_grid or dataset.grid
    idx = range(len(dataset.samples)) if indices is None else indices
    out = []
    for i in idx:
        s = dataset.samples[i]
        target = s.extras.get("fine_target", s.target)
        extras = {k: v for k, v in s.extras.items() if k != "fine_target"}
        out.append(EncodedSample(s.grid, s.names, s.data, np.asarray(target), fine, extras))
    return out
