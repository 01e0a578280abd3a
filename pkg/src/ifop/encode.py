"""Grid encodings of domains, interfaces and the functions living on them.

Every encoding produces values on the points of a :class:`GridSpec`; functions
defined on the domain are zero-extended to the whole canvas, and functions on
curves are spread onto a collar around the curve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import EPS_REL, Curve, Geometry
from .grid import GridSpec


class EncodingError(ValueError):
    pass


class AssemblyError(ValueError):
    pass


class Scheme(str, Enum):
    CHARACTERISTIC = "char"
    SDF = "sdf"


COLLAR_CELLS = 3


@dataclass(frozen=True)
class ChannelTensor:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise EncodingError(f"channel shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise EncodingError("channel has non-finite entries")


@dataclass
class EncodedSample:
    """Stacked input channels with a name manifest plus the training target.

    ``target`` is a field on ``target_grid`` (defaults to ``grid``); ``extras``
    carries per-sample side arrays such as TFPM coefficients or problem scalars.
    """

    grid: GridSpec
    names: list
    data: np.ndarray
    target: np.ndarray | None = None
    target_grid: GridSpec | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise AssemblyError(f"duplicate channel names in manifest {self.names}")
        if self.data.shape != (len(self.names),) + self.grid.shape:
            raise AssemblyError(f"data shape {self.data.shape} does not match manifest/grid")
        if self.target_grid is None:
            self.target_grid = self.grid

    @property
    def channels(self) -> list[ChannelTensor]:
        return [ChannelTensor(self.grid, c) for c in self.data]

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.names.index(name)]


def _eps(grid: GridSpec) -> float:
    return EPS_REL * grid.length


def _domain_mask(geometry: Geometry, grid: GridSpec, pts=None) -> np.ndarray:
    pts = grid.points() if pts is None else pts
    return geometry.outer.sdf(pts) <= _eps(grid)


def encode_characteristic(geometry: Geometry, grid: GridSpec) -> ChannelTensor:
    labels = geometry.region_label(grid.points(), _eps(grid))
    return ChannelTensor(grid, labels.reshape(grid.shape).astype(np.float64))


def encode_sdf(geometry: Geometry, grid: GridSpec) -> list[ChannelTensor]:
    pts = grid.points()
    curves = (geometry.outer,) + geometry.interfaces
    return [ChannelTensor(grid, c.sdf(pts).reshape(grid.shape)) for c in curves]


def _evaluate(f, grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    if isinstance(f, ChannelTensor):
        if f.grid != grid:
            raise AssemblyError(f"function sampled on {f.grid}, expected {grid}")
        return f.values.ravel().astype(np.float64)
    if callable(f):
        vals = np.asarray(f(pts), dtype=np.float64)
        return np.broadcast_to(vals, (len(pts),)).copy()
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(len(pts), float(arr))
    if arr.shape != grid.shape:
        raise AssemblyError(f"sampled field shape {arr.shape} does not match grid {grid.shape}")
    return arr.ravel().copy()


def encode_bulk(f, geometry: Geometry, grid: GridSpec) -> ChannelTensor:
    """Zero extension: ``f(p)`` at grid points inside the domain, 0 elsewhere."""
    pts = grid.points()
    inside = _domain_mask(geometry, grid, pts)
    vals = np.zeros(len(pts))
    fv = _evaluate(f, grid, pts)
    bad = inside & ~np.isfinite(fv)
    if np.any(bad):
        idx = tuple(int(i) for i in np.unravel_index(int(np.flatnonzero(bad)[0]), grid.shape))
        raise EncodingError(f"non-finite function value at grid index {idx}")
    vals[inside] = fv[inside]
    return ChannelTensor(grid, vals.reshape(grid.shape))


def encode_manifold(g, curve: Curve, grid: GridSpec, sigma: float | None = None, *,
                    gaussian: bool = True, geometry: Geometry | None = None) -> ChannelTensor:
    """Spread curve data onto the grid.

    Gaussian form: ``g(P(p)) * exp(-sdf(p)^2 / (2 sigma^2))`` with ``P`` the
    projection onto the curve. With ``gaussian=False`` (meant for constant ``g``)
    the value is ``g`` inside a collar of ``COLLAR_CELLS`` cells and 0 outside.
    Passing ``geometry`` zero-extends the result outside the domain.
    """
    sigma = 2 * grid.h if sigma is None else sigma
    if not sigma > 0:
        raise EncodingError(f"sigma must be positive, got {sigma}")
    pts = grid.points()
    phi = curve.sdf(pts)
    constant = not callable(g)
    if constant:
        gv = np.full(len(pts), float(g))
    else:
        gv = np.asarray(g(curve.project(pts)), dtype=np.float64)
    if gaussian:
        vals = gv * np.exp(-(phi**2) / (2 * sigma**2))
    else:
        vals = np.where(np.abs(phi) <= COLLAR_CELLS * grid.h, gv, 0.0)
    if geometry is not None:
        vals = np.where(_domain_mask(geometry, grid, pts), vals, 0.0)
    return ChannelTensor(grid, vals.reshape(grid.shape))


def _per_interface(value, m: int) -> list:
    if isinstance(value, (list, tuple)):
        if len(value) != m:
            raise AssemblyError(f"expected {m} per-interface values, got {len(value)}")
        return list(value)
    return [value] * m


def _is_zero(value) -> bool:
    return not callable(value) and not isinstance(value, ChannelTensor) and np.ndim(value) == 0 and float(value) == 0.0


def assemble_input(geometry: Geometry, functions: dict, scheme, grid: GridSpec, sigma: float | None = None,
                   *, gaussian_jumps: bool = False, extra: dict | None = None) -> EncodedSample:
    """Stack geometry, bulk, boundary and interface channels in a fixed order.

    ``functions`` may hold ``a``, ``b``, ``f`` (bulk), ``g`` (boundary, skipped
    when identically zero) and ``alpha``, ``beta`` (interface jumps; scalars or
    one entry per interface). ``extra`` appends further named channels.
    """
    scheme = Scheme(scheme)
    unknown = set(functions) - {"a", "b", "f", "g", "alpha", "beta"}
    if unknown:
        raise AssemblyError(f"unknown function keys {sorted(unknown)}")
    names, chans = [], []
    if scheme is Scheme.CHARACTERISTIC:
        names.append("geom/char")
        chans.append(encode_characteristic(geometry, grid).values)
    else:
        for k, ct in enumerate(encode_sdf(geometry, grid)):
            names.append(f"geom/sdf/{k}")
            chans.append(ct.values)
    for key in ("a", "b", "f"):
        if key in functions:
            names.append(f"func/{key}")
            chans.append(encode_bulk(functions[key], geometry, grid).values)
    if "g" in functions and not _is_zero(functions["g"]):
        names.append("bc/g")
        chans.append(encode_manifold(functions["g"], geometry.outer, grid, sigma,
                                     gaussian=gaussian_jumps or callable(functions["g"])).values)
    for key in ("alpha", "beta"):
        if key not in functions:
            continue
        total = np.zeros(grid.shape)
        for curve, value in zip(geometry.interfaces, _per_interface(functions[key], geometry.m)):
            total += encode_manifold(value, curve, grid, sigma, gaussian=gaussian_jumps or callable(value),
                                     geometry=geometry).values
        names.append(f"iface/{key}")
        chans.append(total)
    for name, values in (extra or {}).items():
        if isinstance(values, ChannelTensor):
            if values.grid != grid:
                raise AssemblyError(f"channel {name!r} sampled on {values.grid}, expected {grid}")
            values = values.values
        names.append(name)
        chans.append(np.asarray(values, dtype=np.float64))
    if len(set(names)) != len(names):
        raise AssemblyError(f"duplicate channel names in manifest {names}")
    return EncodedSample(grid, names, np.stack(chans))
