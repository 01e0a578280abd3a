"""The Helmholtz-type interface problem shared by both solvers.

    -div(a grad u) + b u = f   in the domain minus the interfaces
    u = g                      on the outer boundary
    u_in - u_out = alpha       on each interface
    (a du/dn)_in - (a du/dn)_out = beta

``n`` is the unit normal pointing from the enclosed side of an interface to the
outside. Jumps are "inside minus outside".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Geometry


class NumericError(RuntimeError):
    pass


class UnsupportedRegimeError(ValueError):
    pass


def region_values(value, labels: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate a coefficient given as scalar, per-region sequence or callable.

    A sequence is indexed by ``label - 1`` (entry 0 is the region between the
    interfaces, entry ``i`` the inside of interface ``i``).
    """
    if callable(value):
        return np.broadcast_to(np.asarray(value(points), dtype=np.float64), labels.shape).copy()
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(labels.shape, float(arr))
    out = np.zeros(labels.shape)
    active = labels >= 1
    out[active] = arr[labels[active] - 1]
    return out


def boundary_values(g, points: np.ndarray) -> np.ndarray:
    if callable(g):
        return np.broadcast_to(np.asarray(g(points), dtype=np.float64), (len(points),)).copy()
    return np.full(len(points), float(g))


def jump_offsets(value, m: int) -> np.ndarray:
    """Per-label offsets: 0 for label 0 and 1, the interface jump for label i+1."""
    vals = np.broadcast_to(np.asarray(value, dtype=np.float64), (m,)) if m else np.zeros(0)
    return np.concatenate([[0.0, 0.0], vals])


@dataclass(frozen=True, eq=False)
class InterfaceProblem:
    geometry: Geometry
    a: object = 1.0
    b: object = 1.0
    f: object = 0.0
    g: object = 0.0
    alpha: object = 0.0
    beta: object = 0.0

    @property
    def d(self) -> int:
        return self.geometry.d

    def alpha_offsets(self) -> np.ndarray:
        return jump_offsets(self.alpha, self.geometry.m)

    def beta_offsets(self) -> np.ndarray:
        return jump_offsets(self.beta, self.geometry.m)

    def with_geometry(self, geometry: Geometry) -> "InterfaceProblem":
        return InterfaceProblem(geometry, self.a, self.b, self.f, self.g, self.alpha, self.beta)
