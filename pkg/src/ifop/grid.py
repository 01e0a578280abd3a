"""Uniform tensor grids on [s, t]^d."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform ``n x ... x n`` point grid on the cube ``[s, t]^d``.

    Arrays sampled on a grid use ``indexing="ij"``: axis 0 is x, axis 1 is y,
    axis 2 (3D only) is z.
    """

    s: float
    t: float
    n: int
    d: int = 2

    def __post_init__(self):
        if not self.t > self.s:
            raise ValueError(f"grid needs t > s, got s={self.s}, t={self.t}")
        if self.n < 2:
            raise ValueError(f"grid needs n >= 2, got {self.n}")
        if self.d not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.d}")

    @property
    def h(self) -> float:
        return (self.t - self.s) / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.n - 1,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def length(self) -> float:
        return self.t - self.s

    def axis(self) -> np.ndarray:
        return self.s + np.arange(self.n) * self.h

    def point(self, index) -> np.ndarray:
        return self.s + np.asarray(index, dtype=float) * self.h

    def mesh(self) -> tuple[np.ndarray, ...]:
        ax = self.axis()
        return np.meshgrid(*([ax] * self.d), indexing="ij")

    def points(self) -> np.ndarray:
        """All grid points as an ``(n^d, d)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def cell_centers(self) -> np.ndarray:
        ax = self.s + (np.arange(self.n - 1) + 0.5) * self.h
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.s - tol) & (p <= self.t + tol), axis=-1)

    def refine(self, factor: int) -> "GridSpec":
        return GridSpec(self.s, self.t, (self.n - 1) * factor + 1, self.d)

    def coarsen(self, factor: int) -> "GridSpec":
        if (self.n - 1) % factor:
            raise ValueError(f"(n-1)={self.n - 1} is not divisible by factor {factor}")
        return GridSpec(self.s, self.t, (self.n - 1) // factor + 1, self.d)

    def locate(self, points, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Containing cell (flat id) and cell-local coordinates for each point.

        Points on a shared face go to the cell with the smaller index.
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside = self.contains(p, tol * self.length)
        if not np.all(inside):
            raise DomainError(f"point {p[~inside][0]} lies outside the canvas [{self.s}, {self.t}]^{self.d}")
        q = (p - self.s) / self.h
        near = np.round(q)
        q = np.where(np.abs(q - near) < tol, near, q)
        idx = np.clip(np.ceil(q).astype(np.int64) - 1, 0, self.n - 2)
        local = p - (self.s + idx * self.h)
        return np.ravel_multi_index(tuple(idx.T), self.cell_shape), local

    def interpolation_matrix(self, points) -> sp.csr_matrix:
        """Sparse multilinear interpolation from grid values to ``points``."""
        flat, local = self.locate(points)
        t = np.clip(local / self.h, 0.0, 1.0)
        idx = np.stack(np.unravel_index(flat, self.cell_shape), axis=1)
        rows, cols, vals = [], [], []
        for c in range(2**self.d):
            bits = np.array([(c >> k) & 1 for k in range(self.d)])
            w = np.prod(np.where(bits, t, 1 - t), axis=1)
            rows.append(np.arange(len(flat)))
            cols.append(np.ravel_multi_index(tuple((idx + bits).T), self.shape))
            vals.append(w)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(len(flat), self.size))

    def to_dict(self) -> dict:
        return {"s": self.s, "t": self.t, "n": self.n, "d": self.d}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(float(data["s"]), float(data["t"]), int(data["n"]), int(data["d"]))
