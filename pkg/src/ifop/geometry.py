"""Domains, interfaces and the point queries every encoding is built on.

Sign convention: signed distances are negative inside the enclosed region and
positive outside. For the open interfaces ``LineX`` and ``PlaneZ`` the
"enclosed" side is ``x < kappa`` and ``z < kappa`` respectively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

EPS_REL = 1e-12
VALIDATION_SAMPLES = 1024


class GeometryError(ValueError):
    """Raised when a curve or geometry violates its invariants."""


class PerturbationError(GeometryError):
    """Raised when a perturbed curve is self-intersecting or leaves the domain."""


def _as_points(points, d: int) -> tuple[np.ndarray, bool]:
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != d:
        raise GeometryError(f"expected {d}-dimensional points, got shape {p.shape}")
    return np.ascontiguousarray(p), single


def _unwrap(value, single):
    return value[0] if single else value


class Curve:
    """A closed curve (or, for ``LineX``/``PlaneZ``, a dividing hyperplane)."""

    d = 2
    closed = True

    def sdf(self, points):
        p, single = _as_points(points, self.d)
        return _unwrap(self._sdf(p), single)

    def project(self, points):
        p, single = _as_points(points, self.d)
        return _unwrap(self._project(p), single)

    def normal(self, points):
        """Unit gradient of the signed distance (outward on the curve)."""
        p, single = _as_points(points, self.d)
        return _unwrap(self._normal(p), single)

    def _normal(self, p):
        step = 1e-7 * max(1.0, self.scale())
        g = np.empty_like(p)
        for k in range(self.d):
            e = np.zeros(self.d)
            e[k] = step
            g[:, k] = (self._sdf(p + e) - self._sdf(p - e)) / (2 * step)
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
        return g / np.where(nrm > 0, nrm, 1.0)

    def scale(self) -> float:
        lo, hi = self.bbox()
        return float(np.max(hi - lo))

    def sample(self, m: int = VALIDATION_SAMPLES) -> np.ndarray:
        raise NotImplementedError

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.sample()
        return v.min(axis=0), v.max(axis=0)

    def validate(self):
        return self


@dataclass(frozen=True, eq=False)
class Ellipse(Curve):
    center: tuple
    a: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not (self.a > 0 and self.b > 0):
            raise GeometryError(f"ellipse axes must be positive, got a={self.a}, b={self.b}")

    @property
    def is_circle(self) -> bool:
        return self.a == self.b

    def sample(self, m: int = VALIDATION_SAMPLES) -> np.ndarray:
        th = 2 * np.pi * np.arange(m) / m
        return self.center + np.stack([self.a * np.cos(th), self.b * np.sin(th)], axis=1)

    def bbox(self):
        ext = np.array([self.a, self.b])
        return self.center - ext, self.center + ext

    def _circle(self, p):
        rel = p - self.center
        rho = np.hypot(rel[:, 0], rel[:, 1])
        at_center = rho == 0
        dirs = np.where(at_center[:, None], np.array([1.0, 0.0]), rel / np.where(at_center, 1.0, rho)[:, None])
        return rho - self.a, self.center + self.a * dirs, dirs

    def _closest(self, p):
        # distance to an ellipse via the monotone root of the Lagrange condition,
        # solved by bisection in the first quadrant then reflected
        rel = p - self.center
        swap = self.a < self.b
        e0, e1 = (self.b, self.a) if swap else (self.a, self.b)
        y = rel[:, ::-1] if swap else rel
        sgn = np.where(y < 0, -1.0, 1.0)
        y0, y1 = np.abs(y[:, 0]), np.abs(y[:, 1])
        x0 = np.empty_like(y0)
        x1 = np.empty_like(y1)

        pos = y1 > 0
        gen = pos & (y0 > 0)
        if np.any(gen):
            z0, z1 = y0[gen] / e0, y1[gen] / e1
            g = z0 * z0 + z1 * z1 - 1.0
            r0 = (e0 / e1) ** 2
            n0 = r0 * z0
            s0 = z1 - 1.0
            s1 = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
            for _ in range(160):
                s = 0.5 * (s0 + s1)
                gs = (n0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0
                s0 = np.where(gs > 0, s, s0)
                s1 = np.where(gs > 0, s1, s)
            s = 0.5 * (s0 + s1)
            s = np.where(g == 0, 0.0, s)
            x0[gen] = r0 * y0[gen] / (s + r0)
            x1[gen] = y1[gen] / (s + 1.0)
        axis1 = pos & (y0 == 0)
        x0[axis1] = 0.0
        x1[axis1] = e1
        axis0 = ~pos
        if np.any(axis0):
            numer = e0 * y0[axis0]
            denom = e0 * e0 - e1 * e1
            inner = numer < denom
            xde = np.where(inner, numer / np.where(denom > 0, denom, 1.0), 1.0)
            x0[axis0] = np.where(inner, e0 * xde, e0)
            x1[axis0] = np.where(inner, e1 * np.sqrt(np.clip(1 - xde * xde, 0, None)), 0.0)
        q = np.stack([x0, x1], axis=1) * sgn
        if swap:
            q = q[:, ::-1]
        dist = np.hypot(q[:, 0] - rel[:, 0], q[:, 1] - rel[:, 1])
        return dist, self.center + q

    def _inside(self, p):
        rel = p - self.center
        return (rel[:, 0] / self.a) ** 2 + (rel[:, 1] / self.b) ** 2 < 1.0

    def _sdf(self, p):
        if self.is_circle:
            return self._circle(p)[0]
        dist, _ = self._closest(p)
        return np.where(self._inside(p), -dist, dist)

    def _project(self, p):
        if self.is_circle:
            return self._circle(p)[1]
        return self._closest(p)[1]

    def _normal(self, p):
        if self.is_circle:
            return self._circle(p)[2]
        return super()._normal(p)


def circle(center, radius: float) -> Ellipse:
    return Ellipse(center, radius, radius)


@dataclass(frozen=True, eq=False)
class Box(Curve):
    """Axis-aligned box ``[lo, hi]`` in 2 or 3 dimensions."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size not in (2, 3):
            raise GeometryError("box corners must be matching 2- or 3-vectors")
        if np.any(hi <= lo):
            raise GeometryError(f"box needs hi > lo, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self):
        return self.lo.size

    @classmethod
    def cube(cls, s: float, t: float, d: int = 2) -> "Box":
        return cls((s,) * d, (t,) * d)

    def bbox(self):
        return self.lo.copy(), self.hi.copy()

    def sample(self, m: int = VALIDATION_SAMPLES) -> np.ndarray:
        if self.d != 2:
            rng = np.random.default_rng(0)
            u = rng.uniform(size=(m, self.d))
            face = rng.integers(0, 2 * self.d, size=m)
            p = self.lo + u * (self.hi - self.lo)
            ax, side = face // 2, face % 2
            p[np.arange(m), ax] = np.where(side == 1, self.hi[ax], self.lo[ax])
            return p
        return AxisSquare._perimeter(self.lo, self.hi, m)

    def _q(self, p):
        c = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        return p - c, np.abs(p - c) - half

    def _sdf(self, p):
        _, q = self._q(p)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def _project(self, p):
        rel, q = self._q(p)
        out = np.clip(p, self.lo, self.hi)
        interior = np.all(q <= 0, axis=1)
        if np.any(interior):
            pi = p[interior]
            k = np.argmax(q[interior], axis=1)
            rows = np.arange(len(pi))
            up = rel[interior][rows, k] >= 0
            face = np.where(up, self.hi[k], self.lo[k])
            proj = pi.copy()
            proj[rows, k] = face
            out[interior] = proj
        return out


class AxisSquare(Box):
    """Axis-aligned square interface given by center and side length."""

    def __init__(self, center, side: float):
        center = np.asarray(center, dtype=float)
        if not side > 0:
            raise GeometryError(f"square side must be positive, got {side}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "side", float(side))
        super().__init__(center - side / 2, center + side / 2)

    @staticmethod
    def _perimeter(lo, hi, m):
        w, h = hi - lo
        per = 2 * (w + h)
        s = per * np.arange(m) / m
        pts = np.empty((m, 2))
        for i, si in enumerate(s):
            if si < w:
                pts[i] = (lo[0] + si, lo[1])
            elif si < w + h:
                pts[i] = (hi[0], lo[1] + si - w)
            elif si < 2 * w + h:
                pts[i] = (hi[0] - (si - w - h), hi[1])
            else:
                pts[i] = (lo[0], hi[1] - (si - 2 * w - h))
        return pts

    def vertices(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


class Polyline(Curve):
    """Closed simple polygon. ``vertices`` may or may not repeat the first point."""

    def __init__(self, vertices, check_simple: bool = True):
        v = np.asarray(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polyline needs at least 3 planar vertices")
        if not np.array_equal(v[0], v[-1]):
            v = np.vstack([v, v[:1]])
        self._closed = np.ascontiguousarray(v)
        if check_simple and kernels.polyline_self_intersects(self._closed):
            raise GeometryError("polyline is self-intersecting")

    @property
    def vertices(self) -> np.ndarray:
        return self._closed[:-1]

    @property
    def closed_vertices(self) -> np.ndarray:
        return self._closed

    def signed_area(self) -> float:
        x, y = self._closed[:, 0], self._closed[:, 1]
        return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))

    @property
    def orientation(self) -> str:
        return "positive" if self.signed_area() > 0 else "negative"

    def _query_vertices(self):
        return self._closed

    def sample(self, m: int = VALIDATION_SAMPLES) -> np.ndarray:
        v = self._query_vertices()
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        s = cum[-1] * np.arange(m) / m
        return np.stack([np.interp(s, cum, v[:, 0]), np.interp(s, cum, v[:, 1])], axis=1)

    def bbox(self):
        v = self._query_vertices()
        return v.min(axis=0), v.max(axis=0)

    def query(self, p):
        return kernels.polyline_query(p, self._query_vertices())

    def _sdf(self, p):
        dist, _, _, _, inside = self.query(p)
        return np.where(inside, -dist, dist)

    def _project(self, p):
        return self.query(p)[1]


class StarPolar(Polyline):
    """Star-shaped curve ``center + r_k (cos th_k, sin th_k)``, ``th_k = 2 pi k / M``.

    Distance queries run against a densified polyline whose radius is linearly
    interpolated in angle between the given samples.
    """

    def __init__(self, center, radii):
        radii = np.asarray(radii, dtype=np.float64)
        if radii.ndim != 1 or radii.size < 3:
            raise GeometryError("star curve needs at least 3 radii")
        if not np.all(radii > 0) or not np.all(np.isfinite(radii)):
            raise GeometryError("star curve radii must be positive and finite")
        self.center = np.asarray(center, dtype=np.float64)
        self.radii = radii
        m = radii.size
        th = 2 * np.pi * np.arange(m) / m
        super().__init__(self.center + radii[:, None] * np.stack([np.cos(th), np.sin(th)], axis=1), check_simple=False)
        segments = m * math.ceil(max(4 * m, 512) / m)
        thd = 2 * np.pi * np.arange(segments) / segments
        rd = np.interp(thd, np.append(th, 2 * np.pi), np.append(radii, radii[0]))
        dense = self.center + rd[:, None] * np.stack([np.cos(thd), np.sin(thd)], axis=1)
        self._dense = np.ascontiguousarray(np.vstack([dense, dense[:1]]))

    def _query_vertices(self):
        return self._dense


def star_curve(center, radii) -> StarPolar:
    return StarPolar(center, radii)


@dataclass(frozen=True, eq=False)
class LineX(Curve):
    """2D straight interface ``x = kappa``; the enclosed side is ``x < kappa``."""

    kappa: float
    closed = False

    def sample(self, m: int = VALIDATION_SAMPLES):
        return np.stack([np.full(m, self.kappa), np.linspace(-1, 1, m)], axis=1)

    def bbox(self):
        return np.array([self.kappa, -np.inf]), np.array([self.kappa, np.inf])

    def scale(self):
        return 1.0

    def _sdf(self, p):
        return p[:, 0] - self.kappa

    def _project(self, p):
        q = p.copy()
        q[:, 0] = self.kappa
        return q

    def _normal(self, p):
        n = np.zeros_like(p)
        n[:, 0] = 1.0
        return n


@dataclass(frozen=True, eq=False)
class PlaneZ(Curve):
    """3D planar interface ``z = kappa``; the enclosed side is ``z < kappa``."""

    kappa: float
    closed = False
    d = 3

    def sample(self, m: int = VALIDATION_SAMPLES):
        rng = np.random.default_rng(0)
        xy = rng.uniform(size=(m, 2))
        return np.column_stack([xy, np.full(m, self.kappa)])

    def bbox(self):
        return np.array([-np.inf, -np.inf, self.kappa]), np.array([np.inf, np.inf, self.kappa])

    def scale(self):
        return 1.0

    def _sdf(self, p):
        return p[:, 2] - self.kappa

    def _project(self, p):
        q = p.copy()
        q[:, 2] = self.kappa
        return q

    def _normal(self, p):
        n = np.zeros_like(p)
        n[:, 2] = 1.0
        return n


def sdf_eval(curve: Curve, point):
    return curve.sdf(point)


def project_to_curve(curve: Curve, point):
    return curve.project(point)


@dataclass(frozen=True)
class Perturbation:
    """Per-sample displacement field ``r`` on a sampled curve."""

    displacement: np.ndarray

    @property
    def norm_inf(self) -> float:
        r = np.asarray(self.displacement)
        return float(np.max(np.linalg.norm(r, axis=1))) if r.size else 0.0


def curve_vertices(curve: Curve, m: int = VALIDATION_SAMPLES) -> np.ndarray:
    """Vertex samples a perturbation acts on."""
    if isinstance(curve, Polyline):
        return curve.vertices
    return curve.sample(m)


def perturb(curve: Curve, perturbation: Perturbation, outer: Curve | None = None) -> tuple[Polyline, float]:
    """Apply ``x -> x + r(x)`` to the curve's vertex samples."""
    r = np.asarray(perturbation.displacement, dtype=np.float64)
    verts = curve_vertices(curve, len(r))
    if r.shape != verts.shape:
        raise PerturbationError(f"displacement shape {r.shape} does not match vertex samples {verts.shape}")
    moved = verts + r
    try:
        result = Polyline(moved)
    except GeometryError as exc:
        raise PerturbationError(f"perturbed curve invalid: {exc}") from exc
    if outer is not None and np.any(outer.sdf(moved) >= 0):
        raise PerturbationError("perturbed curve leaves the domain")
    return result, perturbation.norm_inf


@dataclass(frozen=True, eq=False)
class Geometry:
    """Outer domain plus ordered, pairwise disjoint interfaces."""

    outer: Curve
    interfaces: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "interfaces", tuple(self.interfaces))

    @property
    def d(self) -> int:
        return self.outer.d

    @property
    def m(self) -> int:
        return len(self.interfaces)

    def validate(self) -> "Geometry":
        for k, iface in enumerate(self.interfaces):
            if iface.d != self.d:
                raise GeometryError(f"interface {k} has dimension {iface.d}, domain has {self.d}")
            if not iface.closed:
                lo, hi = self.outer.bbox()
                axis = 0 if isinstance(iface, LineX) else self.d - 1
                if not lo[axis] < iface.kappa < hi[axis]:
                    raise GeometryError(f"interface {k} plane kappa={iface.kappa} not strictly inside the domain")
                continue
            pts = iface.sample(VALIDATION_SAMPLES)
            if np.any(self.outer.sdf(pts) >= 0):
                raise GeometryError(f"interface {k} is not strictly inside the outer domain")
        closed = [(k, c) for k, c in enumerate(self.interfaces) if c.closed]
        samples = {k: c.sample(VALIDATION_SAMPLES) for k, c in closed}
        for i, (ki, ci) in enumerate(closed):
            for kj, cj in closed[i + 1:]:
                dmin = np.min(np.abs(cj.sdf(samples[ki])))
                if dmin <= 0 or np.any(cj.sdf(samples[ki]) < 0) or np.any(ci.sdf(samples[kj]) < 0):
                    raise GeometryError(f"interfaces {ki} and {kj} intersect or are nested")
        return self

    def region_label(self, points, eps: float = EPS_REL):
        """0 outside the domain, 1 between interfaces, ``i + 1`` inside interface ``i`` (1-based)."""
        p, single = _as_points(points, self.d)
        label = np.where(self.outer._sdf(p) <= eps, 1, 0).astype(np.int64)
        for i, iface in enumerate(self.interfaces, start=1):
            inside = (iface._sdf(p) <= eps) & (label == 1)
            label[inside] = i + 1
        return _unwrap(label, single)


def region_label(geometry: Geometry, point, eps: float = EPS_REL):
    return geometry.region_label(point, eps)
