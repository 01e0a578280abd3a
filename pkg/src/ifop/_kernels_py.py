"""Pure numpy fallback for the polyline kernels in ``_kernels.pyx``."""
import numpy as np

_CHUNK = 2048


def polyline_query(points, verts):
    points = np.ascontiguousarray(points, dtype=np.float64)
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    P = points.shape[0]
    a = verts[:-1]
    e = verts[1:] - a
    ll = np.einsum("ij,ij->i", e, e)
    safe = np.where(ll > 0, ll, 1.0)
    dist = np.empty(P)
    proj = np.empty((P, 2))
    seg = np.empty(P, dtype=np.int64)
    par = np.empty(P)
    inside = np.empty(P, dtype=bool)
    ay, by = a[:, 1], verts[1:, 1]
    straddle_ey = np.where(e[:, 1] != 0, e[:, 1], 1.0)
    for lo in range(0, P, _CHUNK):
        p = points[lo:lo + _CHUNK]
        rel = p[:, None, :] - a[None, :, :]
        u = np.einsum("psk,sk->ps", rel, e) / safe
        u = np.where(ll > 0, np.clip(u, 0.0, 1.0), 0.0)
        q = a[None] + u[..., None] * e[None]
        diff = p[:, None, :] - q
        dd = np.einsum("psk,psk->ps", diff, diff)
        k = np.argmin(dd, axis=1)
        rows = np.arange(len(p))
        dist[lo:lo + _CHUNK] = np.sqrt(dd[rows, k])
        proj[lo:lo + _CHUNK] = q[rows, k]
        seg[lo:lo + _CHUNK] = k
        par[lo:lo + _CHUNK] = k + u[rows, k]
        py = p[:, 1:2]
        straddle = (ay[None] > py) != (by[None] > py)
        xc = a[None, :, 0] + (py - ay[None]) * e[None, :, 0] / straddle_ey[None]
        crossings = np.sum(straddle & (p[:, 0:1] < xc), axis=1)
        inside[lo:lo + _CHUNK] = (crossings & 1) == 1
    return dist, proj, seg, par, inside


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def polyline_self_intersects(verts):
    verts = np.asarray(verts, dtype=np.float64)
    S = verts.shape[0] - 1
    a, b = verts[:-1], verts[1:]
    i, j = np.triu_indices(S, k=2)
    keep = ~((i == 0) & (j == S - 1))
    i, j = i[keep], j[keep]
    o1 = _orient(a[i], b[i], a[j])
    o2 = _orient(a[i], b[i], b[j])
    o3 = _orient(a[j], b[j], a[i])
    o4 = _orient(a[j], b[j], b[i])
    hit = ((o1 > 0) != (o2 > 0)) & ((o3 > 0) != (o4 > 0)) & (o1 != 0) & (o2 != 0) & (o3 != 0) & (o4 != 0)
    return bool(np.any(hit))
