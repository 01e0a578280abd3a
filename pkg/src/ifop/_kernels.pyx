# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled polyline kernels. Semantics match ``ifop._kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def polyline_query(double[:, ::1] points, double[:, ::1] verts):
    """Nearest point, distance and even-odd inside flag for each query point.

    ``verts`` is a closed vertex list (first row repeated at the end).
    """
    cdef Py_ssize_t P = points.shape[0]
    cdef Py_ssize_t S = verts.shape[0] - 1
    dist_arr = np.empty(P, dtype=np.float64)
    proj_arr = np.empty((P, 2), dtype=np.float64)
    seg_arr = np.empty(P, dtype=np.int64)
    par_arr = np.empty(P, dtype=np.float64)
    inside_arr = np.empty(P, dtype=np.bool_)
    cdef double[::1] dist = dist_arr
    cdef double[:, ::1] proj = proj_arr
    cdef long long[::1] seg = seg_arr
    cdef double[::1] par = par_arr
    cdef cnp.npy_bool[::1] inside = inside_arr
    cdef Py_ssize_t i, k
    cdef double px, py, ax, ay, bx, by, ex, ey, ll, u, qx, qy, dd, best, bu, bqx, bqy, xc
    cdef long long bk
    cdef int crossings
    for i in range(P):
        px = points[i, 0]
        py = points[i, 1]
        best = 1e300
        bk = 0
        bu = 0.0
        bqx = verts[0, 0]
        bqy = verts[0, 1]
        crossings = 0
        for k in range(S):
            ax = verts[k, 0]
            ay = verts[k, 1]
            bx = verts[k + 1, 0]
            by = verts[k + 1, 1]
            ex = bx - ax
            ey = by - ay
            ll = ex * ex + ey * ey
            if ll > 0.0:
                u = ((px - ax) * ex + (py - ay) * ey) / ll
                if u < 0.0:
                    u = 0.0
                elif u > 1.0:
                    u = 1.0
            else:
                u = 0.0
            qx = ax + u * ex
            qy = ay + u * ey
            dd = (px - qx) * (px - qx) + (py - qy) * (py - qy)
            if dd < best:
                best = dd
                bk = k
                bu = u
                bqx = qx
                bqy = qy
            if (ay > py) != (by > py):
                xc = ax + (py - ay) * ex / ey
                if px < xc:
                    crossings += 1
        dist[i] = sqrt(best)
        proj[i, 0] = bqx
        proj[i, 1] = bqy
        seg[i] = bk
        par[i] = bk + bu
        inside[i] = (crossings & 1) == 1
    return dist_arr, proj_arr, seg_arr, par_arr, inside_arr


cdef inline double _orient(double ax, double ay, double bx, double by, double cx, double cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def polyline_self_intersects(double[:, ::1] verts):
    """True if any two non-adjacent segments of a closed polyline touch."""
    cdef Py_ssize_t S = verts.shape[0] - 1
    cdef Py_ssize_t i, j
    cdef double o1, o2, o3, o4
    for i in range(S):
        for j in range(i + 2, S):
            if i == 0 and j == S - 1:
                continue
            o1 = _orient(verts[i, 0], verts[i, 1], verts[i + 1, 0], verts[i + 1, 1], verts[j, 0], verts[j, 1])
            o2 = _orient(verts[i, 0], verts[i, 1], verts[i + 1, 0], verts[i + 1, 1], verts[j + 1, 0], verts[j + 1, 1])
            o3 = _orient(verts[j, 0], verts[j, 1], verts[j + 1, 0], verts[j + 1, 1], verts[i, 0], verts[i, 1])
            o4 = _orient(verts[j, 0], verts[j, 1], verts[j + 1, 0], verts[j + 1, 1], verts[i + 1, 0], verts[i + 1, 1])
            if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0:
                return True
    return False
