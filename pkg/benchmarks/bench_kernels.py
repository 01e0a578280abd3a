"""Compiled vs numpy polyline kernels.

    python3 benchmarks/bench_kernels.py [--points N] [--vertices M] [--repeat R]

Checks that both backends agree, then prints the best-of-R wall time for each.
"""
import argparse
import timeit

import numpy as np

from ifop import _kernels_py
from ifop.geometry import star_curve

try:
    from ifop import _kernels as _compiled
except ImportError:
    _compiled = None


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=10_000)
    ap.add_argument("--vertices", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    th = 2 * np.pi * np.arange(args.vertices) / args.vertices
    r = 0.3 + 0.05 * np.sin(5 * th)
    verts = np.ascontiguousarray(star_curve((0.5, 0.5), r).closed_vertices)
    pts = np.ascontiguousarray(rng.uniform(0, 1, (args.points, 2)))

    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled kernels not built; timing the numpy fallback only")

    ref = [np.asarray(v) for v in _kernels_py.polyline_query(pts, verts)]
    for name, mod in backends.items():
        out = [np.asarray(v) for v in mod.polyline_query(pts, verts)]
        for a, b in zip(ref, out):
            if not np.allclose(a, b, atol=1e-12):
                raise SystemExit(f"{name} disagrees with the numpy reference")

    times = {}
    for name, mod in backends.items():
        t = timeit.repeat(lambda: mod.polyline_query(pts, verts), number=1, repeat=args.repeat)
        s = timeit.repeat(lambda: mod.polyline_self_intersects(verts), number=1, repeat=args.repeat)
        times[name] = (min(t), min(s))
        print(f"{name:7s} query {min(t) * 1e3:9.2f} ms   self-intersection {min(s) * 1e3:9.2f} ms")
    if len(times) == 2:
        q = times["python"][0] / times["cython"][0]
        s = times["python"][1] / times["cython"][1]
        print(f"speedup query x{q:.1f}, self-intersection x{s:.1f} "
              f"({args.points} points, {args.vertices} vertices)")


if __name__ == "__main__":
    main()
