"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Only the operations the operator network needs are provided. Complex weights
are carried as separate real and imaginary arrays, so every gradient is real
and has the shape of its parameter.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

from .problem import NumericError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value, parents=(), backward_fn=None, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.shape})"


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _accumulate(var: Var, g):
    if var.backward_fn is None and not var.parents and var.name is None:
        return  # constant
    var.grad = g if var.grad is None else var.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(out: Var):
    """Populate ``.grad`` on every named leaf reachable from the scalar ``out``."""
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            grads = node.backward_fn(node.grad)
            for p, g in zip(node.parents, grads):
                if g is not None:
                    _accumulate(p, g)


def add(a: Var, b: Var) -> Var:
    return Var(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, np.shape(a.value)), _unbroadcast(g, np.shape(b.value))))


def mul(a: Var, b: Var) -> Var:
    return Var(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, np.shape(a.value)), _unbroadcast(g * a.value, np.shape(b.value))))


def total(a: Var) -> Var:
    return Var(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, np.shape(a.value)).copy(),))


def linear(x: Var, W: Var, b: Var | None = None) -> Var:
    """Pointwise affine map over the trailing (channel) axis."""
    y = x.value @ W.value
    if b is not None:
        y = y + b.value

    def bw(g):
        gx = g @ W.value.T
        gW = x.value.reshape(-1, x.value.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return (gx, gW, gb) if b is not None else (gx, gW)

    return Var(y, (x, W, b) if b is not None else (x, W), bw)


def gelu(x: Var) -> Var:
    v = x.value
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))
    return Var(v * cdf, (x,), lambda g: (g * (cdf + v * _INV_SQRT_2PI * np.exp(-0.5 * v * v)),))


def mode_index(shape, k_max: int):
    """Index arrays of the retained modes of an ``rfftn`` spectrum over ``shape``.

    Leading axes keep wavenumbers ``|k| < k_max`` (``2 k_max - 1`` entries), the
    halved last axis keeps ``0 .. k_max - 1``.
    """
    for n in shape:
        if n < 2 * k_max:
            raise ValueError(f"grid size {n} too small for k_max={k_max} (need n >= 2 k_max)")
    lead = [np.concatenate([np.arange(k_max), np.arange(n - k_max + 1, n)]) for n in shape[:-1]]
    return tuple(lead) + (np.arange(k_max),)


def modes_shape(d: int, k_max: int) -> tuple:
    return (2 * k_max - 1,) * (d - 1) + (k_max,)


def spectral_conv(x: Var, R_re: Var, R_im: Var, k_max: int) -> Var:
    """Fourier-space channel mixing on retained modes, for ``x`` of shape (B, *spatial, C)."""
    v = x.value
    spatial = v.shape[1:-1]
    d = len(spatial)
    axes = tuple(range(1, d + 1))
    ms = modes_shape(d, k_max)
    if R_re.value.shape[:d] != ms or R_re.value.shape[d] != v.shape[-1]:
        raise ValueError(f"spectral weights {R_re.value.shape} do not match modes {ms} x channels {v.shape[-1]}")
    idx = mode_index(spatial, k_max)
    sel = (slice(None),) + np.ix_(*idx) + (slice(None),)
    R = R_re.value + 1j * R_im.value
    X = np.fft.rfftn(v, axes=axes)
    Xm = X[sel]
    Ym = np.einsum("b...i,...io->b...o", Xm, R)
    Y = np.zeros(X.shape[:-1] + (R.shape[-1],), dtype=Ym.dtype)
    Y[sel] = Ym
    out = np.fft.irfftn(Y, s=spatial, axes=axes).astype(v.dtype, copy=False)
    N = int(np.prod(spatial))
    n_last = spatial[-1]

    def bw(g):
        # adjoint of irfftn: bins other than 0 and Nyquist stand for a conjugate pair
        G = np.fft.rfftn(g, axes=axes) / N
        w = np.full(G.shape[d], 2.0)
        w[0] = 1.0
        if n_last % 2 == 0:
            w[-1] = 1.0
        G *= w.reshape((1,) * d + (-1, 1))
        Gm = G[sel]
        gR = np.einsum("b...i,b...o->...io", np.conj(Xm), Gm)
        gXm = np.einsum("b...o,...io->b...i", Gm, np.conj(R))
        # adjoint of rfftn: place the half spectrum in a full one and transform back
        full = np.zeros(v.shape, dtype=gXm.dtype)
        full[sel] = gXm
        gx = np.real(np.fft.ifftn(full, axes=axes)) * N
        dt = v.dtype
        return gx.astype(dt, copy=False), gR.real.astype(dt, copy=False), gR.imag.astype(dt, copy=False)

    return Var(out, (x, R_re, R_im), bw)


def cell_average(x: Var) -> Var:
    """Average of the 2^d corner values of every cell, for ``x`` of shape (B, *points, C)."""
    v = x.value
    d = v.ndim - 2
    corners = [tuple(slice(1, None) if (c >> k) & 1 else slice(None, -1) for k in range(d))
               for c in range(2**d)]
    out = sum(v[(slice(None),) + c] for c in corners) / 2**d

    def bw(g):
        gx = np.zeros_like(v)
        for c in corners:
            gx[(slice(None),) + c] += g / 2**d
        return (gx,)

    return Var(out, (x,), bw)


def gather_expand(c: Var, cell, basis, particular, active) -> Var:
    """Evaluate per-cell expansions at points.

    ``c`` holds coefficients (B, n_cells, K); ``cell`` (B, P) names the cell of
    each point, ``basis`` (B, P, K) the basis values there. The result (B, P) is
    ``particular + sum_k basis * c[cell]`` where ``active``, else 0.
    """
    coeffs = c.value
    b_idx = np.arange(coeffs.shape[0])[:, None]
    picked = coeffs[b_idx, cell]  # (B, P, K)
    out = np.where(active, particular + np.einsum("bpk,bpk->bp", basis, picked), 0.0).astype(coeffs.dtype, copy=False)

    def bw(g):
        gp = np.where(active, g, 0.0)[..., None] * basis
        gc = np.zeros_like(coeffs)
        np.add.at(gc, (np.broadcast_to(b_idx, cell.shape), cell), gp)
        return (gc,)

    return Var(out, (c,), bw)


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return Var(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def weighted_sq_error(pred: Var, target: np.ndarray, weights: np.ndarray) -> Var:
    """Mean over the batch axis of ``sum(weights * (pred - target)^2)``."""
    diff = pred.value - target
    B = diff.shape[0]
    val = np.sum(weights * diff * diff) / B
    return Var(np.asarray(val), (pred,), lambda g: (g * 2.0 * weights * diff / B,))


def check_finite(x: Var, where: str) -> Var:
    if not np.all(np.isfinite(x.value)):
        raise NumericError(f"non-finite activations in {where}")
    return x


def sparse_apply(x: Var, M) -> Var:
    """Apply a sparse (P, N) matrix to every batch row of ``x`` with shape (B, N)."""
    v = x.value
    out = (M @ v.T).T.astype(v.dtype, copy=False)
    return Var(out, (x,), lambda g: ((M.T @ g.T).T.astype(v.dtype, copy=False),))
