"""Fourier neural operator with a field head and a TFPM-coefficient head.

Tensors are channels-last: ``(batch, *spatial, channels)``. The network sees the
sample array as periodic. The field head returns one value per input grid point.
The TFPM head returns ``2d`` coefficients per cell. Those are averaged from the
cell's corners and expanded with the exponential basis on a target grid.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encode import ChannelTensor, EncodedSample
from .grid import GridSpec
from .problem import NumericError, UnsupportedRegimeError
from .tfpm import _local_values, modal_to_exponential, modal_values

HIDDEN = 128
CKPT_MAGIC = b"IFOPCKPT"
CKPT_VERSION = 1


class Head(str, Enum):
    FIELD = "field"
    TFPM = "tfpm"


@dataclass
class FnoModel:
    in_channels: int
    d: int = 2
    d_v: int = 24
    n_layers: int = 3
    k_max: int = 8
    head: Head = Head.FIELD
    manifest: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    dtype: str = "f64"

    def __post_init__(self):
        self.head = Head(self.head)
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.n_layers < 1:
            raise ValueError("need at least one Fourier layer")

    @property
    def out_channels(self) -> int:
        return 1 if self.head is Head.FIELD else 2 * self.d

    def param_shapes(self) -> dict:
        C, dv, H = self.in_channels, self.d_v, HIDDEN
        ms = ad.modes_shape(self.d, self.k_max)
        shapes = {"lift.W0": (C, H), "lift.b0": (H,), "lift.W1": (H, dv), "lift.b1": (dv,)}
        for l in range(self.n_layers):
            shapes.update({
                f"layer{l}.R_re": ms + (dv, dv), f"layer{l}.R_im": ms + (dv, dv),
                f"layer{l}.W": (dv, dv), f"layer{l}.b": (dv,),
            })
        shapes.update({"decode.W0": (dv, H), "decode.b0": (H,), "decode.W1": (H, self.out_channels),
                       "decode.b1": (self.out_channels,)})
        return shapes

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def check_grid(self, n: int):
        if self.k_max > n // 2:
            raise ValueError(f"k_max={self.k_max} exceeds floor(n/2)={n // 2}")

    def copy(self) -> "FnoModel":
        m = FnoModel(self.in_channels, self.d, self.d_v, self.n_layers, self.k_max, self.head,
                     list(self.manifest), {}, self.dtype)
        m.params = {k: v.copy() for k, v in self.params.items()}
        return m


def init_model(in_channels: int, *, d: int = 2, d_v: int = 24, n_layers: int = 3, k_max: int = 8,
               head="field", seed: int = 0, manifest=None, dtype: str = "f64") -> FnoModel:
    model = FnoModel(in_channels, d, d_v, n_layers, k_max, head, list(manifest or []), {}, dtype)
    rng = np.random.default_rng(seed)
    spectral_scale = 1.0 / d_v**2
    for name, shape in model.param_shapes().items():
        if ".R_" in name:
            w = spectral_scale * rng.uniform(-1.0, 1.0, shape)
        else:
            fan_in = shape[0] if len(shape) == 2 else model.param_shapes()[name.replace(".b", ".W")][0]
            w = rng.uniform(-1.0, 1.0, shape) * np.sqrt(1.0 / fan_in)
        model.params[name] = w.astype(model.np_dtype)
    return model


# ---------------------------------------------------------------- TFPM head

@dataclass
class ReconstructionPlan:
    """Per-sample lookup for expanding cell coefficients on a target grid."""

    target_grid: GridSpec
    cell: np.ndarray
    basis: np.ndarray
    particular: np.ndarray
    active: np.ndarray


def reconstruction_plan(coarse: GridSpec, mu, particular, target_grid: GridSpec, active=None,
                        basis: str = "modal") -> ReconstructionPlan:
    """Lookup for expanding per-cell coefficients on ``target_grid``.

    ``basis="modal"`` expects coefficients of the rescaled modes the network
    head predicts; ``"exponential"`` expects plain ``e^{+-mu xi}`` coefficients.
    """
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), coarse.cell_shape).ravel()
    part = np.broadcast_to(np.asarray(particular, dtype=np.float64), coarse.cell_shape).ravel()
    act = np.ones(mu.shape, bool) if active is None else np.broadcast_to(active, coarse.cell_shape).ravel()
    if np.any(mu[act] <= 0):
        raise UnsupportedRegimeError("reconstruction context needs mu > 0")
    flat, local = coarse.locate(target_grid.points())
    if basis == "modal":
        values = modal_values(mu[flat], local, coarse.h)
    elif basis == "exponential":
        values = _local_values(mu[flat], local)
    else:
        raise ValueError(f"unknown basis {basis!r}")
    return ReconstructionPlan(target_grid, flat, values, part[flat], act[flat])


def sample_plan(sample: EncodedSample) -> ReconstructionPlan:
    ex = sample.extras
    return reconstruction_plan(sample.grid, ex["mu"], ex["particular"], sample.target_grid, ex.get("active"))


def head_plan(model: "FnoModel", sample: EncodedSample):
    """Map from head output to the loss grid: a TFPM plan, a bilinear matrix, or None (same grid)."""
    if model.head is Head.TFPM:
        return sample_plan(sample)
    if sample.target_grid == sample.grid:
        return None
    return sample.grid.interpolation_matrix(sample.target_grid.points())


def reconstruct_head(coeffs, plans, dtype=np.float64):
    """Expand coefficients (B, *cells, 2d) on each plan's target grid; returns a Var of shape (B, P)."""
    c = coeffs if isinstance(coeffs, ad.Var) else ad.Var(np.asarray(coeffs, dtype=dtype), name="coeffs")
    B = c.value.shape[0]
    K = c.value.shape[-1]
    flat = ad.reshape(c, (B, -1, K))
    stack = lambda attr: np.stack([getattr(p, attr) for p in plans]).astype(c.value.dtype if attr != "cell" else np.int64)
    return ad.gather_expand(flat, stack("cell"), stack("basis"), stack("particular"),
                            np.stack([p.active for p in plans]))


def reconstruct_to_tensor(coeffs: np.ndarray, plan: ReconstructionPlan) -> ChannelTensor:
    out = reconstruct_head(coeffs[None], [plan]).value[0]
    return ChannelTensor(plan.target_grid, out.reshape(plan.target_grid.shape).astype(np.float64))


# ---------------------------------------------------------------- forward

def _vars(model: FnoModel) -> dict:
    return {k: ad.Var(v, name=k) for k, v in model.params.items()}


def _forward(model: FnoModel, P: dict, x: np.ndarray) -> ad.Var:
    """Network body on channels-last input (B, *spatial, C); returns decode output at grid points."""
    if x.shape[-1] != model.in_channels:
        raise ValueError(f"input has {x.shape[-1]} channels, model expects {model.in_channels}")
    for n in x.shape[1:-1]:
        model.check_grid(n)
    v = ad.Var(x.astype(model.np_dtype, copy=False))
    v = ad.gelu(ad.linear(v, P["lift.W0"], P["lift.b0"]))
    v = ad.check_finite(ad.linear(v, P["lift.W1"], P["lift.b1"]), "lift")
    for l in range(model.n_layers):
        k = ad.spectral_conv(v, P[f"layer{l}.R_re"], P[f"layer{l}.R_im"], model.k_max)
        v = ad.add(ad.linear(v, P[f"layer{l}.W"], P[f"layer{l}.b"]), k)
        if l < model.n_layers - 1:
            v = ad.gelu(v)
        ad.check_finite(v, f"layer {l}")
    v = ad.gelu(ad.linear(v, P["decode.W0"], P["decode.b0"]))
    return ad.check_finite(ad.linear(v, P["decode.W1"], P["decode.b1"]), "decode")


def _inputs(samples) -> np.ndarray:
    data = np.stack([s.data for s in samples])
    return np.moveaxis(data, 1, -1)


def _head(model: FnoModel, P: dict, samples, plans=None) -> ad.Var:
    """Prediction on the loss grid, flattened to (B, P)."""
    out = _forward(model, P, _inputs(samples))
    plans = plans if plans is not None else [head_plan(model, s) for s in samples]
    if model.head is Head.FIELD:
        flat = ad.reshape(out, (out.value.shape[0], -1))
        return flat if plans[0] is None else ad.sparse_apply(flat, plans[0])
    return reconstruct_head(ad.cell_average(out), plans)


def _raw(model: FnoModel, samples) -> np.ndarray:
    out = _forward(model, _vars(model), _inputs(samples))
    return out.value[..., 0] if model.head is Head.FIELD else ad.cell_average(out).value


def fno_forward(model: FnoModel, sample) -> np.ndarray:
    """Head output for one sample: the field on its grid, or (*cells, 2d) coefficients.

    TFPM coefficients are returned for the plain exponential basis
    ``[e^{mu xi_0}, e^{-mu xi_0}, ...]`` in lower-corner cell coordinates, which
    needs ``mu`` in the sample extras.
    """
    single = isinstance(sample, EncodedSample)
    samples = [sample] if single else list(sample)
    v = _raw(model, samples)
    if model.head is Head.TFPM:
        v = np.stack([modal_to_exponential(c, np.broadcast_to(s.extras["mu"], s.grid.cell_shape), s.grid.h)
                      for c, s in zip(v, samples)]).astype(v.dtype)
    return v[0] if single else v


def predict(model: FnoModel, sample: EncodedSample) -> ChannelTensor:
    """Field prediction on the sample's target grid (bilinear or TFPM upsampling as needed)."""
    if model.head is Head.TFPM:
        return reconstruct_to_tensor(_raw(model, [sample])[0], sample_plan(sample))
    u = _raw(model, [sample])[0].astype(np.float64)
    plan = head_plan(model, sample)
    if plan is not None:
        u = plan @ u.ravel()
    return ChannelTensor(sample.target_grid, u.reshape(sample.target_grid.shape))


# ---------------------------------------------------------------- losses

def quadrature_weights(grid: GridSpec) -> np.ndarray:
    """Trapezoid weights on the grid points; they sum to the canvas volume."""
    w1 = np.full(grid.n, grid.h)
    w1[[0, -1]] *= 0.5
    w = w1
    for _ in range(grid.d - 1):
        w = np.multiply.outer(w, w1)
    return w


def loss_l2(pred, target) -> float:
    """Squared L2 norm of the misfit on the canvas, averaged over a batch.

    ``pred`` and ``target`` are ChannelTensors or lists of them on one grid.
    """
    preds = pred if isinstance(pred, (list, tuple)) else [pred]
    targets = target if isinstance(target, (list, tuple)) else [target]
    if len(preds) != len(targets):
        raise ValueError("batch sizes differ")
    total = 0.0
    for p, t in zip(preds, targets):
        if p.values.shape != t.values.shape or p.grid != t.grid:
            raise ValueError(f"shape mismatch {p.values.shape} vs {t.values.shape}")
        total += float(np.sum(quadrature_weights(p.grid) * (p.values - t.values) ** 2))
    return total / len(preds)


def relative_l2(pred: ChannelTensor, target: ChannelTensor) -> tuple[float, bool]:
    """``(error, is_absolute)``: relative L2 error, or the absolute one when the target vanishes."""
    if pred.values.shape != target.values.shape:
        raise ValueError(f"shape mismatch {pred.values.shape} vs {target.values.shape}")
    w = quadrature_weights(target.grid)
    num = np.sqrt(np.sum(w * (pred.values - target.values) ** 2))
    den = np.sqrt(np.sum(w * target.values**2))
    if den == 0:
        return float(num), True
    return float(num / den), False


def _batch_target(model: FnoModel, samples):
    tg = samples[0].target_grid
    t = np.stack([np.asarray(s.target).reshape(-1) for s in samples]).astype(model.np_dtype)
    return t, np.broadcast_to(quadrature_weights(tg).ravel(), t.shape)


def batch_loss(model: FnoModel, samples, plans=None, P=None):
    P = P if P is not None else _vars(model)
    pred = _head(model, P, samples, plans)
    t, w = _batch_target(model, samples)
    return ad.weighted_sq_error(pred, t, w.astype(model.np_dtype)), P


def compute_gradients(model: FnoModel, samples, plans=None) -> tuple[float, dict]:
    loss, P = batch_loss(model, samples, plans)
    ad.backward(loss)
    grads = {}
    for k, v in P.items():
        g = np.zeros_like(v.value) if v.grad is None else v.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {k}")
        grads[k] = g
    return float(loss.value), grads


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 5
    epochs: int = 300
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: str = "f64"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision}")


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = (params[k] - update).astype(params[k].dtype, copy=False)


@dataclass
class TrainResult:
    model: FnoModel
    loss_history: list
    test_error: float | None = None


def train(model: FnoModel, dataset, config: TrainConfig, test_set=None, *, on_epoch=None) -> TrainResult:
    """Adam on the mean batch loss; shuffling and batching are driven by ``config.seed``."""
    samples = list(dataset)
    if not samples:
        raise ValueError("empty training set")
    model = model.copy()
    if model.dtype != config.precision:
        model.dtype = config.precision
        model.params = {k: v.astype(model.np_dtype) for k, v in model.params.items()}
    plans = [head_plan(model, s) for s in samples]
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for b0 in range(0, len(order), config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            batch = [samples[i] for i in idx]
            try:
                loss, grads = compute_gradients(model, batch, [plans[i] for i in idx])
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b0 // config.batch_size}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericError(f"NaN loss at epoch {epoch}, batch {b0 // config.batch_size}")
            losses.append(loss)
            opt.step(model.params, grads)
        history.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    test_error = evaluate(model, test_set) if test_set else None
    return TrainResult(model, history, test_error)


def evaluate(model: FnoModel, samples) -> float:
    """Mean relative L2 error on the loss grid."""
    errs = []
    for s in samples:
        target = ChannelTensor(s.target_grid, np.asarray(s.target, dtype=np.float64).reshape(s.target_grid.shape))
        errs.append(relative_l2(predict(model, s), target)[0])
    return float(np.mean(errs))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: FnoModel, path) -> None:
    shapes = model.param_shapes()
    header = {
        "in_channels": model.in_channels, "d": model.d, "d_v": model.d_v, "L": model.n_layers,
        "k_max": model.k_max, "head": model.head.value, "manifest": list(model.manifest),
        "dtype": model.dtype, "blocks": [[k, list(s)] for k, s in shapes.items()],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(hb)) + hb)
        for k in shapes:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> FnoModel:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<HI", raw[8:14])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[14:14 + hlen])
    model = FnoModel(header["in_channels"], header["d"], header["d_v"], header["L"], header["k_max"],
                     header["head"], header["manifest"], {}, header["dtype"])
    off = 14 + hlen
    for k, shape in header["blocks"]:
        size = int(np.prod(shape)) * 8
        if off + size > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        model.params[k] = np.frombuffer(raw[off:off + size], dtype="<f8").reshape(shape).astype(model.np_dtype)
        off += size
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return model


def model_summary(model: FnoModel) -> dict:
    d = asdict(model)
    d.pop("params")
    d["head"] = model.head.value
    d["n_params"] = model.n_params
    return d
