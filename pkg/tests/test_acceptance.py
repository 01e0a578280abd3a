"""Acceptance criteria, one test per item; each prints a PASS/FAIL line with the measured numbers.

The training runs (overfit, InnerStar learning curve, basis ordering) take tens of
minutes on one CPU core.
"""
import time

import numpy as np
import pytest

from ifop import autodiff as ad
from ifop.analysis import basis_study, continuity_probe, encoding_study
from ifop.datagen import ExperimentSpec, generate, generate_sample, paired_samples
from ifop.dataio import load_dataset, save_dataset
from ifop.fno import (
    TrainConfig, batch_loss, compute_gradients, init_model, load_checkpoint, save_checkpoint, train,
)
from ifop.encode import EncodedSample
from ifop.geometry import AxisSquare, Box, Geometry, circle
from ifop.grid import GridSpec
from ifop.problem import InterfaceProblem
from ifop.refsolve import TransportParams, run_transport, solve_elliptic_interface, transport_masses
from ifop.tfpm import face_jumps, tfpm_reconstruct, tfpm_solve

UNIT = Geometry(Box.cube(0.0, 1.0))
CIRCLE = circle((0.5, 0.5), 0.3)
RES = [16, 32, 64, 128, 256]


# 1 ------------------------------------------------------------------ encoding rates

@pytest.mark.parametrize("scheme,target,tol", [("char", -0.5, 0.15), ("sdf", -1.5, 0.2)])
def test_c1_encoding_rates(report, scheme, target, tol):
    t0 = time.time()
    rec = encoding_study(CIRCLE, RES, scheme)
    dt = time.time() - t0
    ok = abs(rec.fitted_slope - target) <= tol and rec.fit_r2 >= 0.98 and dt < 120
    report(f"C1 encoding rate ({scheme})", ok,
           f"slope {rec.fitted_slope:.3f} (want {target} +- {tol}), R^2 {rec.fit_r2:.4f}, {dt:.1f} s")


# 2 ------------------------------------------------------------------ TFPM exactness

def test_c2_tfpm_exactness(report):
    exact = lambda p: 1.0 + np.exp(p[:, 0])
    grid = GridSpec(0, 1, 41)
    field = tfpm_solve(InterfaceProblem(UNIT, a=1, b=1, f=1, g=exact), grid)
    err = np.max(np.abs(tfpm_reconstruct(field, grid.points()) - exact(grid.points())))
    square = Geometry(Box.cube(0.0, 1.0), [AxisSquare((0.5, 0.5), 0.4)])
    prob = InterfaceProblem(square, a=1, b=1, f=1, g=0, alpha=0.02, beta=0.02)
    uj, fj, alpha, beta = face_jumps(tfpm_solve(prob, GridSpec(0, 1, 101)), prob)
    jerr = np.max(np.abs(uj - alpha))
    report("C2 TFPM exactness", err < 1e-9 and jerr < 1e-7 and len(uj) > 0,
           f"max error {err:.2e} (< 1e-9), jump error {jerr:.2e} over {len(uj)} faces (< 1e-7)")


# 3 ------------------------------------------------------------------ reference solver

def test_c3_reference_solver(report):
    exact = lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])
    ns, errs = [17, 33, 65], []
    for n in ns:
        grid = GridSpec(0, 1, n)
        prob = InterfaceProblem(UNIT, a=1.0, b=0.0, f=lambda p: 2 * np.pi**2 * exact(p), g=0.0)
        errs.append(np.max(np.abs(solve_elliptic_interface(prob, grid).values.ravel() - exact(grid.points()))))
    h = 1.0 / (np.array(ns) - 1)
    slope = np.polyfit(np.log(1 / h), np.log(errs), 1)[0]

    geom = Geometry(Box.cube(0.0, 1.0), [CIRCLE])
    grid = GridSpec(0, 1, 65)
    u = solve_elliptic_interface(InterfaceProblem(geom, a=1.0, b=0.0, f=0.0, g=0.0, alpha=1.0), grid).values.ravel()
    pc_err = np.max(np.abs(u - (CIRCLE.sdf(grid.points()) <= 1e-12)))

    tgrid = GridSpec(0, 1, 65)
    params = TransportParams(rho=0.2, gamma_star=1.0, d_in=0.1, d_out=0.5, dt=0.01, t_end=0.1)
    labels = geom.region_label(tgrid.points()).reshape(tgrid.shape)
    phi0 = np.where(labels == 1, 1.0, 0.0)
    hist = []
    run_transport(geom, params, phi0, tgrid, history=hist)
    masses = [sum(transport_masses(geom, tgrid, p)) for p in [phi0] + hist]
    drift = max(abs(m - masses[0]) for m in masses) / masses[0]
    ok = slope <= -1.8 and pc_err < 1e-8 and drift < 1e-8 and len(hist) == params.n_steps
    report("C3 reference solver", ok,
           f"smooth slope {slope:.2f} (<= -1.8), jump error {pc_err:.1e} (< 1e-8), "
           f"mass drift {drift:.1e} over {params.n_steps} steps (< 1e-8)")


# 4 ------------------------------------------------------------------ gradients

def _small_samples(head, rng, n=16):
    grid = GridSpec(0, 1, n)
    out = []
    for _ in range(2):
        s = EncodedSample(grid, ["a", "b", "c"], rng.normal(size=(3, n, n)))
        if head == "field":
            s.target = rng.normal(size=(n, n))
        else:
            s.target_grid = GridSpec(0, 1, 2 * n - 1)
            s.target = rng.normal(size=s.target_grid.shape)
            s.extras = {"mu": rng.uniform(0.5, 2.0, grid.cell_shape), "particular": rng.normal(size=grid.cell_shape)}
        out.append(s)
    return out


def test_c4_gradient_engine(report):
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0
    for head in ("field", "tfpm"):
        model = init_model(3, d_v=4, n_layers=2, k_max=3, head=head, seed=1)
        samples = _small_samples(head, rng)
        _, grads = compute_gradients(model, samples)
        for name, value in model.params.items():
            flat = value.ravel()
            idx = rng.choice(flat.size, min(50, flat.size), replace=False)
            fd = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                step = 1e-6 * max(1.0, abs(old))
                flat[i] = old + step
                lp = float(batch_loss(model, samples)[0].value)
                flat[i] = old - step
                lm = float(batch_loss(model, samples)[0].value)
                flat[i] = old
                fd[j] = (lp - lm) / (2 * step)
            worst = max(worst, np.linalg.norm(grads[name].ravel()[idx] - fd) / np.linalg.norm(fd))
    dt = time.time() - t0
    report("C4 gradient engine", worst < 1e-4 and dt < 60,
           f"worst blockwise relative error {worst:.1e} (< 1e-4), {dt:.1f} s (< 60 s)")


# 5 ------------------------------------------------------------------ spectral identities

def test_c5_spectral_identities(report):
    n, k_max = 32, 12
    shape = ad.modes_shape(2, k_max) + (1, 1)
    R = (ad.Var(np.ones(shape), name="re"), ad.Var(np.zeros(shape), name="im"))
    conv = lambda v: ad.spectral_conv(ad.Var(v), *R, k_max).value
    v = np.random.default_rng(0).normal(size=(1, n, n, 1))
    once = conv(v)
    proj = np.max(np.abs(conv(once) - once))
    x = np.arange(n) / n
    hi = np.cos(2 * np.pi * 13 * x)[None, :, None, None] * np.ones((1, n, n, 1))
    trunc = np.max(np.abs(conv(hi)))
    report("C5 spectral identities", proj < 1e-12 and trunc < 1e-12,
           f"projector defect {proj:.1e}, mode-13 residue {trunc:.1e} (< 1e-12)")


# 6 ------------------------------------------------------------------ learning capacity

def test_c6a_single_sample_overfit(report):
    s = generate_sample(ExperimentSpec("InnerStar", n_samples=1, seed=0, grid=GridSpec(0, 1, 64)), 0)
    model = init_model(3, d_v=24, n_layers=3, k_max=8, seed=0)
    hist = train(model, [s], TrainConfig(learning_rate=1e-3, batch_size=1, epochs=500, seed=0)).loss_history
    hit = next((i + 1 for i, v in enumerate(hist) if v < 1e-5), None)
    report("C6a single-sample overfit", hit is not None,
           f"loss {hist[0]:.2e} -> {min(hist):.2e}; below 1e-5 after {hit} of 500 steps")


def test_c6b_inner_star_learning(report):
    t0 = time.time()
    spec = ExperimentSpec("InnerStar", n_samples=200, seed=0, grid=GridSpec(0, 1, 64))
    ds = generate(spec)
    model = init_model(3, d_v=24, n_layers=3, k_max=8, seed=0, manifest=ds.manifest)
    res = train(model, ds.train_samples(), TrainConfig(learning_rate=1e-3, batch_size=5, epochs=300, seed=0),
                ds.test_samples())
    blocks = np.asarray(res.loss_history).reshape(-1, 20).mean(axis=1)
    decreasing = bool(np.all(np.diff(blocks) < 0))
    dt = time.time() - t0
    ok = res.test_error < 0.15 and decreasing and dt < 7200
    report("C6b InnerStar learning", ok,
           f"test relative L2 {res.test_error:.4f} (< 0.15), 20-epoch block means strictly decreasing: "
           f"{decreasing}, {dt / 60:.1f} min (< 120)")


# 7 ------------------------------------------------------------------ basis ordering

BASIS_EPOCHS = 100


def test_c7_basis_ordering(report):
    rows = []
    for seed in (0, 1, 2):
        r = basis_study(seed=seed, n_samples=200, factor=5, fine_n=101, epochs=BASIS_EPOCHS)
        rows.append((seed, r["field"], r["tfpm"]))
    ok = all(t < f for _, f, t in rows)
    detail = "; ".join(f"seed {s}: field {f:.4f} vs TFPM {t:.4f}" for s, f, t in rows)
    report("C7 basis ordering at 20x20 cells", ok, detail)


# 8 ------------------------------------------------------------------ continuity

def test_c8_continuity(report):
    geom = Geometry(Box.cube(0.0, 1.0), [CIRCLE])
    prob = InterfaceProblem(geom, a=1.0, b=0.0, f=1.0, g=0.0, alpha=0.1, beta=0.0)
    grid = GridSpec(0, 1, 129)
    res = continuity_probe(prob, grid, [0.002, 0.004, 0.008, 0.016], n_directions=4, seed=0)
    zero = continuity_probe(prob, grid, [0.0], n_directions=2, seed=0)
    zero_ok = all(d == 0.0 for *_, d in zero.rows)
    ok = res.slope is not None and 0.8 <= res.slope <= 1.2 and res.ratio_spread < 3 and zero_ok
    report("C8 continuity", ok,
           f"log-log slope {res.slope:.3f} (want 0.8..1.2), ratio spread {res.ratio_spread:.2f} (< 3), "
           f"zero perturbation exact: {zero_ok}")


# 9 ------------------------------------------------------------------ round trips

def test_c9_round_trips(report, tmp_path):
    spec = ExperimentSpec("SquareTfpm", n_samples=4, seed=5, grid=GridSpec(0, 1, 21))
    a, b = generate(spec), generate(spec)
    same_gen = all(np.array_equal(x.data, y.data) and np.array_equal(x.target, y.target)
                   for x, y in zip(a.samples, b.samples))
    save_dataset(a, tmp_path / "a.ifop")
    save_dataset(b, tmp_path / "b.ifop")
    same_file = (tmp_path / "a.ifop").read_bytes() == (tmp_path / "b.ifop").read_bytes()
    back = load_dataset(tmp_path / "a.ifop")
    ds_exact = all(np.array_equal(x.data, y.data) and np.array_equal(x.target, y.target)
                   and all(np.array_equal(x.extras[k], y.extras[k]) for k in ("mu", "particular", "active"))
                   for x, y in zip(a.samples, back.samples)) and back.split == a.split

    model = init_model(2, d_v=6, n_layers=2, k_max=4, head="tfpm", seed=2, manifest=a.manifest)
    save_checkpoint(model, tmp_path / "m.bin")
    m2 = load_checkpoint(tmp_path / "m.bin")
    ck_exact = all(np.array_equal(model.params[k], m2.params[k]) for k in model.params)

    cfg = TrainConfig(epochs=3, batch_size=2, seed=4)
    data = paired_samples(a)
    h1 = train(model, data, cfg).loss_history
    h2 = train(m2, data, cfg).loss_history
    ok = same_gen and same_file and ds_exact and ck_exact and h1 == h2
    report("C9 round trips", ok,
           f"datasets identical {same_gen}, files identical {same_file}, dataset round trip {ds_exact}, "
           f"checkpoint round trip {ck_exact}, loss histories identical {h1 == h2}")
