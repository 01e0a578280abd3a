"""Command line entry point: ``python -m ifop <command> [flags]``.

Every command writes into ``--out DIR``: ``config.resolved`` (the JSON of all
resolved options), ``metrics.csv`` and command specific files with fixed names.
Timestamps only go to ``run.log``.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .datagen import ExperimentSpec, Kind, downsample, generate, paired_samples
from .dataio import load_dataset, save_dataset
from .encode import ChannelTensor, Scheme
from .fno import TrainConfig, init_model, load_checkpoint, predict, relative_l2, save_checkpoint, train
from .geometry import AxisSquare, Box, Ellipse, Geometry, circle
from .grid import GridSpec
from .problem import InterfaceProblem
from .tfpm import tfpm_solve, upsample_tfpm

EXPERIMENTS = {
    "outer-star": Kind.OUTER_STAR,
    "inner-star": Kind.INNER_STAR,
    "square-tfpm": Kind.SQUARE_TFPM,
    "planar-3d": Kind.PLANAR_3D,
    "transport": Kind.TRANSPORT,
}


class CliError(Exception):
    pass


def _resolutions(text: str) -> list:
    """``16..256`` (doubling) or ``16,24,32``."""
    if ".." in text:
        lo, hi = (int(v) for v in text.split(".."))
        if lo < 2 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad resolution range {text!r}")
        out = [lo]
        while out[-1] * 2 <= hi:
            out.append(out[-1] * 2)
        return out
    return [int(v) for v in text.split(",")]


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",")]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file of option defaults (keys are option names)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")
    p.add_argument("--out", type=Path, required=True)


def _model_flags(p):
    p.add_argument("--d-v", type=int, default=24)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifop", description="Interface problem operators: data, training, studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset file")
    _common(p)
    p.add_argument("--experiment", choices=sorted(EXPERIMENTS), required=True)
    p.add_argument("--n", type=int, default=200, help="number of samples")
    p.add_argument("--grid-n", type=int, help="grid points per axis (experiment default if omitted)")
    p.add_argument("--downsample", type=int, default=1, help="stride; the full-resolution target is kept")
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--variant", choices=["alpha", "beta"], help="jump drawn at random for outer-star")
    p.add_argument("--gamma-star", type=float, help="partition coefficient for transport")

    p = sub.add_parser("train", help="fit a model on a dataset's training split")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--head", choices=["field", "tfpm"], default="field")
    _model_flags(p)

    p = sub.add_parser("eval", help="relative L2 report on the test split")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("encode-study", help="encoding error against grid resolution")
    _common(p)
    p.add_argument("--shape", choices=["circle", "ellipse", "square"], default="circle")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="char")
    p.add_argument("--res", type=_resolutions, default=[16, 32, 64, 128, 256])
    p.add_argument("--oversample", type=int, default=16)

    p = sub.add_parser("continuity-study", help="solution change under interface perturbations")
    _common(p)
    p.add_argument("--amplitudes", type=_floats, default=[0.002, 0.004, 0.008, 0.016])
    p.add_argument("--directions", type=int, default=4)
    p.add_argument("--grid-n", type=int, default=129)
    p.add_argument("--radius", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--f", type=float, default=1.0)

    p = sub.add_parser("tfpm-solve", help="one TFPM solve for a square or circle interface")
    _common(p)
    p.add_argument("--grid-n", type=int, default=21)
    p.add_argument("--fine-n", type=int, help="reconstruct on a finer grid")
    p.add_argument("--shape", choices=["square", "circle"], default="square")
    p.add_argument("--center", type=_floats, default=[0.5, 0.5])
    p.add_argument("--size", type=float, default=0.4, help="side (square) or radius (circle)")
    for name, default in (("a", 1.0), ("b", 1.0), ("f", 1.0), ("alpha", 0.02), ("beta", 0.02)):
        p.add_argument(f"--{name}", type=float, default=default)

    p = sub.add_parser("basis-compare", help="train field and TFPM heads on coarse data and compare")
    _common(p)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--fine-n", type=int, default=101)
    p.add_argument("--factor", type=int, default=5)
    _model_flags(p)
    p.set_defaults(epochs=100)
    parser.commands = sub.choices
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        known = set(vars(args))
        unknown = set(conf) - known
        if unknown:
            raise CliError(f"unknown config keys {sorted(unknown)}")
        conf = {k: v for k, v in conf.items() if k not in ("command", "config", "out")}
        parser.commands[args.command].set_defaults(**conf)
        args = parser.parse_args(argv)
    return args


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("config", "out"):
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _metrics(out: Path, header, rows):
    analysis.write_csv(out / "metrics.csv", header, rows)


def cmd_gen(args):
    kind = EXPERIMENTS[args.experiment]
    kw = {"n_samples": args.n, "seed": args.seed}
    if args.grid_n:
        base = ExperimentSpec(kind, n_samples=0).grid
        kw["grid"] = GridSpec(base.s, base.t, args.grid_n, base.d)
    if args.scheme:
        kw["scheme"] = args.scheme
    opts = {}
    if args.variant:
        opts["variant"] = args.variant
    if args.gamma_star is not None:
        opts["gamma_star"] = args.gamma_star
    if opts:
        kw["options"] = opts
    spec = ExperimentSpec(kind, **kw)
    ds = generate(spec, workers=args.workers)
    if args.downsample != 1:
        ds = downsample(ds, args.downsample)
    save_dataset(ds, args.out / "dataset.ifop", precision=args.precision)
    rows = [(i, "test" if i in set(ds.split[1]) else "train", float(np.max(np.abs(s.target))))
            for i, s in enumerate(ds.samples)]
    _metrics(args.out, ["sample", "split", "max_abs_target"], rows)
    return {"samples": len(ds.samples), "grid": ds.grid.to_dict(), "manifest": ds.manifest}


def cmd_train(args):
    ds = load_dataset(args.data)
    train_set = paired_samples(ds, ds.split[0])
    test_set = paired_samples(ds, ds.split[1])
    if args.head == "tfpm" and "mu" not in (ds.samples[0].extras if ds.samples else {}):
        raise CliError("dataset has no per-cell TFPM context; use square-tfpm or planar-3d data")
    model = init_model(len(ds.manifest), d=ds.grid.d, d_v=args.d_v, n_layers=args.layers, k_max=args.k_max,
                       head=args.head, seed=args.seed, manifest=ds.manifest)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                      precision=args.precision)
    res = train(model, train_set, cfg, test_set or None)
    save_checkpoint(res.model, args.out / "checkpoint.bin")
    _metrics(args.out, ["epoch", "loss"], list(enumerate(res.loss_history)))
    return {"final_loss": res.loss_history[-1] if res.loss_history else None, "test_error": res.test_error}


def cmd_eval(args):
    ds = load_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    if model.manifest and model.manifest != ds.manifest:
        raise CliError(f"checkpoint channels {model.manifest} do not match dataset {ds.manifest}")
    test = paired_samples(ds, ds.split[1] or range(len(ds.samples)))
    rows, first = [], None
    for i, s in zip(ds.split[1] or range(len(ds.samples)), test):
        truth = ChannelTensor(s.target_grid, np.asarray(s.target).reshape(s.target_grid.shape))
        pred = predict(model, s)
        err, absolute = relative_l2(pred, truth)
        rows.append((i, err, int(absolute)))
        if first is None:
            first = (pred.values, truth.values)
    _metrics(args.out, ["sample", "rel_l2", "absolute"], rows)
    if first is not None:
        pred, truth = first
        lo, hi = float(min(pred.min(), truth.min())), float(max(pred.max(), truth.max()))
        analysis.write_pgm(args.out / "field_pred.pgm", pred, lo, hi)
        analysis.write_pgm(args.out / "field_truth.pgm", truth, lo, hi)
        analysis.write_pgm(args.out / "field_error.pgm", np.abs(pred - truth))
    return {"mean_rel_l2": float(np.mean([r[1] for r in rows])) if rows else None}


def _shape(name):
    return {"circle": circle((0.5, 0.5), 0.3), "ellipse": Ellipse((0.5, 0.5), 0.3, 0.15),
            "square": AxisSquare((0.5, 0.5), 0.4)}[name]


def cmd_encode_study(args):
    rec = analysis.encoding_study(_shape(args.shape), args.res, args.scheme, oversample=args.oversample)
    rows = [(n, e, rec.fitted_slope, rec.fit_r2) for n, e in zip(rec.resolutions, rec.errors)]
    _metrics(args.out, ["n", "error", "fitted_slope", "fit_r2"], [(int(r[0]),) + r[1:] for r in rows])
    return {"fitted_slope": rec.fitted_slope, "fit_r2": rec.fit_r2}


def cmd_continuity_study(args):
    geo = Geometry(Box.cube(0.0, 1.0), [circle((0.5, 0.5), args.radius)]).validate()
    prob = InterfaceProblem(geo, a=1.0, b=0.0, f=args.f, g=0.0, alpha=args.alpha, beta=args.beta)
    res = analysis.continuity_probe(prob, GridSpec(0.0, 1.0, args.grid_n), args.amplitudes, args.directions,
                                    args.seed)
    rows = [(k, a, r, d, d / r if r > 0 else float("nan")) for k, a, r, d in res.rows]
    _metrics(args.out, ["direction", "amplitude", "r_inf", "du_l2", "ratio"], rows)
    return {"slope": res.slope, "ratio_spread": res.ratio_spread, "skipped": len(res.skipped)}


def cmd_tfpm_solve(args):
    if len(args.center) != 2:
        raise CliError("--center needs two coordinates")
    iface = AxisSquare(args.center, args.size) if args.shape == "square" else circle(args.center, args.size)
    geo = Geometry(Box.cube(0.0, 1.0), [iface]).validate()
    prob = InterfaceProblem(geo, a=args.a, b=args.b, f=args.f, g=0.0, alpha=args.alpha, beta=args.beta)
    grid = GridSpec(0.0, 1.0, args.grid_n)
    fld = tfpm_solve(prob, grid)
    out_grid = GridSpec(0.0, 1.0, args.fine_n) if args.fine_n else grid
    u = upsample_tfpm(fld, out_grid).values
    np.save(args.out / "field.npy", u)
    analysis.write_pgm(args.out / "field_u.pgm", u)
    _metrics(args.out, ["grid_n", "out_n", "min", "max"], [(grid.n, out_grid.n, float(u.min()), float(u.max()))])
    return {"max": float(u.max())}


def cmd_basis_compare(args):
    res = analysis.basis_study(seed=args.seed, n_samples=args.n, factor=args.factor, fine_n=args.fine_n,
                               epochs=args.epochs, d_v=args.d_v, n_layers=args.layers, k_max=args.k_max,
                               batch_size=args.batch, learning_rate=args.lr, workers=args.workers,
                               precision=args.precision)
    _metrics(args.out, ["head", "coarse_cells", "rel_l2", "final_loss"],
             [(h, res["coarse_cells"], res[h], res[f"{h}_final_loss"]) for h in ("field", "tfpm")])
    return {"field": res["field"], "tfpm": res["tfpm"]}


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "encode-study": cmd_encode_study,
    "continuity-study": cmd_continuity_study, "tfpm-solve": cmd_tfpm_solve, "basis-compare": cmd_basis_compare,
}


def dispatch(argv=None) -> int:
    try:
        args = _parse(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    start = time.time()
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.resolved").write_text(json.dumps(_resolved(args), indent=2, sort_keys=True) + "\n")
        summary = COMMANDS[args.command](args)
    except (CliError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    with open(args.out / "run.log", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {args.command} {time.time() - start:.2f}s {json.dumps(summary)}\n")
    print(json.dumps(summary))
    return 0


def main():
    sys.exit(dispatch())
