import csv
import json

import numpy as np
import pytest

from ifop.cli import dispatch
from ifop.fno import load_checkpoint


def _run(*argv):
    return dispatch([str(a) for a in argv])


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert _run("gen", "--experiment", "inner-star", "--n", 10, "--seed", 7, "--grid-n", 33,
                    "--out", tmp_path / name) == 0
    assert (tmp_path / "a/dataset.ifop").read_bytes() == (tmp_path / "b/dataset.ifop").read_bytes()
    assert (tmp_path / "a/config.resolved").read_bytes() == (tmp_path / "b/config.resolved").read_bytes()
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()


def test_train_zero_epochs_is_initialization(tmp_path):
    assert _run("gen", "--experiment", "square-tfpm", "--n", 3, "--grid-n", 21, "--out", tmp_path / "g") == 0
    common = ["--data", tmp_path / "g/dataset.ifop", "--epochs", 0, "--d-v", 4, "--layers", 1, "--k-max", 3,
              "--seed", 3]
    assert _run("train", *common, "--out", tmp_path / "t") == 0
    assert _run("train", *common, "--epochs", 2, "--out", tmp_path / "t2") == 0
    m0 = load_checkpoint(tmp_path / "t/checkpoint.bin")
    from ifop.fno import init_model
    ref = init_model(2, d_v=4, n_layers=1, k_max=3, seed=3)
    for k in ref.params:
        np.testing.assert_array_equal(m0.params[k], ref.params[k])
    rows = list(csv.reader(open(tmp_path / "t2/metrics.csv")))
    assert rows[0] == ["epoch", "loss"] and len(rows) == 3
    assert _run("eval", "--data", tmp_path / "g/dataset.ifop", "--checkpoint", tmp_path / "t2/checkpoint.bin",
                "--out", tmp_path / "e") == 0
    assert (tmp_path / "e/field_pred.pgm").read_bytes().startswith(b"P5")


def test_encode_study_sdf_slope_column(tmp_path):
    assert _run("encode-study", "--shape", "ellipse", "--scheme", "sdf", "--res", "16..64", "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert [int(r["n"]) for r in rows] == [16, 32, 64]
    assert -1.8 < float(rows[0]["fitted_slope"]) < -1.3


def test_config_file_and_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid_n": 17, "size": 0.3}))
    assert _run("tfpm-solve", "--config", cfg, "--out", tmp_path / "s") == 0
    resolved = json.loads((tmp_path / "s/config.resolved").read_text())
    assert resolved["grid_n"] == 17 and resolved["size"] == 0.3
    assert np.load(tmp_path / "s/field.npy").shape == (17, 17)
    cfg.write_text(json.dumps({"nope": 1}))
    assert _run("tfpm-solve", "--config", cfg, "--out", tmp_path / "x") != 0
    assert _run("tfpm-solve", "--config", tmp_path / "missing.json", "--out", tmp_path / "x") != 0
    assert _run("tfpm-solve", "--bogus-flag", "--out", tmp_path / "x") != 0
    assert _run("eval", "--data", tmp_path / "none", "--checkpoint", tmp_path / "none", "--out", tmp_path / "x") == 1
    assert _run("tfpm-solve", "--b", -1, "--out", tmp_path / "x") == 1


def test_continuity_study_zero_amplitude(tmp_path):
    assert _run("continuity-study", "--grid-n", 33, "--directions", 1, "--amplitudes", "0.0,0.05",
                "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert float(rows[0]["du_l2"]) == 0.0 and float(rows[1]["du_l2"]) > 0
