import csv
import subprocess
import sys

import numpy as np
import pytest

from sasgld.cli import EXIT_CHECK, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main
from sasgld.core import new_rng
from sasgld.io import write_idx_images, write_idx_labels


def write_config(path, **kv):
    lines = []
    for k, v in kv.items():
        lines.append(f"{k}: {v}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--points", "50"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 6


def test_perturbed_gradcheck_fails(capsys):
    assert main(["gradcheck", "--points", "20", "--perturb-gradient", "1e-2"]) == EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["sample-toy"], ["frobnicate"], ["sample-toy", "--seed", "x"],
                                  ["sample-toy", "--config", "/nonexistent/c.yaml"],
                                  ["gradcheck", "--sampler", "hmc"]])
def test_usage_errors(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_config_error_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", target="star", alhpa=0.3)
    assert main(["sample-toy", "--config", str(cfg)]) == EXIT_USAGE
    assert "alhpa" in capsys.readouterr().err


def test_wrong_subcommand_for_target(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", target="star")
    assert main(["sample-bnn", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["sweep-h", "--config", str(cfg)]) == EXIT_USAGE


def test_sample_toy_smoke(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", target="muller_brown", n_steps=100, resolution=16,
                       truth_subdivisions=1, theta0="[-0.5, 1.5]")
    out = tmp_path / "out"
    assert main(["sample-toy", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == EXIT_OK
    for name in ("trace_sgld.csv", "trace_sasgld.csv", "grid_truth.csv", "summary.csv"):
        assert (out / name).exists()
    rows = read_rows(out / "summary.csv")
    assert [r["sampler"] for r in rows] == ["sgld", "sasgld"]
    assert all(r["seed"] == "3" for r in rows)
    assert len((out / "trace_sasgld.csv").read_text().splitlines()) == 101


def test_flags_after_and_before_subcommand(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", target="quadratic", n_steps=50)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", str(cfg), "--sampler", "sasgld", "--out", str(a), "sample-toy"]) == EXIT_OK
    assert main(["sample-toy", "--config", str(cfg), "--sampler", "sasgld", "--out", str(b)]) == EXIT_OK
    assert not (a / "trace_sgld.csv").exists()
    assert (a / "trace_sasgld.csv").read_bytes() == (b / "trace_sasgld.csv").read_bytes()


def test_n_steps_override(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", target="quadratic", n_steps=5000)
    out = tmp_path / "o"
    assert main(["sample-toy", "--config", str(cfg), "--out", str(out), "--n-steps", "20",
                 "--sampler", "sgld"]) == EXIT_OK
    assert len((out / "trace_sgld.csv").read_text().splitlines()) == 21


def test_divergence_exits_two(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", target="quadratic", sampler="sgld", dtau=2.5,
                       n_steps=5000, theta0="[1.0, 1.0]")
    out = tmp_path / "o"
    assert main(["sample-toy", "--config", str(cfg), "--out", str(out)]) == EXIT_DIVERGED
    row = read_rows(out / "summary.csv")[0]
    assert int(row["diverged_at"]) > 1


def test_sweep_single_h(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", target="quadratic", dim=1, n_steps=2000, sampler="both")
    out = tmp_path / "o"
    assert main(["sweep-h", "--config", str(cfg), "--out", str(out), "--h", "0.1"]) == EXIT_OK
    for s in ("sgld", "sasgld"):
        rows = read_rows(out / f"sweep_{s}.csv")
        assert len(rows) == 1 and float(rows[0]["h"]) == 0.1
    for r in read_rows(out / "summary.csv"):
        assert r.get("slope", "") == ""


def test_sweep_bad_h_list(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", target="quadratic")
    assert main(["sweep-h", "--config", str(cfg), "--h", "0.1,abc"]) == EXIT_USAGE
    assert main(["sweep-h", "--config", str(cfg), "--h", "0.1,-1"]) == EXIT_USAGE


@pytest.fixture
def tiny_mnist(tmp_path):
    rng = new_rng(0)
    d = tmp_path / "data"
    d.mkdir()
    for split, n in (("train", 40), ("test", 20)):
        labels = np.arange(n) % 10
        imgs = rng.integers(0, 60, (n, 784))
        imgs[np.arange(n), labels * 70] = 255
        write_idx_images(d / f"{split}-images", imgs)
        write_idx_labels(d / f"{split}-labels", labels)
    return write_config(tmp_path / "bnn.yaml", target="bnn", hidden="[8]", epochs=2, batch_size=10,
                        thinning=1, train_images="data/train-images", train_labels="data/train-labels",
                        test_images="data/test-images", test_labels="data/test-labels")


def test_sample_bnn_tiny(tiny_mnist, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sample-bnn", "--config", str(tiny_mnist), "--out", str(a), "--save-ensemble"]) == EXIT_OK
    rows = read_rows(a / "metrics.csv")
    assert [r["sampler"] for r in rows] == ["sgld", "sasgld"]
    for r in rows:
        assert 0 <= float(r["accuracy"]) <= 1 and float(r["nll"]) > 0
    curve = read_rows(a / "logprob_curve.csv")
    assert len(curve) == 4
    snaps = sorted((a / "ensemble_sasgld_seed0").iterdir())
    assert len(snaps) == 4  # second epoch, 4 batches, thinning 1
    assert main(["sample-bnn", "--config", str(tiny_mnist), "--out", str(b)]) == EXIT_OK
    for name in ("metrics.csv", "logprob_curve.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sample_bnn_missing_data(tmp_path):
    cfg = write_config(tmp_path / "bnn.yaml", target="bnn", hidden="[8]")
    assert main(["sample-bnn", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sasgld", "gradcheck", "--points", "5"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "sasgld"], capture_output=True, text=True)
    assert res.returncode == 1
