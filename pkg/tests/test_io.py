import struct

import numpy as np
import pytest

from sasgld.core import ChainResult, ConfigError, ControllerConfig, EnsembleMember, SamplerConfig, new_rng
from sasgld.io import (IdxFormatError, config_from_mapping, load_idx_images, load_idx_labels,
                       load_image_set, parse_experiment_config, read_snapshot, read_trace,
                       write_idx_images, write_idx_labels, write_snapshot, write_trace)
from sasgld.oracles import ExactOracle
from sasgld.potentials import quadratic
from sasgld.samplers import run_chain


def write_bytes(path, *chunks):
    path.write_bytes(b"".join(chunks))
    return path


# IDX ------------------------------------------------------------------------

def test_hand_built_image_fixture(tmp_path):
    # two 2×2 images, bytes 0..7 in row-major order
    p = write_bytes(tmp_path / "img", bytes([0, 0, 8, 3]), struct.pack(">3I", 2, 2, 2), bytes(range(8)))
    np.testing.assert_array_equal(load_idx_images(p), [[0, 1, 2, 3], [4, 5, 6, 7]])
    assert load_idx_images(p).dtype == np.uint8


def test_hand_built_label_fixture(tmp_path):
    p = write_bytes(tmp_path / "lab", bytes([0, 0, 8, 1]), struct.pack(">I", 2), bytes([3, 7]))
    np.testing.assert_array_equal(load_idx_labels(p), [3, 7])


def test_image_loader_rejects_label_magic(tmp_path):
    p = write_bytes(tmp_path / "lab", bytes([0, 0, 8, 1]), struct.pack(">I", 2), bytes([3, 7]))
    with pytest.raises(IdxFormatError, match="wrong magic"):
        load_idx_images(p)


def test_truncated_payload_rejected(tmp_path):
    p = write_bytes(tmp_path / "img", bytes([0, 0, 8, 3]), struct.pack(">3I", 2, 2, 2), bytes(range(7)))
    with pytest.raises(IdxFormatError):
        load_idx_images(p)


def test_trailing_bytes_rejected(tmp_path):
    p = write_bytes(tmp_path / "lab", bytes([0, 0, 8, 1]), struct.pack(">I", 2), bytes([3, 7, 1]))
    with pytest.raises(IdxFormatError):
        load_idx_labels(p)


def test_truncated_header_rejected(tmp_path):
    p = write_bytes(tmp_path / "img", bytes([0, 0, 8, 3, 0, 0]))
    with pytest.raises(IdxFormatError, match="header"):
        load_idx_images(p)


def test_label_out_of_range(tmp_path):
    p = write_bytes(tmp_path / "lab", bytes([0, 0, 8, 1]), struct.pack(">I", 2), bytes([3, 12]))
    with pytest.raises(IdxFormatError, match="out of range"):
        load_idx_labels(p)


def test_empty_label_file_is_valid(tmp_path):
    p = write_bytes(tmp_path / "lab", bytes([0, 0, 8, 1]), struct.pack(">I", 0))
    assert load_idx_labels(p).shape == (0,)


def test_full_size_training_file(tmp_path):
    # stand-in with the published shape of the MNIST training images
    rng = new_rng(0)
    imgs = rng.integers(0, 256, (60000, 784), dtype=np.uint8)
    write_idx_images(tmp_path / "train", imgs)
    assert (tmp_path / "train").stat().st_size == 16 + 60000 * 784
    out = load_idx_images(tmp_path / "train")
    assert out.shape == (60000, 784)
    np.testing.assert_array_equal(out[[0, 59999]], imgs[[0, 59999]])


def test_write_read_round_trip(tmp_path):
    imgs = new_rng(1).integers(0, 256, (5, 784), dtype=np.uint8)
    labels = np.array([0, 9, 3, 3, 1], dtype=np.uint8)
    write_idx_images(tmp_path / "i", imgs)
    write_idx_labels(tmp_path / "l", labels)
    s = load_image_set(tmp_path / "i", tmp_path / "l")
    assert s.n == 5
    np.testing.assert_array_equal(s.images, imgs)
    x = s.scaled()
    assert x.min() >= 0 and x.max() <= 1 and x.dtype == np.float64


def test_image_label_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "i", np.zeros((3, 784)))
    write_idx_labels(tmp_path / "l", [1, 2])
    with pytest.raises(ValueError):
        load_image_set(tmp_path / "i", tmp_path / "l")


# traces ---------------------------------------------------------------------

def small_chain(n=2):
    cfg = SamplerConfig(h=0.1, n_steps=n)
    return run_chain("sasgld", ExactOracle(quadratic(1.0, 2)), cfg, ControllerConfig(), new_rng(0),
                     [0.3, -0.7])


def test_trace_round_trip_exact(tmp_path):
    res = small_chain(2)
    write_trace(res, tmp_path / "t.csv")
    back = read_trace(tmp_path / "t.csv")
    for col in ("steps", "dt", "zeta", "potential", "theta"):
        np.testing.assert_array_equal(getattr(back, col), getattr(res, col))
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "step,dt,zeta,potential,theta_0,theta_1"


def test_trace_is_deterministic(tmp_path):
    write_trace(small_chain(50), tmp_path / "a.csv")
    write_trace(small_chain(50), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_trace_line_count_large(tmp_path):
    cfg = SamplerConfig(h=0.1, n_steps=10**6)
    res = run_chain("sgld", ExactOracle(quadratic(1.0, 2)), cfg, None, new_rng(0))
    write_trace(res, tmp_path / "big.csv")
    with open(tmp_path / "big.csv", "rb") as fh:
        assert sum(1 for _ in fh) == 10**6 + 1


def test_trace_omits_high_dim_positions(tmp_path):
    z = np.zeros(3)
    res = ChainResult(np.arange(1, 4), z + 0.1, z, z, np.zeros((3, 8)))
    write_trace(res, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,dt,zeta,potential"
    assert read_trace(tmp_path / "t.csv").theta is None


def test_empty_trace_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_trace(small_chain(0), tmp_path / "t.csv")


# snapshots ------------------------------------------------------------------

def test_snapshot_round_trip(tmp_path):
    m = EnsembleMember(1234, new_rng(0).normal(size=79510), 0.0123)
    write_snapshot(tmp_path / "s.bin", m)
    back = read_snapshot(tmp_path / "s.bin")
    assert back.step == 1234 and back.dt == 0.0123
    np.testing.assert_array_equal(back.theta, m.theta)
    assert (tmp_path / "s.bin").stat().st_size == 24 + 8 * 79510


def test_snapshot_length_checked(tmp_path):
    write_snapshot(tmp_path / "s.bin", EnsembleMember(1, np.ones(4), 0.1))
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "s.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "s.bin")


# configs --------------------------------------------------------------------

def test_star_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("sampler: sasgld\ntarget: star\n")
    cfg, ctl, target, out = parse_experiment_config(p)
    assert (ctl.alpha, ctl.r, ctl.s, ctl.m, ctl.M) == (0.5, 0.5, 2.0, 0.5, 2.0)
    assert target.kind == "star" and out.sampler == "sasgld"


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("sampler: sasgld\ntarget: star\nalhpa: 0.3\n")
    with pytest.raises(ConfigError, match="alhpa"):
        parse_experiment_config(p)


def test_seed_defaults_to_zero():
    cfg, *_ = config_from_mapping({"target": "quadratic"})
    assert cfg.seed == 0


def test_toy_target_with_potential_key():
    exp = config_from_mapping({"target": "toy", "potential": "muller_brown", "n_steps": 10})
    assert exp.target.kind == "muller_brown"
    assert exp.controller.alpha == 0.07 and exp.controller.r == 0.25 and exp.controller.s == 2.0
    assert exp.sampler_cfg.n_steps == 10


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as info:
        config_from_mapping({"target": "star", "m": 2.0, "M_upper": 0.5, "dtau": -1.0, "beta": 0})
    msg = str(info.value)
    assert "m < M violated" in msg and "h > 0" in msg and "beta > 0" in msg


def test_bad_values_rejected():
    for bad in ({"target": "nowhere"}, {"target": "star", "n_steps": 1.5},
                {"target": "star", "sampler": "hmc"}, {"target": "star", "dim": 3},
                {"target": "star", "bounds": [[1, 0], [0, 1]]}, {}):
        with pytest.raises(ConfigError):
            config_from_mapping(bad)


def test_overrides():
    exp = config_from_mapping({"target": "star", "seed": 4})
    exp2 = exp.with_overrides(seed=9, out_dir="x", sampler="sgld")
    assert exp2.sampler_cfg.seed == 9 and exp2.output.out_dir == "x" and exp2.output.sampler == "sgld"
    assert exp.sampler_cfg.seed == 4


def test_invalid_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("target: [star\n")
    with pytest.raises(ConfigError):
        parse_experiment_config(p)


def test_bnn_config_defaults():
    exp = config_from_mapping({"target": "bnn", "hidden": [32]})
    assert exp.sampler_cfg.thinning == 100
    assert exp.target.hidden == (32,) and exp.target.prior == "horseshoe"
