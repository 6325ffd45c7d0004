"""IDX datasets, CSV traces, ensemble snapshots and experiment configs."""
from __future__ import annotations

import io as _io
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .core import ChainResult, ConfigError, ControllerConfig, EnsembleMember, SamplerConfig, validate_config
from .potentials import KINDS

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
TRACE_THETA_MAX_DIM = 4


class IdxFormatError(ValueError):
    pass


# IDX ---------------------------------------------------------------------

def _read_idx(path, magic: int, n_dims: int) -> tuple:
    raw = Path(path).read_bytes()
    header = 4 + 4 * n_dims
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: wrong magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{n_dims}I", raw[4:header])
    size = math.prod(dims)
    if size > len(raw):
        raise IdxFormatError(f"{path}: declared size {dims} exceeds file length")
    if len(raw) - header != size:
        raise IdxFormatError(f"{path}: payload has {len(raw) - header} bytes, header declares {size}")
    return dims, np.frombuffer(raw, dtype=np.uint8, offset=header)


def load_idx_images(path) -> np.ndarray:
    """N × (rows·cols) uint8 matrix from an IDX image file."""
    (n, rows, cols), data = _read_idx(path, IMAGE_MAGIC, 3)
    return data.reshape(n, rows * cols).copy()


def load_idx_labels(path) -> np.ndarray:
    (n,), data = _read_idx(path, LABEL_MAGIC, 1)
    labels = data.copy()
    if labels.size and labels.max() >= 10:
        raise IdxFormatError(f"{path}: label {int(labels.max())} out of range 0-9")
    return labels


def write_idx_images(path, images, rows: int = 28, cols: int = 28) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, rows * cols)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGE_MAGIC, images.shape[0], rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


@dataclass(frozen=True)
class LabeledImageSet:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("image count differs from label count")
        if self.labels.size and self.labels.max() >= 10:
            raise ValueError("labels must be < 10")

    @property
    def n(self) -> int:
        return int(self.labels.size)

    def scaled(self) -> np.ndarray:
        """Pixels as float64 in [0, 1]."""
        return self.images.astype(np.float64) / 255.0


def load_image_set(images_path, labels_path) -> LabeledImageSet:
    return LabeledImageSet(load_idx_images(images_path), load_idx_labels(labels_path))


# traces ------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.17g" % x


def write_trace(records: ChainResult, path) -> None:
    """CSV trace; positions are included as theta_i columns when dim ≤ 4."""
    if records.n_records == 0:
        raise ValueError("no records to write")
    cols = ["step", "dt", "zeta", "potential"]
    th = records.theta
    if th is not None and th.shape[1] > TRACE_THETA_MAX_DIM:
        th = None
    if th is not None:
        cols += [f"theta_{i}" for i in range(th.shape[1])]
    floats = np.column_stack([records.dt, records.zeta, records.potential] + ([th] if th is not None else []))
    buf = _io.StringIO()
    buf.write(",".join(cols) + "\n")
    for step, row in zip(records.steps.tolist(), floats.tolist()):
        buf.write(str(step) + "," + ",".join(map(_fmt, row)) + "\n")
    Path(path).write_text(buf.getvalue())


def read_trace(path) -> ChainResult:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:4] != ["step", "dt", "zeta", "potential"]:
        raise ValueError(f"{path}: not a trace file")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    theta = data[:, 4:] if len(header) > 4 else None
    return ChainResult(data[:, 0].astype(np.int64), data[:, 1].copy(), data[:, 2].copy(),
                       data[:, 3].copy(), None if theta is None else theta.copy())


# ensemble snapshots --------------------------------------------------------
# Little-endian header: uint64 dim, uint64 step, float64 dt; then dim float64 values.

_SNAP_HEADER = struct.Struct("<QQd")


def write_snapshot(path, member: EnsembleMember) -> None:
    theta = np.ascontiguousarray(member.theta, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(theta.size, member.step, member.dt))
        fh.write(theta.tobytes())


def read_snapshot(path) -> EnsembleMember:
    raw = Path(path).read_bytes()
    if len(raw) < _SNAP_HEADER.size:
        raise ValueError(f"{path}: truncated snapshot")
    dim, step, dt = _SNAP_HEADER.unpack_from(raw)
    if len(raw) != _SNAP_HEADER.size + 8 * dim:
        raise ValueError(f"{path}: snapshot length does not match dim={dim}")
    theta = np.frombuffer(raw, dtype="<f8", offset=_SNAP_HEADER.size).astype(np.float64)
    return EnsembleMember(int(step), theta, float(dt))


# experiment configs --------------------------------------------------------

TOY_TARGETS = tuple(KINDS)
TARGETS = TOY_TARGETS + ("bnn",)

# Controller constants and base steps used when a config does not set them.
TARGET_DEFAULTS = {
    "muller_brown": dict(alpha=0.07, r=0.25, s=2.0, dtau=0.004, beta=0.5, n_steps=1_000_000,
                         bounds=((-1.8, 1.2), (-0.6, 2.2))),
    "star": dict(alpha=0.5, r=0.5, s=2.0, dtau=0.0008, beta=1.0, n_steps=1_000_000,
                 bounds=((-3.0, 3.0), (-3.0, 3.0))),
    "quadratic": dict(alpha=1000.0, r=1.0, s=1000.0, dtau=0.1, beta=1.0, n_steps=1_000_000,
                      bounds=((-5.0, 5.0), (-5.0, 5.0))),
    "double_well": dict(alpha=1.0, r=0.5, s=1.0, dtau=0.01, beta=1.0, n_steps=1_000_000,
                        bounds=((-2.5, 2.5), (-2.5, 2.5))),
    "bnn": dict(alpha=1000.0, r=0.25, s=2.0, dtau=0.2, beta=1.0),
}

_FLOAT_KEYS = {"dtau", "sgld_h", "beta", "alpha", "r", "s", "m", "M_upper", "delta",
               "curvature", "height", "noise_sigma", "prior_scale"}
_INT_KEYS = {"n_steps", "batch_size", "thinning", "burn_in", "seed", "dim", "resolution",
             "truth_subdivisions", "n_chains", "epochs", "burn_in_epochs", "ece_bins",
             "n_batches"}
_STR_KEYS = {"sampler", "target", "potential", "prior", "out_dir", "step_units",
             "train_images", "train_labels", "test_images", "test_labels"}
_LIST_KEYS = {"theta0", "bounds", "h_list", "hidden", "seeds"}
ALLOWED_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS | _LIST_KEYS


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    dim: int = 2
    curvature: float = 1.0
    height: float = 1.0
    noise_sigma: float = 0.0
    theta0: Optional[tuple] = None
    bounds: Optional[tuple] = None
    resolution: int = 64
    truth_subdivisions: int = 8
    # bnn only
    hidden: tuple = (100,)
    prior: str = "horseshoe"
    prior_scale: Optional[float] = None
    batch_size: int = 100
    epochs: int = 20
    burn_in_epochs: Optional[int] = None
    step_units: str = "per_example"
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    ece_bins: int = 15


@dataclass(frozen=True)
class OutputSpec:
    out_dir: str = "out"
    sampler: str = "both"
    sgld_h: Optional[float] = None
    h_list: tuple = ()
    n_chains: int = 1
    seeds: tuple = ()
    n_batches: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    sampler_cfg: SamplerConfig
    controller: ControllerConfig
    target: TargetSpec
    output: OutputSpec
    raw: dict = field(default_factory=dict, compare=False)

    def __iter__(self):
        return iter((self.sampler_cfg, self.controller, self.target, self.output))

    def with_overrides(self, seed=None, out_dir=None, sampler=None) -> "ExperimentConfig":
        cfg, out = self.sampler_cfg, self.output
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out_dir is not None:
            out = replace(out, out_dir=str(out_dir))
        if sampler is not None:
            out = replace(out, sampler=sampler)
        return replace(self, sampler_cfg=cfg, output=out)


def _coerce(key, value, errors):
    try:
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if key in _INT_KEYS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if key in _STR_KEYS:
            if not isinstance(value, str):
                raise TypeError
            return value
        if not isinstance(value, (list, tuple)):
            raise TypeError
        return value
    except (TypeError, ValueError):
        errors.append(f"invalid value for {key!r}: {value!r}")
        return None


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Validate a flat key/value mapping and apply per-target defaults."""
    if not isinstance(data, dict):
        raise ConfigError(["config must be a mapping of keys to values"])
    errors = [f"unknown key {k!r}" for k in data if k not in ALLOWED_KEYS]
    vals = {k: _coerce(k, v, errors) for k, v in data.items() if k in ALLOWED_KEYS}

    target = vals.get("target")
    pot = vals.get("potential")
    if target == "toy" or target is None:
        target = pot
    elif pot is not None and pot != target:
        errors.append(f"potential {pot!r} conflicts with target {target!r}")
    if target is None:
        errors.append("missing required key 'target'")
    elif target not in TARGETS:
        errors.append(f"unknown target {target!r}; expected one of {TARGETS}")
    sampler = vals.get("sampler", "both")
    if sampler not in ("sgld", "sasgld", "both"):
        errors.append(f"unknown sampler {sampler!r}")
    if errors:
        raise ConfigError(errors)

    d = TARGET_DEFAULTS[target]
    pick = lambda k, default=None: vals[k] if vals.get(k) is not None else d.get(k, default)
    is_bnn = target == "bnn"
    n_steps = pick("n_steps", 1000)
    ctl = ControllerConfig(alpha=pick("alpha"), r=pick("r"), s=pick("s"),
                           m=vals.get("m", 0.5), M=vals.get("M_upper", 2.0),
                           delta=vals.get("delta", 1e-8))
    cfg = SamplerConfig(h=pick("dtau"), beta=pick("beta"), seed=vals.get("seed", 0),
                        n_steps=n_steps, thinning=vals.get("thinning", 100 if is_bnn else 1),
                        burn_in=vals.get("burn_in"))

    bounds = vals.get("bounds", d.get("bounds"))
    if bounds is not None:
        try:
            bounds = tuple(tuple(float(v) for v in pair) for pair in bounds)
            if len(bounds) != 2 or any(len(p) != 2 or not p[0] < p[1] for p in bounds):
                raise ValueError
        except (TypeError, ValueError):
            errors.append(f"bounds must be [[xmin, xmax], [ymin, ymax]], got {vals.get('bounds')!r}")
    theta0 = vals.get("theta0")
    if theta0 is not None:
        theta0 = tuple(float(v) for v in theta0)
    prior = vals.get("prior", "horseshoe")
    if prior not in ("gaussian", "horseshoe"):
        errors.append(f"unknown prior {prior!r}")
    units = vals.get("step_units", "per_example")
    if units not in ("per_example", "raw"):
        errors.append(f"step_units must be 'per_example' or 'raw', got {units!r}")
    dim = vals.get("dim", 2)
    if target in ("muller_brown", "star") and dim != 2:
        errors.append(f"{target} is two-dimensional (dim={dim})")
    if theta0 is not None and not is_bnn and len(theta0) != dim:
        errors.append(f"theta0 has {len(theta0)} entries, dim is {dim}")
    tgt = TargetSpec(
        kind=target, dim=dim, curvature=vals.get("curvature", 1.0), height=vals.get("height", 1.0),
        noise_sigma=vals.get("noise_sigma", 0.0), theta0=theta0, bounds=bounds,
        resolution=vals.get("resolution", 64), truth_subdivisions=vals.get("truth_subdivisions", 8),
        hidden=tuple(int(h) for h in vals.get("hidden", (100,))), prior=prior,
        prior_scale=vals.get("prior_scale"), batch_size=vals.get("batch_size", 100),
        epochs=vals.get("epochs", 20), burn_in_epochs=vals.get("burn_in_epochs"), step_units=units,
        train_images=vals.get("train_images"), train_labels=vals.get("train_labels"),
        test_images=vals.get("test_images"), test_labels=vals.get("test_labels"),
        ece_bins=vals.get("ece_bins", 15))
    out = OutputSpec(out_dir=vals.get("out_dir", "out"), sampler=sampler, sgld_h=vals.get("sgld_h"),
                     h_list=tuple(float(h) for h in vals.get("h_list", ())),
                     n_chains=vals.get("n_chains", 1),
                     seeds=tuple(int(s) for s in vals.get("seeds", ())),
                     n_batches=vals.get("n_batches", 50))

    if not is_bnn:
        errors += validate_config(cfg, ctl)
    else:
        errors += validate_config(None, ctl)
        if not cfg.h > 0:
            errors.append(f"h > 0 violated (h={cfg.h})")
        if tgt.epochs < 1:
            errors.append("epochs >= 1 violated")
        if tgt.burn_in_epochs is not None and not 0 <= tgt.burn_in_epochs < tgt.epochs:
            errors.append("burn_in_epochs must lie in [0, epochs)")
    if out.sgld_h is not None and not out.sgld_h > 0:
        errors.append(f"sgld_h > 0 violated (sgld_h={out.sgld_h})")
    if tgt.noise_sigma < 0:
        errors.append("noise_sigma >= 0 violated")
    if out.n_chains < 1:
        errors.append("n_chains >= 1 violated")
    if tgt.resolution < 16:
        errors.append("resolution >= 16 violated")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(cfg, ctl, tgt, out, dict(data))


def parse_experiment_config(path) -> ExperimentConfig:
    """Read a flat YAML config (``key: value`` lines); unknown keys are errors.

    Relative data paths are taken relative to the config file; ``out_dir``
    stays relative to the working directory.

    Unpacks as ``(sampler_cfg, controller_cfg, target_spec, output_spec)``.
    """
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    data = data or {}
    if isinstance(data, dict):
        # data files are located relative to the config file
        base = Path(path).resolve().parent
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if isinstance(data.get(key), str):
                data[key] = str(base / Path(data[key]).expanduser())
    return config_from_mapping(data)
