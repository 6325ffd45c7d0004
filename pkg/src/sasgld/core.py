"""Shared value types, configuration and seeded random streams."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

ParameterVector = np.ndarray


class NonFiniteError(FloatingPointError):
    """A parameter vector contains NaN or Inf entries."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """One or more configuration invariants are violated."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def parameter_vector(values) -> ParameterVector:
    """Return ``values`` as a flat float64 array, rejecting non-finite entries."""
    theta = np.array(values, dtype=np.float64).reshape(-1)
    if not np.isfinite(theta).all():
        bad = int(np.flatnonzero(~np.isfinite(theta))[0])
        raise NonFiniteError(f"non-finite entry at index {bad}")
    return theta


def is_finite(theta: np.ndarray) -> bool:
    return bool(np.isfinite(theta).all())


def new_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Deterministic generator for one (root seed, stream) pair.

    Streams are derived with ``SeedSequence`` spawn keys, so distinct stream ids
    give statistically independent generators and execution order does not
    matter.
    """
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be non-negative")
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SamplerConfig:
    """Run-level settings shared by SGLD and SA-SGLD.

    ``h`` is the fixed SGLD stepsize and, for SA-SGLD, the Sundman time
    increment Δτ.
    """

    h: float
    beta: float = 1.0
    seed: int = 0
    n_steps: int = 1000
    thinning: int = 1
    burn_in: Optional[int] = None

    @property
    def burn_in_steps(self) -> int:
        # half the run by default
        return self.n_steps // 2 if self.burn_in is None else self.burn_in


@dataclass(frozen=True)
class ControllerConfig:
    """Constants of the monitor recursion and the Sundman transform."""

    alpha: float = 1.0
    r: float = 0.5
    s: float = 1.0
    m: float = 0.5
    M: float = 2.0
    delta: float = 1e-8


def validate_config(cfg: Optional[SamplerConfig] = None,
                    ctl: Optional[ControllerConfig] = None,
                    allow_fixed_step: bool = False) -> list[str]:
    """Collect every violated invariant; an empty list means valid.

    ``allow_fixed_step`` accepts m = M, the degenerate controller that
    reduces SA-SGLD to SGLD at stepsize m·Δτ.
    """
    errors: list[str] = []
    if cfg is not None:
        if not (cfg.h > 0 and math.isfinite(cfg.h)):
            errors.append(f"h > 0 violated (h={cfg.h})")
        if not (cfg.beta > 0):
            errors.append(f"beta > 0 violated (beta={cfg.beta})")
        if not (0 <= cfg.seed < 2**64):
            errors.append(f"seed must be a 64-bit unsigned integer (seed={cfg.seed})")
        if cfg.n_steps < 1:
            errors.append(f"n_steps >= 1 violated (n_steps={cfg.n_steps})")
        if cfg.thinning < 1:
            errors.append(f"thinning_interval >= 1 violated (thinning={cfg.thinning})")
        if cfg.burn_in_steps < 0:
            errors.append(f"burn_in_steps >= 0 violated (burn_in={cfg.burn_in_steps})")
        elif cfg.n_steps >= 1 and cfg.burn_in_steps >= cfg.n_steps:
            errors.append(f"burn_in_steps < n_steps violated "
                          f"(burn_in={cfg.burn_in_steps}, n_steps={cfg.n_steps})")
    if ctl is not None:
        if not (ctl.alpha > 0):
            errors.append(f"alpha > 0 violated (alpha={ctl.alpha})")
        if not (ctl.r > 0):
            errors.append(f"r > 0 violated (r={ctl.r})")
        if not (ctl.s > 0):
            errors.append(f"s > 0 violated (s={ctl.s})")
        if not (ctl.m > 0):
            errors.append(f"m > 0 violated (m={ctl.m})")
        if not (ctl.m < ctl.M or allow_fixed_step and ctl.m == ctl.M):
            errors.append(f"m < M violated (m={ctl.m}, M={ctl.M})")
        if not math.isfinite(ctl.M):
            errors.append(f"M < inf violated (M={ctl.M})")
        if not (ctl.delta > 0):
            errors.append(f"delta > 0 violated (delta={ctl.delta})")
    return errors


def ensure_valid(cfg: Optional[SamplerConfig] = None,
                 ctl: Optional[ControllerConfig] = None,
                 allow_fixed_step: bool = False) -> None:
    errors = validate_config(cfg, ctl, allow_fixed_step)
    if errors:
        raise ConfigError(errors)


class ChainRecord(NamedTuple):
    """One step of a chain.

    ``theta`` is the position held during the step and ``dt`` the physical
    time increment used to leave it, so ``dt`` is the correct weight for
    ``theta`` in a time average. ``theta`` is ``None`` when not stored.
    """

    step: int
    theta: Optional[np.ndarray]
    dt: float
    zeta: float
    potential: float


@dataclass
class EnsembleMember:
    step: int
    theta: np.ndarray
    dt: float


@dataclass
class ChainResult:
    """Column-oriented per-step trace plus the thinned ensemble.

    Steps are numbered from 1. Iterating yields :class:`ChainRecord` tuples.
    """

    steps: np.ndarray
    dt: np.ndarray
    zeta: np.ndarray
    potential: np.ndarray
    theta: Optional[np.ndarray] = None
    ensemble: list[EnsembleMember] = field(default_factory=list)
    diverged_at: Optional[int] = None
    burn_in: int = 0
    final_theta: Optional[np.ndarray] = None

    @property
    def total_physical_time(self) -> float:
        return float(self.dt.sum())

    @property
    def n_records(self) -> int:
        return int(self.steps.size)

    def __len__(self) -> int:
        return self.n_records

    def __iter__(self):
        for i in range(self.n_records):
            yield self[i]

    def __getitem__(self, i: int) -> ChainRecord:
        th = None if self.theta is None else self.theta[i]
        return ChainRecord(int(self.steps[i]), th, float(self.dt[i]),
                           float(self.zeta[i]), float(self.potential[i]))

    def post_burn_in(self) -> "ChainResult":
        """View restricted to steps after the burn-in period."""
        keep = self.steps > self.burn_in
        return ChainResult(
            steps=self.steps[keep], dt=self.dt[keep], zeta=self.zeta[keep],
            potential=self.potential[keep],
            theta=None if self.theta is None else self.theta[keep],
            ensemble=self.ensemble, diverged_at=self.diverged_at,
            burn_in=self.burn_in, final_theta=self.final_theta)
