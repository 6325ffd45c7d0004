"""Monitor recursion and Sundman time transform for SA-SGLD.

The monitor ζ is an exponential average of g = ‖G‖² + δ, and the physical
stepsize is Δt = ψ(ζ)·Δτ with

    ψ(ζ) = m (q + M/m) / (q + 1),   q = (s·ζ)^r,

which decreases from M at ζ = 0 to m as ζ → ∞.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._kernels import sum_squares
from .core import ControllerConfig


@dataclass(frozen=True)
class ControllerState:
    """Monitor value plus the per-run constants ρ = exp(−αΔτ) and gain = (1 − ρ)/α."""

    zeta: float
    cfg: ControllerConfig
    rho: float
    gain: float

    @classmethod
    def create(cls, cfg: ControllerConfig, dtau: float, zeta: float = 0.0) -> "ControllerState":
        if dtau <= 0:
            raise ValueError("dtau must be positive")
        rho, gain = monitor_constants(cfg.alpha, dtau)
        return cls(float(zeta), cfg, rho, gain)

    @classmethod
    def from_first_monitor(cls, cfg: ControllerConfig, dtau: float, g: float) -> "ControllerState":
        """Start at the fixed point ζ₀ = g(θ₀)/α of the first monitor value."""
        return cls.create(cfg, dtau, g / cfg.alpha)


def monitor_constants(alpha: float, dtau: float):
    """(ρ, (1 − ρ)/α); expm1 keeps the gain accurate when αΔτ is tiny."""
    return math.exp(-alpha * dtau), -math.expm1(-alpha * dtau) / alpha


def update_monitor(state: ControllerState, g: float) -> ControllerState:
    if g < 0:
        raise ValueError(f"monitor value must be non-negative, got {g}")
    zeta = state.rho * state.zeta + state.gain * g
    return replace(state, zeta=zeta)


def monitor_value(grad, delta: float) -> float:
    """‖G‖² + δ; ``grad`` may be an array or a :class:`GradientEstimate`."""
    g = getattr(grad, "grad", grad)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    return float(sum_squares(g)) + delta


def psi(zeta: float, cfg: ControllerConfig) -> float:
    if zeta < 0:
        raise ValueError("zeta must be non-negative")
    q = (cfg.s * zeta) ** cfg.r
    # m + (M - m)/(q + 1) is the same rational function, but exact at q = 0 and for m == M
    val = cfg.m + (cfg.M - cfg.m) / (q + 1.0)
    return min(max(val, cfg.m), cfg.M)


def psi_array(zeta, cfg: ControllerConfig) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=np.float64)
    q = (cfg.s * zeta) ** cfg.r
    return np.clip(cfg.m + (cfg.M - cfg.m) / (q + 1.0), cfg.m, cfg.M)


def next_timestep(state: ControllerState, dtau: float) -> float:
    return psi(state.zeta, state.cfg) * dtau
