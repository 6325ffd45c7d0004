"""SGLD and SA-SGLD updates and the chain driver."""
from __future__ import annotations

import math
from typing import Optional, Union

import numpy as np

from .controller import ControllerState, monitor_constants, monitor_value, psi, update_monitor
from .core import (ChainRecord, ChainResult, ControllerConfig, EnsembleMember,
                   NonFiniteError, SamplerConfig, ensure_valid)
from .oracles import ExactOracle, GradientEstimate, NoisyOracle

SAMPLERS = ("sgld", "sasgld")
_BLOCK = 1 << 16


def sgld_step(theta, G, h: float, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Euler–Maruyama step θ − h·G + √(2h/β)·ε."""
    if h <= 0:
        raise ValueError("stepsize must be positive")
    grad = getattr(G, "grad", G)
    noise = rng.standard_normal(np.shape(theta))
    with np.errstate(over="ignore", invalid="ignore"):
        new = theta - h * grad + math.sqrt(2.0 * h / beta) * noise
    if not np.isfinite(new).all():
        raise NonFiniteError("non-finite state after SGLD step")
    return new


def sasgld_step(theta, ctl: Union[ControllerState, ControllerConfig], oracle, dtau: float,
                beta: float, rng: np.random.Generator, step: int = 0):
    """One SA-SGLD step: monitor update, then Δt = ψ(ζ)Δτ, then the Langevin move.

    ``ctl`` may be a bare :class:`ControllerConfig`, in which case the monitor
    starts at the fixed point of the first monitor value. Returns
    ``(theta', state', record)``.
    """
    G = oracle(theta)
    cfg = ctl if isinstance(ctl, ControllerConfig) else ctl.cfg
    g = monitor_value(G.grad, cfg.delta)
    if isinstance(ctl, ControllerConfig):
        ctl = ControllerState.from_first_monitor(ctl, dtau, g)
    ctl = update_monitor(ctl, g)
    dt = psi(ctl.zeta, cfg) * dtau
    new = sgld_step(theta, G.grad, dt, beta, rng)
    return new, ctl, ChainRecord(step, theta, dt, ctl.zeta, G.potential_estimate)


def _compilable(oracle) -> bool:
    return isinstance(oracle, (ExactOracle, NoisyOracle))


def run_chain(sampler: str, oracle, cfg: SamplerConfig, ctl_cfg: Optional[ControllerConfig],
              rng: np.random.Generator, theta0=None, *, store_theta: Optional[bool] = None,
              ensemble: Optional[bool] = None, compiled: Optional[bool] = None) -> ChainResult:
    """Run ``cfg.n_steps`` steps of ``sampler`` ('sgld' or 'sasgld').

    Every step records (Δt, ζ, Ũ); the position held at each step is stored
    when ``store_theta`` (default: dimension ≤ 16). Snapshots at thinning
    points after burn-in form the ensemble; by default they are only kept
    when per-step positions are not stored, since the trace already holds
    them otherwise. A non-finite update ends the run
    with ``diverged_at`` set to that step; it is not raised.

    Oracles over built-in potentials run through a compiled loop unless
    ``compiled=False``; the random draws are identical either way. A
    controller with m = M is accepted and reproduces SGLD at h = m·Δτ.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    dim = oracle.dim
    theta = np.zeros(dim) if theta0 is None else np.array(theta0, dtype=np.float64).reshape(-1)
    if theta.size != dim:
        raise ValueError(f"theta0 has dimension {theta.size}, oracle expects {dim}")
    if cfg.n_steps == 0:
        return _empty_result(dim, store_theta, theta)
    ensure_valid(cfg, ctl_cfg if sampler == "sasgld" else None, allow_fixed_step=True)
    if not np.isfinite(theta).all():
        raise NonFiniteError("initial state is not finite", step=0)
    if store_theta is None:
        store_theta = dim <= 16
    if ensemble is None:
        ensemble = not store_theta
    if compiled is None:
        compiled = _compilable(oracle)
    if compiled and not _compilable(oracle):
        raise ValueError("compiled chains need an exact or synthetic-noise potential oracle")
    run = _run_compiled if compiled else _run_python
    return run(sampler, oracle, cfg, ctl_cfg, rng, theta, store_theta, ensemble)


def _empty_result(dim, store_theta, theta) -> ChainResult:
    z = np.empty(0)
    return ChainResult(np.empty(0, dtype=np.int64), z, z.copy(), z.copy(),
                       np.empty((0, dim)) if (store_theta or store_theta is None and dim <= 16) else None,
                       final_theta=theta)


def _collect(cfg, step, theta, dt, members):
    if step > cfg.burn_in_steps and step % cfg.thinning == 0:
        members.append(EnsembleMember(step, theta.copy(), dt))


def _run_python(sampler, oracle, cfg, ctl_cfg, rng, theta, store_theta, keep_ensemble):
    n = cfg.n_steps
    dt_out = np.empty(n)
    zeta_out = np.zeros(n)
    pot_out = np.empty(n)
    theta_out = np.empty((n, theta.size)) if store_theta else None
    members: list[EnsembleMember] = []
    state: Union[ControllerState, ControllerConfig, None] = ctl_cfg
    diverged_at = None
    done = 0
    for k in range(1, n + 1):
        try:
            # overflow on the way to a non-finite state is reported as divergence
            with np.errstate(over="ignore", invalid="ignore"):
                if sampler == "sasgld":
                    new, state, rec = sasgld_step(theta, state, oracle, cfg.h, cfg.beta, rng, step=k)
                    dt, zeta, pot = rec.dt, rec.zeta, rec.potential
                else:
                    G: GradientEstimate = oracle(theta)
                    dt, zeta, pot = cfg.h, 0.0, G.potential_estimate
                    new = sgld_step(theta, G.grad, cfg.h, cfg.beta, rng)
        except NonFiniteError:
            diverged_at = k
            break
        i = k - 1
        dt_out[i], zeta_out[i], pot_out[i] = dt, zeta, pot
        if store_theta:
            theta_out[i] = theta
        if keep_ensemble:
            _collect(cfg, k, theta, dt, members)
        theta = new
        done = k
    return ChainResult(
        np.arange(1, done + 1), dt_out[:done], zeta_out[:done], pot_out[:done],
        None if theta_out is None else theta_out[:done], members, diverged_at,
        cfg.burn_in_steps, theta)


def _run_compiled(sampler, oracle, cfg, ctl_cfg, rng, theta, store_theta, keep_ensemble):
    from . import _kernels

    kind, params = _kernels.encode(oracle.potential)
    sigma = oracle.sigma if isinstance(oracle, NoisyOracle) else 0.0
    adaptive = sampler == "sasgld"
    ctl = ctl_cfg if adaptive else ControllerConfig()
    rho, gain = monitor_constants(ctl.alpha, cfg.h)
    n, d = cfg.n_steps, theta.size
    dt_out = np.empty(n)
    zeta_out = np.empty(n)
    pot_out = np.empty(n)
    keep_theta = store_theta or keep_ensemble
    theta_out = np.empty((n, d)) if keep_theta else np.empty((0, d))
    theta = theta.copy()
    zeta, initialized = 0.0, False
    done, diverged_at = 0, None
    while done < n:
        b = min(_BLOCK, n - done)
        noise = rng.standard_normal((b, d))
        gnoise = oracle.rng.standard_normal((b, d)) if sigma > 0 else np.empty((0, d))
        sl = slice(done, done + b)
        k, div, zeta, initialized = _kernels.run_block(
            kind, params, theta, zeta, initialized, adaptive, cfg.h, cfg.beta,
            ctl.alpha, ctl.r, ctl.s, ctl.m, ctl.M, ctl.delta, rho, gain, sigma, noise, gnoise,
            theta_out[sl] if keep_theta else theta_out, dt_out[sl], zeta_out[sl], pot_out[sl],
            keep_theta)
        done += k
        if div:
            diverged_at = done + 1
            break
    members = []
    if keep_ensemble:
        steps = np.arange(1, done + 1)
        keep = (steps > cfg.burn_in_steps) & (steps % cfg.thinning == 0)
        members = [EnsembleMember(int(s), theta_out[s - 1].copy(), float(dt_out[s - 1]))
                   for s in steps[keep]]
    return ChainResult(np.arange(1, done + 1), dt_out[:done], zeta_out[:done], pot_out[:done],
                       theta_out[:done] if store_theta else None, members, diverged_at,
                       cfg.burn_in_steps, theta)
