"""Compiled chain loop for the built-in potentials.

Random numbers are drawn by the caller (NumPy generators, in blocks) so the
compiled loop consumes exactly the same draws as the per-step Python path.
"""
import numpy as np
from numba import njit

from .potentials import Potential

MULLER_BROWN, STAR, QUADRATIC, DOUBLE_WELL = 0, 1, 2, 3
_CODES = {"muller_brown": MULLER_BROWN, "star": STAR, "quadratic": QUADRATIC, "double_well": DOUBLE_WELL}


def encode(p: Potential):
    """(kind code, flat parameter array) for :func:`value_grad`."""
    if p.kind == "muller_brown":
        params = np.concatenate([p.mb.as_array().reshape(-1), [p.mb.scale]])
    elif p.kind == "star":
        params = np.zeros(1)
    elif p.kind == "quadratic":
        params = np.concatenate([[p.curvature], p.center_array])
    else:
        params = np.array([p.height])
    return _CODES[p.kind], params.astype(np.float64)


@njit(cache=True)
def sum_squares(v):
    """Σ vᵢ² accumulated left to right, the order the chain loop uses."""
    acc = 0.0
    for i in range(v.shape[0]):
        acc += v[i] * v[i]
    return acc


@njit(cache=True)
def value_grad(kind, params, theta, g):
    d = theta.shape[0]
    if kind == MULLER_BROWN:
        x = theta[0]
        y = theta[1]
        val = 0.0
        gx = 0.0
        gy = 0.0
        for i in range(4):
            C = params[i]
            a = params[4 + i]
            b = params[8 + i]
            c = params[12 + i]
            dx = x - params[16 + i]
            dy = y - params[20 + i]
            e = C * np.exp(a * dx * dx + b * dx * dy + c * dy * dy)
            val += e
            gx += e * (2.0 * a * dx + b * dy)
            gy += e * (b * dx + 2.0 * c * dy)
        scale = params[24]
        g[0] = scale * gx
        g[1] = scale * gy
        return scale * val
    if kind == STAR:
        x = theta[0]
        y = theta[1]
        g[0] = 2.0 * x + 2000.0 * x * y * y
        g[1] = 2000.0 * x * x * y + 2.0 * y
        return x * x + 1000.0 * x * x * y * y + y * y
    if kind == QUADRATIC:
        k = params[0]
        val = 0.0
        for i in range(d):
            diff = theta[i] - params[1 + i]
            g[i] = k * diff
            val += diff * diff
        return 0.5 * k * val
    h = params[0]
    val = 0.0
    for i in range(d):
        w = theta[i] * theta[i] - 1.0
        g[i] = 4.0 * h * theta[i] * w
        val += w * w
    return h * val


@njit(cache=True)
def run_block(kind, params, theta, zeta, initialized, adaptive, h, beta,
              alpha, r, s, m, M, delta, rho, gain, sigma, noise, gnoise,
              out_theta, out_dt, out_zeta, out_pot, store_theta):
    """Advance ``theta`` in place through ``noise.shape[0]`` steps.

    Returns (steps completed, diverged flag, zeta, initialized flag). A step
    whose update is non-finite is not recorded and leaves ``theta`` at the
    last finite state.
    """
    n = noise.shape[0]
    d = theta.shape[0]
    g = np.empty(d)
    new = np.empty(d)
    for k in range(n):
        pot = value_grad(kind, params, theta, g)
        if sigma > 0.0:
            sc = sigma * np.sqrt(1.0 + sum_squares(theta)) / np.sqrt(d)
            for i in range(d):
                g[i] = g[i] + sc * gnoise[k, i]
        if adaptive:
            gval = sum_squares(g) + delta
            if not initialized:
                zeta = gval / alpha
                initialized = True
            zeta = rho * zeta + gain * gval
            q = (s * zeta) ** r
            ps = m + (M - m) / (q + 1.0)
            if ps < m:
                ps = m
            if ps > M:
                ps = M
            dt = ps * h
        else:
            dt = h
        sd = np.sqrt(2.0 * dt / beta)
        ok = True
        for i in range(d):
            new[i] = theta[i] - dt * g[i] + sd * noise[k, i]
            if not np.isfinite(new[i]):
                ok = False
        if not ok:
            return k, True, zeta, initialized
        if store_theta:
            for i in range(d):
                out_theta[k, i] = theta[i]
        out_dt[k] = dt
        out_zeta[k] = zeta if adaptive else 0.0
        out_pot[k] = pot
        for i in range(d):
            theta[i] = new[i]
    return n, False, zeta, initialized
