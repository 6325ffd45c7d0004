"""Analytic 2D/ND test potentials with exact gradients.

All value/gradient functions accept a point of shape ``(d,)`` or a stack of
points of shape ``(..., d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

KINDS = ("muller_brown", "star", "quadratic", "double_well")


@dataclass(frozen=True)
class MullerBrownParams:
    C: tuple = (-267.0, -285.0, -275.0, 2.5)
    a: tuple = (-0.9, -0.9, -9.5, 0.6)
    b: tuple = (0.0, 0.0, 10.0, 0.1)
    c: tuple = (-9.0, -9.0, -5.5, 0.1)
    u: tuple = (1.35, -0.95, -1.05, -1.0)
    v: tuple = (-0.5, -0.15, 1.05, 0.9)
    scale: float = 1.0 / 20.0

    def as_array(self) -> np.ndarray:
        return np.array([self.C, self.a, self.b, self.c, self.u, self.v], dtype=np.float64)


@dataclass(frozen=True)
class Potential:
    """A built-in potential.

    ``curvature`` and ``center`` apply to the quadratic (U = κ/2 ‖θ − c‖²),
    ``height`` to the double well (U = height Σ (θᵢ² − 1)²).
    """

    kind: str
    dim: int = 2
    curvature: float = 1.0
    height: float = 1.0
    center: Optional[tuple] = None
    mb: MullerBrownParams = field(default_factory=MullerBrownParams)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("muller_brown", "star") and self.dim != 2:
            raise ValueError(f"{self.kind} is two-dimensional")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.center is not None and len(self.center) != self.dim:
            raise ValueError("center has wrong length")

    @property
    def center_array(self) -> np.ndarray:
        if self.center is None:
            return np.zeros(self.dim)
        return np.asarray(self.center, dtype=np.float64)


def muller_brown(params: Optional[MullerBrownParams] = None) -> Potential:
    return Potential("muller_brown", 2, mb=params or MullerBrownParams())


def star() -> Potential:
    return Potential("star", 2)


def quadratic(curvature: float = 1.0, dim: int = 2, center=None) -> Potential:
    if curvature <= 0:
        raise ValueError("curvature must be positive")
    return Potential("quadratic", dim, curvature=curvature,
                     center=None if center is None else tuple(float(c) for c in center))


def double_well(height: float = 1.0, dim: int = 2) -> Potential:
    if height <= 0:
        raise ValueError("height must be positive")
    return Potential("double_well", dim, height=height)


def make_potential(name: str, dim: int = 2, **kwargs) -> Potential:
    """Build a potential from its id string (as used in configs and CLI flags)."""
    factories = {
        "muller_brown": lambda: muller_brown(),
        "star": star,
        "quadratic": lambda: quadratic(kwargs.get("curvature", 1.0), dim, kwargs.get("center")),
        "double_well": lambda: double_well(kwargs.get("height", 1.0), dim),
    }
    if name not in factories:
        raise ValueError(f"unknown potential {name!r}; expected one of {KINDS}")
    return factories[name]()


def _check(p: Potential, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != p.dim:
        raise ValueError(f"dimension mismatch: potential has dim {p.dim}, got {theta.shape[-1]}")
    return theta


def _mb_terms(mb: MullerBrownParams, theta):
    C, a, b, c, u, v = (np.asarray(t) for t in (mb.C, mb.a, mb.b, mb.c, mb.u, mb.v))
    dx = theta[..., 0:1] - u
    dy = theta[..., 1:2] - v
    q = a * dx * dx + b * dx * dy + c * dy * dy
    if q.ndim == 1:
        # libm exp for single points, matching the compiled chain loop bit for bit
        e = C * np.array([math.exp(t) for t in q])
    else:
        e = C * np.exp(q)
    return e, dx, dy, a, b, c


def potential_value(p: Potential, theta):
    theta = _check(p, theta)
    if p.kind == "muller_brown":
        e, *_ = _mb_terms(p.mb, theta)
        return p.mb.scale * e.sum(axis=-1)
    if p.kind == "star":
        x, y = theta[..., 0], theta[..., 1]
        return x * x + 1000.0 * x * x * y * y + y * y
    if p.kind == "quadratic":
        d = theta - p.center_array
        return 0.5 * p.curvature * (d * d).sum(axis=-1)
    w = theta * theta - 1.0
    return p.height * (w * w).sum(axis=-1)


def potential_grad(p: Potential, theta) -> np.ndarray:
    theta = _check(p, theta)
    if p.kind == "muller_brown":
        e, dx, dy, a, b, c = _mb_terms(p.mb, theta)
        gx = (e * (2.0 * a * dx + b * dy)).sum(axis=-1)
        gy = (e * (b * dx + 2.0 * c * dy)).sum(axis=-1)
        return p.mb.scale * np.stack([gx, gy], axis=-1)
    if p.kind == "star":
        x, y = theta[..., 0], theta[..., 1]
        return np.stack([2.0 * x + 2000.0 * x * y * y, 2000.0 * x * x * y + 2.0 * y], axis=-1)
    if p.kind == "quadratic":
        return p.curvature * (theta - p.center_array)
    return 4.0 * p.height * theta * (theta * theta - 1.0)


def finite_diff_check(p: Potential, theta, eps: float = 1e-6, grad_fn=None) -> float:
    """Largest central-difference discrepancy, scaled by ``1 + |grad_i|``.

    ``grad_fn`` overrides the analytic gradient (used for fault injection).
    """
    if not (0 < eps <= 1e-3):
        raise ValueError("eps must lie in (0, 1e-3]")
    theta = _check(p, theta).astype(np.float64)
    grad = potential_grad(p, theta) if grad_fn is None else np.asarray(grad_fn(theta))
    steps = np.eye(p.dim) * eps
    fd = (potential_value(p, theta + steps) - potential_value(p, theta - steps)) / (2 * eps)
    return float(np.max(np.abs(grad - fd) / (1.0 + np.abs(grad))))


@dataclass
class Grid:
    """Cell weights on a rectangle; ``weights[i, j]`` is the cell x_edges[i:i+2] × y_edges[j:j+2]."""

    weights: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray
    overflow: float = 0.0

    @property
    def x_centers(self) -> np.ndarray:
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    @property
    def y_centers(self) -> np.ndarray:
        return 0.5 * (self.y_edges[:-1] + self.y_edges[1:])


def grid_boltzmann_density(p: Potential, beta: float, bounds, resolution: int,
                           subdivisions: int = 1) -> Grid:
    """Midpoint-rule Boltzmann weights exp(-βU) on a ``resolution``² grid.

    ``bounds`` is ``((xmin, xmax), (ymin, ymax))``. With ``subdivisions > 1``
    each cell is integrated with the midpoint rule on a finer sub-grid, which
    is needed when wells are narrower than a cell (the star potential's arms).
    """
    if p.dim != 2:
        raise ValueError("grid densities are two-dimensional")
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    (x0, x1), (y0, y1) = bounds
    n = resolution * subdivisions
    xe = np.linspace(x0, x1, n + 1)
    ye = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(0.5 * (xe[:-1] + xe[1:]), 0.5 * (ye[:-1] + ye[1:]), indexing="ij")
    with np.errstate(over="ignore", invalid="ignore"):
        U = potential_value(p, np.stack([X, Y], axis=-1))
    if not np.isfinite(U).all():
        raise FloatingPointError("non-finite potential on grid")
    logw = -beta * U
    w = np.exp(logw - logw.max())
    if subdivisions > 1:
        w = w.reshape(resolution, subdivisions, resolution, subdivisions).sum(axis=(1, 3))
    return Grid(w / w.sum(), np.linspace(x0, x1, resolution + 1), np.linspace(y0, y1, resolution + 1))


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        d = points - np.asarray(self.center)
        return (d * d).sum(axis=-1) < self.radius ** 2


def descend(p: Potential, start, step: float = 1e-3, tol: float = 1e-10,
            max_iter: int = 1_000_000) -> np.ndarray:
    """Plain gradient descent to a nearby local minimum."""
    theta = np.asarray(start, dtype=np.float64).copy()
    for _ in range(max_iter):
        g = potential_grad(p, theta)
        if np.linalg.norm(g) < tol:
            break
        theta -= step * g
    return theta


MB_PROBE_STARTS = ((-0.5, 1.5), (0.0, 0.5), (0.6, 0.0))


@lru_cache(maxsize=8)
def _minima(p: Potential) -> tuple:
    return tuple(tuple(descend(p, s, step=5e-3)) for s in MB_PROBE_STARTS)


def muller_brown_minima(p: Optional[Potential] = None) -> np.ndarray:
    """The three local minima reached by descent from fixed probe points."""
    return np.array(_minima(p or muller_brown()))


def muller_brown_wells(p: Optional[Potential] = None, radius: float = 0.35) -> list[Ball]:
    return [Ball(tuple(float(c) for c in m), radius) for m in muller_brown_minima(p)]
