"""Stochastic gradient estimates of ∇U.

The potential is U(θ) = −log p(D|θ) − log p(θ), so that e^{−U} is
proportional to the posterior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from ._kernels import sum_squares
from .potentials import Potential, potential_grad, potential_value


@dataclass
class GradientEstimate:
    grad: np.ndarray
    batch_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    potential_estimate: float = float("nan")


class GradientOracle(Protocol):
    def __call__(self, theta: np.ndarray) -> GradientEstimate: ...


def exact_gradient(p: Potential, theta) -> GradientEstimate:
    theta = np.asarray(theta, dtype=np.float64)
    return GradientEstimate(potential_grad(p, theta), potential_estimate=float(potential_value(p, theta)))


def noisy_gradient(p: Potential, theta, sigma: float, rng: np.random.Generator) -> GradientEstimate:
    """Exact gradient plus unbiased Gaussian noise with E‖G − ∇U‖² = σ²(1 + ‖θ‖²)."""
    if sigma < 0:
        raise ValueError("noise scale must be non-negative")
    est = exact_gradient(p, theta)
    if sigma == 0:
        return est
    theta = np.asarray(theta, dtype=np.float64)
    z = rng.standard_normal(p.dim)
    scale = sigma * np.sqrt(1.0 + sum_squares(theta)) / np.sqrt(p.dim)
    est.grad = est.grad + scale * z
    return est


class ExactOracle:
    def __init__(self, potential: Potential):
        self.potential = potential

    @property
    def dim(self) -> int:
        return self.potential.dim

    def __call__(self, theta):
        return exact_gradient(self.potential, theta)


class NoisyOracle:
    """Synthetic-noise oracle; owns its random stream."""

    def __init__(self, potential: Potential, sigma: float, rng: np.random.Generator):
        self.potential = potential
        self.sigma = float(sigma)
        self.rng = rng

    @property
    def dim(self) -> int:
        return self.potential.dim

    def __call__(self, theta):
        return noisy_gradient(self.potential, theta, self.sigma, self.rng)


# Per-example log-likelihood terms: fn(theta, idx) -> (sum of log p(d_i|θ) over idx, its gradient).
LikelihoodFn = Callable[[np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]
PriorFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class PosteriorTarget:
    """A dataset posterior seen through minibatches.

    ``loglik(theta, idx)`` returns the summed log-likelihood of the examples
    ``idx`` and its gradient; ``log_prior(theta)`` returns log p(θ) and its
    gradient.
    """

    n_data: int
    batch_size: int
    loglik: LikelihoodFn
    log_prior: PriorFn
    dim: int

    def __post_init__(self):
        if self.n_data < 1:
            raise ValueError("empty dataset")
        if not (1 <= self.batch_size <= self.n_data):
            raise ValueError(f"batch size must lie in [1, {self.n_data}], got {self.batch_size}")

    def estimate(self, theta, idx) -> GradientEstimate:
        """Gradient estimate for an explicit batch of indices."""
        theta = np.asarray(theta, dtype=np.float64)
        idx = np.asarray(idx, dtype=np.int64)
        ll, gll = self.loglik(theta, idx)
        lp, glp = self.log_prior(theta)
        scale = self.n_data / idx.size
        return GradientEstimate(-scale * gll - glp, idx, -scale * ll - lp)

    def full(self, theta) -> GradientEstimate:
        return self.estimate(theta, np.arange(self.n_data))


def minibatch_gradient(target: PosteriorTarget, theta, rng: np.random.Generator) -> GradientEstimate:
    """Uniform batch of ``target.batch_size`` indices drawn without replacement."""
    if target.batch_size == target.n_data:
        idx = np.arange(target.n_data)
    else:
        idx = np.sort(rng.choice(target.n_data, size=target.batch_size, replace=False))
    return target.estimate(theta, idx)


class MinibatchOracle:
    def __init__(self, target: PosteriorTarget, rng: np.random.Generator):
        self.target = target
        self.rng = rng

    @property
    def dim(self) -> int:
        return self.target.dim

    def __call__(self, theta):
        return minibatch_gradient(self.target, theta, self.rng)


class EpochOracle:
    """Shuffle once per epoch and walk contiguous batches of the permutation.

    A trailing partial batch is dropped, so every step uses exactly
    ``batch_size`` examples.
    """

    def __init__(self, target: PosteriorTarget, rng: np.random.Generator):
        self.target = target
        self.rng = rng
        self.batches_per_epoch = target.n_data // target.batch_size
        self._perm: Optional[np.ndarray] = None
        self._pos = 0

    @property
    def dim(self) -> int:
        return self.target.dim

    def __call__(self, theta):
        if self._perm is None or self._pos >= self.batches_per_epoch:
            self._perm = self.rng.permutation(self.target.n_data)
            self._pos = 0
        b = self.target.batch_size
        idx = self._perm[self._pos * b:(self._pos + 1) * b]
        self._pos += 1
        return self.target.estimate(theta, idx)


def gaussian_toy_target(data, batch_size: int, noise_var: float = 1.0,
                        prior_var: float = 1.0) -> PosteriorTarget:
    """Conjugate model d_i ~ N(θ, noise_var·I), θ ~ N(0, prior_var·I).

    Data of shape (N,) or (N, d); used as a closed-form check of the
    minibatch contract.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    dim = data.shape[1]

    def loglik(theta, idx):
        r = data[idx] - theta
        ll = -0.5 * (r * r).sum() / noise_var - 0.5 * idx.size * dim * np.log(2 * np.pi * noise_var)
        return ll, r.sum(axis=0) / noise_var

    def log_prior(theta):
        return (-0.5 * theta @ theta / prior_var - 0.5 * dim * np.log(2 * np.pi * prior_var),
                -theta / prior_var)

    return PosteriorTarget(len(data), batch_size, loglik, log_prior, dim)
