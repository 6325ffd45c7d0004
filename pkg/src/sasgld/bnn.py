"""Fully connected ReLU classifier with hand-written backprop, plus priors.

Parameters live in one flat vector, laid out layer by layer as the weight
matrix (fan_in × fan_out, row-major) followed by the bias.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracles import PosteriorTarget

HORSESHOE_FLOOR = 1e-12


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least an input and an output layer of positive size")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    def unflatten(self, theta):
        """List of (W, b) views into ``theta``."""
        theta = np.asarray(theta)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        layers, pos = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = theta[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            layers.append((W, theta[pos:pos + fan_out]))
            pos += fan_out
        return layers


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(±1/√fan_in) weights and biases."""
    parts = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, fan_in * fan_out))
        parts.append(rng.uniform(-bound, bound, fan_out))
    return np.concatenate(parts)


def _check_inputs(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"inputs have {x.shape[1]} features, network expects {spec.layer_sizes[0]}")
    return x


def mlp_forward(spec: MlpSpec, theta, x) -> np.ndarray:
    x = _check_inputs(spec, x)
    layers = spec.unflatten(theta)
    h = x
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = layers[-1]
    return h @ W + b


def log_softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _check_labels(spec, labels, n):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != n:
        raise ValueError("one label per input required")
    if labels.size and (labels.min() < 0 or labels.max() >= spec.n_classes):
        raise ValueError(f"label out of range [0, {spec.n_classes})")
    return labels


def mlp_backward(spec: MlpSpec, theta, x, labels):
    """Batch-mean cross-entropy and its gradient with respect to ``theta``."""
    x = _check_inputs(spec, x)
    labels = _check_labels(spec, labels, x.shape[0])
    layers = spec.unflatten(theta)
    n = x.shape[0]
    acts = [x]
    pre = []
    h = x
    for W, b in layers[:-1]:
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    W, b = layers[-1]
    logits = h @ W + b
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    delta = np.exp(logp)
    delta[rows, labels] -= 1.0
    delta /= n
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((acts[i].T @ delta, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W.T) * (pre[i - 1] > 0)
    flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
    return float(loss), flat


@dataclass(frozen=True)
class PriorSpec:
    """``gaussian`` with standard deviation ``scale`` or the ``horseshoe`` surrogate with global scale ``scale``."""

    kind: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "horseshoe"):
            raise ValueError(f"unknown prior {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("prior scale must be positive")


def gaussian_prior(sigma: float = 1.0) -> PriorSpec:
    return PriorSpec("gaussian", sigma)


def horseshoe_prior(tau: float = 0.1) -> PriorSpec:
    return PriorSpec("horseshoe", tau)


def log_prior_and_grad(prior: PriorSpec, theta):
    """log p(θ) up to an additive constant, and its gradient.

    The horseshoe has no closed-form density; the surrogate
    p(θᵢ) ∝ log(1 + 2τ²/θᵢ²) keeps its pole at zero and its θ⁻² tails.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if prior.kind == "gaussian":
        var = prior.scale ** 2
        return float(-0.5 * (theta @ theta) / var), -theta / var
    t2 = 2.0 * prior.scale ** 2
    a = np.abs(theta)
    sign = np.where(theta < 0, -1.0, 1.0)
    a = np.maximum(a, HORSESHOE_FLOOR)
    L = np.log1p(t2 / (a * a))
    logp = float(np.log(L).sum())
    # d/dθ log log(1 + 2τ²/θ²) = -4τ² / (θ (θ² + 2τ²) log(1 + 2τ²/θ²))
    grad = -2.0 * t2 * sign / (a * (a * a + t2) * L)
    return logp, grad


def make_posterior_target(spec: MlpSpec, prior: PriorSpec, images, labels,
                          batch_size: int) -> PosteriorTarget:
    """Posterior over network weights; per-example log-likelihood is −cross-entropy."""
    x = np.asarray(images, dtype=np.float64)
    y = _check_labels(spec, labels, x.shape[0])

    def loglik(theta, idx):
        loss, grad = mlp_backward(spec, theta, x[idx], y[idx])
        return -loss * idx.size, -grad * idx.size

    def log_prior(theta):
        return log_prior_and_grad(prior, theta)

    return PosteriorTarget(x.shape[0], batch_size, loglik, log_prior, spec.n_params)


def predict_proba(spec: MlpSpec, theta, x, chunk: int = 2048) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [softmax(mlp_forward(spec, theta, x[i:i + chunk])) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(out) if out else np.empty((0, spec.n_classes))
