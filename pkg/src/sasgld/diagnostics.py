"""Time-weighted averages, grid densities, bias sweeps and classification metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import ChainRecord, ChainResult, ControllerConfig, SamplerConfig, new_rng
from .potentials import Ball, Grid

Records = Union[ChainResult, Sequence[ChainRecord]]


class WeightedEstimate(NamedTuple):
    value: Union[float, np.ndarray]
    total_weight: float
    n_samples: int


def _columns(records: Records, burn_in: bool = True):
    """(theta, dt) arrays; a ChainResult is cut at its burn-in unless ``burn_in=False``."""
    if isinstance(records, ChainResult):
        res = records.post_burn_in() if burn_in else records
        if res.theta is None:
            raise ValueError("records carry no positions; run the chain with store_theta=True")
        return res.theta, res.dt
    recs = list(records)
    if any(r.theta is None for r in recs):
        raise ValueError("every record needs a position")
    theta = np.array([np.atleast_1d(r.theta) for r in recs], dtype=np.float64)
    return theta.reshape(len(recs), -1), np.array([r.dt for r in recs], dtype=np.float64)


def _apply(f, theta):
    vals = np.asarray(f(theta), dtype=np.float64)
    if vals.shape[:1] != theta.shape[:1]:
        raise ValueError("observable must map an (n, d) array to n values")
    return vals


def weighted_average(records: Records, f: Callable, burn_in: bool = True) -> WeightedEstimate:
    """Σ Δt_k f(θ_k) / Σ Δt_k.

    ``f`` is vectorised: it maps the (n, d) array of positions to n values
    (or an (n, k) array for vector observables).
    """
    theta, dt = _columns(records, burn_in)
    if dt.size == 0:
        raise ValueError("no records to average")
    vals = _apply(f, theta)
    total = float(dt.sum())
    value = np.tensordot(dt, vals, axes=(0, 0)) / total
    return WeightedEstimate(value if np.ndim(value) else float(value), total, int(dt.size))


def unweighted_average(records: Records, f: Callable, burn_in: bool = True):
    theta, dt = _columns(records, burn_in)
    if dt.size == 0:
        raise ValueError("no records to average")
    value = _apply(f, theta).mean(axis=0)
    return value if np.ndim(value) else float(value)


def empirical_grid(records: Records, bounds, resolution: int, burn_in: bool = True) -> Grid:
    """Δt-weighted histogram of 2-D positions, normalised over the cells.

    ``overflow`` is the fraction of total weight that fell outside ``bounds``.
    """
    theta, dt = _columns(records, burn_in)
    if theta.shape[1] != 2:
        raise ValueError("empirical grids need two-dimensional positions")
    (x0, x1), (y0, y1) = bounds
    xe = np.linspace(x0, x1, resolution + 1)
    ye = np.linspace(y0, y1, resolution + 1)
    w, _, _ = np.histogram2d(theta[:, 0], theta[:, 1], bins=(xe, ye), weights=dt)
    total = float(dt.sum())
    inside = float(w.sum())
    if inside > 0:
        w = w / inside
    overflow = 1.0 - inside / total if total > 0 else 0.0
    return Grid(w, xe, ye, max(overflow, 0.0))


def tv_distance(g1, g2) -> float:
    """Total variation ½Σ|g1 − g2| between two normalised grids."""
    a = np.asarray(getattr(g1, "weights", g1), dtype=np.float64)
    b = np.asarray(getattr(g2, "weights", g2), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    for w in (a, b):
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("grid weights must sum to 1")
    return float(min(0.5 * np.abs(a - b).sum(), 1.0))


class Occupancy(NamedTuple):
    fractions: np.ndarray
    transit: float


def _check_disjoint(wells: Sequence[Ball]):
    for i in range(len(wells)):
        for j in range(i + 1, len(wells)):
            gap = np.linalg.norm(np.subtract(wells[i].center, wells[j].center))
            if gap < wells[i].radius + wells[j].radius:
                raise ValueError(f"wells {i} and {j} overlap")


def well_occupancy(records: Records, wells: Sequence[Ball], burn_in: bool = True) -> Occupancy:
    """Δt-weighted fraction of time spent inside each ball; the rest is transit."""
    _check_disjoint(wells)
    theta, dt = _columns(records, burn_in)
    if dt.size == 0:
        raise ValueError("no records")
    total = dt.sum()
    fr = np.array([dt[w.contains(theta)].sum() / total for w in wells])
    return Occupancy(fr, float(max(1.0 - fr.sum(), 0.0)))


def ball_masses(grid: Grid, wells: Sequence[Ball]) -> np.ndarray:
    """Grid-measure mass of each ball, assigning cells by their centres."""
    X, Y = np.meshgrid(grid.x_centers, grid.y_centers, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    return np.array([grid.weights[w.contains(pts)].sum() for w in wells])


def batch_means(records: Records, f: Callable, n_batches: int = 50, burn_in: bool = True):
    """Per-batch sums (Σ Δt f, Σ Δt) over contiguous batches of the chain."""
    theta, dt = _columns(records, burn_in)
    if dt.size < n_batches:
        raise ValueError("fewer records than batches")
    vals = _apply(f, theta)
    edges = np.linspace(0, dt.size, n_batches + 1).astype(int)
    wf = np.add.reduceat(dt * vals, edges[:-1])
    w = np.add.reduceat(dt, edges[:-1])
    return wf, w


def ratio_stderr(wf, w) -> float:
    """Standard error of Σwf/Σw from independent-ish batch ratios."""
    wf, w = np.asarray(wf), np.asarray(w)
    if wf.size < 2:
        return float("nan")
    return float(np.std(wf / w, ddof=1) / np.sqrt(wf.size))


@dataclass
class BiasSweep:
    h: np.ndarray
    estimate: np.ndarray
    error: np.ndarray
    stderr: np.ndarray
    truth: float
    slope: Optional[float]
    mean_dt: np.ndarray
    min_dt: Optional[np.ndarray] = None
    max_dt: Optional[np.ndarray] = None


def loglog_slope(h, err) -> float:
    """Least-squares slope of log|err| against log h."""
    return float(np.polyfit(np.log(np.asarray(h)), np.log(np.abs(np.asarray(err))), 1)[0])


def bias_sweep(potential, sampler: str, h_list, n_steps: int, f: Callable, truth: float, *,
               ctl: Optional[ControllerConfig] = None, beta: float = 1.0, seed: int = 0,
               n_chains: int = 1, burn_in_fraction: float = 0.1, n_batches: int = 50,
               theta0=None, run=None) -> BiasSweep:
    """Long-run weighted averages of ``f`` for each base step in ``h_list``.

    Each h runs ``n_chains`` chains of ``n_steps``; chain j uses stream j of
    ``seed`` at every h, so the sweep shares random numbers across h. The
    reported standard error pools batch means from all chains. A slope is
    fitted only when there are at least two stepsizes.
    """
    from .oracles import ExactOracle
    from .samplers import run_chain
    run = run or run_chain

    hs = np.asarray(list(h_list), dtype=np.float64)
    ests, ses, mdt, lo, hi = [], [], [], [], []
    for h in hs:
        cfg = SamplerConfig(h=float(h), beta=beta, seed=seed, n_steps=n_steps,
                            burn_in=int(burn_in_fraction * n_steps))
        wf_all, w_all = [], []
        lo.append(np.inf)
        hi.append(-np.inf)
        for j in range(n_chains):
            res = run(sampler, ExactOracle(potential), cfg, ctl, new_rng(seed, j), theta0,
                      store_theta=True, ensemble=False)
            if res.diverged_at is not None:
                raise FloatingPointError(f"chain diverged at step {res.diverged_at} (h={h})")
            lo[-1], hi[-1] = min(lo[-1], res.dt.min()), max(hi[-1], res.dt.max())
            wf, w = batch_means(res, f, n_batches)
            wf_all.append(wf)
            w_all.append(w)
        wf, w = np.concatenate(wf_all), np.concatenate(w_all)
        ests.append(wf.sum() / w.sum())
        ses.append(ratio_stderr(wf, w))
        mdt.append(w.sum() / (n_chains * (n_steps - cfg.burn_in_steps)))
    est = np.array(ests)
    err = est - truth
    slope = loglog_slope(hs, err) if hs.size >= 2 else None
    return BiasSweep(hs, est, err, np.array(ses), float(truth), slope, np.array(mdt),
                     np.array(lo), np.array(hi))


def sgld_quadratic_second_moment(h: float, curvature: float = 1.0, beta: float = 1.0) -> float:
    """Exact stationary variance of Euler–Maruyama on U = κθ²/2: 2(h/β)/(1 − (1 − κh)²)."""
    a = 1.0 - curvature * h
    if abs(a) >= 1:
        raise ValueError("stepsize outside the stability region")
    return 2.0 * h / beta / (1.0 - a * a)


# classification ----------------------------------------------------------

@dataclass
class ReliabilityBins:
    n_bins: int
    confidence_sum: np.ndarray
    accuracy_sum: np.ndarray
    count: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    def ece(self) -> float:
        total = self.count.sum()
        if total == 0:
            return 0.0
        nz = self.count > 0
        gap = np.abs(self.confidence_sum[nz] - self.accuracy_sum[nz]) / self.count[nz]
        return float((self.count[nz] / total * gap).sum())


class ClassificationMetrics(NamedTuple):
    nll: float
    accuracy: float
    ece: float


def _check_probs(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if probs.ndim != 2 or probs.shape[0] != labels.size:
        raise ValueError("need one probability row per label")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6) or np.any(probs < 0):
        raise ValueError("probability rows must be non-negative and sum to 1")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("label out of range")
    return probs, labels


def reliability_bins(probs, labels, n_bins: int = 15) -> ReliabilityBins:
    """Equal-width confidence bins (lo, hi]; confidence 0 goes in the first bin."""
    probs, labels = _check_probs(probs, labels)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    b = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    return ReliabilityBins(n_bins,
                           np.bincount(b, conf, n_bins),
                           np.bincount(b, correct, n_bins),
                           np.bincount(b, minlength=n_bins))


def classification_metrics(probs, labels, n_bins: int = 15) -> ClassificationMetrics:
    probs, labels = _check_probs(probs, labels)
    if labels.size == 0:
        raise ValueError("no predictions")
    p_true = probs[np.arange(labels.size), labels]
    nll = float(-np.log(np.maximum(p_true, np.finfo(float).tiny)).mean())
    acc = float((probs.argmax(axis=1) == labels).mean())
    return ClassificationMetrics(nll, acc, reliability_bins(probs, labels, n_bins).ece())


def _member_probs(model, theta, inputs):
    if callable(model):
        return np.asarray(model(theta, inputs), dtype=np.float64)
    from .bnn import predict_proba
    return predict_proba(model, theta, inputs)


def posterior_predictive(ensemble, inputs, model, weighted: bool = False) -> np.ndarray:
    """Mean of member predictive distributions.

    ``model`` is an :class:`~sasgld.bnn.MlpSpec` or a callable
    ``(theta, inputs) -> probabilities``. Members are averaged uniformly
    unless ``weighted``, in which case each counts with its Δt.
    """
    members = list(ensemble)
    if not members:
        raise ValueError("empty ensemble")
    w = np.array([m.dt if weighted else 1.0 for m in members])
    w = w / w.sum()
    out = None
    for wi, m in zip(w, members):
        p = wi * _member_probs(model, m.theta, inputs)
        out = p if out is None else out + p
    return out


def mean_log_likelihood(probs, labels) -> float:
    """Mean log predictive probability of the true labels (−NLL)."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.log(np.maximum(probs[np.arange(labels.size), labels], np.finfo(float).tiny)).mean())
