"""Experiment drivers behind the command-line interface."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import bnn, diagnostics as dg, io
from .core import ConfigError, ControllerConfig, SamplerConfig, new_rng
from .oracles import EpochOracle, ExactOracle, NoisyOracle
from .potentials import (finite_diff_check, grid_boltzmann_density, make_potential,
                         muller_brown_wells, potential_grad)
from .samplers import run_chain

# Stream ids: each sampler draws from its own stream of the root seed, so the
# comparison is fair but uncorrelated. Gradient noise and minibatch order use
# separate streams again.
STREAM = {"sgld": 0, "sasgld": 1}
NOISE_STREAM_OFFSET = 100
INIT_STREAM = 200


@dataclass
class ExperimentSummary:
    experiment: str
    sampler: str
    seed: int
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def diverged(self) -> bool:
        return self.metrics.get("diverged_at") is not None


def write_summaries(path, summaries) -> None:
    keys = []
    for s in summaries:
        keys += [k for k in s.metrics if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "sampler", "seed"] + keys)
        for s in summaries:
            w.writerow([s.experiment, s.sampler, s.seed] + [_cell(s.metrics.get(k)) for k in keys])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return v


def samplers_for(choice: str):
    return ("sgld", "sasgld") if choice == "both" else (choice,)


# toy potentials -------------------------------------------------------------

def toy_potential(t: io.TargetSpec):
    if t.kind in ("muller_brown", "star"):
        return make_potential(t.kind)
    if t.kind == "quadratic":
        return make_potential("quadratic", t.dim, curvature=t.curvature)
    return make_potential("double_well", t.dim, height=t.height)


def _toy_oracle(p, t: io.TargetSpec, seed: int, sampler: str):
    if t.noise_sigma > 0:
        return NoisyOracle(p, t.noise_sigma, new_rng(seed, NOISE_STREAM_OFFSET + STREAM[sampler]))
    return ExactOracle(p)


def toy_chain(exp: io.ExperimentConfig, sampler: str):
    cfg, ctl, t, out = exp
    p = toy_potential(t)
    if sampler == "sgld" and out.sgld_h is not None:
        cfg = SamplerConfig(out.sgld_h, cfg.beta, cfg.seed, cfg.n_steps, cfg.thinning, cfg.burn_in)
    theta0 = np.zeros(p.dim) if t.theta0 is None else np.array(t.theta0)
    res = run_chain(sampler, _toy_oracle(p, t, cfg.seed, sampler), cfg,
                    ctl if sampler == "sasgld" else None, new_rng(cfg.seed, STREAM[sampler]),
                    theta0, store_theta=True, ensemble=False)
    return p, res


def run_toy(exp: io.ExperimentConfig, out_dir: Path) -> list:
    """Run each requested sampler, write traces, grids and a summary per sampler."""
    cfg, ctl, t, out = exp
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = None
    if t.dim == 2 and t.bounds is not None:
        truth = grid_boltzmann_density(toy_potential(t), cfg.beta, t.bounds, t.resolution,
                                       t.truth_subdivisions)
        np.savetxt(out_dir / "grid_truth.csv", truth.weights, delimiter=",", fmt="%.17g")
    wells = muller_brown_wells() if t.kind == "muller_brown" else None
    summaries = []
    for sampler in samplers_for(out.sampler):
        t0 = time.perf_counter()
        p, res = toy_chain(exp, sampler)
        m = {"n_records": res.n_records, "diverged_at": res.diverged_at,
             "mean_dt": float(res.dt.mean()) if res.n_records else float("nan"),
             "min_dt": float(res.dt.min()) if res.n_records else float("nan"),
             "max_dt": float(res.dt.max()) if res.n_records else float("nan"),
             "total_physical_time": res.total_physical_time}
        if res.n_records:
            io.write_trace(res, out_dir / f"trace_{sampler}.csv")
        post = res.post_burn_in()
        if post.n_records:
            sq = lambda th: (th * th).sum(axis=1)
            with np.errstate(over="ignore"):
                m["second_moment"] = dg.weighted_average(post, sq, burn_in=False).value
                m["second_moment_unweighted"] = dg.unweighted_average(post, sq, burn_in=False)
            if truth is not None:
                emp = dg.empirical_grid(post, t.bounds, t.resolution, burn_in=False)
                np.savetxt(out_dir / f"grid_{sampler}.csv", emp.weights, delimiter=",", fmt="%.17g")
                m["overflow"] = emp.overflow
                m["tv"] = dg.tv_distance(emp, truth) if emp.weights.sum() > 0 else 1.0
            if wells is not None:
                occ = dg.well_occupancy(post, wells, burn_in=False)
                ref = dg.ball_masses(truth, wells) if truth is not None else None
                for i, f in enumerate(occ.fractions):
                    m[f"occupancy_{i}"] = float(f)
                    if ref is not None:
                        m[f"boltzmann_mass_{i}"] = float(ref[i])
                m["transit"] = occ.transit
                m["transitions"] = count_transitions(post.theta, wells)
        summaries.append(ExperimentSummary(f"toy-{t.kind}", sampler, cfg.seed, m,
                                           time.perf_counter() - t0))
    tvs = {s.sampler: s.metrics.get("tv") for s in summaries}
    for s in summaries:
        for k, v in tvs.items():
            if v is not None:
                s.metrics[f"tv_{k}"] = v
    write_summaries(out_dir / "summary.csv", summaries)
    return summaries


def count_transitions(theta, wells) -> int:
    """Number of times the chain enters a well other than the last one visited."""
    label = np.full(theta.shape[0], -1)
    for i, w in enumerate(wells):
        label[w.contains(theta)] = i
    seen = label[label >= 0]
    return int(np.count_nonzero(seen[1:] != seen[:-1])) if seen.size else 0


# bias sweep -------------------------------------------------------------------

def run_sweep(exp: io.ExperimentConfig, out_dir: Path, h_list=None) -> list:
    cfg, ctl, t, out = exp
    if t.kind != "quadratic":
        raise ValueError("the stepsize sweep needs an analytic target (quadratic)")
    hs = tuple(h_list or out.h_list or (cfg.h,))
    p = toy_potential(t)
    f = lambda th: th[:, 0] ** 2
    truth = 1.0 / (cfg.beta * t.curvature)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for sampler in samplers_for(out.sampler):
        t0 = time.perf_counter()
        sw = dg.bias_sweep(p, sampler, hs, cfg.n_steps, f, truth,
                           ctl=ctl if sampler == "sasgld" else None, beta=cfg.beta, seed=cfg.seed,
                           n_chains=out.n_chains, n_batches=out.n_batches,
                           burn_in_fraction=(cfg.burn_in_steps / cfg.n_steps) if cfg.burn_in is not None else 0.1)
        rows = []
        for i, h in enumerate(sw.h):
            row = {"sampler": sampler, "h": h, "estimate": sw.estimate[i], "error": sw.error[i],
                   "stderr": sw.stderr[i], "mean_dt": sw.mean_dt[i],
                   "min_dt": sw.min_dt[i], "max_dt": sw.max_dt[i]}
            if sampler == "sgld":
                oracle = dg.sgld_quadratic_second_moment(h, t.curvature, cfg.beta)
                row["oracle"] = oracle
                row["z_vs_oracle"] = (sw.estimate[i] - oracle) / sw.stderr[i]
            rows.append(row)
        _write_rows(out_dir / f"sweep_{sampler}.csv", rows)
        m = {"slope": sw.slope, "n_h": len(hs)}
        for r in rows:
            m[f"error_h{r['h']:g}"] = r["error"]
        summaries.append(ExperimentSummary("sweep-h", sampler, cfg.seed, m, time.perf_counter() - t0))
    write_summaries(out_dir / "summary.csv", summaries)
    return summaries


def _write_rows(path, rows):
    keys = list(rows[0]) if rows else []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in keys])


# BNN ----------------------------------------------------------------------------

def to_raw_units(dtau: float, ctl: ControllerConfig, n_data: int):
    """Map per-example stepsize units onto the summed-loss potential.

    Per-example units integrate dθ = −∇(U/N) dt + √(2/N) dW. Rescaling time by
    1/N turns this into the Langevin equation for U itself, so Δτ → Δτ/N,
    α → αN, and the monitor (which sees N² larger gradients) needs s → s/N and
    δ → δN²; ψ and every step are unchanged.
    """
    n = float(n_data)
    return dtau / n, ControllerConfig(ctl.alpha * n, ctl.r, ctl.s / n, ctl.m, ctl.M, ctl.delta * n * n)


@dataclass
class BnnData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def load_bnn_data(t: io.TargetSpec) -> BnnData:
    paths = [t.train_images, t.train_labels, t.test_images, t.test_labels]
    if any(p is None for p in paths):
        raise ConfigError(["bnn configs need train_images, train_labels, test_images and test_labels"])
    tr = io.load_image_set(t.train_images, t.train_labels)
    te = io.load_image_set(t.test_images, t.test_labels)
    return BnnData(tr.scaled(), tr.labels.astype(np.int64), te.scaled(), te.labels.astype(np.int64))


def prior_from(t: io.TargetSpec) -> bnn.PriorSpec:
    if t.prior == "gaussian":
        return bnn.gaussian_prior(t.prior_scale or 1.0)
    return bnn.horseshoe_prior(t.prior_scale or 0.1)


@dataclass
class BnnRun:
    sampler: str
    seed: int
    metrics: dict
    curve: list
    ensemble: list
    diverged_at: Optional[int]
    mean_dt: float
    # base step and (min, max) Δt in the units the chain ran in
    raw_h: float = float("nan")
    raw_dt_range: tuple = (float("nan"), float("nan"))


def run_bnn_chain(sampler: str, data: BnnData, spec: bnn.MlpSpec, prior: bnn.PriorSpec, *,
                  dtau: float, ctl: ControllerConfig, seed: int, batch_size: int = 100,
                  epochs: int = 20, burn_in_epochs: Optional[int] = None, thinning: int = 10,
                  step_units: str = "per_example", ece_bins: int = 15,
                  on_epoch: Optional[Callable] = None) -> BnnRun:
    """One chain over the posterior of an MLP, evaluated on the test set.

    Snapshots are taken every ``thinning`` batches from the start; those after
    burn-in form the ensemble. The curve has one row per epoch with the test
    log-likelihood of the latest snapshot and of the post-burn-in ensemble so
    far (empty until burn-in ends).
    """
    target = bnn.make_posterior_target(spec, prior, data.x_train, data.y_train, batch_size)
    n = target.n_data
    oracle = EpochOracle(target, new_rng(seed, NOISE_STREAM_OFFSET + STREAM[sampler]))
    bpe = oracle.batches_per_epoch
    burn = (epochs // 2 if burn_in_epochs is None else burn_in_epochs) * bpe
    h, ctl_raw = dtau, ctl
    if step_units == "per_example":
        h = dtau / n
        ctl_raw = to_raw_units(dtau, ctl, n)[1] if ctl is not None else None
    cfg = SamplerConfig(h=h, seed=seed, n_steps=epochs * bpe, thinning=thinning, burn_in=0)
    theta0 = bnn.init_params(spec, new_rng(seed, INIT_STREAM))
    res = run_chain(sampler, oracle, cfg, ctl_raw if sampler == "sasgld" else None,
                    new_rng(seed, STREAM[sampler]), theta0, store_theta=False, ensemble=True)

    scale = n if step_units == "per_example" else 1.0
    acc_probs, n_ens, curve = None, 0, []
    members = res.ensemble
    ensemble = [mb for mb in members if mb.step > burn]
    j = 0
    last_ll = float("nan")
    for e in range(1, epochs + 1):
        end = e * bpe
        while j < len(members) and members[j].step <= end:
            probs = bnn.predict_proba(spec, members[j].theta, data.x_test)
            last_ll = dg.mean_log_likelihood(probs, data.y_test) if np.isfinite(probs).all() else -math.inf
            if members[j].step > burn:
                acc_probs = probs if acc_probs is None else acc_probs + probs
                n_ens += 1
            j += 1
        row = {"epoch": e, "sample_loglik": last_ll,
               "ensemble_loglik": dg.mean_log_likelihood(acc_probs / n_ens, data.y_test) if n_ens else float("nan"),
               "n_members": n_ens}
        steps = res.steps <= end
        row["mean_dt"] = float(res.dt[steps].mean() * scale) if steps.any() else float("nan")
        curve.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if res.diverged_at is not None and res.diverged_at <= end:
            break

    m = {"diverged_at": res.diverged_at, "n_steps": res.n_records, "n_members": n_ens,
         "mean_dt": float(res.dt.mean() * scale) if res.n_records else float("nan"),
         "min_dt": float(res.dt.min() * scale) if res.n_records else float("nan"),
         "max_dt": float(res.dt.max() * scale) if res.n_records else float("nan")}
    if n_ens and np.isfinite(acc_probs).all():
        probs = acc_probs / n_ens
        cm = dg.classification_metrics(probs, data.y_test, ece_bins)
        m.update(nll=cm.nll, accuracy=cm.accuracy, ece=cm.ece)
        wprobs = dg.posterior_predictive(ensemble, data.x_test, spec, weighted=True)
        m["nll_dt_weighted"] = dg.classification_metrics(wprobs, data.y_test, ece_bins).nll
    else:
        m.update(nll=float("nan"), accuracy=float("nan"), ece=float("nan"))
    m["final_sample_loglik"] = last_ll
    rng_dt = (float(res.dt.min()), float(res.dt.max())) if res.n_records else (float("nan"),) * 2
    return BnnRun(sampler, seed, m, curve, ensemble, res.diverged_at, m["mean_dt"], h, rng_dt)


def run_bnn(exp: io.ExperimentConfig, out_dir: Path, save_ensemble: bool = False) -> list:
    cfg, ctl, t, out = exp
    data = load_bnn_data(t)
    spec = bnn.MlpSpec((data.x_train.shape[1],) + t.hidden + (10,))
    prior = prior_from(t)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = out.seeds or (cfg.seed,)
    summaries, curves = [], []
    for seed in seeds:
        for sampler in samplers_for(out.sampler):
            t0 = time.perf_counter()
            dtau = out.sgld_h if (sampler == "sgld" and out.sgld_h is not None) else cfg.h
            run = run_bnn_chain(sampler, data, spec, prior, dtau=dtau, ctl=ctl, seed=seed,
                                batch_size=t.batch_size, epochs=t.epochs,
                                burn_in_epochs=t.burn_in_epochs, thinning=cfg.thinning,
                                step_units=t.step_units, ece_bins=t.ece_bins)
            curves += [dict(sampler=sampler, seed=seed, **row) for row in run.curve]
            if save_ensemble:
                d = out_dir / f"ensemble_{sampler}_seed{seed}"
                d.mkdir(exist_ok=True)
                for mb in run.ensemble:
                    io.write_snapshot(d / f"step{mb.step:08d}.bin", mb)
            m = dict(run.metrics, h=dtau, raw_h=run.raw_h, raw_min_dt=run.raw_dt_range[0],
                     raw_max_dt=run.raw_dt_range[1])
            summaries.append(ExperimentSummary("bnn", sampler, seed, m, time.perf_counter() - t0))
    write_summaries(out_dir / "metrics.csv", summaries)
    _write_rows(out_dir / "logprob_curve.csv", curves)
    return summaries


# gradient checks -------------------------------------------------------------------

@dataclass
class GradCheck:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def run_gradcheck(seed: int = 0, n_points: int = 1000, perturb: float = 0.0) -> list:
    """Finite-difference checks of every analytic gradient.

    ``perturb`` adds a constant to each checked gradient; it exists to confirm
    that the check can fail.
    """
    rng = new_rng(seed, 0)
    checks = []
    boxes = {"muller_brown": ((-1.5, 1.5), (-0.5, 2.0)), "star": ((-1.0, 1.0), (-1.0, 1.0))}
    targets = [make_potential("muller_brown"), make_potential("star"),
               make_potential("quadratic", 3, curvature=2.0), make_potential("double_well", 3)]
    for p in targets:
        if p.kind in boxes:
            (x0, x1), (y0, y1) = boxes[p.kind]
            pts = np.column_stack([rng.uniform(x0, x1, n_points), rng.uniform(y0, y1, n_points)])
        else:
            pts = rng.uniform(-2, 2, (n_points, p.dim))
        gfn = lambda th, p=p: potential_grad(p, th) + perturb
        err = max(finite_diff_check(p, th, 1e-6, gfn) for th in pts)
        checks.append(GradCheck(f"potential:{p.kind}", err, 1e-4))

    spec = bnn.MlpSpec((6, 4, 3))
    worst = 0.0
    for s in range(5):
        r = new_rng(seed, 10 + s)
        theta = r.normal(0, 0.7, spec.n_params)
        x = r.uniform(0, 1, (8, 6))
        y = r.integers(0, 3, 8)
        _, g = bnn.mlp_backward(spec, theta, x, y)
        g = g + perturb
        for i in r.choice(spec.n_params, 20, replace=False):
            e = np.zeros(spec.n_params)
            e[i] = 1e-5
            fd = (bnn.mlp_backward(spec, theta + e, x, y)[0] - bnn.mlp_backward(spec, theta - e, x, y)[0]) / 2e-5
            worst = max(worst, abs(g[i] - fd) / (1 + abs(g[i])))
    checks.append(GradCheck("mlp:6-4-3", worst, 1e-4))

    r = new_rng(seed, 20)
    theta = r.uniform(0.05, 1.0, 20) * r.choice([-1.0, 1.0], 20)
    prior = bnn.horseshoe_prior(0.1)
    _, g = bnn.log_prior_and_grad(prior, theta)
    g = g + perturb
    worst = 0.0
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = 1e-6
        fd = (bnn.log_prior_and_grad(prior, theta + e)[0] - bnn.log_prior_and_grad(prior, theta - e)[0]) / 2e-6
        worst = max(worst, abs(g[i] - fd) / (1 + abs(g[i])))
    checks.append(GradCheck("prior:horseshoe", worst, 1e-4))
    return checks
