"""Command-line entry point: ``sasgld {sample-toy,sample-bnn,sweep-h,gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 a chain diverged
(and nothing else failed), 3 a check failed.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import experiments as ex
from .core import ConfigError
from .io import IdxFormatError, parse_experiment_config

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="flat YAML experiment config")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, default=d, help="root seed (overrides the config)")
    p.add_argument("--sampler", choices=("sgld", "sasgld", "both"), default=d)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sasgld", description="SGLD and SA-SGLD sampling experiments")
    _add_common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample-toy", help="sample a 2-D or quadratic/double-well potential")
    _add_common(p, suppress=True)
    p.add_argument("--n-steps", type=int, help="override n_steps")

    p = sub.add_parser("sample-bnn", help="sample an MLP posterior on IDX image data")
    _add_common(p, suppress=True)
    p.add_argument("--epochs", type=int, help="override epochs")
    p.add_argument("--save-ensemble", action="store_true", help="write ensemble snapshots")

    p = sub.add_parser("sweep-h", help="bias of the second moment against the base step")
    _add_common(p, suppress=True)
    p.add_argument("--h", dest="h_list", help="comma-separated stepsizes (overrides h_list)")
    p.add_argument("--n-steps", type=int, help="override n_steps")

    p = sub.add_parser("gradcheck", help="finite-difference checks of all analytic gradients")
    _add_common(p, suppress=True)
    p.add_argument("--points", type=int, default=1000, help="random points per potential")
    p.add_argument("--perturb-gradient", type=float, default=0.0, help=argparse.SUPPRESS)
    return ap


def _load(args):
    if not args.config:
        raise UsageError(f"{args.command} needs --config PATH")
    exp = parse_experiment_config(args.config)
    exp = exp.with_overrides(seed=args.seed, out_dir=args.out, sampler=args.sampler)
    return exp


def _print_summaries(summaries, keys):
    for s in summaries:
        parts = [f"{s.experiment} sampler={s.sampler} seed={s.seed}"]
        for k in keys:
            if k in s.metrics and s.metrics[k] is not None:
                v = s.metrics[k]
                parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
        parts.append(f"wall={s.wall_time:.1f}s")
        print(" ".join(parts))


def _status(summaries) -> int:
    return EXIT_DIVERGED if any(s.diverged for s in summaries) else EXIT_OK


def cmd_sample_toy(args) -> int:
    exp = _load(args)
    if exp.target.kind == "bnn":
        raise UsageError("sample-toy needs a potential target, not bnn")
    if args.n_steps is not None:
        from dataclasses import replace
        exp = replace(exp, sampler_cfg=replace(exp.sampler_cfg, n_steps=args.n_steps,
                                               burn_in=None if exp.sampler_cfg.burn_in is None
                                               else min(exp.sampler_cfg.burn_in, args.n_steps - 1)))
    summaries = ex.run_toy(exp, Path(exp.output.out_dir))
    _print_summaries(summaries, ["tv", "mean_dt", "second_moment", "occupancy_0", "occupancy_1",
                                 "occupancy_2", "transit", "diverged_at"])
    return _status(summaries)


def cmd_sample_bnn(args) -> int:
    exp = _load(args)
    if exp.target.kind != "bnn":
        raise UsageError("sample-bnn needs target: bnn")
    if args.epochs is not None:
        from dataclasses import replace
        exp = replace(exp, target=replace(exp.target, epochs=args.epochs, burn_in_epochs=None))
    summaries = ex.run_bnn(exp, Path(exp.output.out_dir), save_ensemble=args.save_ensemble)
    _print_summaries(summaries, ["nll", "accuracy", "ece", "mean_dt", "diverged_at"])
    return _status(summaries)


def cmd_sweep_h(args) -> int:
    exp = _load(args)
    if exp.target.kind != "quadratic":
        raise UsageError("sweep-h needs the quadratic target (its moments are known exactly)")
    hs = None
    if args.h_list:
        try:
            hs = tuple(float(h) for h in args.h_list.split(","))
        except ValueError:
            raise UsageError(f"--h expects comma-separated numbers, got {args.h_list!r}")
        if not all(h > 0 and math.isfinite(h) for h in hs):
            raise UsageError("stepsizes must be positive")
    if args.n_steps is not None:
        from dataclasses import replace
        exp = replace(exp, sampler_cfg=replace(exp.sampler_cfg, n_steps=args.n_steps, burn_in=None))
    summaries = ex.run_sweep(exp, Path(exp.output.out_dir), hs)
    _print_summaries(summaries, ["slope"] + [k for k in summaries[0].metrics if k.startswith("error_")])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    checks = ex.run_gradcheck(seed=args.seed or 0, n_points=args.points, perturb=args.perturb_gradient)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} max_rel_error={c.max_rel_error:.3e} tol={c.tolerance:g}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


COMMANDS = {"sample-toy": cmd_sample_toy, "sample-bnn": cmd_sample_bnn,
            "sweep-h": cmd_sweep_h, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, FileNotFoundError, IdxFormatError) as exc:
        print(f"sasgld {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
