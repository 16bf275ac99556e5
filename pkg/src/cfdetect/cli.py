"""Command-line entry point: ``cfdetect {simulate,detect,sweep,selftest}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .covbase import CovKnowledge
from .evalharness import (
    ALGORITHMS,
    ExperimentSpec,
    SweepRow,
    confidence_halfwidth,
    equal_error_sweep,
    generate_trial,
    roc_curve,
    run_detector,
    run_trials,
    sweep_specs,
    write_roc_csv,
    write_summary_csv,
)
from .selftest import run_selftest


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--rel-tol", type=float, help="solver stopping tolerance")
    p.add_argument("--max-iters", type=int, help="solver iteration limit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfdetect",
                                     description="Cell-free grant-free activity detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one simulated dataset directory")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_overrides(p)

    p = sub.add_parser("detect", help="score every user of a dataset directory")
    p.add_argument("--algo", required=True, choices=ALGORITHMS)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_overrides(p)

    p = sub.add_parser("sweep", help="Monte Carlo ROC and equal-error summary")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--algo", choices=ALGORITHMS, help="detector (overrides the config)")
    p.add_argument("--trials", type=int, help="trial count (overrides the config)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--workers", type=int, help="parallel worker processes")
    _add_overrides(p)

    sub.add_parser("selftest", help="run the built-in oracle checks")
    return parser


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
        changes["system"] = spec.system.replace(seed=args.seed)
    if args.rel_tol is not None:
        changes["rel_tol"] = args.rel_tol
    if args.max_iters is not None:
        changes["max_iters"] = args.max_iters
    if getattr(args, "algo", None) is not None:
        changes["algorithm"] = args.algo
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    return spec.replace(**changes) if changes else spec


def cmd_simulate(args) -> int:
    spec, _ = io.load_config(args.config)
    spec = _apply_overrides(spec, args)
    trial = generate_trial(spec.system, spec.perturbation, spec.master_seed, 0)
    pert = spec.perturbation
    perturbed = pert.pathloss_error_db > 0 or pert.noise_error_std_db > 0
    io.write_dataset(
        args.out,
        trial.config.replace(seed=spec.master_seed),
        trial.pilots,
        trial.signals,
        trial.channels.activity,
        trial.scenario.effective_beta,
        assumed_beta=trial.knowledge.effective_beta if perturbed else None,
        assumed_noise_power=trial.knowledge.noise_power if perturbed else None,
    )
    print(f"wrote dataset to {args.out}")
    return 0


def cmd_detect(args) -> int:
    data = io.read_dataset(args.data)
    base = ExperimentSpec(algorithm=args.algo)
    spec = _apply_overrides(base, args)
    knowledge = None
    if args.algo == "cov":
        beta = data.beta if data.assumed_beta is None else data.assumed_beta
        noise = data.noise_power if data.assumed_noise_power is None else data.assumed_noise_power
        knowledge = CovKnowledge(beta, noise, data.pilots)
    seed = data.config.seed if args.seed is None else args.seed
    scores, trace = run_detector(args.algo, data.signals, data.pilots, knowledge,
                                 spec.solver_options(), np.random.default_rng(seed))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("user,score\n")
        for n, value in enumerate(scores):
            fh.write(f"{n},{float(value)!r}\n")
    status = "converged" if trace.converged else "stopped at the iteration limit"
    print(f"{args.algo}: {trace.n_iter} iterations, {status}; scores in {args.out}")
    return 0


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}.csv")


def cmd_sweep(args) -> int:
    spec, sweep = io.load_config(args.config)
    spec = _apply_overrides(spec, args)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if sweep is None:
        batch = run_trials(spec)
        scores, truth = batch.pooled()
        roc = roc_curve(scores, truth, spec.threshold_count)
        write_roc_csv(roc, args.out)
        rho, rate = roc.equal_error
        row = SweepRow(spec.algorithm, rate, confidence_halfwidth(rate, int(truth.sum())), rho)
        write_summary_csv([row], _sibling(args.out, "summary"))
        print(f"{spec.algorithm}: equal error {rate:.4g} over {len(batch.completed)} trials; "
              f"{len(batch.failures)} failed")
        return 0
    rows = equal_error_sweep(sweep_specs(spec, sweep.field, sweep.values))
    write_summary_csv(rows, args.out)
    for row in rows:
        print(f"{sweep.field}={row.param}: equal error {row.equal_error:.4g} +/- {row.ci95:.2g}")
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.2f}s)")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"simulate": cmd_simulate, "detect": cmd_detect, "sweep": cmd_sweep,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, TypeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cfdetect {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
