"""Monte Carlo trials, ROC curves and equal-error summaries."""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import simkit
from .covbase import CovKnowledge, CovOptions, run_cov
from .ghvi import run_ghvi
from .mapdet import run_map
from .model import SolverDivergence, SolverOptions
from .simkit import Perturbation, SystemConfig

__all__ = [
    "ALGORITHMS",
    "ExperimentSpec",
    "TrialData",
    "TrialResult",
    "TrialBatch",
    "generate_trial",
    "run_detector",
    "run_trials",
    "detection_rates",
    "RocCurve",
    "roc_curve",
    "confidence_halfwidth",
    "SweepRow",
    "sweep_specs",
    "equal_error_sweep",
    "write_roc_csv",
    "read_roc_csv",
    "write_summary_csv",
    "read_summary_csv",
]

ALGORITHMS = ("ghvi", "map", "cov")
Z95 = 1.959963984540054


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo experiment.

    ``rel_tol`` and ``max_iters`` override the chosen solver's own defaults
    (``1e-4``/200 outer iterations for ``ghvi`` and ``map``, ``1e-6``/50 sweeps
    for ``cov``) when set. ``threshold_count=None`` keeps every distinct score
    as a threshold.
    """

    system: SystemConfig = field(default_factory=SystemConfig)
    algorithm: str = "ghvi"
    trials: int = 300
    threshold_count: int | None = 201
    perturbation: Perturbation = field(default_factory=Perturbation)
    master_seed: int = 0
    rel_tol: float | None = None
    max_iters: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.threshold_count is not None and self.threshold_count < 2:
            raise ValueError("threshold_count must be at least 2")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.rel_tol is not None and not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)

    def solver_options(self):
        if self.algorithm == "cov":
            base = CovOptions()
            return dataclasses.replace(
                base,
                rel_tol=self.rel_tol if self.rel_tol is not None else base.rel_tol,
                max_sweeps=self.max_iters if self.max_iters is not None else base.max_sweeps,
            )
        base = SolverOptions()
        return dataclasses.replace(
            base,
            rel_tol=self.rel_tol if self.rel_tol is not None else base.rel_tol,
            max_outer_iters=self.max_iters if self.max_iters is not None else base.max_outer_iters,
        )


@dataclass
class TrialData:
    config: SystemConfig
    scenario: simkit.Scenario
    channels: simkit.ChannelRealization
    pilots: simkit.PilotMatrix
    signals: simkit.ReceivedSignals
    knowledge: simkit.Scenario
    solver_seed: np.random.SeedSequence


@dataclass
class TrialResult:
    index: int
    scores: np.ndarray | None
    truth: np.ndarray
    n_iter: int = 0
    converged: bool = False
    error: str | None = None


@dataclass
class TrialBatch:
    results: list

    @property
    def completed(self):
        return [r for r in self.results if r.error is None]

    @property
    def failures(self):
        return [(r.index, r.error) for r in self.results if r.error is not None]

    def pooled(self):
        """Scores and truth of all completed trials, concatenated in trial order."""
        done = self.completed
        if not done:
            return np.empty(0), np.empty(0, dtype=bool)
        return (np.concatenate([r.scores for r in done]),
                np.concatenate([r.truth for r in done]).astype(bool))


def generate_trial(system: SystemConfig, perturbation: Perturbation, master_seed: int,
                   index: int) -> TrialData:
    """Draw everything one trial needs from seeds derived from ``(master_seed, index)``.

    Each ingredient has its own child stream, so changing the knowledge
    perturbation leaves the signals and the solver initialization untouched.
    """
    streams = np.random.SeedSequence([int(master_seed), int(index)]).spawn(7)
    rng_geom, rng_eps, rng_chan, rng_pilot, rng_noise, rng_know = (
        np.random.default_rng(s) for s in streams[:6]
    )
    cfg = system
    if perturbation.rician_fraction is not None:
        cfg = cfg.replace(rician_fraction=perturbation.rician_fraction)
    epsilon = None
    if perturbation.epsilon_range is not None:
        epsilon = float(rng_eps.uniform(*perturbation.epsilon_range))
    scenario = simkit.build_scenario(cfg, rng_geom)
    channels = simkit.draw_channels(scenario, cfg, rng_chan, epsilon=epsilon)
    pilots = simkit.generate_pilots(cfg, rng_pilot)
    signals = simkit.synthesize(scenario, channels, pilots, cfg, rng_noise)
    knowledge = simkit.perturb_knowledge(scenario, perturbation, rng_know)
    return TrialData(cfg, scenario, channels, pilots, signals, knowledge, streams[6])


def run_detector(algorithm: str, signals, pilots, knowledge=None, options=None, rng=None):
    """Run one detector and return ``(scores, trace)``.

    ``knowledge`` is only consulted by ``cov``; it is a :class:`CovKnowledge`.
    """
    if algorithm == "ghvi":
        scores, _, trace = run_ghvi(signals, pilots, options, rng=rng)
    elif algorithm == "map":
        scores, _, trace = run_map(signals, pilots, options, rng=rng)
    elif algorithm == "cov":
        if knowledge is None:
            raise ValueError("the covariance detector needs channel knowledge")
        scores, _, trace = run_cov(signals, knowledge, options)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return scores, trace


def _run_one(args):
    spec, index = args
    trial = generate_trial(spec.system, spec.perturbation, spec.master_seed, index)
    truth = trial.channels.activity.astype(bool)
    knowledge = None
    if spec.algorithm == "cov":
        knowledge = CovKnowledge(trial.knowledge.effective_beta, trial.knowledge.noise_power,
                                 trial.pilots)
    try:
        scores, trace = run_detector(spec.algorithm, trial.signals, trial.pilots, knowledge,
                                     spec.solver_options(), np.random.default_rng(trial.solver_seed))
    except (SolverDivergence, np.linalg.LinAlgError, FloatingPointError) as exc:
        return TrialResult(index, None, truth, error=f"{type(exc).__name__}: {exc}")
    return TrialResult(index, np.asarray(scores, dtype=float), truth, trace.n_iter, trace.converged)


def run_trials(spec: ExperimentSpec) -> TrialBatch:
    """Run ``spec.trials`` independent trials; results are ordered by trial index."""
    jobs = [(spec, i) for i in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    results.sort(key=lambda r: r.index)
    return TrialBatch(results)


def detection_rates(scores, truth, threshold):
    """Missed-detection and false-alarm rates at one threshold.

    A user is declared active when its score exceeds ``threshold``. A rate
    with an empty denominator is NaN.

    Returns
    -------
    pmd, pfa : float
    n_active, n_inactive : int
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    n_act = int(truth.sum())
    n_inact = int(truth.size - n_act)
    declared = scores > threshold
    pmd = float(np.sum(truth & ~declared) / n_act) if n_act else float("nan")
    pfa = float(np.sum(~truth & declared) / n_inact) if n_inact else float("nan")
    return pmd, pfa, n_act, n_inact


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by increasing threshold."""

    thresholds: np.ndarray
    pmd: np.ndarray
    pfa: np.ndarray

    def __post_init__(self):
        if not (len(self.thresholds) == len(self.pmd) == len(self.pfa)) or len(self.thresholds) < 2:
            raise ValueError("a ROC curve needs at least two aligned points")

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.pmd.tolist(), self.pfa.tolist()))

    @property
    def equal_error(self):
        """``(threshold, rate)`` where the missed-detection and false-alarm rates cross.

        The crossing is located between the first point with ``pmd >= pfa``
        and its predecessor, by linear interpolation in all three columns.
        """
        gap = self.pmd - self.pfa
        idx = int(np.argmax(gap >= 0))
        if gap[idx] < 0:
            raise ValueError("the curve never reaches pmd >= pfa")
        if gap[idx] == 0 or idx == 0:
            return float(self.thresholds[idx]), float(0.5 * (self.pmd[idx] + self.pfa[idx]))
        g0, g1 = gap[idx - 1], gap[idx]
        t = g0 / (g0 - g1)
        rho = self.thresholds[idx - 1] + t * (self.thresholds[idx] - self.thresholds[idx - 1])
        rate = self.pmd[idx - 1] + t * (self.pmd[idx] - self.pmd[idx - 1])
        return float(rho), float(rate)


def roc_curve(scores, truth, threshold_count: int | None = 201) -> RocCurve:
    """Sweep a threshold over the pooled scores.

    Thresholds are the score quantiles at ``threshold_count`` evenly spaced
    levels (every distinct score when ``None``), preceded by one value just
    below the smallest score so the curve starts at ``pmd=0, pfa=1``.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must have the same length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if truth.all() or not truth.any():
        raise ValueError("ROC needs at least one active and one inactive user")
    if threshold_count is None:
        grid = np.unique(scores)
    else:
        if threshold_count < 2:
            raise ValueError("threshold_count must be at least 2")
        grid = np.unique(np.quantile(scores, np.linspace(0.0, 1.0, threshold_count)))
    thresholds = np.concatenate(([np.nextafter(grid[0], -np.inf)], grid))
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truth = truth[order]
    cum_active = np.concatenate(([0], np.cumsum(sorted_truth)))
    cum_inactive = np.concatenate(([0], np.cumsum(~sorted_truth)))
    below = np.searchsorted(sorted_scores, thresholds, side="right")
    n_act = cum_active[-1]
    n_inact = cum_inactive[-1]
    pmd = cum_active[below] / n_act
    pfa = (n_inact - cum_inactive[below]) / n_inact
    return RocCurve(thresholds, pmd.astype(float), pfa.astype(float))


def confidence_halfwidth(rate: float, n: int) -> float:
    """95% normal-approximation binomial half-width for a rate estimated from ``n`` users."""
    if n <= 0:
        return float("nan")
    return float(Z95 * np.sqrt(rate * (1.0 - rate) / n))


@dataclass(frozen=True)
class SweepRow:
    param: object
    equal_error: float
    ci95: float
    threshold: float = float("nan")
    failures: int = 0


def sweep_specs(base: ExperimentSpec, field_name: str, values) -> list:
    """Copies of ``base`` with one system or perturbation field set to each value."""
    specs = []
    sys_fields = {f.name for f in dataclasses.fields(SystemConfig)}
    pert_fields = {f.name for f in dataclasses.fields(Perturbation)}
    for v in values:
        if field_name in sys_fields:
            specs.append((v, base.replace(system=base.system.replace(**{field_name: v}))))
        elif field_name in pert_fields:
            specs.append((v, base.replace(perturbation=dataclasses.replace(base.perturbation,
                                                                           **{field_name: v}))))
        else:
            raise ValueError(f"unknown sweep field {field_name!r}")
    return specs


def _summarize(param, batch: TrialBatch, threshold_count):
    scores, truth = batch.pooled()
    roc = roc_curve(scores, truth, threshold_count)
    rho, rate = roc.equal_error
    return roc, SweepRow(param, rate, confidence_halfwidth(rate, int(truth.sum())), rho,
                         len(batch.failures))


def equal_error_sweep(items: Sequence[tuple]) -> list:
    """One :class:`SweepRow` per ``(param, ExperimentSpec)`` pair.

    The confidence half-width uses the number of active users pooled over
    the completed trials, which is the smaller of the two populations.
    """
    rows = []
    for param, spec in items:
        _, row = _summarize(param, run_trials(spec), spec.threshold_count)
        rows.append(row)
    return rows


def write_roc_csv(roc: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "pmd", "pfa"])
        for rho, pmd, pfa in roc.points:
            w.writerow([repr(float(rho)), repr(float(pmd)), repr(float(pfa))])


def read_roc_csv(path) -> RocCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["threshold", "pmd", "pfa"]:
        raise ValueError(f"{path}: not a ROC CSV")
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    return RocCurve(data[:, 0], data[:, 1], data[:, 2])


def write_summary_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "equal_error", "ci95"])
        for row in rows:
            param = repr(float(row.param)) if isinstance(row.param, float) else str(row.param)
            w.writerow([param, repr(float(row.equal_error)), repr(float(row.ci95))])


def read_summary_csv(path) -> list:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["param", "equal_error", "ci95"]:
            raise ValueError(f"{path}: not a summary CSV")
        return [SweepRow(r["param"], float(r["equal_error"]), float(r["ci95"])) for r in reader]
