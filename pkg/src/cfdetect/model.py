"""Shared pieces of the probabilistic model: priors, solver options, traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simkit import PilotMatrix, ReceivedSignals

__all__ = [
    "Hyperparameters",
    "SolverOptions",
    "Trace",
    "SolverDivergence",
    "check_problem",
    "reconstruction",
    "relative_change",
]


@dataclass(frozen=True)
class Hyperparameters:
    """Prior hyper-parameters; the defaults are the near-zero, non-informative ones.

    ``c, d`` parameterize the Gamma prior on the noise precision, ``kappa1,
    kappa2`` the Gamma prior on each ``eta0``, and ``eta0, psi0, lambda0`` the
    GIG prior on each user's variance ``z``. ``eta0`` is only a starting value,
    since it is learned.
    """

    c: float = 1e-6
    d: float = 1e-6
    kappa1: float = 1e-6
    kappa2: float = 1e-6
    eta0: float = 1e-6
    psi0: float = 1e-6
    lambda0: float = 1e-6

    def __post_init__(self):
        for name in ("c", "d", "kappa1", "kappa2", "eta0", "psi0"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"hyper-parameter {name} must be positive, got {value!r}")
        if not np.isfinite(self.lambda0):
            raise ValueError("lambda0 must be finite")


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls shared by the MAP and variational solvers.

    ``threshold`` is only used by single-decision callers; the benchmark
    sweeps it instead.
    """

    max_outer_iters: int = 200
    max_eta_iters: int = 20
    alpha: float = 1e-2
    rel_tol: float = 1e-4
    threshold: float | None = None

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.max_eta_iters < 1:
            raise ValueError("iteration limits must be positive")
        if not (self.alpha > 0 and self.rel_tol > 0):
            raise ValueError("alpha and rel_tol must be positive")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError("threshold must be positive")


@dataclass
class Trace:
    rel_change: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self) -> int:
        return len(self.rel_change)


class SolverDivergence(FloatingPointError):
    """Raised when a solver produces non-finite values; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


def check_problem(signals: ReceivedSignals, pilots: PilotMatrix):
    """Return ``(Y, S)`` after checking that the pilot length and user count agree."""
    y = np.asarray(signals.y, dtype=complex)
    s = np.asarray(pilots.s, dtype=complex)
    if y.ndim != 3:
        raise ValueError("signals must have shape (K, L, M)")
    if s.ndim != 2 or s.shape[0] != y.shape[1]:
        raise ValueError(f"pilot length {s.shape[0]} does not match signal length {y.shape[1]}")
    return y, s


def reconstruction(s, gamma, g):
    """``sum_n gamma_kn s_n g_kn^T`` for every AP, shape ``(K, L, M)``."""
    return np.einsum("ln,kn,knm->klm", s, gamma, g)


def relative_change(new, old) -> float:
    num = np.linalg.norm(new - old)
    den = np.linalg.norm(old)
    if den == 0:
        return 0.0 if num == 0 else np.inf
    return float(num / den)
