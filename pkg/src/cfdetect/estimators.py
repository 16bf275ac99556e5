"""Estimator-style wrappers around the three detectors.

Each detector is fitted to one received block and scores every user;
``predict`` compares the scores with ``threshold``. Pilots and, for the
covariance detector, channel knowledge are constructor parameters because
they describe the system rather than the observation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    check_consistent,
    check_pilots,
    check_positive_float,
    check_positive_int,
    check_signals,
)
from .covbase import CovKnowledge, CovOptions, run_cov
from .evalharness import roc_curve
from .ghvi import run_ghvi
from .mapdet import run_map
from .model import Hyperparameters, SolverOptions

__all__ = ["MapDetector", "GHVIDetector", "CovarianceDetector", "calibrate_threshold"]


def calibrate_threshold(scores, truth, threshold_count=None) -> float:
    """Equal-error threshold of pooled calibration scores."""
    rho, _ = roc_curve(scores, truth, threshold_count).equal_error
    return rho


class _DetectorMixin:
    def decision_function(self, X):
        """Fit to ``X`` and return the per-user scores."""
        return self.fit(X).scores_

    def predict(self, X):
        """Fit to ``X`` and return 0/1 activity decisions at ``threshold``."""
        if self.threshold is None:
            raise ValueError("set threshold (for example with calibrate_threshold) before predict")
        return (self.decision_function(X) > self.threshold).astype(np.int8)

    def _set_fitted(self, scores, trace):
        self.scores_ = np.asarray(scores, dtype=float)
        self.n_iter_ = trace.n_iter
        self.converged_ = trace.converged
        self.trace_ = trace
        return self


class _BayesianDetector(_DetectorMixin, BaseEstimator):
    def __init__(self, pilots=None, *, max_iter=200, rel_tol=1e-4, threshold=None,
                 random_state=None, c=1e-6, d=1e-6, kappa1=1e-6, kappa2=1e-6,
                 eta0=1e-6, psi0=1e-6, lambda0=1e-6):
        self.pilots = pilots
        self.max_iter = max_iter
        self.rel_tol = rel_tol
        self.threshold = threshold
        self.random_state = random_state
        self.c = c
        self.d = d
        self.kappa1 = kappa1
        self.kappa2 = kappa2
        self.eta0 = eta0
        self.psi0 = psi0
        self.lambda0 = lambda0

    def _prepare(self, X):
        signals = check_signals(X)
        pilots = check_pilots(self.pilots)
        check_consistent(signals, pilots)
        opts = SolverOptions(
            max_outer_iters=check_positive_int(self.max_iter, "max_iter"),
            rel_tol=check_positive_float(self.rel_tol, "rel_tol"),
            threshold=check_positive_float(self.threshold, "threshold", allow_none=True),
        )
        hyper = Hyperparameters(self.c, self.d, self.kappa1, self.kappa2, self.eta0,
                                self.psi0, self.lambda0)
        return signals, pilots, opts, hyper


class MapDetector(_BayesianDetector):
    """Point-estimate detector; scores are the fitted user variances ``z_n``.

    Attributes
    ----------
    scores_ : ndarray, shape (N,)
    state_ : MapState
    n_iter_ : int
    converged_ : bool
    """

    def fit(self, X, y=None):
        signals, pilots, opts, hyper = self._prepare(X)
        scores, self.state_, trace = run_map(signals, pilots, opts, hyper,
                                             rng=self.random_state, track_objective=False)
        return self._set_fitted(scores, trace)


class GHVIDetector(_BayesianDetector):
    """Variational detector; scores are posterior means ``<z_n>``.

    ``inverse_moment="shifted"`` swaps in the order-shifted ``<1/z>`` formula for
    comparison runs only.
    """

    def __init__(self, pilots=None, *, max_iter=200, rel_tol=1e-4, threshold=None,
                 random_state=None, c=1e-6, d=1e-6, kappa1=1e-6, kappa2=1e-6,
                 eta0=1e-6, psi0=1e-6, lambda0=1e-6, inverse_moment="exact"):
        super().__init__(pilots, max_iter=max_iter, rel_tol=rel_tol, threshold=threshold,
                         random_state=random_state, c=c, d=d, kappa1=kappa1, kappa2=kappa2,
                         eta0=eta0, psi0=psi0, lambda0=lambda0)
        self.inverse_moment = inverse_moment

    def fit(self, X, y=None):
        signals, pilots, opts, hyper = self._prepare(X)
        scores, self.state_, trace = run_ghvi(signals, pilots, opts, hyper, rng=self.random_state,
                                              inverse_moment=self.inverse_moment)
        return self._set_fitted(scores, trace)


class CovarianceDetector(_DetectorMixin, BaseEstimator):
    """Covariance-fitting detector; needs the large-scale gains and noise power.

    Parameters
    ----------
    pilots : array_like, shape (L, N)
    beta : array_like, shape (K, N)
        Assumed effective gains, in units of ``noise_var``.
    noise_var : float
    """

    def __init__(self, pilots=None, beta=None, noise_var=1.0, *, max_iter=50, rel_tol=1e-6,
                 threshold=None):
        self.pilots = pilots
        self.beta = beta
        self.noise_var = noise_var
        self.max_iter = max_iter
        self.rel_tol = rel_tol
        self.threshold = threshold

    def fit(self, X, y=None):
        signals = check_signals(X)
        pilots = check_pilots(self.pilots)
        check_consistent(signals, pilots)
        if self.beta is None:
            raise ValueError("beta must be provided")
        knowledge = CovKnowledge(np.asarray(self.beta, dtype=float),
                                 check_positive_float(self.noise_var, "noise_var"), pilots)
        opts = CovOptions(rel_tol=check_positive_float(self.rel_tol, "rel_tol"),
                          max_sweeps=check_positive_int(self.max_iter, "max_iter"))
        scores, self.state_, trace = run_cov(signals, knowledge, opts)
        return self._set_fitted(scores, trace)


