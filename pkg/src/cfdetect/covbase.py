"""Covariance-fitting activity detector shared across all access points.

Each AP's sample covariance ``Y_k Y_k^H / M`` is matched to the model
covariance ``Q_k = sum_n a_n beta_kn s_n s_n^H + sigma^2 I`` by minimizing the
negative log-likelihood ``sum_k ln|Q_k| + Tr(Q_k^{-1} Y_k Y_k^H / M)`` over a
single nonnegative activity vector ``a``. The solver is cyclic coordinate
descent with an exact 1D minimization per user and rank-one updates of the
cached inverses and log-determinants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import SolverDivergence, Trace
from .simkit import PilotMatrix, ReceivedSignals

__all__ = [
    "CovKnowledge",
    "CovOptions",
    "CovState",
    "CovTrace",
    "init_cov_state",
    "cov_objective",
    "coordinate_objective",
    "cov_coord_update",
    "refresh_cache",
    "run_cov",
]


DOWNDATE_FLOOR = 1e-2


@dataclass(frozen=True)
class CovKnowledge:
    """What the detector assumes about the channel statistics.

    Attributes
    ----------
    beta : ndarray, shape (K, N)
        Assumed large-scale gains, in the same units as ``noise_var``.
    noise_var : float
    pilots : PilotMatrix
    """

    beta: np.ndarray
    noise_var: float
    pilots: PilotMatrix

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 2 or not np.all(np.isfinite(beta)) or np.any(beta <= 0):
            raise ValueError("beta must be a finite, strictly positive (K, N) array")
        if beta.shape[1] != self.pilots.N:
            raise ValueError("beta and pilots disagree on the number of users")
        if not (np.isfinite(self.noise_var) and self.noise_var > 0):
            raise ValueError("noise_var must be positive")


@dataclass(frozen=True)
class CovOptions:
    rel_tol: float = 1e-6
    max_sweeps: int = 50
    drift_check_every: int = 100

    def __post_init__(self):
        if not self.rel_tol > 0 or self.max_sweeps < 1 or self.drift_check_every < 1:
            raise ValueError("invalid covariance solver options")


@dataclass
class CovTrace(Trace):
    drift: list = field(default_factory=list)


@dataclass
class CovState:
    """Relaxed activities plus per-AP caches.

    ``q_inv[k]`` is ``Q_k^{-1}``, ``logdet[k]`` is ``ln|Q_k|`` and ``trace_term[k]``
    is ``Tr(Q_k^{-1} sample_cov[k])``; all are kept in sync with ``a``.
    """

    a: np.ndarray
    q_inv: np.ndarray
    sample_cov: np.ndarray
    logdet: np.ndarray
    trace_term: np.ndarray
    updates: int = 0

    @property
    def cached_objective(self) -> float:
        return float(np.sum(self.logdet + self.trace_term))


def _sample_cov(signals: ReceivedSignals, L: int) -> np.ndarray:
    y = np.asarray(signals.y, dtype=complex)
    if y.ndim != 3 or y.shape[1] != L:
        raise ValueError(f"signals must have shape (K, {L}, M)")
    return np.einsum("klm,kjm->klj", y, y.conj()) / y.shape[2]


def _model_cov(a, knowledge: CovKnowledge):
    s = np.asarray(knowledge.pilots.s, dtype=complex)
    L = s.shape[0]
    weights = np.asarray(knowledge.beta, dtype=float) * np.asarray(a, dtype=float)[None, :]
    return np.einsum("ln,kn,jn->klj", s, weights, s.conj()) + knowledge.noise_var * np.eye(L)


def _fresh_caches(a, knowledge, sample_cov):
    q = _model_cov(a, knowledge)
    sign, logdet = np.linalg.slogdet(q)
    if np.any(sign.real <= 0):
        raise np.linalg.LinAlgError("model covariance is not positive definite")
    q_inv = np.linalg.inv(q)
    q_inv = 0.5 * (q_inv + np.conj(np.swapaxes(q_inv, 1, 2)))
    trace_term = np.real(np.einsum("klj,kjl->k", q_inv, sample_cov))
    return q_inv, logdet, trace_term


def init_cov_state(signals: ReceivedSignals, knowledge: CovKnowledge, a=None) -> CovState:
    L, N = knowledge.pilots.s.shape
    if np.asarray(knowledge.beta).shape[0] != np.asarray(signals.y).shape[0]:
        raise ValueError("beta and signals disagree on the number of APs")
    a = np.zeros(N) if a is None else np.asarray(a, dtype=float).copy()
    if a.shape != (N,) or np.any(a < 0):
        raise ValueError("activities must be a nonnegative length-N vector")
    sample_cov = _sample_cov(signals, L)
    q_inv, logdet, trace_term = _fresh_caches(a, knowledge, sample_cov)
    return CovState(a=a, q_inv=q_inv, sample_cov=sample_cov, logdet=logdet, trace_term=trace_term)


def cov_objective(state: CovState, knowledge: CovKnowledge, signals: ReceivedSignals) -> float:
    """Negative log-likelihood evaluated from scratch (no cached quantities)."""
    L = knowledge.pilots.L
    q = _model_cov(state.a, knowledge)
    sign, logdet = np.linalg.slogdet(q)
    if np.any(sign.real <= 0):
        raise np.linalg.LinAlgError("model covariance is not positive definite")
    sample_cov = _sample_cov(signals, L)
    trace_term = np.real(np.trace(np.linalg.solve(q, sample_cov), axis1=1, axis2=2))
    return float(np.sum(logdet + trace_term))


def _projections(state: CovState, knowledge: CovKnowledge, n: int):
    s_n = np.asarray(knowledge.pilots.s[:, n], dtype=complex)
    u = state.q_inv @ s_n  # (K, L)
    q = np.real(u.conj() @ s_n)
    r = np.real(np.einsum("kl,klj,kj->k", u.conj(), state.sample_cov, u))
    return u, q, r, np.asarray(knowledge.beta, dtype=float)[:, n]


def coordinate_objective(delta, q, r, beta):
    """Change of the objective when ``a_n`` moves by ``delta``.

    ``f(delta) = sum_k ln(1 + delta beta q_k) - delta beta r_k / (1 + delta beta q_k)``
    where ``q_k = s^H Q_k^{-1} s`` and ``r_k = s^H Q_k^{-1} Sigma_k Q_k^{-1} s``.
    """
    d = np.asarray(delta, dtype=float)[..., None]
    w = 1.0 + d * beta * q
    # rounding can push w to zero or below when a dominant term is removed;
    # the exact value there is +inf, which is never the minimizer
    safe = np.where(w > 0, w, 1.0)
    value = np.sum(np.log(safe) - d * beta * r / safe, axis=-1)
    return np.where(np.all(w > 0, axis=-1), value, np.inf)


def _coordinate_slope(delta, q, r, beta):
    w = 1.0 + delta * beta * q
    return float(np.sum(beta * (q - r + delta * beta * q**2) / w**2))


def _best_step(a_n, q, r, beta):
    """Exact minimizer of the restricted objective over ``delta >= -a_n``.

    Each AP's slope term changes sign once, at ``(r_k - q_k)/(beta_k q_k^2)``,
    so every local minimum lies between the smallest and largest of these
    breakpoints. Each sub-interval with a sign change of the total slope is
    solved with Brent's method; the lowest candidate wins.
    """
    lo = -a_n
    breaks = (r - q) / (beta * q**2)
    hi = float(np.max(breaks))
    if hi <= lo:
        return lo
    grid = np.unique(np.concatenate(([lo], np.clip(breaks, lo, hi), [hi])))
    slopes = [_coordinate_slope(x, q, r, beta) for x in grid]
    candidates = [lo, 0.0]
    for left, right, sl, sr in zip(grid[:-1], grid[1:], slopes[:-1], slopes[1:]):
        if sl < 0 < sr:
            root = optimize.brentq(_coordinate_slope, left, right, args=(q, r, beta),
                                   xtol=1e-15 * max(1.0, abs(left), abs(right)), rtol=1e-15)
            candidates.append(root)
        elif sr == 0:
            candidates.append(right)
    values = coordinate_objective(np.array(candidates), q, r, beta)
    return float(candidates[int(np.argmin(values))])


def cov_coord_update(state: CovState, knowledge: CovKnowledge, n: int) -> float:
    """Minimize the objective over ``a_n >= 0`` and update the caches in place.

    Returns the new ``a_n``. The objective never increases because ``delta = 0``
    is always among the candidates. A downdate that removes most of a large
    rank-one term (``1 + delta beta q`` below ``DOWNDATE_FLOOR`` at some AP)
    loses digits to cancellation, so the caches are rebuilt instead.
    """
    u, q, r, beta = _projections(state, knowledge, n)
    delta = _best_step(state.a[n], q, r, beta)
    if delta == 0.0:
        pass
    elif np.min(1.0 + delta * beta * q) < DOWNDATE_FLOOR:
        state.a[n] = max(state.a[n] + delta, 0.0)
        state.q_inv, state.logdet, state.trace_term = _fresh_caches(
            state.a, knowledge, state.sample_cov)
    else:
        w = 1.0 + delta * beta * q
        state.q_inv -= ((delta * beta / w)[:, None, None]
                        * u[:, :, None] * u.conj()[:, None, :])
        state.logdet += np.log(w)
        state.trace_term -= delta * beta * r / w
        state.a[n] = max(state.a[n] + delta, 0.0)
    state.updates += 1
    return float(state.a[n])


def refresh_cache(state: CovState, knowledge: CovKnowledge) -> float:
    """Recompute the caches from ``a``; returns the relative drift of the cached objective."""
    cached = state.cached_objective
    state.q_inv, state.logdet, state.trace_term = _fresh_caches(state.a, knowledge, state.sample_cov)
    fresh = state.cached_objective
    return abs(cached - fresh) / max(abs(fresh), 1e-300)


def run_cov(signals: ReceivedSignals, knowledge: CovKnowledge, opts: CovOptions | None = None,
            order=None):
    """Cyclic coordinate descent from ``a = 0``.

    Returns
    -------
    scores : ndarray, shape (N,)
        The relaxed activities.
    state : CovState
    trace : CovTrace
        ``objective`` per sweep and ``drift`` from each periodic cache check.
    """
    opts = opts or CovOptions()
    state = init_cov_state(signals, knowledge)
    users = range(knowledge.pilots.N) if order is None else [int(n) for n in order]
    trace = CovTrace()
    prev = state.cached_objective
    trace.objective.append(prev)
    for _ in range(opts.max_sweeps):
        for n in users:
            cov_coord_update(state, knowledge, n)
            if state.updates % opts.drift_check_every == 0:
                trace.drift.append(refresh_cache(state, knowledge))
        current = state.cached_objective
        if not np.isfinite(current) or not np.all(np.isfinite(state.a)):
            raise SolverDivergence("non-finite value in covariance iterate", trace)
        change = abs(prev - current) / max(abs(current), 1e-300)
        trace.objective.append(current)
        trace.rel_change.append(change)
        prev = current
        if change < opts.rel_tol:
            trace.converged = True
            break
    return state.a.copy(), state, trace
