"""MAP activity detection by block coordinate ascent on the log joint density.

The unknowns are the combined coefficients ``gamma_kn = a_n sqrt(beta_kn)``,
small-scale channels ``g_kn``, per-user variances ``z_n`` with their GIG
tail parameters ``eta0_n``, and the noise precision ``tau``. Every block
except ``eta0`` has a closed-form maximizer; ``eta0`` takes projected
gradient-ascent steps with backtracking so that a sweep never lowers the
objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import specfun
from .model import (
    Hyperparameters,
    SolverDivergence,
    SolverOptions,
    Trace,
    check_problem,
    reconstruction,
    relative_change,
)
from .simkit import PilotMatrix, ReceivedSignals

__all__ = [
    "MapState",
    "map_objective",
    "update_gamma_map",
    "update_g_map",
    "update_z_map",
    "eta_objective",
    "eta_gradient",
    "update_eta_map",
    "update_tau_map",
    "run_map",
]

FLOOR = 1e-12


@dataclass
class MapState:
    gamma: np.ndarray  # (K, N) real
    g: np.ndarray  # (K, N, M) complex
    z: np.ndarray  # (N,)
    eta0: np.ndarray  # (N,)
    tau: float

    def copy(self) -> "MapState":
        return MapState(self.gamma.copy(), self.g.copy(), self.z.copy(), self.eta0.copy(), self.tau)


def _check_state(state: MapState):
    if np.any(state.z <= 0) or np.any(state.eta0 <= 0) or not state.tau > 0:
        raise ValueError("z, eta0 and tau must be strictly positive")


def map_objective(state: MapState, signals: ReceivedSignals, pilots: PilotMatrix,
                  hyper: Hyperparameters) -> float:
    """Log joint density up to an additive constant."""
    _check_state(state)
    y, s = check_problem(signals, pilots)
    K, L, M = y.shape
    h = hyper
    z, eta, tau = state.z, state.eta0, state.tau
    resid = np.sum(np.abs(y - reconstruction(s, state.gamma, state.g)) ** 2)
    omega = np.sqrt(eta * h.psi0)
    gig = (
        0.5 * h.lambda0 * (np.log(eta) - np.log(h.psi0))
        - np.log(2.0)
        - specfun.log_bessel_k(h.lambda0, omega)
        + (h.lambda0 - 1.0) * np.log(z)
        - 0.5 * (eta * z + h.psi0 / z)
    )
    return float(
        K * L * M * np.log(tau)
        - tau * resid
        + 0.5 * np.sum(-np.log(z)[None, :] - state.gamma**2 / z[None, :])
        - np.sum(np.abs(state.g) ** 2)
        + np.sum(gig)
        + np.sum((h.kappa1 - 1.0) * np.log(eta) - h.kappa2 * eta)
        + (h.c - 1.0) * np.log(tau)
        - h.d * tau
    )


def _sweep_gamma(resid, s, energy, state, order):
    tau = state.tau
    for n in order:
        sn = s[:, n]
        gn = state.g[:, n, :]
        old = state.gamma[:, n].copy()
        # s_n^H (Y_k - sum_{m != n} gamma_km s_m g_km^T), one row per AP
        v = sn.conj() @ resid + (old * energy[n])[:, None] * gn
        num = tau * np.real(np.sum(v * gn.conj(), axis=1))
        den = tau * energy[n] * np.sum(np.abs(gn) ** 2, axis=1) + 0.5 / state.z[n]
        new = num / den
        state.gamma[:, n] = new
        resid -= (new - old)[:, None, None] * sn[None, :, None] * gn[:, None, :]


def _sweep_g(resid, s, energy, state, order):
    tau = state.tau
    for n in order:
        sn = s[:, n]
        gam = state.gamma[:, n]
        old = state.g[:, n, :].copy()
        v = sn.conj() @ resid + (gam * energy[n])[:, None] * old
        new = (tau * gam / (tau * gam**2 * energy[n] + 1.0))[:, None] * v
        state.g[:, n, :] = new
        resid -= gam[:, None, None] * sn[None, :, None] * (new - old)[:, None, :]


def _order(N, order):
    return range(N) if order is None else [int(n) for n in order]


def update_gamma_map(state: MapState, signals: ReceivedSignals, pilots: PilotMatrix, order=None):
    """Cyclic exact maximization over every ``gamma_kn``; mutates and returns ``state.gamma``."""
    y, s = check_problem(signals, pilots)
    resid = y - reconstruction(s, state.gamma, state.g)
    _sweep_gamma(resid, s, np.sum(np.abs(s) ** 2, axis=0), state, _order(s.shape[1], order))
    return state.gamma


def update_g_map(state: MapState, signals: ReceivedSignals, pilots: PilotMatrix, order=None):
    """Cyclic exact maximization over every ``g_kn``; mutates and returns ``state.g``."""
    y, s = check_problem(signals, pilots)
    resid = y - reconstruction(s, state.gamma, state.g)
    _sweep_g(resid, s, np.sum(np.abs(s) ** 2, axis=0), state, _order(s.shape[1], order))
    return state.g


def update_z_map(state: MapState, hyper: Hyperparameters):
    """Closed-form maximizer of each ``z_n``.

    The positive root of ``eta z^2 - 2 lam z - (psi + sum_k gamma_kn^2) = 0``
    with ``lam = lambda0 - K/2 - 1``. For ``lam <= 0`` the rationalized form
    ``(psi + S) / (sqrt(D) - lam)`` avoids the cancellation that the direct
    formula suffers once ``eta`` sits at its floor.
    """
    K = state.gamma.shape[0]
    eta = np.maximum(state.eta0, FLOOR)
    lam = hyper.lambda0 - K / 2.0 - 1.0
    q = hyper.psi0 + np.sum(state.gamma**2, axis=0)
    root = np.sqrt(lam**2 + eta * q)
    if lam > 0:
        z = (lam + root) / eta
    else:
        z = q / (root - lam)
    state.z = np.maximum(z, FLOOR)
    return state.z


def eta_objective(eta, z, hyper: Hyperparameters):
    """Terms of the log joint that depend on ``eta0``, per user."""
    h = hyper
    eta = np.asarray(eta, dtype=float)
    return (
        (0.5 * h.lambda0 + h.kappa1 - 1.0) * np.log(eta)
        - specfun.log_bessel_k(h.lambda0, np.sqrt(eta * h.psi0))
        - eta * (0.5 * np.asarray(z) + h.kappa2)
    )


def eta_gradient(eta, z, hyper: Hyperparameters):
    """Derivative of :func:`eta_objective` with respect to ``eta0``."""
    h = hyper
    eta = np.asarray(eta, dtype=float)
    omega = np.sqrt(eta * h.psi0)
    ratio = specfun.bessel_k_ratio(h.lambda0, omega)
    return (
        (2 * h.kappa1 - 2 + h.lambda0) / (2 * eta)
        - h.kappa2
        - 0.5 * np.asarray(z)
        - (h.lambda0 / (2 * eta) - h.psi0 * ratio / (2 * omega))
    )


def update_eta_map(state: MapState, hyper: Hyperparameters, opts: SolverOptions):
    """Projected gradient ascent on each ``eta0_n`` with per-user backtracking.

    Each user starts from step size ``opts.alpha``, halves it whenever a step
    would lower its objective, and stops once the accepted move is below
    ``rel_tol`` relative to the current value or after ``max_eta_iters``.
    """
    eta = np.maximum(state.eta0.astype(float), FLOOR)
    z = state.z
    alpha = np.full(eta.shape, float(opts.alpha))
    live = np.ones(eta.shape, dtype=bool)
    for _ in range(opts.max_eta_iters):
        if not live.any():
            break
        idx = np.flatnonzero(live)
        e0, zi = eta[idx], z[idx]
        grad = eta_gradient(e0, zi, hyper)
        f0 = eta_objective(e0, zi, hyper)
        step_alpha = alpha[idx]
        trial = np.maximum(e0 + step_alpha * grad, FLOOR)
        ok = eta_objective(trial, zi, hyper) >= f0
        for _halving in range(60):
            if ok.all():
                break
            step_alpha = np.where(ok, step_alpha, 0.5 * step_alpha)
            retry = np.maximum(e0 + step_alpha * grad, FLOOR)
            trial = np.where(ok, trial, retry)
            ok = ok | (eta_objective(trial, zi, hyper) >= f0)
        trial = np.where(ok, trial, e0)
        alpha[idx] = step_alpha
        eta[idx] = trial
        live[idx] = np.abs(trial - e0) > opts.rel_tol * e0
    state.eta0 = eta
    return state.eta0


def update_tau_map(state: MapState, signals: ReceivedSignals, pilots: PilotMatrix,
                   hyper: Hyperparameters) -> float:
    y, s = check_problem(signals, pilots)
    K, L, M = y.shape
    shape = K * L * M + hyper.c - 1.0
    if shape <= 0:
        raise ValueError("K*L*M + c must exceed 1")
    resid = np.sum(np.abs(y - reconstruction(s, state.gamma, state.g)) ** 2)
    state.tau = float(shape / (resid + hyper.d))
    return state.tau


def _initial_tau(y):
    energy = float(np.sum(np.abs(y) ** 2))
    return y.size / energy if energy > 0 else 1.0


def init_map_state(signals: ReceivedSignals, pilots: PilotMatrix, hyper: Hyperparameters,
                   rng=None, g_init=None) -> MapState:
    y, s = check_problem(signals, pilots)
    K, L, M = y.shape
    N = s.shape[1]
    if g_init is None:
        rng = np.random.default_rng(rng)
        g_init = (rng.standard_normal((K, N, M)) + 1j * rng.standard_normal((K, N, M))) / np.sqrt(2)
    return MapState(
        gamma=np.zeros((K, N)),
        g=np.array(g_init, dtype=complex),
        z=np.ones(N),
        eta0=np.full(N, hyper.eta0),
        tau=_initial_tau(y),
    )


def run_map(signals: ReceivedSignals, pilots: PilotMatrix, opts: SolverOptions | None = None,
            hyper: Hyperparameters | None = None, rng=None, g_init=None, order=None,
            track_objective: bool = True):
    """Run the BCD-MAP detector.

    Parameters
    ----------
    signals, pilots
        Received blocks ``(K, L, M)`` and pilot book ``(L, N)``.
    opts, hyper
        Iteration controls and prior hyper-parameters.
    rng
        Seed or generator for the random channel initialization.
    g_init
        Explicit ``(K, N, M)`` channel initialization, overriding ``rng``.
    order
        User visiting order within each sweep (default ``0..N-1``).

    Returns
    -------
    z : ndarray, shape (N,)
        Detection scores; larger means more likely active.
    state : MapState
    trace : Trace
    """
    opts = opts or SolverOptions()
    hyper = hyper or Hyperparameters()
    y, s = check_problem(signals, pilots)
    N = s.shape[1]
    state = init_map_state(signals, pilots, hyper, rng=rng, g_init=g_init)
    energy = np.sum(np.abs(s) ** 2, axis=0)
    users = _order(N, order)
    trace = Trace()
    recon = reconstruction(s, state.gamma, state.g)
    resid = y - recon
    for _ in range(opts.max_outer_iters):
        _sweep_gamma(resid, s, energy, state, users)
        _sweep_g(resid, s, energy, state, users)
        if not (np.all(np.isfinite(state.gamma)) and np.all(np.isfinite(state.g))):
            trace.rel_change.append(np.nan)
            raise SolverDivergence("non-finite coefficient in MAP iterate", trace)
        update_z_map(state, hyper)
        if not np.all(np.isfinite(state.z)):
            trace.rel_change.append(np.nan)
            raise SolverDivergence("non-finite user variance in MAP iterate", trace)
        update_eta_map(state, hyper, opts)
        # refresh the running residual to keep rank-1 drift out of tau
        new_recon = reconstruction(s, state.gamma, state.g)
        resid = y - new_recon
        K, L, M = y.shape
        state.tau = float((K * L * M + hyper.c - 1.0) / (np.sum(np.abs(resid) ** 2) + hyper.d))
        change = relative_change(new_recon, recon)
        recon = new_recon
        trace.rel_change.append(change)
        trace.tau.append(state.tau)
        if track_objective:
            trace.objective.append(map_objective(state, signals, pilots, hyper))
        if not (np.all(np.isfinite(state.gamma)) and np.all(np.isfinite(state.z))
                and np.isfinite(state.tau) and np.all(np.isfinite(state.g))):
            raise SolverDivergence("non-finite value in MAP iterate", trace)
        if change < opts.rel_tol:
            trace.converged = True
            break
    return state.z.copy(), state, trace
