"""Mean-field variational inference under the generalized hyperbolic prior.

The approximate posterior factorizes into one Gaussian per ``gamma_kn``, one
isotropic complex Gaussian per ``g_kn``, a GIG per user variance ``z_n``, a
Gamma per ``eta0_n`` and a Gamma for the noise precision ``tau``. Each factor
has a closed-form coordinate update given the moments of the others.
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
from .specfun import GammaParams, GigParams

__all__ = [
    "VariationalState",
    "Moments",
    "init_variational_state",
    "compute_moments",
    "expected_residual",
    "update_q_gamma",
    "update_q_g",
    "update_q_z",
    "update_q_eta",
    "update_q_tau",
    "partial_expected_log_joint",
    "check_hyper_validity",
    "run_ghvi",
]

VAR_FLOOR = 1e-15


@dataclass
class VariationalState:
    """Parameters of every variational factor plus the cached scalar moments.

    ``z_post``, ``eta0_post`` and ``tau_post`` stay ``None`` until their
    factor has been updated once; until then the ``mean_*`` caches hold the
    initial values (``<z> = <1/z> = 1``, ``<eta0> = eta0``, ``<tau> = KLM/||Y||^2``).
    """

    mu_gamma: np.ndarray  # (K, N)
    var_gamma: np.ndarray  # (K, N)
    mu_g: np.ndarray  # (K, N, M) complex
    cov_g_scale: np.ndarray  # (K, N)
    mean_z: np.ndarray  # (N,)
    mean_inv_z: np.ndarray  # (N,)
    mean_eta0: np.ndarray  # (N,)
    mean_tau: float
    z_post: GigParams | None = None
    eta0_post: GammaParams | None = None
    tau_post: GammaParams | None = None
    inverse_moment: str = "exact"

    def copy(self) -> "VariationalState":
        return VariationalState(
            self.mu_gamma.copy(), self.var_gamma.copy(), self.mu_g.copy(),
            self.cov_g_scale.copy(), self.mean_z.copy(), self.mean_inv_z.copy(),
            self.mean_eta0.copy(), self.mean_tau, self.z_post, self.eta0_post,
            self.tau_post, self.inverse_moment,
        )


@dataclass
class Moments:
    mean_gamma: np.ndarray
    mean_gamma_sq: np.ndarray
    mean_g: np.ndarray
    mean_g_normsq: np.ndarray
    mean_z: np.ndarray
    mean_inv_z: np.ndarray
    mean_eta0: np.ndarray
    mean_tau: float


def check_hyper_validity(hyper: Hyperparameters):
    """The Gamma factor on ``eta0`` is proper only if ``kappa1 > -lambda0/2``."""
    if not hyper.kappa1 > -hyper.lambda0 / 2 or not hyper.kappa2 > 0:
        raise ValueError("hyper-parameters violate kappa1 > -lambda0/2 and kappa2 > 0")


def init_variational_state(signals: ReceivedSignals, pilots: PilotMatrix,
                           hyper: Hyperparameters, rng=None, g_init=None,
                           inverse_moment: str = "exact") -> VariationalState:
    y, s = check_problem(signals, pilots)
    K, L, M = y.shape
    N = s.shape[1]
    if g_init is None:
        rng = np.random.default_rng(rng)
        g_init = (rng.standard_normal((K, N, M)) + 1j * rng.standard_normal((K, N, M))) / np.sqrt(2)
    energy = float(np.sum(np.abs(y) ** 2))
    return VariationalState(
        mu_gamma=np.zeros((K, N)),
        var_gamma=np.zeros((K, N)),
        mu_g=np.array(g_init, dtype=complex),
        cov_g_scale=np.zeros((K, N)),
        mean_z=np.ones(N),
        mean_inv_z=np.ones(N),
        mean_eta0=np.full(N, hyper.eta0),
        mean_tau=y.size / energy if energy > 0 else 1.0,
        inverse_moment=inverse_moment,
    )


def compute_moments(state: VariationalState) -> Moments:
    M = state.mu_g.shape[-1]
    return Moments(
        mean_gamma=state.mu_gamma,
        mean_gamma_sq=state.mu_gamma**2 + state.var_gamma,
        mean_g=state.mu_g,
        mean_g_normsq=np.sum(np.abs(state.mu_g) ** 2, axis=-1) + M * state.cov_g_scale,
        mean_z=state.mean_z,
        mean_inv_z=state.mean_inv_z,
        mean_eta0=state.mean_eta0,
        mean_tau=state.mean_tau,
    )


def expected_residual(state: VariationalState, signals: ReceivedSignals, pilots: PilotMatrix):
    """``E_Q ||Y_k - sum_n gamma_kn s_n g_kn^T||_F^2`` for each AP, shape ``(K,)``.

    Squared residual of the means plus, per link, ``||s_n||^2`` times
    ``var_gamma ||mu_g||^2 + mu_gamma^2 M scale + var_gamma M scale``.
    """
    y, s = check_problem(signals, pilots)
    M = y.shape[2]
    energy = np.sum(np.abs(s) ** 2, axis=0)
    mean_part = np.sum(np.abs(y - reconstruction(s, state.mu_gamma, state.mu_g)) ** 2, axis=(1, 2))
    mu_norm = np.sum(np.abs(state.mu_g) ** 2, axis=-1)
    var_part = energy[None, :] * (
        state.var_gamma * mu_norm
        + state.mu_gamma**2 * M * state.cov_g_scale
        + state.var_gamma * M * state.cov_g_scale
    )
    return mean_part + var_part.sum(axis=1)


def _order(N, order):
    return range(N) if order is None else [int(n) for n in order]


def _sweep_gamma(resid, s, energy, state, order):
    tau = state.mean_tau
    M = state.mu_g.shape[-1]
    for n in order:
        sn = s[:, n]
        mg = state.mu_g[:, n, :]
        old = state.mu_gamma[:, n].copy()
        v = sn.conj() @ resid + (old * energy[n])[:, None] * mg
        g_normsq = np.sum(np.abs(mg) ** 2, axis=1) + M * state.cov_g_scale[:, n]
        prec = tau * energy[n] * g_normsq + 0.5 * state.mean_inv_z[n]
        var = 0.5 / prec
        new = 2.0 * tau * np.real(np.sum(v * mg.conj(), axis=1)) * var
        state.var_gamma[:, n] = np.maximum(var, VAR_FLOOR)
        state.mu_gamma[:, n] = new
        resid -= (new - old)[:, None, None] * sn[None, :, None] * mg[:, None, :]


def _sweep_g(resid, s, energy, state, order):
    tau = state.mean_tau
    for n in order:
        sn = s[:, n]
        mgam = state.mu_gamma[:, n]
        old = state.mu_g[:, n, :].copy()
        v = sn.conj() @ resid + (mgam * energy[n])[:, None] * old
        scale = 1.0 / (tau * (mgam**2 + state.var_gamma[:, n]) * energy[n] + 1.0)
        new = (tau * mgam * scale)[:, None] * v
        state.cov_g_scale[:, n] = np.maximum(scale, VAR_FLOOR)
        state.mu_g[:, n, :] = new
        resid -= mgam[:, None, None] * sn[None, :, None] * (new - old)[:, None, :]


def update_q_gamma(state: VariationalState, signals: ReceivedSignals, pilots: PilotMatrix,
                   order=None):
    """Gaussian factors of every ``gamma_kn``, swept user by user."""
    y, s = check_problem(signals, pilots)
    resid = y - reconstruction(s, state.mu_gamma, state.mu_g)
    _sweep_gamma(resid, s, np.sum(np.abs(s) ** 2, axis=0), state, _order(s.shape[1], order))
    return state.mu_gamma, state.var_gamma


def update_q_g(state: VariationalState, signals: ReceivedSignals, pilots: PilotMatrix,
               order=None):
    """Isotropic complex Gaussian factors of every ``g_kn``."""
    y, s = check_problem(signals, pilots)
    resid = y - reconstruction(s, state.mu_gamma, state.mu_g)
    _sweep_g(resid, s, np.sum(np.abs(s) ** 2, axis=0), state, _order(s.shape[1], order))
    return state.mu_g, state.cov_g_scale


def update_q_z(state: VariationalState, hyper: Hyperparameters):
    """GIG factor of each ``z_n``; refreshes the cached ``<z>`` and ``<1/z>``."""
    K = state.mu_gamma.shape[0]
    eta = np.maximum(state.mean_eta0, specfun.PARAM_FLOOR)
    psi = np.maximum(hyper.psi0 + np.sum(state.mu_gamma**2 + state.var_gamma, axis=0),
                     specfun.PARAM_FLOOR)
    lam = np.full(eta.shape, hyper.lambda0 - K / 2.0)
    state.z_post = GigParams(eta=eta, psi=psi, lam=lam)
    state.mean_z, state.mean_inv_z = specfun.gig_moments(state.z_post, inverse=state.inverse_moment)
    return state.z_post


def update_q_eta(state: VariationalState, hyper: Hyperparameters):
    """Gamma factor of each ``eta0_n``."""
    check_hyper_validity(hyper)
    shape = np.full(state.mean_z.shape, hyper.kappa1 + hyper.lambda0 / 2.0)
    rate = hyper.kappa2 + state.mean_z / 2.0
    state.eta0_post = GammaParams(shape=shape, rate=rate)
    state.mean_eta0 = shape / rate
    return state.eta0_post


def update_q_tau(state: VariationalState, signals: ReceivedSignals, pilots: PilotMatrix,
                 hyper: Hyperparameters):
    """Gamma factor of the noise precision, shape ``KLM + c``."""
    y, _ = check_problem(signals, pilots)
    shape = y.size + hyper.c
    rate = hyper.d + float(np.sum(expected_residual(state, signals, pilots)))
    state.tau_post = GammaParams(shape=shape, rate=rate)
    state.mean_tau = shape / rate
    return state.tau_post


def partial_expected_log_joint(coord, state: VariationalState, signals: ReceivedSignals,
                               pilots: PilotMatrix, hyper: Hyperparameters) -> float:
    """Terms of ``E_Q[ln p(Y, Theta)]`` that involve one variational block.

    ``coord`` is one of ``("gamma", k, n)``, ``("g", k, n)``, ``("z", n)``,
    ``("eta", n)`` or ``("tau",)``. Additive constants free of that block's
    parameters are dropped. The ``gamma``/``g`` blocks return the full
    expected residual of their AP scaled by ``-<tau>`` plus their prior term.

    The ``eta`` block treats ``ln K_lambda0(sqrt(eta0 psi0))`` from the GIG
    normalizer as constant in ``eta0``, which is the objective the closed-form
    Gamma update maximizes; the neglected slope is of order ``lambda0``.
    Entropies are not included.
    """
    y, s = check_problem(signals, pilots)
    K, L, M = y.shape
    kind = coord[0]
    h = hyper
    if kind == "gamma":
        _, k, n = coord
        resid_k = expected_residual(state, signals, pilots)[k]
        second = state.mu_gamma[k, n] ** 2 + state.var_gamma[k, n]
        return float(-state.mean_tau * resid_k - 0.5 * state.mean_inv_z[n] * second)
    if kind == "g":
        _, k, n = coord
        resid_k = expected_residual(state, signals, pilots)[k]
        second = np.sum(np.abs(state.mu_g[k, n]) ** 2) + M * state.cov_g_scale[k, n]
        return float(-state.mean_tau * resid_k - second)
    if kind == "z":
        (_, n) = coord
        if state.z_post is None:
            raise ValueError("Q(z) has not been updated yet")
        p = GigParams(*(np.asarray(a)[n] for a in (state.z_post.eta, state.z_post.psi,
                                                   state.z_post.lam)))
        mean_z, mean_inv = specfun.gig_moments(p, inverse=state.inverse_moment)
        mean_log = specfun.gig_mean_log(p)
        gamma_sq = np.sum(state.mu_gamma[:, n] ** 2 + state.var_gamma[:, n])
        return float(
            (h.lambda0 - 1.0 - K / 2.0) * mean_log
            - 0.5 * mean_inv * (gamma_sq + h.psi0)
            - 0.5 * state.mean_eta0[n] * mean_z
        )
    if kind == "eta":
        (_, n) = coord
        if state.eta0_post is None:
            raise ValueError("Q(eta0) has not been updated yet")
        a = float(np.asarray(state.eta0_post.shape)[n])
        b = float(np.asarray(state.eta0_post.rate)[n])
        mean_log = specfun.gamma_mean_log(a, b)
        return float(
            (0.5 * h.lambda0 + h.kappa1 - 1.0) * mean_log
            - (a / b) * (0.5 * state.mean_z[n] + h.kappa2)
        )
    if kind == "tau":
        if state.tau_post is None:
            raise ValueError("Q(tau) has not been updated yet")
        a, b = float(state.tau_post.shape), float(state.tau_post.rate)
        resid = float(np.sum(expected_residual(state, signals, pilots)))
        return float((K * L * M + h.c - 1.0) * specfun.gamma_mean_log(a, b) - (a / b) * (resid + h.d))
    raise ValueError(f"unknown coordinate {coord!r}")


def run_ghvi(signals: ReceivedSignals, pilots: PilotMatrix, opts: SolverOptions | None = None,
             hyper: Hyperparameters | None = None, rng=None, g_init=None, order=None,
             inverse_moment: str = "exact"):
    """Run the variational detector.

    Returns
    -------
    scores : ndarray, shape (N,)
        Posterior means ``<z_n>``.
    state : VariationalState
    trace : Trace
    """
    opts = opts or SolverOptions()
    hyper = hyper or Hyperparameters()
    check_hyper_validity(hyper)
    y, s = check_problem(signals, pilots)
    state = init_variational_state(signals, pilots, hyper, rng=rng, g_init=g_init,
                                   inverse_moment=inverse_moment)
    energy = np.sum(np.abs(s) ** 2, axis=0)
    users = _order(s.shape[1], order)
    trace = Trace()
    recon = reconstruction(s, state.mu_gamma, state.mu_g)
    resid = y - recon
    for _ in range(opts.max_outer_iters):
        _sweep_gamma(resid, s, energy, state, users)
        _sweep_g(resid, s, energy, state, users)
        if not (np.all(np.isfinite(state.mu_gamma)) and np.all(np.isfinite(state.mu_g))):
            trace.rel_change.append(np.nan)
            raise SolverDivergence("non-finite coefficient in variational iterate", trace)
        update_q_z(state, hyper)
        if not (np.all(np.isfinite(state.mean_z)) and np.all(np.isfinite(state.mean_inv_z))):
            trace.rel_change.append(np.nan)
            raise SolverDivergence("non-finite GIG moment in variational iterate", trace)
        update_q_eta(state, hyper)
        update_q_tau(state, signals, pilots, hyper)
        new_recon = reconstruction(s, state.mu_gamma, state.mu_g)
        resid = y - new_recon
        change = relative_change(new_recon, recon)
        recon = new_recon
        trace.rel_change.append(change)
        trace.tau.append(state.mean_tau)
        if not (np.all(np.isfinite(state.mu_gamma)) and np.all(np.isfinite(state.mean_z))
                and np.isfinite(state.mean_tau) and np.all(np.isfinite(state.mu_g))):
            raise SolverDivergence("non-finite value in variational iterate", trace)
        if change < opts.rel_tol:
            trace.converged = True
            break
    return state.mean_z.copy(), state, trace
