"""Fast oracle and property checks that can run from an installed package.

The full suites live under ``tests/``; this module keeps a small, dependency
free subset so ``cfdetect selftest`` can vouch for a deployed build.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import covbase, ghvi, mapdet, specfun
from .evalharness import roc_curve
from .model import Hyperparameters, SolverOptions
from .simkit import PilotMatrix, ReceivedSignals


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _bessel_quad(nu, x):
    # K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt, scaled by exp(x)
    def f(t):
        with np.errstate(over="ignore"):
            return np.exp(-x * (np.cosh(t) - 1.0) + nu * t) * 0.5 * (1 + np.exp(-2 * nu * t))

    val, _ = integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return np.log(val) - x


def check_bessel():
    worst = 0.0
    for nu in (0.0, 0.3, 1.5, 4.0, 9.7):
        for x in (0.05, 0.7, 3.0, 25.0):
            ref = _bessel_quad(nu, x)
            worst = max(worst, abs(specfun.log_bessel_k(nu, x) - ref) / max(abs(ref), 1.0))
    return worst < 1e-10, f"max error {worst:.2e}"


def check_gig_moments():
    worst = 0.0
    for eta, psi, lam in ((2.0, 2.0, 0.5), (0.3, 5.0, -2.0), (4.0, 0.1, 1.7)):
        p = specfun.GigParams(eta, psi, lam)
        dens = lambda z, j: z ** (lam - 1 + j) * np.exp(-0.5 * (eta * z + psi / z))
        norm = integrate.quad(dens, 0, np.inf, args=(0,), epsrel=1e-12)[0]
        mean = integrate.quad(dens, 0, np.inf, args=(1,), epsrel=1e-12)[0] / norm
        inv = integrate.quad(dens, 0, np.inf, args=(-1,), epsrel=1e-12)[0] / norm
        got_mean, got_inv = specfun.gig_moments(p)
        worst = max(worst, abs(got_mean / mean - 1), abs(got_inv / inv - 1))
    return worst < 1e-8, f"max relative error {worst:.2e}"


def _instance(seed, K=2, M=2, N=8, L=6):
    rng = np.random.default_rng(seed)
    s = (rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N))) / np.sqrt(2)
    y = (rng.standard_normal((K, L, M)) + 1j * rng.standard_normal((K, L, M))) / np.sqrt(2)
    active = rng.random(N) < 0.4
    g = (rng.standard_normal((K, N, M)) + 1j * rng.standard_normal((K, N, M))) / np.sqrt(2)
    y += np.einsum("ln,kn,knm->klm", s, 2.0 * active[None, :] * np.ones((K, 1)), g)
    return ReceivedSignals(y), PilotMatrix(s), rng


def check_map_ascent():
    worst = 0.0
    for seed in range(5):
        signals, pilots, rng = _instance(seed)
        _, _, trace = mapdet.run_map(signals, pilots, SolverOptions(max_outer_iters=30), rng=rng)
        obj = np.asarray(trace.objective)
        drops = (obj[:-1] - obj[1:]) / np.maximum(np.abs(obj[1:]), 1.0)
        worst = max(worst, float(drops.max(initial=0.0)))
    return worst <= 1e-9, f"largest relative decrease {worst:.2e}"


def check_degenerate_equivalence():
    worst = 0.0
    hyper = Hyperparameters()
    for seed in range(5):
        signals, pilots, rng = _instance(seed)
        m = mapdet.init_map_state(signals, pilots, hyper, rng)
        v = ghvi.init_variational_state(signals, pilots, hyper, g_init=m.g.copy())
        v.mean_tau = m.tau
        mapdet.update_gamma_map(m, signals, pilots)
        mapdet.update_g_map(m, signals, pilots)
        ghvi.update_q_gamma(v, signals, pilots)
        v.var_gamma[:] = 0.0
        ghvi.update_q_g(v, signals, pilots)
        v.cov_g_scale[:] = 0.0
        worst = max(worst, float(np.max(np.abs(v.mu_gamma - m.gamma))),
                    float(np.max(np.abs(v.mu_g - m.g))))
    return worst <= 1e-12, f"max difference {worst:.2e}"


def check_cov_descent():
    worst_rise, worst_drift = 0.0, 0.0
    for seed in range(3):
        signals, pilots, rng = _instance(seed)
        beta = rng.uniform(0.5, 4.0, size=(signals.K, pilots.N))
        know = covbase.CovKnowledge(beta, 1.0, pilots)
        state = covbase.init_cov_state(signals, know)
        prev = state.cached_objective
        for _ in range(3):
            for n in range(pilots.N):
                covbase.cov_coord_update(state, know, n)
                cur = state.cached_objective
                worst_rise = max(worst_rise, (cur - prev) / max(abs(prev), 1.0))
                prev = cur
        fresh = covbase.cov_objective(state, know, signals)
        worst_drift = max(worst_drift, abs(fresh - prev) / abs(fresh))
    ok = worst_rise <= 1e-12 and worst_drift <= 1e-10
    return ok, f"largest rise {worst_rise:.2e}, cache drift {worst_drift:.2e}"


def check_roc():
    scores = np.array([0.1, 0.2, 0.3, 0.9, 1.0])
    truth = np.array([0, 0, 0, 1, 1], dtype=bool)
    roc = roc_curve(scores, truth, None)
    ok = roc.pmd[0] == 0 and roc.pfa[0] == 1 and roc.pmd[-1] == 1 and roc.pfa[-1] == 0
    ok = ok and roc.equal_error[1] == 0.0
    return ok, f"equal error {roc.equal_error[1]:.3g}"


CHECKS = {
    "log_bessel_k vs quadrature": check_bessel,
    "gig_moments vs quadrature": check_gig_moments,
    "MAP objective ascent": check_map_ascent,
    "zero-variance variational sweep equals MAP sweep": check_degenerate_equivalence,
    "covariance descent and cache drift": check_cov_descent,
    "ROC end points": check_roc,
}


def run_selftest() -> list:
    results = []
    for name, fn in CHECKS.items():
        start = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed CLI
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return results
