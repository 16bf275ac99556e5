"""Special functions and distribution moments used by the detectors.

Everything here works in the log domain where it matters. The posterior
GIG orders reached by the solvers grow like ``K/2`` with the number of
access points, and the scale arguments can be tiny for inactive users, so
``K_nu(x)`` itself is routinely outside double range.

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

__all__ = [
    "GigParams",
    "GammaParams",
    "GhHyper",
    "PARAM_FLOOR",
    "log_bessel_k",
    "bessel_k_ratio",
    "gig_moments",
    "gig_mean_log",
    "gig_logpdf",
    "gh_marginal_logpdf",
    "gamma_mean",
    "gamma_mean_log",
]

PARAM_FLOOR = 1e-12
MAX_ORDER = 1e4


def _as_positive(name: str, value: ArrayLike) -> NDArray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be finite and strictly positive")
    return arr


@dataclass(frozen=True)
class GigParams:
    """Generalized inverse Gaussian parameters.

    The density is proportional to ``z**(lam - 1) * exp(-(eta*z + psi/z)/2)``.
    Fields may be scalars or broadcastable arrays.
    """

    eta: ArrayLike
    psi: ArrayLike
    lam: ArrayLike

    def __post_init__(self):
        _as_positive("eta", self.eta)
        _as_positive("psi", self.psi)
        if not np.all(np.isfinite(np.asarray(self.lam, dtype=float))):
            raise ValueError("lam must be finite")


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution in shape/rate form."""

    shape: ArrayLike
    rate: ArrayLike

    def __post_init__(self):
        _as_positive("shape", self.shape)
        _as_positive("rate", self.rate)

    @property
    def mean(self):
        return gamma_mean(self.shape, self.rate)


@dataclass(frozen=True)
class GhHyper:
    """Hyper-parameters of the generalized hyperbolic prior on a coefficient."""

    eta0: float = 1e-6
    psi0: float = 1e-6
    lambda0: float = 1e-6

    def __post_init__(self):
        _as_positive("eta0", self.eta0)
        _as_positive("psi0", self.psi0)
        if not np.isfinite(self.lambda0):
            raise ValueError("lambda0 must be finite")


# kve returns nan for x beyond about 1e10; above this point the
# large-argument series is exact to rounding for the base orders used here
ASYMPTOTIC_ARG = 1e8


def _kve_base(mu: NDArray, x: NDArray) -> NDArray:
    """``exp(x) K_mu(x)`` for ``|mu| <= 3/2``, switching to the asymptotic series."""
    out = np.empty_like(x)
    small = x < ASYMPTOTIC_ARG
    out[small] = special.kve(mu[small], x[small])
    if not np.all(small):
        m, z = mu[~small], x[~small]
        four_mu2 = 4.0 * m * m
        term = np.ones_like(z)
        series = np.ones_like(z)
        for j in range(1, 4):
            term = term * (four_mu2 - (2 * j - 1) ** 2) / (j * 8.0 * z)
            series = series + term
        out[~small] = np.sqrt(np.pi / (2.0 * z)) * series
    return out


def log_bessel_k(nu: ArrayLike, x: ArrayLike) -> NDArray | float:
    """Natural log of the modified Bessel function of the second kind.

    The fractional part ``mu`` of ``|nu|`` (rounded into ``[-1/2, 1/2]``) is
    evaluated with the exponentially scaled ``scipy.special.kve`` (or its
    large-argument series once ``x >= 1e8``); integer
    steps up to ``|nu|`` use the forward recurrence on the ratio
    ``r = K_{v+1}/K_v``, i.e. ``r <- 1/r + 2(v+1)/x``, accumulated as a sum of
    logs. Forward recurrence is the stable direction for ``K``.

    Parameters
    ----------
    nu : array_like
        Order, ``|nu| <= 1e4``. ``K_{-nu} = K_nu`` is used.
    x : array_like
        Argument, strictly positive and finite.

    Returns
    -------
    ndarray or float
        ``ln K_nu(x)``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("log_bessel_k requires finite x > 0")
    nu = np.abs(np.asarray(nu, dtype=float))
    if not np.all(np.isfinite(nu)) or np.any(nu > MAX_ORDER):
        raise ValueError(f"log_bessel_k requires |nu| <= {MAX_ORDER:g}")
    nu, x = np.broadcast_arrays(nu, x)
    scalar = nu.ndim == 0
    nu = np.atleast_1d(nu).astype(float)
    x = np.atleast_1d(x).astype(float)

    steps = np.floor(nu + 0.5)
    mu = nu - steps
    out = np.log(_kve_base(mu, x)) - x
    todo = steps > 0
    if np.any(todo):
        xs, ms = x[todo], mu[todo]
        ratio = _kve_base(ms + 1.0, xs) / _kve_base(ms, xs)
        acc = out[todo] + np.log(ratio)
        left = steps[todo] - 1
        order = ms + 1.0
        while np.any(left > 0):
            live = left > 0
            ratio = np.where(live, 1.0 / ratio + 2.0 * order / xs, ratio)
            acc = np.where(live, acc + np.log(ratio), acc)
            order = order + 1.0
            left = left - 1
        out[todo] = acc
    return float(out[0]) if scalar else out.reshape(nu.shape)


def bessel_k_ratio(nu: ArrayLike, x: ArrayLike, shift: int = 1) -> NDArray | float:
    """``K_{nu+shift}(x) / K_nu(x)`` computed from log differences."""
    nu = np.asarray(nu, dtype=float)
    return np.exp(log_bessel_k(nu + shift, x) - log_bessel_k(nu, x))


def _floored(p: GigParams):
    eta = np.maximum(np.asarray(p.eta, dtype=float), PARAM_FLOOR)
    psi = np.maximum(np.asarray(p.psi, dtype=float), PARAM_FLOOR)
    return eta, psi, np.asarray(p.lam, dtype=float)


def gig_moments(p: GigParams, inverse: str = "exact"):
    """Mean and inverse mean of a GIG distribution.

    Parameters
    ----------
    p : GigParams
    inverse : {"exact", "shifted"}
        ``"exact"`` returns ``E[1/z] = sqrt(eta/psi) K_{lam-1}/K_lam``.
        ``"shifted"`` uses ``K_{lam+1}`` in the numerator instead, which differs
        from the exact moment by ``2*lam/psi``; it is kept only so the two
        variants can be compared.

    Returns
    -------
    mean, inv_mean : ndarray or float
    """
    eta, psi, lam = _floored(p)
    omega = np.sqrt(eta * psi)
    base = log_bessel_k(lam, omega)
    log_ratio_up = log_bessel_k(lam + 1.0, omega) - base
    mean = np.exp(0.5 * (np.log(psi) - np.log(eta)) + log_ratio_up)
    if inverse == "exact":
        log_ratio_inv = log_bessel_k(lam - 1.0, omega) - base
    elif inverse == "shifted":
        log_ratio_inv = log_ratio_up
    else:
        raise ValueError(f"unknown inverse-moment variant {inverse!r}")
    inv_mean = np.exp(0.5 * (np.log(eta) - np.log(psi)) + log_ratio_inv)
    return mean, inv_mean


def gig_mean_log(p: GigParams, step: float = 1e-5):
    """``E[ln z]`` under a GIG, via a central difference of ``ln K`` in the order."""
    eta, psi, lam = _floored(p)
    omega = np.sqrt(eta * psi)
    dlog = (log_bessel_k(lam + step, omega) - log_bessel_k(lam - step, omega)) / (2 * step)
    return 0.5 * (np.log(psi) - np.log(eta)) + dlog


def gig_logpdf(z: ArrayLike, p: GigParams):
    """Log density of a GIG distribution including its normalization."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0) or not np.all(np.isfinite(z)):
        raise ValueError("gig_logpdf requires z > 0")
    eta, psi, lam = _floored(p)
    lognorm = 0.5 * lam * (np.log(eta) - np.log(psi)) - np.log(2.0) - log_bessel_k(
        lam, np.sqrt(eta * psi)
    )
    return lognorm + (lam - 1.0) * np.log(z) - 0.5 * (eta * z + psi / z)


def gh_marginal_logpdf(gamma: ArrayLike, h: GhHyper):
    """Log density of the Gaussian scale mixture over a GIG variance.

    Integrating ``N(gamma | 0, z) * GIG(z | eta0, psi0, lambda0)`` over ``z``
    gives::

        eta0**(1/4) psi0**(-lambda0/2) (psi0 + gamma**2)**(lambda0/2 - 1/4)
        * K_{lambda0 - 1/2}(sqrt(eta0 (psi0 + gamma**2)))
        / (sqrt(2 pi) K_{lambda0}(sqrt(eta0 psi0)))
    """
    if not isinstance(h, GhHyper):
        raise TypeError("h must be a GhHyper")
    gamma = np.asarray(gamma, dtype=float)
    eta = max(float(h.eta0), PARAM_FLOOR)
    psi = max(float(h.psi0), PARAM_FLOOR)
    lam = float(h.lambda0)
    q = psi + gamma**2
    return (
        0.25 * np.log(eta)
        - 0.5 * lam * np.log(psi)
        + (0.5 * lam - 0.25) * np.log(q)
        + log_bessel_k(lam - 0.5, np.sqrt(eta * q))
        - 0.5 * np.log(2 * np.pi)
        - log_bessel_k(lam, np.sqrt(eta * psi))
    )


def gamma_mean(shape, rate):
    return np.asarray(shape, dtype=float) / np.asarray(rate, dtype=float)


def gamma_mean_log(shape, rate):
    """``E[ln x]`` for a Gamma(shape, rate) variable."""
    return special.digamma(shape) - np.log(rate)
