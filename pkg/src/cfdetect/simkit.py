"""Cell-free uplink simulator for grant-free activity detection.

Geometry, distance pathloss with log-normal shadowing, per-user power
control, Rayleigh/Rician small-scale fading, pilot book, activity draws and
received-signal synthesis.

Signals are expressed in units of the receiver noise power: the
``effective_beta`` of a link is its received per-symbol SNR and the noise
added by :func:`synthesize` has unit variance under the default config.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "SystemConfig",
    "Scenario",
    "ChannelRealization",
    "PilotMatrix",
    "ReceivedSignals",
    "Perturbation",
    "pathloss_db",
    "ap_grid",
    "build_scenario",
    "draw_activity",
    "rician_channel",
    "draw_channels",
    "generate_pilots",
    "synthesize",
    "perturb_knowledge",
    "model_covariance",
]

SHADOW_STD_DB = 4.0
MIN_DISTANCE_KM = 1e-3


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and radio constants of one cell-free deployment."""

    K: int = 4
    M: int = 4
    N: int = 50
    L: int = 20
    epsilon: float = 0.1
    snr_target_db: float = 6.0
    max_tx_power_dbm: float = 23.0
    noise_power_dbm: float = -109.0
    area_km: float = 3.0
    rician_fraction: float = 0.0
    rician_factor_max: float = 0.6
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "M", "N", "L"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.area_km > 0:
            raise ValueError("area_km must be positive")
        if not 0.0 <= self.rician_fraction <= 1.0:
            raise ValueError("rician_fraction must lie in [0, 1]")
        if self.rician_factor_max < 0:
            raise ValueError("rician_factor_max must be non-negative")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def noise_power(self) -> float:
        """Noise variance in reference units (the reference is the noise floor)."""
        return 1.0

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Scenario:
    ap_positions: NDArray
    user_positions: NDArray
    distances: NDArray
    shadowing: NDArray
    beta: NDArray
    tx_power: NDArray
    effective_beta: NDArray
    noise_power: float = 1.0

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def N(self) -> int:
        return self.beta.shape[1]


@dataclass
class ChannelRealization:
    g: NDArray  # (K, N, M) complex
    activity: NDArray  # (N,) int8
    rician_factor: NDArray  # (K, N)
    los_angle: NDArray  # (K, N)


@dataclass
class PilotMatrix:
    s: NDArray  # (L, N) complex

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=complex)
        if self.s.ndim != 2:
            raise ValueError("pilot matrix must be 2-D (L, N)")

    @property
    def L(self) -> int:
        return self.s.shape[0]

    @property
    def N(self) -> int:
        return self.s.shape[1]


@dataclass
class ReceivedSignals:
    y: NDArray  # (K, L, M) complex
    noise_power: float = 1.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=complex)
        if self.y.ndim != 3:
            raise ValueError("received signals must have shape (K, L, M)")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("received signals contain non-finite entries")

    @property
    def K(self) -> int:
        return self.y.shape[0]

    @property
    def L(self) -> int:
        return self.y.shape[1]

    @property
    def M(self) -> int:
        return self.y.shape[2]


@dataclass(frozen=True)
class Perturbation:
    """Knowledge errors and assumption violations for robustness runs.

    ``pathloss_error_db`` and ``noise_error_std_db`` only touch what a
    baseline is told; ``rician_fraction`` and ``epsilon_range`` change the
    data itself and are applied by the experiment runner.
    """

    pathloss_error_db: float = 0.0
    noise_error_std_db: float = 0.0
    rician_fraction: float | None = None
    epsilon_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.pathloss_error_db < 0 or self.noise_error_std_db < 0:
            raise ValueError("perturbation magnitudes must be non-negative")
        if self.rician_fraction is not None and not 0 <= self.rician_fraction <= 1:
            raise ValueError("rician_fraction must lie in [0, 1]")
        if self.epsilon_range is not None:
            lo, hi = self.epsilon_range
            if not 0 <= lo <= hi <= 1:
                raise ValueError("epsilon_range must satisfy 0 <= lo <= hi <= 1")


def pathloss_db(distance_km, shadowing_db=0.0):
    """Large-scale gain in dB: ``-128.1 - 36.7 log10(d[km]) + shadowing``."""
    return -128.1 - 36.7 * np.log10(distance_km) + shadowing_db


def ap_grid(K: int, area_km: float) -> NDArray:
    """AP positions at the centres of a near-square grid covering the area."""
    cols = math.ceil(math.sqrt(K))
    rows = math.ceil(K / cols)
    cells = [((c + 0.5) * area_km / cols, (r + 0.5) * area_km / rows)
             for r in range(rows) for c in range(cols)]
    return np.array(cells[:K], dtype=float)


def build_scenario(cfg: SystemConfig, rng: np.random.Generator) -> Scenario:
    aps = ap_grid(cfg.K, cfg.area_km)
    users = rng.uniform(0.0, cfg.area_km, size=(cfg.N, 2))
    dist = np.linalg.norm(aps[:, None, :] - users[None, :, :], axis=-1)
    # users closer than 1 m to an AP are re-drawn
    while np.any(dist < MIN_DISTANCE_KM):
        bad = np.any(dist < MIN_DISTANCE_KM, axis=0)
        users[bad] = rng.uniform(0.0, cfg.area_km, size=(int(bad.sum()), 2))
        dist = np.linalg.norm(aps[:, None, :] - users[None, :, :], axis=-1)
    shadow = rng.normal(0.0, SHADOW_STD_DB, size=dist.shape)
    beta = 10.0 ** (pathloss_db(dist, shadow) / 10.0)

    noise_w = float(dbm_to_watt(cfg.noise_power_dbm))
    snr = 10.0 ** (cfg.snr_target_db / 10.0)
    p_max = float(dbm_to_watt(cfg.max_tx_power_dbm))
    tx_power = np.minimum(snr * noise_w / beta.max(axis=0), p_max)
    effective_beta = tx_power[None, :] * beta / noise_w
    return Scenario(
        ap_positions=aps,
        user_positions=users,
        distances=dist,
        shadowing=shadow,
        beta=beta,
        tx_power=tx_power,
        effective_beta=effective_beta,
        noise_power=cfg.noise_power,
    )


def draw_activity(cfg: SystemConfig, rng: np.random.Generator, epsilon: float | None = None):
    eps = cfg.epsilon if epsilon is None else float(epsilon)
    return (rng.random(cfg.N) < eps).astype(np.int8)


def rician_channel(k_factor, los_angle, scatter):
    """Mix a uniform-linear-array LoS vector with a scattered component.

    ``k_factor`` and ``los_angle`` broadcast against ``scatter[..., 0]``;
    ``k_factor = inf`` returns the pure LoS vector.
    """
    scatter = np.asarray(scatter, dtype=complex)
    M = scatter.shape[-1]
    k = np.asarray(k_factor, dtype=float)[..., None]
    steer = np.exp(1j * np.arange(M) * np.asarray(los_angle, dtype=float)[..., None])
    with np.errstate(invalid="ignore", divide="ignore"):
        w_los = np.where(np.isinf(k), 1.0, np.sqrt(k / (1.0 + k)))
        w_nlos = np.where(np.isinf(k), 0.0, np.sqrt(1.0 / (1.0 + k)))
    return w_los * steer + w_nlos * scatter


def _cn(rng, size):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def draw_channels(
    scenario: Scenario,
    cfg: SystemConfig,
    rng: np.random.Generator,
    activity=None,
    epsilon: float | None = None,
) -> ChannelRealization:
    """Small-scale fading for every link plus the activity pattern.

    A ``cfg.rician_fraction`` share of users, chosen uniformly, get a Rician
    factor ``U(0, rician_factor_max)`` on each of their links.
    """
    K, N, M = cfg.K, cfg.N, cfg.M
    if activity is None:
        activity = draw_activity(cfg, rng, epsilon)
    n_rician = int(round(cfg.rician_fraction * N))
    rician_users = rng.choice(N, size=n_rician, replace=False) if n_rician else np.array([], int)
    k_factor = np.zeros((K, N))
    k_factor[:, rician_users] = rng.uniform(0.0, cfg.rician_factor_max, size=(K, n_rician))
    angle = rng.uniform(0.0, 2 * np.pi, size=(K, N))
    g = rician_channel(k_factor, angle, _cn(rng, (K, N, M)))
    return ChannelRealization(
        g=g, activity=np.asarray(activity, dtype=np.int8), rician_factor=k_factor, los_angle=angle
    )


def generate_pilots(cfg: SystemConfig, rng: np.random.Generator) -> PilotMatrix:
    """Complex Gaussian pilot book with every column scaled to energy ``L``."""
    s = _cn(rng, (cfg.L, cfg.N))
    s *= np.sqrt(cfg.L) / np.linalg.norm(s, axis=0)
    return PilotMatrix(s)


def synthesize(
    scenario: Scenario,
    channels: ChannelRealization,
    pilots: PilotMatrix,
    cfg: SystemConfig,
    rng: np.random.Generator,
    noise_power: float | None = None,
) -> ReceivedSignals:
    """Received pilot block ``Y_k = sum_n a_n sqrt(beta_kn) s_n g_kn^T + W_k`` per AP."""
    K, N = scenario.effective_beta.shape
    if channels.g.shape != (K, N, cfg.M) or pilots.s.shape != (cfg.L, N) or K != cfg.K:
        raise ValueError(
            f"dimension mismatch: beta {scenario.effective_beta.shape}, "
            f"g {channels.g.shape}, pilots {pilots.s.shape}, config K={cfg.K} M={cfg.M} L={cfg.L}"
        )
    sigma2 = cfg.noise_power if noise_power is None else float(noise_power)
    amp = channels.activity[None, :] * np.sqrt(scenario.effective_beta)
    y = np.einsum("ln,kn,knm->klm", pilots.s, amp, channels.g)
    if sigma2 > 0:
        y = y + np.sqrt(sigma2) * _cn(rng, y.shape)
    return ReceivedSignals(y=y, noise_power=sigma2)


def perturb_knowledge(scenario: Scenario, spec: Perturbation, rng: np.random.Generator) -> Scenario:
    """Copy of ``scenario`` holding what a knowledge-dependent baseline is told.

    Every link's pathloss gains an error ``U(0, pathloss_error_db)`` dB and the
    assumed noise power an error ``N(0, noise_error_std_db**2)`` dB.
    The input scenario is left untouched.
    """
    if spec.pathloss_error_db < 0 or spec.noise_error_std_db < 0:
        raise ValueError("perturbation magnitudes must be non-negative")
    err_db = rng.uniform(0.0, spec.pathloss_error_db, size=scenario.beta.shape)
    noise_db = rng.normal(0.0, spec.noise_error_std_db) if spec.noise_error_std_db > 0 else 0.0
    gain = 10.0 ** (err_db / 10.0)
    return dataclasses.replace(
        scenario,
        beta=scenario.beta * gain,
        effective_beta=scenario.effective_beta * gain,
        noise_power=scenario.noise_power * 10.0 ** (noise_db / 10.0),
        ap_positions=scenario.ap_positions.copy(),
        user_positions=scenario.user_positions.copy(),
        distances=scenario.distances.copy(),
        shadowing=scenario.shadowing.copy(),
        tx_power=scenario.tx_power.copy(),
    )


def model_covariance(effective_beta, activity, pilots: PilotMatrix, noise_power: float):
    """Per-AP covariance ``sum_n a_n beta_kn s_n s_n^H + sigma^2 I`` under Rayleigh fading."""
    s = pilots.s
    w = np.asarray(activity, dtype=float)[None, :] * np.asarray(effective_beta)
    q = np.einsum("kn,ln,jn->klj", w, s, s.conj())
    return q + noise_power * np.eye(s.shape[0])[None]
