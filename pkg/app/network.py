""" Network drops, spatial correlation matrices and pilot configuration. """
import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .misc import GeometryError, db2pow, dbm2watt, freeze_array, make_rng

logger = logging.getLogger(__name__)

CO_LOCATED_CASES = ("CoCorrI", "CoCorrD1", "CoCorrDK")
CHANNEL_CASES = CO_LOCATED_CASES + ("CellFree",)

# Attempts per UE before a drop is declared degenerate.
MAX_DROP_ATTEMPTS = 10_000

# Negative eigenvalues below this fraction of the trace trigger a PSD repair.
PSD_REPAIR_TOL = 1e-12


def energy_per_symbol(power_dbm, bandwidth_hz):
    """Convert a power in dBm into an energy per symbol (J) at the given bandwidth."""
    return float(dbm2watt(power_dbm)) / bandwidth_hz


@dataclass(frozen=True)
class NetworkConfig:
    M: int = 32
    K: int = 5
    case: str = "CoCorrI"
    side_length_km: float = 0.4
    min_dist_km: float = 0.01
    alpha: float = 3.76
    omega_db: float = 148.1
    sigma_sh_db: float = 10.0
    sigma_ang_deg: float = 10.0
    sigma_lsf_db: float = 4.0
    qbar_over_sigma2: float = 1.0
    bandwidth_hz: float = 20e6
    rho_max: float = energy_per_symbol(20.0, 20e6)
    sigma2: float = energy_per_symbol(-94.0, 20e6)
    tau_c: int = 200
    tau_p: Optional[int] = None

    def __post_init__(self):
        if self.case not in CHANNEL_CASES:
            raise ValueError(f"Unknown channel case {self.case}")
        if self.M < 1 or self.K < 1:
            raise ValueError("M and K must be at least 1")
        if self.tau_p is None:
            object.__setattr__(self, "tau_p", self.K)
        if self.tau_p < self.K:
            raise ValueError("tau_p must be at least K for orthogonal pilots")
        if self.tau_p > self.tau_c:
            raise ValueError("tau_p cannot exceed tau_c")
        for name in (
            "side_length_km",
            "min_dist_km",
            "alpha",
            "qbar_over_sigma2",
            "bandwidth_hz",
            "rho_max",
            "sigma2",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("sigma_sh_db", "sigma_ang_deg", "sigma_lsf_db"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")

    @classmethod
    def from_config(cls, config, **overrides):
        """Build a NetworkConfig from the `network` section of a Config."""
        net = config.network
        values = dict(
            M=int(net.M),
            K=int(net.K),
            case=net.case,
            side_length_km=float(net.side_length_km),
            min_dist_km=float(net.min_dist_km),
            alpha=float(net.alpha),
            omega_db=float(net.omega_db),
            sigma_sh_db=float(net.sigma_sh_db),
            sigma_ang_deg=float(net.sigma_ang_deg),
            sigma_lsf_db=float(net.sigma_lsf_db),
            qbar_over_sigma2=float(net.qbar_over_sigma2),
            bandwidth_hz=float(net.bandwidth_hz),
            rho_max=energy_per_symbol(net.max_tx_power_dbm, net.bandwidth_hz),
            sigma2=energy_per_symbol(net.noise_power_dbm, net.bandwidth_hz),
            tau_c=int(net.tau_c),
            tau_p=None if net.tau_p is None else int(net.tau_p),
        )
        values.update(overrides)
        return cls(**values)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def rho_bar(self):
        """Received pilot SNR target of the channel-inversion power control."""
        return self.qbar_over_sigma2 * self.sigma2

    @property
    def co_located(self):
        return self.case in CO_LOCATED_CASES

    @property
    def prelog(self):
        return 1.0 - self.tau_p / self.tau_c


@dataclass(frozen=True)
class Geometry:
    ue_positions: np.ndarray  # (K, 2) km
    antenna_positions: np.ndarray  # (M, 2) km

    def distances(self):
        """UE-antenna distances in km, shape (M, K)."""
        diff = self.antenna_positions[:, None, :] - self.ue_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def azimuths(self):
        """Nominal azimuth of each UE seen from the first antenna, shape (K,)."""
        diff = self.ue_positions - self.antenna_positions[0]
        return np.arctan2(diff[:, 1], diff[:, 0])


@dataclass(frozen=True)
class LsfDraws:
    """Log-normal large-scale fading draws in dB.

    shadow_db has shape (K,) for co-located arrays and (M, K) for cell-free
    antennas. variation_db is None (CoCorrI, CellFree), shape (M,) shared by
    all UEs (CoCorrD1) or shape (M, K) (CoCorrDK)."""

    shadow_db: np.ndarray
    variation_db: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CorrelationSet:
    R: np.ndarray  # (K, M, M)
    diag_r: np.ndarray  # (K, M)
    beta_bar: np.ndarray  # (K,)

    @classmethod
    def from_matrices(cls, R):
        R = np.asarray(R, dtype=complex)
        if R.ndim == 2:
            R = R[None]
        R = 0.5 * (R + np.conj(np.transpose(R, (0, 2, 1))))
        diag_r = np.real(np.diagonal(R, axis1=1, axis2=2))
        beta_bar = np.real(np.trace(R, axis1=1, axis2=2)) / R.shape[1]
        return cls(freeze_array(R), freeze_array(diag_r), freeze_array(beta_bar))

    @property
    def K(self):
        return self.R.shape[0]

    @property
    def M(self):
        return self.R.shape[1]

    def factors(self):
        """Square-root factors L_k with L_k L_k^H = R_k, from the eigendecomposition."""
        out = np.empty_like(self.R)
        for k in range(self.K):
            w, v = linalg.eigh(self.R[k])
            out[k] = v * np.sqrt(np.clip(w, 0.0, None))
        return out


@dataclass(frozen=True)
class NetworkRealization:
    config: NetworkConfig
    geometry: Geometry
    correlation: CorrelationSet
    pilot_energy: np.ndarray  # q_k, J/symbol
    beta_bar: np.ndarray

    @property
    def ue_positions(self):
        return self.geometry.ue_positions

    @property
    def antenna_positions(self):
        return self.geometry.antenna_positions


def pathloss(distance_km, alpha, omega_db):
    """Average channel gain omega^-1 d^-alpha without shadowing."""
    return 10.0 ** (-omega_db / 10.0) * np.asarray(distance_km, dtype=float) ** (
        -alpha
    )


def local_scattering(M, theta, sigma_ang):
    """Gaussian local scattering correlation of a half-wavelength ULA.

    theta is the nominal azimuth and sigma_ang the angular standard deviation,
    both in radians. The result is Hermitian Toeplitz with unit diagonal."""
    delta = np.arange(M)
    col = np.exp(1j * np.pi * delta * np.sin(theta)) * np.exp(
        -0.5 * (sigma_ang * np.pi * delta * np.cos(theta)) ** 2
    )
    return linalg.toeplitz(col)


def channel_inversion_energy(beta_bar, rho_bar, rho_max):
    """Statistical channel inversion: q_k = min(rho_max, rho_bar / beta_bar_k)."""
    return np.minimum(rho_max, rho_bar / np.asarray(beta_bar, dtype=float))


def pilot_book(K, tau_p):
    """Orthogonal unit-modulus pilots: the first K columns of a tau_p-point DFT."""
    if tau_p < K:
        raise ValueError("tau_p must be at least K")
    return linalg.dft(tau_p)[:, :K]


def repair_psd(matrix):
    """Clip negative eigenvalues of a Hermitian matrix at zero, keeping its trace."""
    w, v = linalg.eigh(matrix)
    trace = np.sum(w)
    if w[0] >= -PSD_REPAIR_TOL * abs(trace):
        return matrix
    clipped = np.clip(w, 0.0, None)
    logger.debug(
        "PSD repair clipped eigenvalue mass %.3e of trace %.3e", -np.sum(w[w < 0]), trace
    )
    clipped *= trace / np.sum(clipped)
    repaired = (v * clipped) @ np.conj(v.T)
    return 0.5 * (repaired + np.conj(repaired.T))


def place_antennas(cfg, rng):
    if cfg.co_located:
        center = np.full(2, cfg.side_length_km / 2.0)
        return np.tile(center, (cfg.M, 1))
    return rng.uniform(0.0, cfg.side_length_km, size=(cfg.M, 2))


def drop_users(cfg, antenna_positions, rng):
    """Uniform UE drop, resampling each UE until it keeps the minimum distance."""
    positions = np.empty((cfg.K, 2))
    for k in range(cfg.K):
        for _ in range(MAX_DROP_ATTEMPTS):
            candidate = rng.uniform(0.0, cfg.side_length_km, size=2)
            dist = np.hypot(*(antenna_positions - candidate).T)
            if np.all(dist >= cfg.min_dist_km):
                positions[k] = candidate
                break
        else:
            raise GeometryError(
                f"Could not place UE {k} at least {cfg.min_dist_km} km from every "
                f"antenna after {MAX_DROP_ATTEMPTS} attempts"
            )
    return positions


def draw_lsf(cfg, rng):
    if cfg.case == "CellFree":
        shadow = cfg.sigma_sh_db * rng.standard_normal((cfg.M, cfg.K))
    else:
        shadow = cfg.sigma_sh_db * rng.standard_normal(cfg.K)
    variation = None
    if cfg.case == "CoCorrD1":
        variation = cfg.sigma_lsf_db * rng.standard_normal(cfg.M)
    elif cfg.case == "CoCorrDK":
        variation = cfg.sigma_lsf_db * rng.standard_normal((cfg.M, cfg.K))
    return LsfDraws(shadow_db=shadow, variation_db=variation)


def large_scale_gains(cfg, geometry, lsf_draws):
    """Per-antenna large-scale fading coefficients beta_mk, shape (M, K)."""
    dist = geometry.distances()
    beta = pathloss(dist, cfg.alpha, cfg.omega_db)
    shadow = db2pow(lsf_draws.shadow_db)
    beta = beta * (shadow if shadow.ndim == 2 else shadow[None, :])
    if lsf_draws.variation_db is not None:
        variation = db2pow(lsf_draws.variation_db)
        beta = beta * (variation[:, None] if variation.ndim == 1 else variation)
    return beta


def build_correlation(cfg, geometry, lsf_draws):
    """R_k = D_beta^1/2 Rbar_k D_beta^1/2 for the channel case of cfg."""
    beta = large_scale_gains(cfg, geometry, lsf_draws)
    R = np.empty((cfg.K, cfg.M, cfg.M), dtype=complex)
    if cfg.co_located:
        thetas = geometry.azimuths()
        sigma_ang = np.deg2rad(cfg.sigma_ang_deg)
        for k in range(cfg.K):
            sqrt_beta = np.sqrt(beta[:, k])
            Rk = sqrt_beta[:, None] * local_scattering(
                cfg.M, thetas[k], sigma_ang
            ) * sqrt_beta[None, :]
            R[k] = repair_psd(Rk)
    else:
        for k in range(cfg.K):
            R[k] = np.diag(beta[:, k]).astype(complex)
    return CorrelationSet.from_matrices(R)


def drop_network(cfg, seed):
    """Drop UEs (and cell-free antennas), build correlations and pilot energies."""
    rng = make_rng(seed)
    antennas = place_antennas(cfg, rng)
    ues = drop_users(cfg, antennas, rng)
    geometry = Geometry(freeze_array(ues), freeze_array(antennas))
    correlation = build_correlation(cfg, geometry, draw_lsf(cfg, rng))
    q = channel_inversion_energy(correlation.beta_bar, cfg.rho_bar, cfg.rho_max)
    return NetworkRealization(
        config=cfg,
        geometry=geometry,
        correlation=correlation,
        pilot_energy=freeze_array(q),
        beta_bar=correlation.beta_bar,
    )


def sample_channels(corr, n_trials, seed):
    """Draw h_k ~ CN(0, R_k). Returns an array of shape (n_trials, M, K)."""
    rng = make_rng(seed)
    factors = corr.factors()
    w = (
        rng.standard_normal((corr.K, corr.M, n_trials))
        + 1j * rng.standard_normal((corr.K, corr.M, n_trials))
    ) / np.sqrt(2)
    h = np.einsum("kmn,knt->tmk", factors, w)
    return h
