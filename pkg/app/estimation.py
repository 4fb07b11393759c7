""" LMMSE channel estimation under additive hardware distortion. """
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .impairments import distortion_diag
from .misc import EstimationError, crandn, freeze_array, make_rng

logger = logging.getLogger(__name__)

COND_WARNING = 1e10
COND_LIMIT = 1e14


@dataclass(frozen=True)
class EstimatorState:
    Psi: np.ndarray  # (K, M, M)
    filter: np.ndarray  # R_k Psi_k^-1
    err_cov: np.ndarray  # R_k - A_k
    A: np.ndarray  # R_k Psi_k^-1 R_k
    condition: np.ndarray  # cond(Psi_k)
    pilot_energy: np.ndarray
    sigma2: float
    tau_p: int

    @property
    def K(self):
        return self.Psi.shape[0]

    @property
    def M(self):
        return self.Psi.shape[1]


def psi_matrices(corr, profile, q, sigma2, tau_p):
    """Psi_k = R_k + (sigma2 I + sum_i q_i D_eps D_Ri D_eps) / (tau_p q_k)."""
    q = np.asarray(q, dtype=float)
    pilot_distortion = profile.eps**2 * (q @ corr.diag_r)
    noise_and_distortion = sigma2 + pilot_distortion
    Psi = np.array(corr.R, dtype=complex)
    idx = np.arange(corr.M)
    Psi[:, idx, idx] += noise_and_distortion[None, :] / (tau_p * q[:, None])
    return Psi


def _factor(psi, k):
    try:
        return linalg.cho_factor(psi, lower=True)
    except linalg.LinAlgError:
        jitter = 1e-14 * np.real(np.trace(psi)) / psi.shape[0]
        logger.warning("Psi_%d not positive definite, adding jitter %.3e", k, jitter)
        return linalg.cho_factor(psi + jitter * np.eye(psi.shape[0]), lower=True)


def build_estimator(corr, profile, q, sigma2, tau_p):
    """LMMSE estimator of every UE's channel from its de-spread pilot observation."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("Pilot energies must be positive")
    Psi = psi_matrices(corr, profile, q, sigma2, tau_p)
    filt = np.empty_like(Psi)
    A = np.empty_like(Psi)
    cond = np.empty(corr.K)
    for k in range(corr.K):
        cond[k] = np.linalg.cond(Psi[k])
        if cond[k] > COND_LIMIT:
            logger.error("Psi_%d is numerically singular (cond %.3e)", k, cond[k])
            raise EstimationError(f"Psi_{k} is numerically singular (cond {cond[k]:.3e})")
        if cond[k] > COND_WARNING:
            logger.warning("Psi_%d is ill-conditioned (cond %.3e)", k, cond[k])
        # Psi^-1 R is the Hermitian transpose of R Psi^-1.
        factor = _factor(Psi[k], k)
        filt[k] = np.conj(linalg.cho_solve(factor, corr.R[k]).T)
        Ak = filt[k] @ corr.R[k]
        A[k] = 0.5 * (Ak + np.conj(Ak.T))
    return EstimatorState(
        Psi=freeze_array(Psi),
        filter=freeze_array(filt),
        err_cov=freeze_array(np.asarray(corr.R) - A),
        A=freeze_array(A),
        condition=freeze_array(cond),
        pilot_energy=freeze_array(q),
        sigma2=float(sigma2),
        tau_p=int(tau_p),
    )


def error_trace(state):
    """tr(C_k) for every UE."""
    return np.real(np.trace(state.err_cov, axis1=1, axis2=2))


def estimate_channels(state, z):
    """h_hat_k = R_k Psi_k^-1 z_k for observations z of shape (..., M, K)."""
    return np.einsum("kmn,...nk->...mk", state.filter, z)


def despread(pilot_block, pilots, q, tau_p):
    """z_k = Y_p phi_k^* / (tau_p sqrt(q_k)).

    pilot_block has shape (..., M, tau_p) and pilots (tau_p, K); the result
    has shape (..., M, K)."""
    pilots = np.asarray(pilots)
    if not np.allclose(np.abs(pilots), 1.0, atol=1e-9):
        raise ValueError("Pilot sequences must have unit-modulus entries")
    q = np.asarray(q, dtype=float)
    return (pilot_block @ np.conj(pilots)) / (tau_p * np.sqrt(q))


def received_pilot_block(channels, pilots, q, profile, sigma2, seed):
    """Y_p = sum_i sqrt(q_i) h_i phi_i^T + N + Xi, one block per channel draw.

    channels has shape (n, M, K); the distortion columns e_j = D_eps D_h^1/2 r_j
    are drawn independently for every pilot symbol."""
    rng = make_rng(seed)
    n, M, _ = channels.shape
    tau_p = pilots.shape[0]
    q = np.asarray(q, dtype=float)
    signal = (channels * np.sqrt(q)) @ pilots.T
    d_h = distortion_diag(channels, q)
    noise = np.sqrt(sigma2) * crandn(rng, (n, M, tau_p))
    distortion = (profile.eps * np.sqrt(d_h))[..., None] * crandn(rng, (n, M, tau_p))
    return signal + noise + distortion


def pilot_observations(channels, q, profile, sigma2, tau_p, seed):
    """De-spread observations z_k = h_k + (n_k + D_eps D_h^1/2 r_k) / sqrt(tau_p q_k).

    Statistically identical to despreading received_pilot_block with
    orthogonal pilots, without forming the tau_p samples."""
    rng = make_rng(seed)
    q = np.asarray(q, dtype=float)
    d_h = distortion_diag(channels, q)
    shape = channels.shape
    noise = np.sqrt(sigma2) * crandn(rng, shape)
    distortion = (profile.eps * np.sqrt(d_h))[..., None] * crandn(rng, shape)
    return channels + (noise + distortion) / np.sqrt(tau_p * q)
