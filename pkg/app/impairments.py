""" Additive hardware-distortion model and the ADC bits <-> impairment mapping. """
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .misc import crandn, freeze_array, make_rng


@dataclass(frozen=True)
class ImpairmentProfile:
    """Per-antenna impairment levels eps_m with their ADC constants zeta_m.

    When bits are present eps_m = zeta_m 2^-b_m."""

    eps: np.ndarray
    zeta: np.ndarray
    bits: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.eps < 0):
            raise ValueError("Impairment levels cannot be negative")
        if self.zeta.shape != self.eps.shape:
            raise ValueError("eps and zeta must have the same length")

    @classmethod
    def from_eps(cls, eps, zeta=1.6):
        eps = np.atleast_1d(np.asarray(eps, dtype=float))
        zeta = np.broadcast_to(np.asarray(zeta, dtype=float), eps.shape)
        return cls(freeze_array(eps), freeze_array(zeta))

    @classmethod
    def perfect(cls, M, zeta=1.6):
        """Ideal hardware: eps = 0 on every antenna."""
        return cls.from_eps(np.zeros(M), zeta)

    @property
    def M(self):
        return self.eps.shape[0]

    @property
    def x(self):
        """eps_m^2, the variables of the allocation programs."""
        return self.eps**2

    def integer_bits(self):
        """Bits as integers, or None when the profile was not built from bits."""
        if self.bits is None:
            return None
        return np.rint(self.bits).astype(int)


def eps_from_bits(zeta, bits, allow_any_zeta=False):
    """eps_m = zeta_m 2^-b_m."""
    bits = np.atleast_1d(np.asarray(bits, dtype=float))
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), bits.shape)
    if np.any(bits <= 0):
        raise ValueError("ADC resolutions must be positive")
    if not allow_any_zeta and np.any((zeta <= 1.0) | (zeta >= 2.0)):
        raise ValueError("zeta must lie in (1, 2)")
    eps = zeta * np.exp2(-bits)
    return ImpairmentProfile(freeze_array(eps), freeze_array(zeta), freeze_array(bits))


def bits_from_eps(zeta, eps):
    """Inverse of eps_from_bits: b_m = log2(zeta_m / eps_m)."""
    eps = np.asarray(eps, dtype=float)
    if np.any(eps <= 0):
        raise ValueError("eps must be positive to map back to bits")
    return np.log2(np.asarray(zeta, dtype=float) / eps)


def distortion_diag(channels, symbol_energies):
    """[D_h]_mm = sum_i E{|x_i|^2} |[h_i]_m|^2.

    channels has shape (..., M, K); the result has shape (..., M)."""
    channels = np.asarray(channels)
    energies = np.asarray(symbol_energies, dtype=float)
    return np.abs(channels) ** 2 @ energies


def distortion_sample(profile, channels, symbol_energies, seed):
    """Draw e = D_eps D_h^1/2 r with r ~ CN(0, I), one vector per channel draw."""
    rng = make_rng(seed)
    d_h = distortion_diag(channels, symbol_energies)
    r = crandn(rng, d_h.shape)
    return profile.eps * np.sqrt(d_h) * r


def average_distortion_power(profile, correlation, symbol_energies):
    """E{|e_m|^2} = eps_m^2 sum_i E{|x_i|^2} [R_i]_mm."""
    return profile.eps**2 * (np.asarray(symbol_energies) @ correlation.diag_r)
