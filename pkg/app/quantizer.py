""" Scalar ADC quantizers and the exact-quantization uplink pipeline. """
import csv
import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, stats

from .estimation import despread
from .misc import crandn, freeze_array, make_rng
from .network import pilot_book, sample_channels
from .se import MAX_REL_STD_ERR, SinrReport, combine, se_from_sinr

logger = logging.getLogger(__name__)

# Lloyd-Max is used up to this resolution, optimised uniform quantizers above.
LLOYD_MAX_BITS = 5
MAX_ITERATIONS = 200_000
LLOYD_TOL = 1e-13
MIN_TRAINING_TRIALS = 10_000
CHUNK_TRIALS = 4096


@dataclass(frozen=True)
class QuantizerCodebook:
    """Quantizer for a unit-variance real Gaussian input."""

    bits: int
    thresholds: np.ndarray  # L - 1 cell boundaries
    levels: np.ndarray  # L reconstruction levels
    mse: float
    iterations: int = 0

    @property
    def n_levels(self):
        return self.levels.shape[0]

    @property
    def effective_zeta(self):
        """zeta in eps = zeta 2^-b for this codebook, i.e. 2^b sqrt(MSE)."""
        return 2.0**self.bits * np.sqrt(self.mse)

    def quantize(self, x):
        idx = np.searchsorted(self.thresholds, x, side="right")
        return self.levels[idx]


@dataclass(frozen=True)
class QuantizedRx:
    y_q: np.ndarray
    agc_scale: np.ndarray


def _edges(thresholds):
    return np.concatenate(([-np.inf], thresholds, [np.inf]))


def _x_pdf(t):
    out = np.zeros_like(t)
    finite = np.isfinite(t)
    out[finite] = t[finite] * stats.norm.pdf(t[finite])
    return out


def cell_moments(thresholds):
    """Probability, first and second moment of a standard Gaussian on every cell."""
    edges = _edges(thresholds)
    lo, hi = edges[:-1], edges[1:]
    prob = stats.norm.cdf(hi) - stats.norm.cdf(lo)
    first = stats.norm.pdf(lo) - stats.norm.pdf(hi)
    second = prob + _x_pdf(lo) - _x_pdf(hi)
    return prob, first, second


def gaussian_mse(thresholds, levels):
    prob, first, second = cell_moments(thresholds)
    return float(np.sum(second - 2.0 * levels * first + levels**2 * prob))


def _lloyd_max(bits):
    n_levels = 2**bits
    levels = stats.norm.ppf((np.arange(n_levels) + 0.5) / n_levels)
    for i in range(MAX_ITERATIONS):
        thresholds = 0.5 * (levels[1:] + levels[:-1])
        prob, first, _ = cell_moments(thresholds)
        new_levels = first / prob
        change = np.max(np.abs(new_levels - levels))
        levels = new_levels
        if change < LLOYD_TOL:
            break
    else:
        raise RuntimeError(
            f"Lloyd-Max failed to converge after {MAX_ITERATIONS} iterations"
        )
    thresholds = 0.5 * (levels[1:] + levels[:-1])
    return thresholds, levels, i + 1


def uniform_thresholds(step, n_levels):
    """Cell boundaries and levels of a symmetric midrise uniform quantizer."""
    levels = (np.arange(n_levels) - (n_levels - 1) / 2.0) * step
    thresholds = (np.arange(1, n_levels) - n_levels / 2.0) * step
    return thresholds, levels


def _optimal_uniform(bits):
    n_levels = 2**bits

    def mse(step):
        return gaussian_mse(*uniform_thresholds(step, n_levels))

    res = optimize.minimize_scalar(
        mse,
        bounds=(0.1 / n_levels, 20.0 / n_levels),
        method="bounded",
        options={"xatol": 1e-12 / n_levels},
    )
    thresholds, levels = uniform_thresholds(res.x, n_levels)
    return thresholds, levels, int(res.nfev)


@functools.lru_cache(maxsize=None)
def build_codebook(bits):
    """Gaussian-optimised quantizer with 2^bits levels."""
    bits = int(bits)
    if bits < 1:
        raise ValueError("A quantizer needs at least one bit")
    if bits <= LLOYD_MAX_BITS:
        thresholds, levels, iterations = _lloyd_max(bits)
    else:
        thresholds, levels, iterations = _optimal_uniform(bits)
    mse = gaussian_mse(thresholds, levels)
    logger.debug("Codebook with %d bits: MSE %.6e after %d steps", bits, mse, iterations)
    return QuantizerCodebook(
        bits=bits,
        thresholds=freeze_array(thresholds),
        levels=freeze_array(levels),
        mse=mse,
        iterations=iterations,
    )


def codebook_table(bits_list):
    """One row per reconstruction level, for CSV export."""
    rows = []
    for bits in bits_list:
        cb = build_codebook(bits)
        edges = _edges(cb.thresholds)
        for i, level in enumerate(cb.levels):
            rows.append(
                {
                    "bits": cb.bits,
                    "index": i,
                    "lower_threshold": edges[i],
                    "upper_threshold": edges[i + 1],
                    "level": level,
                    "mse": cb.mse,
                    "effective_zeta": cb.effective_zeta,
                }
            )
    return rows


def write_codebooks(bits_list, path):
    rows = codebook_table(bits_list)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return len(rows)


def agc_scale(corr, energies, sigma2):
    """Per-antenna standard deviation per real dimension of the received signal."""
    power = np.asarray(energies, dtype=float) @ corr.diag_r + sigma2
    return np.sqrt(power / 2.0)


def quantize_block(signal, bits, scale, axis=-1):
    """Quantize real and imaginary parts of every antenna stream.

    Each stream is divided by its AGC scale, quantized with the codebook of
    its antenna's resolution and scaled back."""
    bits = np.asarray(bits, dtype=int)
    scale = np.asarray(scale, dtype=float)
    moved = np.moveaxis(np.asarray(signal), axis, -1)
    out = np.empty_like(moved, dtype=complex)
    for b in np.unique(bits):
        mask = bits == b
        cb = build_codebook(int(b))
        s = moved[..., mask] / scale[mask]
        out[..., mask] = (cb.quantize(s.real) + 1j * cb.quantize(s.imag)) * scale[mask]
    return QuantizedRx(y_q=np.moveaxis(out, -1, axis), agc_scale=scale)


def lmmse_numeric(z, h, min_trials=MIN_TRAINING_TRIALS):
    """Sample-moment LMMSE filter W = E{h z^H} E{z z^H}^-1 from n draws of shape (n, M)."""
    n = z.shape[0]
    if n < min_trials:
        raise ValueError(f"Numeric LMMSE needs at least {min_trials} trials")
    c_hz = h.T @ np.conj(z) / n
    c_zz = z.T @ np.conj(z) / n
    c_zz = 0.5 * (c_zz + np.conj(c_zz.T))
    if np.linalg.cond(c_zz) > 1e12:
        jitter = 1e-10 * np.real(np.trace(c_zz)) / c_zz.shape[0]
        logger.debug("Regularising sample covariance with %.3e", jitter)
        c_zz = c_zz + jitter * np.eye(c_zz.shape[0])
    return np.conj(linalg.solve(c_zz, np.conj(c_hz.T), assume_a="pos").T)


def _quantized_pilots(network, bits, channels, pilots, pilot_scale, rng):
    cfg = network.config
    q = network.pilot_energy
    n, M, _ = channels.shape
    block = (channels * np.sqrt(q)) @ pilots.T
    block = block + np.sqrt(cfg.sigma2) * crandn(rng, (n, M, cfg.tau_p))
    y_q = quantize_block(block, bits, pilot_scale, axis=-2).y_q
    return despread(y_q, pilots, q, cfg.tau_p)


def train_filters(network, bits, n_train, rng, pilots, pilot_scale):
    """Numeric LMMSE filters W_k from quantized training pilots."""
    H = sample_channels(network.correlation, n_train, rng)
    Z = _quantized_pilots(network, bits, H, pilots, pilot_scale, rng)
    return np.stack([lmmse_numeric(Z[:, :, k], H[:, :, k]) for k in range(H.shape[2])])


def se_exact_quantization(
    network, bits, kind, n_trials, seed, p=None, n_train=None
):
    """Per-UE SE when pilots and data pass through the actual quantizers.

    Filters are trained on a separate set of draws; the SINR of UE k is
    |a_k|^2 / (E|s_hat_k|^2 - |a_k|^2) with a_k = E{s_hat_k s_k^*}."""
    rng = make_rng(seed)
    cfg = network.config
    corr = network.correlation
    q = network.pilot_energy
    p = q if p is None else np.asarray(p, dtype=float)
    bits = np.asarray(bits, dtype=int)
    K = corr.K
    pilots = pilot_book(K, cfg.tau_p)
    pilot_scale = agc_scale(corr, q, cfg.sigma2)
    data_scale = agc_scale(corr, p, cfg.sigma2)
    W = train_filters(network, bits, n_train or n_trials, rng, pilots, pilot_scale)

    sum_a = np.zeros(K, dtype=complex)
    sum_abs2 = np.zeros(K)
    sum_abs4 = np.zeros(K)
    done = 0
    while done < n_trials:
        n = min(CHUNK_TRIALS, n_trials - done)
        H = sample_channels(corr, n, rng)
        Z = _quantized_pilots(network, bits, H, pilots, pilot_scale, rng)
        hhat = np.einsum("kmn,tnk->tmk", W, Z)
        V = combine(kind, hhat, p, cfg.sigma2)
        s = crandn(rng, (n, K))
        y = H @ (np.sqrt(p) * s)[..., None]
        y = y[..., 0] + np.sqrt(cfg.sigma2) * crandn(rng, (n, cfg.M))
        y_q = quantize_block(y, bits, data_scale).y_q
        s_hat = np.einsum("tmk,tm->tk", np.conj(V), y_q)
        sum_a += np.sum(s_hat * np.conj(s), axis=0)
        abs2 = np.abs(s_hat) ** 2
        sum_abs2 += abs2.sum(axis=0)
        sum_abs4 += (abs2**2).sum(axis=0)
        done += n

    a = sum_a / n_trials
    power = sum_abs2 / n_trials
    signal = np.abs(a) ** 2
    denominator = power - signal
    sinr = signal / denominator

    rel_den = np.sqrt(
        np.maximum(sum_abs4 / n_trials - power**2, 0.0) / n_trials
    ) / denominator
    flags = []
    for k in np.flatnonzero(rel_den > MAX_REL_STD_ERR):
        logger.warning(
            "UE %d: relative standard error %.1f%% of the quantized SINR denominator",
            k,
            100 * rel_den[k],
        )
        flags.append(f"ue{k}:denominator-std-err")
    return SinrReport(
        sinr=sinr,
        components={"signal": signal, "interference_and_distortion": denominator},
        se=se_from_sinr(sinr, cfg.tau_p, cfg.tau_c),
        std_err=sinr * rel_den,
        flags=flags,
    )
