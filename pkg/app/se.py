""" Achievable uplink spectral efficiency with receive combining. """
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimation import build_estimator, estimate_channels, pilot_observations
from .impairments import distortion_diag
from .misc import make_rng
from .network import sample_channels

logger = logging.getLogger(__name__)

COMBINERS = ("MR", "RZF")

# Denominator terms of the closed-form MR SINR, in report order.
DENOMINATOR_TERMS = (
    "self_distortion",
    "iui_distortion",
    "additional_distortion",
    "interference",
    "noise",
    "data_distortion",
)

MAX_REL_STD_ERR = 0.05
CHUNK_TRIALS = 4096


@dataclass
class SinrReport:
    sinr: np.ndarray
    components: dict
    se: Optional[np.ndarray] = None
    std_err: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    @property
    def K(self):
        return self.sinr.shape[0]


def se_from_sinr(sinr, tau_p, tau_c):
    """(1 - tau_p / tau_c) log2(1 + SINR)."""
    if tau_p <= 0 or tau_p > tau_c:
        raise ValueError("Need 0 < tau_p <= tau_c")
    return (1.0 - tau_p / tau_c) * np.log2(1.0 + np.asarray(sinr, dtype=float))


def sum_se(report):
    return float(np.sum(report.se))


def mr_combiner(hhat, p=None, sigma2=None):
    return hhat


def rzf_combiner(hhat, p, sigma2):
    """v_k = (sum_i p_i h_i h_i^H + sigma2 I)^-1 h_k p_k for every draw in hhat (..., M, K)."""
    p = np.asarray(p, dtype=float)
    M = hhat.shape[-2]
    gram = (hhat * p) @ np.conj(np.swapaxes(hhat, -1, -2))
    gram = gram + sigma2 * np.eye(M)
    return np.linalg.solve(gram, hhat * p)


def combine(kind, hhat, p, sigma2):
    if kind == "MR":
        return mr_combiner(hhat)
    if kind == "RZF":
        return rzf_combiner(hhat, p, sigma2)
    raise ValueError(f"Unknown combiner {kind}")


def sinr_mr_closed_form(corr, state, profile, p, tau_c=None):
    """Closed-form use-and-then-forget SINR of MR combining.

    Pilot energies, noise and pilot length are those the estimator state was
    built with. Returns the labelled numerator and denominator terms."""
    p = np.asarray(p, dtype=float)
    q = state.pilot_energy
    K, M = corr.K, corr.M
    x = profile.x
    R = np.asarray(corr.R)
    abs_r2 = np.abs(R) ** 2
    received = p @ corr.diag_r
    comps = {name: np.zeros(K) for name in ("numerator",) + DENOMINATOR_TERMS}
    for k in range(K):
        A = state.A[k]
        B = state.filter[k]
        c = 1.0 / (state.tau_p * q[k])
        diag_a = np.real(np.diagonal(A))
        trace_a = np.sum(diag_a)
        rb_diag = np.einsum("imn,nm->im", R, B)
        bilinear = np.einsum("m,mn,imn,n->i", x, np.abs(B) ** 2, abs_r2, x)
        comps["numerator"][k] = p[k] * trace_a**2
        comps["self_distortion"][k] = p[k] * np.sum(x * diag_a**2)
        comps["iui_distortion"][k] = c * np.sum(p * q * (np.abs(rb_diag) ** 2 @ x))
        comps["additional_distortion"][k] = c * np.sum(p * q * bilinear)
        comps["interference"][k] = np.sum(
            p * np.real(np.einsum("imn,nm->i", R, A))
        )
        comps["noise"][k] = state.sigma2 * trace_a
        comps["data_distortion"][k] = np.sum(x * received * diag_a)
    denominator = sum(comps[name] for name in DENOMINATOR_TERMS)
    sinr = comps["numerator"] / denominator
    se = None if tau_c is None else se_from_sinr(sinr, state.tau_p, tau_c)
    return SinrReport(sinr=sinr, components=comps, se=se)


def sinr_uatf_monte_carlo(
    kind,
    corr,
    profile,
    p,
    q,
    sigma2,
    tau_p,
    n_trials,
    seed,
    tau_c=None,
    state=None,
):
    """Use-and-then-forget SINR with moments estimated over joint draws.

    Pilot and data phases share each channel draw. Data-phase noise and
    distortion enter through their expectations given the channels and the
    combiner: sigma2 |v|^2 and sum_m eps_m^2 [D_h]_mm |v_m|^2.

    The report carries numerator, interference, noise and data_distortion.
    Pilot distortion and estimation error only act through the channel
    estimates, so their share is inside interference; the closed form's
    self, inter-user and additional distortion terms are not split out."""
    if n_trials < 1000:
        raise ValueError("Use at least 1000 trials")
    rng = make_rng(seed)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if state is None:
        state = build_estimator(corr, profile, q, sigma2, tau_p)
    K = corr.K
    x = profile.x

    sum_gain = np.zeros(K, dtype=complex)
    sum_abs2 = np.zeros((K, K))
    sum_s = np.zeros(K)
    sum_s2 = np.zeros(K)
    sum_noise = np.zeros(K)
    sum_dist = np.zeros(K)

    done = 0
    while done < n_trials:
        n = min(CHUNK_TRIALS, n_trials - done)
        H = sample_channels(corr, n, rng)
        Z = pilot_observations(H, q, profile, sigma2, tau_p, rng)
        V = combine(kind, estimate_channels(state, Z), p, sigma2)
        G = np.einsum("tmk,tmi->tki", np.conj(V), H)
        abs2 = np.abs(G) ** 2
        noise = sigma2 * np.sum(np.abs(V) ** 2, axis=1)
        d_h = distortion_diag(H, p)
        dist = np.einsum("m,tm,tmk->tk", x, d_h, np.abs(V) ** 2)
        s = abs2 @ p + noise + dist

        sum_gain += np.einsum("tkk->k", G)
        sum_abs2 += abs2.sum(axis=0)
        sum_s += s.sum(axis=0)
        sum_s2 += (s**2).sum(axis=0)
        sum_noise += noise.sum(axis=0)
        sum_dist += dist.sum(axis=0)
        done += n

    gain = sum_gain / n_trials
    second = sum_abs2 / n_trials
    numerator = p * np.abs(gain) ** 2
    interference = second @ p - numerator
    noise = sum_noise / n_trials
    dist = sum_dist / n_trials
    denominator = interference + noise + dist
    sinr = numerator / denominator

    # Delta-method standard errors of the two sample means entering the SINR.
    diag_second = np.diagonal(second)
    var_gain = np.maximum(diag_second - np.abs(gain) ** 2, 0.0)
    se_gain = np.sqrt(var_gain / n_trials)
    var_s = np.maximum(sum_s2 / n_trials - (sum_s / n_trials) ** 2, 0.0)
    se_den = np.sqrt(var_s / n_trials + (2.0 * p * np.abs(gain) * se_gain) ** 2)
    rel_den = se_den / denominator
    rel_num = 2.0 * se_gain / np.abs(gain)
    std_err = sinr * np.sqrt(rel_num**2 + rel_den**2)

    flags = []
    for k in np.flatnonzero(rel_den > MAX_REL_STD_ERR):
        logger.warning(
            "UE %d: relative standard error %.1f%% of the SINR denominator exceeds %.0f%%",
            k,
            100 * rel_den[k],
            100 * MAX_REL_STD_ERR,
        )
        flags.append(f"ue{k}:denominator-std-err")

    comps = {
        "numerator": numerator,
        "interference": interference,
        "noise": noise,
        "data_distortion": dist,
    }
    se = None if tau_c is None else se_from_sinr(sinr, tau_p, tau_c)
    return SinrReport(sinr=sinr, components=comps, se=se, std_err=std_err, flags=flags)
