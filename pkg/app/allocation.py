""" Minimum pilot-distortion ADC bit allocation and integer rounding. """
import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .impairments import ImpairmentProfile
from .misc import AllocationError, freeze_array

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


@dataclass(frozen=True)
class KktReport:
    ok: bool
    budget_residual: float  # sum_m b_m - b_tot
    multipliers: np.ndarray  # lambda_1 recovered from every stationarity equation
    stationarity_spread: float  # (max - min) / mean of the multipliers
    complementary_slackness: float


def pilot_power_profile(q, corr):
    """p_m^u = sum_i q_i [R_i]_mm, the undistorted received pilot power per antenna."""
    return np.asarray(q, dtype=float) @ corr.diag_r


def pilot_distortion(eps, p_u):
    """Pilot distortion sum_m eps_m^2 p_m^u, the quantity being minimised."""
    return float(np.sum(np.asarray(eps) ** 2 * np.asarray(p_u)))


def equal_allocation(M, b_tot, zeta=1.6):
    bits = np.full(M, b_tot / M)
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), bits.shape)
    return ImpairmentProfile(
        freeze_array(zeta * np.exp2(-bits)), freeze_array(zeta), freeze_array(bits)
    )


def allocate_min_pilot_distortion(p_u, zeta, b_tot):
    """Closed-form allocation minimising the pilot distortion under a bit budget.

    eps_m = (2^-b_tot prod_m' zeta_m' sqrt(p_m'/p_m))^(1/M), evaluated in the
    log2 domain so the products never overflow."""
    p_u = np.asarray(p_u, dtype=float)
    if np.any(p_u <= 0) or not np.all(np.isfinite(p_u)):
        raise AllocationError("Received pilot powers must be positive and finite")
    M = p_u.shape[0]
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), p_u.shape)
    log_zeta = np.log2(zeta)
    log_p = np.log2(p_u)
    log_eps = (np.sum(log_zeta) - b_tot) / M + 0.5 * (np.mean(log_p) - log_p)
    bits = log_zeta - log_eps
    return ImpairmentProfile(
        freeze_array(np.exp2(log_eps)), freeze_array(zeta), freeze_array(bits)
    )


def verify_kkt(eps, p_u, zeta, b_tot, tol=1e-8):
    """Check the optimality conditions of the pilot-distortion program.

    Stationarity gives lambda_1 = 2 ln2 eps_m^2 p_m^u for every antenna; the
    candidates must agree, be nonnegative and the budget must be active."""
    eps = np.asarray(eps, dtype=float)
    p_u = np.asarray(p_u, dtype=float)
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), eps.shape)
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    budget_residual = float(np.sum(np.log2(zeta / eps)) - b_tot)
    multipliers = 2.0 * LN2 * eps**2 * p_u
    lam = float(np.mean(multipliers))
    spread = float((np.max(multipliers) - np.min(multipliers)) / lam)
    slackness = abs(lam * budget_residual)
    # Feasibility and complementary slackness together require an active budget.
    ok = np.all(multipliers >= 0) and spread < tol and abs(budget_residual) < tol
    if not ok:
        logger.debug(
            "KKT check failed: budget residual %.3e, stationarity spread %.3e",
            budget_residual,
            spread,
        )
    return KktReport(
        ok=bool(ok),
        budget_residual=budget_residual,
        multipliers=multipliers,
        stationarity_spread=spread,
        complementary_slackness=slackness,
    )


def _round_half_away(values):
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def round_to_integer_bits(b_op, b_tot):
    """Map real-valued bits to integers that spend exactly b_tot bits, each >= 1.

    Starts from the nearest integers, floors them at 1 and then adds one bit
    to the N lowest (or removes one from the N highest) resolutions until the
    budget is met. Ties go to the lowest antenna index."""
    b_op = np.asarray(b_op, dtype=float)
    M = b_op.shape[0]
    b_tot = int(b_tot)
    if b_tot < M:
        raise AllocationError(f"A budget of {b_tot} bits cannot give {M} antennas 1 bit each")
    bits = _round_half_away(b_op).astype(int)
    while True:
        bits = np.maximum(bits, 1)
        n_diff = b_tot - int(np.sum(bits))
        if n_diff == 0:
            return bits
        if n_diff > 0:
            order = np.argsort(bits, kind="stable")
            bits[order[: min(n_diff, M)]] += 1
        else:
            order = np.argsort(-bits, kind="stable")
            bits[order[: min(-n_diff, M)]] -= 1


def solve_min_pilot_distortion_numeric(p_u, zeta, b_tot, tol=1e-14):
    """SLSQP solve of the pilot-distortion program in u = ln(eps).

    Used to check the closed form; returns the eps vector."""
    p_u = np.asarray(p_u, dtype=float)
    if np.any(p_u <= 0):
        raise AllocationError("Received pilot powers must be positive")
    M = p_u.shape[0]
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), p_u.shape)
    weights = p_u / np.mean(p_u)
    spare = b_tot - float(np.sum(np.log2(zeta)))
    u0 = np.log(zeta) - b_tot / M * LN2
    scale = 1.0 / float(np.sum(weights * np.exp(2.0 * u0)))

    # The budget sum_m log2(zeta_m / eps_m) <= b_tot is linear in u.
    budget = {
        "type": "ineq",
        "fun": lambda u: spare + np.sum(u) / LN2,
        "jac": lambda u: np.full(M, 1.0 / LN2),
    }
    res = optimize.minimize(
        lambda u: scale * np.sum(weights * np.exp(2.0 * u)),
        u0,
        jac=lambda u: 2.0 * scale * weights * np.exp(2.0 * u),
        method="SLSQP",
        constraints=[budget],
        options={"ftol": tol, "maxiter": 1000},
    )
    if not res.success:
        logger.warning("Numeric pilot-distortion solve stopped early: %s", res.message)
    return np.exp(res.x)
