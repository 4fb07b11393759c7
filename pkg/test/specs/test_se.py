import logging
import numpy as np
import pytest
from mock import patch

from app.estimation import build_estimator
from app.impairments import ImpairmentProfile
from app.se import (
    DENOMINATOR_TERMS,
    combine,
    rzf_combiner,
    se_from_sinr,
    sinr_mr_closed_form,
    sinr_uatf_monte_carlo,
    sum_se,
)
from test.utilities import random_correlation, random_eps


def test_se_from_sinr():
    assert se_from_sinr(1.0, 10, 200) == pytest.approx(0.95)
    assert se_from_sinr(3.0, 200, 200) == 0.0
    with pytest.raises(ValueError):
        se_from_sinr(1.0, 0, 200)
    with pytest.raises(ValueError):
        se_from_sinr(1.0, 201, 200)


def test_rzf_combiner_matches_explicit_formula():
    rng = np.random.default_rng(0)
    hhat = rng.standard_normal((2, 3, 2)) + 1j * rng.standard_normal((2, 3, 2))
    p = np.array([1.0, 0.5])
    V = rzf_combiner(hhat, p, 0.1)
    for t in range(2):
        H = hhat[t]
        gram = H @ np.diag(p) @ np.conj(H.T) + 0.1 * np.eye(3)
        assert np.allclose(V[t], np.linalg.solve(gram, H @ np.diag(p)))
    assert combine("MR", hhat, p, 0.1) is hhat
    with pytest.raises(ValueError):
        combine("ZF", hhat, p, 0.1)


def _instance(seed, M=4, K=2, sigma2=2e-20):
    rng = np.random.default_rng(seed)
    corr = random_correlation(M, K, rng)
    profile = ImpairmentProfile.from_eps(random_eps(M, rng, low=1.0, high=4.0))
    q = np.full(K, 5e-9) * rng.uniform(0.3, 1.0, K)
    p = np.full(K, 5e-9) * rng.uniform(0.3, 1.0, K)
    state = build_estimator(corr, profile, q, sigma2, K)
    return corr, profile, q, p, state


def test_closed_form_components():
    corr, profile, q, p, state = _instance(1)
    report = sinr_mr_closed_form(corr, state, profile, p, tau_c=200)
    assert set(report.components) == {"numerator", *DENOMINATOR_TERMS}
    for name in DENOMINATOR_TERMS:
        assert np.all(report.components[name] >= 0)
    trace_a = np.real(np.trace(state.A, axis1=1, axis2=2))
    assert np.allclose(report.components["numerator"], p * trace_a**2)
    assert np.allclose(report.components["noise"], 2e-20 * trace_a)
    assert np.allclose(report.se, se_from_sinr(report.sinr, 2, 200))
    assert sum_se(report) == pytest.approx(float(np.sum(report.se)))


def test_perfect_hardware_has_no_distortion_terms():
    corr, _, q, p, _ = _instance(2)
    profile = ImpairmentProfile.perfect(corr.M)
    state = build_estimator(corr, profile, q, 2e-20, 2)
    report = sinr_mr_closed_form(corr, state, profile, p)
    for name in ("self_distortion", "iui_distortion", "additional_distortion"):
        assert np.allclose(report.components[name], 0.0)
    assert np.allclose(report.components["data_distortion"], 0.0)
    assert report.se is None


def test_single_ue_saturates_without_noise():
    rng = np.random.default_rng(3)
    corr = random_correlation(4, 1, rng, scale=1.0)
    profile = ImpairmentProfile.perfect(4)
    state = build_estimator(corr, profile, np.ones(1), 1e-12, 1)
    report = sinr_mr_closed_form(corr, state, profile, np.ones(1))
    R = corr.R[0]
    limit = np.real(np.trace(R)) ** 2 / np.real(np.trace(R @ R))
    assert report.sinr[0] == pytest.approx(limit, rel=1e-6)


def test_single_ue_noise_limited_slope():
    rng = np.random.default_rng(4)
    corr = random_correlation(4, 1, rng, scale=1.0)
    profile = ImpairmentProfile.from_eps([0.2, 0.1, 0.3, 0.05])
    sinr = []
    for sigma2 in (1e6, 1e7):
        state = build_estimator(corr, profile, np.ones(1), sigma2, 1)
        sinr.append(sinr_mr_closed_form(corr, state, profile, np.ones(1)).sinr[0])
    # Pilot and data phases are both noise limited: SINR ~ sigma^-4.
    assert sinr[0] / sinr[1] == pytest.approx(100.0, rel=0.01)


def test_more_bits_never_hurt():
    corr, _, q, p, _ = _instance(5)
    values = []
    for bits in (2, 4, 8):
        profile = ImpairmentProfile.from_eps(np.full(corr.M, 1.6 * 2.0**-bits))
        state = build_estimator(corr, profile, q, 2e-20, 2)
        values.append(sinr_mr_closed_form(corr, state, profile, p).sinr)
    assert np.all(values[1] > values[0])
    assert np.all(values[2] > values[1])


@pytest.mark.parametrize("seed", [11, 12])
def test_closed_form_matches_monte_carlo(seed):
    corr, profile, q, p, state = _instance(seed)
    closed = sinr_mr_closed_form(corr, state, profile, p)
    mc = sinr_uatf_monte_carlo(
        "MR", corr, profile, p, q, 2e-20, 2, 100000, seed, state=state
    )
    assert np.all(np.abs(mc.sinr - closed.sinr) < 4 * mc.std_err)
    assert np.allclose(mc.components["noise"], closed.components["noise"], rtol=0.02)


@pytest.mark.slow
def test_closed_form_matches_monte_carlo_on_random_sizes():
    dims = np.random.default_rng(100)
    z_scores = []
    for seed in range(50):
        M = int(dims.integers(1, 17))
        K = int(dims.integers(1, 5))
        corr, profile, q, p, state = _instance(200 + seed, M=M, K=K)
        closed = sinr_mr_closed_form(corr, state, profile, p)
        mc = sinr_uatf_monte_carlo(
            "MR", corr, profile, p, q, 2e-20, K, 100000, seed, state=state
        )
        z_scores.extend(np.abs(mc.sinr - closed.sinr) / mc.std_err)
    z_scores = np.array(z_scores)
    assert np.mean(z_scores < 3) >= 0.9
    assert np.max(z_scores) < 6


@pytest.mark.slow
@pytest.mark.parametrize("seed", [21, 22, 23, 24, 25])
def test_closed_form_within_two_percent(seed):
    corr, profile, q, p, state = _instance(seed, M=8, K=3)
    closed = sinr_mr_closed_form(corr, state, profile, p)
    mc = sinr_uatf_monte_carlo(
        "MR", corr, profile, p, q, 2e-20, 3, 1000000, seed, state=state
    )
    assert np.allclose(mc.sinr, closed.sinr, rtol=0.02, atol=0)


def test_monte_carlo_reports_combined_terms():
    corr, profile, q, p, _ = _instance(19)
    report = sinr_uatf_monte_carlo("MR", corr, profile, p, q, 2e-20, 2, 2000, 4)
    assert set(report.components) == {
        "numerator",
        "interference",
        "noise",
        "data_distortion",
    }
    denominator = sum(
        report.components[name] for name in ("interference", "noise", "data_distortion")
    )
    assert np.allclose(report.sinr, report.components["numerator"] / denominator)


def test_monte_carlo_sinr_ignores_combiner_scale():
    corr, profile, q, p, state = _instance(17)
    args = ("MR", corr, profile, p, q, 2e-20, 2, 2000, 5)
    base = sinr_uatf_monte_carlo(*args, state=state)

    def scaled_mr(hhat, p=None, sigma2=None):
        return 3.7e5 * hhat

    with patch("app.se.mr_combiner", new=scaled_mr):
        scaled = sinr_uatf_monte_carlo(*args, state=state)
    assert np.allclose(scaled.sinr, base.sinr, rtol=1e-9, atol=0)
    assert np.allclose(scaled.std_err, base.std_err, rtol=1e-6, atol=0)


def test_single_ue_rzf_is_scaled_mr():
    # With K = 1 RZF is MR times p / (sigma2 + p |h|^2), constant when noise dominates.
    corr, profile, q, p, state = _instance(18, M=4, K=1, sigma2=1e-12)
    args = (corr, profile, p, q, 1e-12, 1, 2000, 6)
    mr = sinr_uatf_monte_carlo("MR", *args, state=state)
    rzf = sinr_uatf_monte_carlo("RZF", *args, state=state)
    assert np.allclose(rzf.sinr, mr.sinr, rtol=1e-5, atol=0)


def test_monte_carlo_rzf():
    corr, profile, q, p, _ = _instance(13)
    report = sinr_uatf_monte_carlo("RZF", corr, profile, p, q, 2e-20, 2, 4000, 1, tau_c=200)
    assert report.sinr.shape == (2,)
    assert np.all(report.sinr > 0)
    assert np.all(report.std_err > 0)
    assert np.allclose(report.se, se_from_sinr(report.sinr, 2, 200))


def test_monte_carlo_is_seeded():
    corr, profile, q, p, _ = _instance(14)
    a = sinr_uatf_monte_carlo("MR", corr, profile, p, q, 2e-20, 2, 2000, 3)
    b = sinr_uatf_monte_carlo("MR", corr, profile, p, q, 2e-20, 2, 2000, 3)
    assert np.array_equal(a.sinr, b.sinr)


def test_monte_carlo_needs_trials():
    corr, profile, q, p, _ = _instance(15)
    with pytest.raises(ValueError):
        sinr_uatf_monte_carlo("MR", corr, profile, p, q, 2e-20, 2, 999, 1)


def test_noisy_estimates_are_flagged(caplog):
    corr, profile, q, p, _ = _instance(16)
    with patch("app.se.MAX_REL_STD_ERR", 0.0):
        with caplog.at_level(logging.WARNING, logger="app.se"):
            report = sinr_uatf_monte_carlo("MR", corr, profile, p, q, 2e-20, 2, 1000, 1)
    assert report.flags == ["ue0:denominator-std-err", "ue1:denominator-std-err"]
    assert "relative standard error" in caplog.text
