import numpy as np
import pytest

from app.estimation import (
    build_estimator,
    despread,
    error_trace,
    estimate_channels,
    pilot_observations,
    psi_matrices,
    received_pilot_block,
)
from app.impairments import ImpairmentProfile
from app.misc import EstimationError
from app.network import CorrelationSet, pilot_book, sample_channels
from test.utilities import random_correlation, random_diagonal_correlation


def test_psi_diagonal_loading():
    rng = np.random.default_rng(0)
    corr = random_diagonal_correlation(3, 2, rng, scale=1.0)
    profile = ImpairmentProfile.from_eps([0.1, 0.2, 0.3])
    q = np.array([1.0, 2.0])
    Psi = psi_matrices(corr, profile, q, 0.5, 2)
    for k in range(2):
        loading = (0.5 + profile.x * (q @ corr.diag_r)) / (2 * q[k])
        assert np.allclose(Psi[k], corr.R[k] + np.diag(loading))


def test_estimator_matrices():
    rng = np.random.default_rng(1)
    corr = random_correlation(4, 3, rng, scale=1.0)
    profile = ImpairmentProfile.from_eps([0.1, 0.4, 0.2, 0.05])
    state = build_estimator(corr, profile, np.ones(3), 0.1, 3)
    for k in range(3):
        A = corr.R[k] @ np.linalg.solve(state.Psi[k], corr.R[k])
        assert np.allclose(state.A[k], A)
        assert np.allclose(state.filter[k], corr.R[k] @ np.linalg.inv(state.Psi[k]))
        assert np.min(np.linalg.eigvalsh(state.err_cov[k])) > -1e-10
    assert state.K == 3 and state.M == 4


def test_error_grows_with_distortion():
    rng = np.random.default_rng(2)
    corr = random_correlation(4, 2, rng, scale=1.0)
    q = np.ones(2)
    clean = build_estimator(corr, ImpairmentProfile.perfect(4), q, 0.1, 2)
    coarse = build_estimator(corr, ImpairmentProfile.from_eps(np.full(4, 0.5)), q, 0.1, 2)
    assert np.all(error_trace(coarse) > error_trace(clean))
    # Without noise or distortion the estimate is exact.
    exact = build_estimator(corr, ImpairmentProfile.perfect(4), q, 1e-12, 2)
    assert np.all(error_trace(exact) < 1e-6 * np.real(np.trace(corr.R, axis1=1, axis2=2)))


def test_estimation_error_matches_monte_carlo():
    rng = np.random.default_rng(3)
    corr = random_correlation(4, 2, rng, scale=1.0)
    profile = ImpairmentProfile.from_eps([0.3, 0.1, 0.2, 0.4])
    q = np.array([1.0, 0.5])
    state = build_estimator(corr, profile, q, 0.2, 2)
    h = sample_channels(corr, 40000, 4)
    z = pilot_observations(h, q, profile, 0.2, 2, 5)
    err = np.mean(np.sum(np.abs(h - estimate_channels(state, z)) ** 2, axis=1), axis=0)
    assert np.allclose(err, error_trace(state), rtol=0.03)


def test_pilot_block_and_observations_share_statistics():
    rng = np.random.default_rng(6)
    corr = random_correlation(3, 2, rng, scale=1.0)
    profile = ImpairmentProfile.from_eps([0.5, 0.2, 0.3])
    q = np.array([1.0, 2.0])
    sigma2, tau_p = 0.3, 3
    pilots = pilot_book(2, tau_p)
    h = sample_channels(corr, 40000, 7)
    block = received_pilot_block(h, pilots, q, profile, sigma2, 8)
    assert block.shape == (40000, 3, tau_p)
    z_block = despread(block, pilots, q, tau_p)
    z_fast = pilot_observations(h, q, profile, sigma2, tau_p, 9)
    expected = (sigma2 + profile.x * (q @ corr.diag_r))[:, None] / (tau_p * q[None, :])
    for z in (z_block, z_fast):
        var = np.mean(np.abs(z - h) ** 2, axis=0)
        assert np.allclose(var, expected, rtol=0.04)


def test_despread_rejects_non_unit_pilots():
    with pytest.raises(ValueError):
        despread(np.ones((1, 2, 2)), np.array([[1.0, 1.0], [1.0, 0.5]]), np.ones(2), 2)


def test_singular_psi_raises():
    v = np.array([1.0, 1.0j, -1.0, 0.5])
    corr = CorrelationSet.from_matrices(np.outer(v, np.conj(v))[None])
    with pytest.raises(EstimationError):
        build_estimator(corr, ImpairmentProfile.perfect(4), np.ones(1), 0.0, 1)


def test_non_positive_pilot_energy():
    rng = np.random.default_rng(0)
    corr = random_correlation(2, 2, rng)
    with pytest.raises(ValueError):
        build_estimator(corr, ImpairmentProfile.perfect(2), np.array([1.0, 0.0]), 1.0, 2)
