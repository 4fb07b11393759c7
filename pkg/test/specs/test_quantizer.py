import numpy as np
import pytest

from app.estimation import build_estimator
from app.impairments import eps_from_bits
from app.misc import crandn
from app.network import NetworkConfig
from app.quantizer import (
    agc_scale,
    build_codebook,
    cell_moments,
    codebook_table,
    gaussian_mse,
    lmmse_numeric,
    LLOYD_MAX_BITS,
    quantize_block,
    se_exact_quantization,
    uniform_thresholds,
    write_codebooks,
)
from app.se import sinr_mr_closed_form
from test.utilities import random_correlation, random_diagonal_correlation, synthetic_network


def test_one_bit_codebook():
    cb = build_codebook(1)
    assert cb.mse == pytest.approx(1 - 2 / np.pi, abs=1e-6)
    assert np.allclose(cb.levels, [-np.sqrt(2 / np.pi), np.sqrt(2 / np.pi)], atol=1e-6)
    assert np.allclose(cb.thresholds, [0.0], atol=1e-9)


def test_two_bit_codebook():
    cb = build_codebook(2)
    assert cb.n_levels == 4
    assert np.allclose(cb.levels, [-1.510, -0.4528, 0.4528, 1.510], atol=1e-3)
    assert cb.mse == pytest.approx(0.1175, abs=1e-4)


def test_effective_zeta_and_mse_ordering():
    mse = [build_codebook(b).mse for b in range(1, 9)]
    assert all(a > b for a, b in zip(mse, mse[1:]))
    for b in range(1, 6):
        assert 1.0 < build_codebook(b).effective_zeta < 2.0
    for b in range(6, 9):
        assert 1.0 < build_codebook(b).effective_zeta < 3.0


@pytest.mark.parametrize("bits", [1, 2, 3, 4, 5])
def test_lloyd_max_fixed_point(bits):
    cb = build_codebook(bits)
    midpoints = 0.5 * (cb.levels[1:] + cb.levels[:-1])
    assert np.allclose(cb.thresholds, midpoints, atol=1e-14)
    prob, first, _ = cell_moments(cb.thresholds)
    assert np.max(np.abs(first / prob - cb.levels)) < 1e-10
    # A fresh run lands on the same levels as the cached one.
    assert np.array_equal(build_codebook.__wrapped__(bits).levels, cb.levels)


@pytest.mark.parametrize("bits", range(1, 9))
def test_complex_distortion_band(bits):
    y = crandn(np.random.default_rng(bits), (200000, 1))
    y_q = quantize_block(y, [bits], [np.sqrt(0.5)]).y_q
    ratio = np.mean(np.abs(y - y_q) ** 2) / np.mean(np.abs(y) ** 2) * 4.0**bits
    upper = 4.0 if bits <= LLOYD_MAX_BITS else 9.0
    assert 1.0 < ratio < upper
    assert ratio == pytest.approx(build_codebook(bits).effective_zeta ** 2, rel=0.1)


def test_codebook_is_cached():
    assert build_codebook(3) is build_codebook(3)
    with pytest.raises(ValueError):
        build_codebook(0)


def test_empirical_mse():
    cb = build_codebook(3)
    x = np.random.default_rng(0).standard_normal(400000)
    assert np.mean((x - cb.quantize(x)) ** 2) == pytest.approx(cb.mse, rel=0.02)


def test_uniform_quantizer_mse():
    thresholds, levels = uniform_thresholds(1.0, 2)
    assert np.allclose(thresholds, [0.0])
    assert np.allclose(levels, [-0.5, 0.5])
    # E(|x| - 1/2)^2 = 1 - sqrt(2/pi) + 1/4
    assert gaussian_mse(thresholds, levels) == pytest.approx(1.25 - np.sqrt(2 / np.pi))


def test_codebook_table(tmpdir):
    rows = codebook_table([1, 2, 3])
    assert len(rows) == 14
    assert rows[0]["lower_threshold"] == -np.inf
    assert rows[1]["upper_threshold"] == np.inf
    path = str(tmpdir.join("codebooks.csv"))
    assert write_codebooks([1, 2], path) == 6
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == "bits,index,lower_threshold,upper_threshold,level,mse,effective_zeta"
    assert len(lines) == 7


def test_agc_scale():
    rng = np.random.default_rng(1)
    corr = random_diagonal_correlation(3, 2, rng, scale=1.0)
    energies = np.array([1.0, 2.0])
    expected = np.sqrt((energies @ corr.diag_r + 0.5) / 2)
    assert np.allclose(agc_scale(corr, energies, 0.5), expected)


def test_quantize_block_per_antenna():
    rng = np.random.default_rng(2)
    signal = (rng.standard_normal((100, 3)) + 1j * rng.standard_normal((100, 3))) * 2.0
    bits = np.array([1, 2, 1])
    scale = np.array([2.0, 2.0, 0.5])
    out = quantize_block(signal, bits, scale).y_q
    for m in range(3):
        levels = build_codebook(bits[m]).levels * scale[m]
        assert np.all(np.isin(np.round(out[:, m].real, 12), np.round(levels, 12)))
        assert np.all(np.isin(np.round(out[:, m].imag, 12), np.round(levels, 12)))
    # Antennas along another axis.
    moved = quantize_block(signal.T, bits, scale, axis=0).y_q
    assert np.allclose(moved, out.T)


def test_lmmse_numeric():
    rng = np.random.default_rng(3)
    n = 50000
    h = (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))) / np.sqrt(2)
    noise = (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))) / np.sqrt(2)
    z = h + np.sqrt(0.5) * noise
    W = lmmse_numeric(z, h)
    assert np.allclose(W, np.eye(2) / 1.5, atol=0.02)
    with pytest.raises(ValueError):
        lmmse_numeric(z[:100], h[:100])


def _network(seed):
    rng = np.random.default_rng(seed)
    corr = random_correlation(4, 2, rng)
    return synthetic_network(corr, NetworkConfig(M=4, K=2))


@pytest.mark.slow
def test_fine_quantization_matches_closed_form():
    network = _network(4)
    cfg = network.config
    q = network.pilot_energy
    profile = eps_from_bits(1.6, np.full(4, 8))
    state = build_estimator(network.correlation, profile, q, cfg.sigma2, cfg.tau_p)
    closed = sinr_mr_closed_form(network.correlation, state, profile, q, cfg.tau_c)
    exact = se_exact_quantization(network, np.full(4, 8), "MR", 20000, 5)
    assert np.allclose(exact.se, closed.se, rtol=0.05)


@pytest.mark.slow
def test_coarse_quantization_costs_rate():
    network = _network(6)
    coarse = se_exact_quantization(network, np.full(4, 1), "RZF", 10000, 7)
    fine = se_exact_quantization(network, np.full(4, 6), "RZF", 10000, 7)
    assert np.all(coarse.se < fine.se)
