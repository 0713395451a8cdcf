import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigvalsh_tridiagonal

from multispike.classic_tests import (
    ASYMPTOTIC_POWER,
    TW1_QUANTILES,
    beta_clr,
    beta_john_lw_cm,
    beta_tw,
    caima_statistic,
    caima_test,
    clr_test,
    envelope_lambda,
    envelope_mu,
    envelope_w,
    john_statistic,
    john_test,
    lw_statistic,
    lw_test,
    tw_quantile,
    tw_scaling,
    tw_test,
)
from multispike.errors import DomainError
from multispike.spiked_sim import SpikedParams, eigen_data, generate_data, stream


def npower_oracle(alpha, shift):
    z = mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * mpmath.mpf(alpha))  # upper α point
    return float(mpmath.ncdf(shift - z))


def test_envelopes_against_mpmath():
    c, alpha = 0.6, 0.05
    h = [0.5, 0.35]
    w_l = -0.5 * sum(math.log(1 - a * b / c) for a in h for b in h)
    w_m = -0.5 * sum(math.log(1 - a * b / c) + a * b / c for a in h for b in h)
    assert envelope_lambda(h, c, alpha) == pytest.approx(npower_oracle(alpha, math.sqrt(w_l)), rel=1e-12)
    assert envelope_mu(h, c, alpha) == pytest.approx(npower_oracle(alpha, math.sqrt(w_m)), rel=1e-12)


def test_closed_form_powers_against_mpmath():
    c, alpha = 0.5, 0.1
    h = [0.4, 0.2]
    assert beta_john_lw_cm(h, c, alpha) == pytest.approx(npower_oracle(alpha, sum(x * x for x in h) / (2 * c)), rel=1e-12)
    scale = math.sqrt(-2 * math.log(1 - c) - 2 * c)
    assert beta_clr(h, c, alpha) == pytest.approx(npower_oracle(alpha, sum(x - math.log(1 + x) for x in h) / scale), rel=1e-12)
    assert beta_tw(h, c, alpha) == alpha


def test_all_powers_equal_alpha_at_null():
    for name, fn in ASYMPTOTIC_POWER.items():
        assert fn([0.0, 0.0], 0.5, 0.05) == pytest.approx(0.05), name
    assert envelope_lambda([0.0], 2.0, 0.05) == pytest.approx(0.05)


def test_power_domains():
    with pytest.raises(DomainError):
        envelope_lambda([1.0], 1.0, 0.05)
    with pytest.raises(DomainError):
        beta_clr([0.1], 1.5, 0.05)
    with pytest.raises(DomainError):
        envelope_mu([0.1], 1.0, 1.5)
    with pytest.raises(DomainError):
        envelope_w([0.1], 1.0, "nu")


@settings(max_examples=200, deadline=None)
@given(c=st.floats(0.05, 0.95), u1=st.floats(0, 0.999), u2=st.floats(0, 0.999), alpha=st.sampled_from([0.01, 0.05, 0.1]))
def test_envelope_dominance_property(c, u1, u2, alpha):
    h = [u1 * math.sqrt(c), u2 * math.sqrt(c)]
    env_l = envelope_lambda(h, c, alpha)
    assert beta_john_lw_cm(h, c, alpha) <= env_l + 1e-12
    assert beta_clr(h, c, alpha) <= env_l + 1e-12
    assert envelope_mu(h, c, alpha) <= env_l + 1e-12
    assert beta_john_lw_cm(h, c, alpha) <= envelope_mu(h, c, alpha) + 1e-12


@pytest.fixture
def sample(rng):
    X = rng.standard_normal((40, 90))
    return X, eigen_data(X)


def test_john_against_trace_form(sample):
    X, eig = sample
    p, n = X.shape
    S = X @ X.T / n
    T = S / (np.trace(S) / p) - np.eye(p)
    assert john_statistic(eig) == pytest.approx(np.trace(T @ T) / p, rel=1e-10)
    out = john_test(eig)
    assert out.standardized == pytest.approx(0.5 * (n * np.trace(T @ T) / p - p - 1), rel=1e-10)


def test_lw_against_trace_form(sample):
    X, eig = sample
    p, n = X.shape
    S = X @ X.T / n
    D = S - np.eye(p)
    want = np.trace(D @ D) / p - (p / n) * (np.trace(S) / p) ** 2 + p / n
    assert lw_statistic(eig) == pytest.approx(want, rel=1e-10)
    assert lw_test(eig).name == "lw"


def test_lw_counts_zero_eigenvalues(rng):
    X = rng.standard_normal((60, 30))
    eig = eigen_data(X)
    S = X @ X.T / 30
    D = S - np.eye(60)
    want = np.trace(D @ D) / 60 - 2.0 * (np.trace(S) / 60) ** 2 + 2.0
    assert lw_statistic(eig) == pytest.approx(want, rel=1e-10)


def test_clr_against_logdet(sample):
    X, eig = sample
    p, n = X.shape
    c = p / n
    S = X @ X.T / n
    want = np.trace(S) - np.linalg.slogdet(S)[1] - p - p * (1 - (1 - n / p) * math.log(1 - c))
    out = clr_test(eig)
    assert out.statistic == pytest.approx(want, rel=1e-10)
    with pytest.raises(DomainError):
        clr_test(eigen_data(rng_matrix(50, 40)))


def rng_matrix(p, n):
    return np.random.default_rng(0).standard_normal((p, n))


def test_caima_against_double_loop(rng):
    X = rng.standard_normal((6, 9))
    p, n = X.shape
    acc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            xi, xj = X[:, i], X[:, j]
            acc += (xi @ xj) ** 2 - xi @ xi - xj @ xj + p
    assert caima_statistic(X) == pytest.approx(2 * acc / (n * (n - 1)), rel=1e-12)
    assert caima_test(X).name == "caima"


def test_tw_scaling_and_quantiles():
    sigma, nu = tw_scaling(400, 0.5)
    assert nu == pytest.approx((1 + math.sqrt(0.5)) ** 2)
    assert sigma == pytest.approx(400 ** (2 / 3) * 0.5 ** (1 / 6) / (1 + math.sqrt(0.5)) ** (4 / 3))
    assert tw_quantile(0.95) == TW1_QUANTILES[0.95]
    with pytest.raises(DomainError):
        tw_quantile(0.97)


def test_tw_table_against_goe_tridiagonal_oracle():
    # Tridiagonal model with the exact GOE eigenvalue law:
    # diag N(0, 2)/√2, off-diagonal χ_{N-k}/√2; λ_max ≈ √(2N) + TW1 / (√2 N^{1/6}).
    N, reps = 200, 20_000
    g = stream(77)
    d = g.standard_normal((reps, N))
    e = np.sqrt(g.chisquare(np.arange(N - 1, 0, -1), size=(reps, N - 1)) / 2.0)
    top = np.array([eigvalsh_tridiagonal(d[k], e[k], select="i", select_range=(N - 1, N - 1))[0] for k in range(reps)])
    scaled = (top - math.sqrt(2 * N)) * math.sqrt(2) * N ** (1 / 6)
    for level, q in TW1_QUANTILES.items():
        assert np.quantile(scaled, level) == pytest.approx(q, abs=0.08)


def test_tw_test_options():
    eig = eigen_data(generate_data(SpikedParams(50, 100), 1))
    out = tw_test(eig, 0.05)
    assert out.critical == TW1_QUANTILES[0.95]
    custom = tw_test(eig, 0.05, r_used=2, phi=lambda s: float(s.sum()), critical=3.0)
    assert custom.critical == 3.0
    with pytest.raises(DomainError):
        tw_test(eig, 0.05, r_used=2, phi=lambda s: float(s.sum()))
    with pytest.raises(DomainError):
        tw_test(eig, 0.05, r_used=0)


def test_outcome_serialises():
    eig = eigen_data(generate_data(SpikedParams(20, 40), 2))
    d = john_test(eig).to_dict()
    assert set(d) == {"name", "statistic", "standardized", "critical", "reject", "alpha"}
