import math

import numpy as np
import pytest
from numpy.polynomial import hermite_e
from scipy import integrate, special

from simlab.harmonic_core import (
    ChiMoments,
    GegenbauerBasis,
    beta_moment,
    chi_moment,
    gegenbauer_derivative,
    gegenbauer_eval,
    gegenbauer_p,
    harmonic_dim,
    hermite_eval,
    hermite_to_gegenbauer,
    tau_d1_quadrature,
)


def test_harmonic_dim_values():
    assert harmonic_dim(4, 2) == 9
    for d in (3, 7, 50):
        assert harmonic_dim(d, 0) == 1
        assert harmonic_dim(d, 1) == d
    # d=3: 2l+1
    assert [harmonic_dim(3, l) for l in range(6)] == [1, 3, 5, 7, 9, 11]


def test_harmonic_dim_is_exact_for_huge_values():
    n = harmonic_dim(10**4, 60)
    assert isinstance(n, int)
    assert n == (2 * 60 + 10**4 - 2) * math.comb(10**4 + 57, 60) // (10**4 - 2)
    with pytest.raises(OverflowError):
        gegenbauer_eval(10**4, 200, 0.5)
    with pytest.raises(ValueError):
        harmonic_dim(2, 1)


def test_low_degree_closed_forms():
    d = 17
    t = np.linspace(-1, 1, 9)
    assert np.allclose(gegenbauer_eval(d, 0, t), 1)
    assert np.allclose(gegenbauer_eval(d, 1, t), math.sqrt(d) * t)
    q2 = math.sqrt(harmonic_dim(d, 2)) * (d * t**2 - 1) / (d - 1)
    assert np.allclose(gegenbauer_eval(d, 2, t), q2, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("d", [3, 5, 30, 400])
def test_matches_scipy_gegenbauer(d):
    # scipy's C_l^{(alpha)} with alpha = (d-2)/2, rescaled to P_l(1) = 1
    t = np.linspace(-0.99, 0.99, 21)
    for l in range(9):
        if d == 3:
            ref = special.eval_legendre(l, t)
        else:
            a = (d - 2) / 2
            ref = special.eval_gegenbauer(l, a, t) / special.eval_gegenbauer(l, a, 1.0)
        assert np.allclose(gegenbauer_p(d, l, t), ref, rtol=1e-10, atol=1e-12)


def test_domain_and_clamp():
    assert gegenbauer_eval(10, 3, 1 + 5e-13) == pytest.approx(math.sqrt(harmonic_dim(10, 3)))
    with pytest.raises(ValueError):
        gegenbauer_eval(10, 3, 1.001)


def test_derivative_closed_forms_and_fd():
    d = 12
    assert np.allclose(gegenbauer_derivative(d, 1, np.array([0.3, -0.2])), math.sqrt(d))
    assert gegenbauer_derivative(d, 2, 0.0) == pytest.approx(0.0, abs=1e-14)
    assert gegenbauer_derivative(d, 0, 0.4) == 0.0
    h = 1e-6
    for l in range(1, 8):
        for t in (-0.7, -0.1, 0.35, 0.8):
            fd = (gegenbauer_eval(d, l, t + h) - gegenbauer_eval(d, l, t - h)) / (2 * h)
            an = gegenbauer_derivative(d, l, t)
            assert abs(fd - an) <= 1e-6 * max(1.0, abs(an))


def test_hermite_low_degrees_and_numpy_oracle():
    x = np.linspace(-3, 3, 13)
    assert np.allclose(hermite_eval(0, x), 1)
    assert np.allclose(hermite_eval(1, x), x)
    assert np.allclose(hermite_eval(2, x), (x**2 - 1) / math.sqrt(2))
    for k in range(10):
        c = np.zeros(k + 1)
        c[k] = 1 / math.sqrt(math.factorial(k))
        assert np.allclose(hermite_eval(k, x), hermite_e.hermeval(x, c), rtol=1e-12, atol=1e-12)


def test_hermite_orthonormal_gauss_hermite():
    x, w = hermite_e.hermegauss(40)
    w = w / w.sum()
    H = np.array([hermite_eval(k, x) for k in range(12)])
    assert np.allclose((H * w) @ H.T, np.eye(12), atol=1e-12)


def test_chi_moments_closed_forms():
    d = 9
    assert chi_moment(d, 0) == 1
    assert chi_moment(d, 2) == d
    assert chi_moment(d, 4) == d * (d + 2)
    # scipy oracle for odd moments
    for m in (1, 3, 5):
        ref = integrate.quad(lambda r: r**m * np.exp(
            (d - 1) * np.log(r) - r * r / 2 - (d / 2 - 1) * np.log(2) - special.gammaln(d / 2)), 0, 40)[0]
        assert chi_moment(d, m) == pytest.approx(ref, rel=1e-10)
    cm = ChiMoments(d, mmax=8)
    assert cm[6] == chi_moment(d, 6) and cm[11] == pytest.approx(chi_moment(d, 11))


def test_quadrature_basics():
    for d in (3, 10, 250):
        x, w = tau_d1_quadrature(d, 20)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        assert w @ x**2 == pytest.approx(1 / d, rel=1e-12)
        assert w @ x**4 == pytest.approx(3 / (d * (d + 2)), rel=1e-12)
    with pytest.raises(ValueError):
        tau_d1_quadrature(2, 10)


def test_wick_moments_monte_carlo():
    d, n = 10, 200_000
    rng = np.random.default_rng(1)
    g = rng.standard_normal((n, d))
    z = g[:, 0] / np.linalg.norm(g, axis=1)
    for p, ref in ((1, 1 / d), (2, 3 / (d * (d + 2)))):
        v = z ** (2 * p)
        assert abs(v.mean() - ref) <= 3 * v.std() / math.sqrt(n)


@pytest.mark.parametrize("d", [3, 10, 100, 1000])
def test_gram_is_identity(d):
    G = GegenbauerBasis(d, 10).gram()
    assert np.abs(G - np.eye(11)).max() <= 1e-10


def test_beta_small_cases():
    d = 7
    b = hermite_to_gegenbauer(1, 1, d)
    r = np.linspace(0, 5, 6)
    assert np.allclose(b(r), r / math.sqrt(d))
    assert hermite_to_gegenbauer(2, 1, d).is_zero
    assert hermite_to_gegenbauer(2, 3, d).is_zero
    assert len(hermite_to_gegenbauer(7, 1, d).monomial_coeffs) == 4
    assert beta_moment(1, 1, d) == pytest.approx(1.0)
    assert beta_moment(2, 1, d, return_flag=True) == (0.0, False)


def test_beta_identity_pointwise():
    for d in (5, 20, 100):
        r = np.linspace(0, 3 * math.sqrt(d), 31)
        t = np.linspace(-1, 1, 31)
        R, T = np.meshgrid(r, t)
        for k in range(9):
            lhs = hermite_eval(k, R * T)
            rhs = sum(hermite_to_gegenbauer(k, l, d)(R) * gegenbauer_eval(d, l, T) for l in range(k + 1))
            assert np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), 1)) <= 1e-8


def test_beta_moment_against_quadrature():
    # numerical chi_d expectation of beta^2 as an independent check
    d = 11
    pdf = lambda r: np.exp((d - 1) * np.log(r) - r * r / 2 - (d / 2 - 1) * np.log(2) - special.gammaln(d / 2))
    for k, l in ((3, 1), (4, 2), (5, 3), (6, 0)):
        b = hermite_to_gegenbauer(k, l, d)
        ms = integrate.quad(lambda r: b(r) ** 2 * pdf(r), 0, 40, limit=200)[0]
        mn = integrate.quad(lambda r: b(r) * pdf(r), 0, 40, limit=200)[0]
        assert beta_moment(k, l, d) == pytest.approx(ms, rel=1e-8)
        assert beta_moment(k, l, d, "mean") == pytest.approx(mn, rel=1e-7, abs=1e-12)
        assert beta_moment(k, l, d) > 0


def test_beta_sum_of_squares_is_one():
    # Parseval: E_r[sum_l beta_{k,l}(r)^2] = E[He_k(G)^2] = 1
    for d in (5, 40):
        for k in range(7):
            assert sum(beta_moment(k, l, d) for l in range(k + 1)) == pytest.approx(1.0, rel=1e-10)
