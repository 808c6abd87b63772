"""Gegenbauer and Hermite polynomials, harmonic dimensions and chi moments.

Conventions
-----------
``P_l^{(d)}`` is the Gegenbauer polynomial normalized so that ``P_l(1) = 1``.
``Q_l^{(d)} = sqrt(n_{d,l}) P_l^{(d)}`` is orthonormal in ``L^2(tau_{d,1})``,
where ``tau_{d,1}`` is the law of one coordinate of a uniform point on the
unit sphere in ``R^d``. Hermite polynomials ``He_k`` are the probabilist's
ones, normalized so that ``E[He_j(G) He_k(G)] = delta_{jk}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, roots_jacobi

__all__ = [
    "harmonic_dim",
    "gegenbauer_eval",
    "gegenbauer_p",
    "gegenbauer_table",
    "gegenbauer_derivative",
    "hermite_eval",
    "hermite_table",
    "BetaCoefficient",
    "hermite_to_gegenbauer",
    "beta_moment",
    "chi_moment",
    "ChiMoments",
    "tau_d1_quadrature",
    "GegenbauerBasis",
]

T_TOL = 1e-12
_FLOAT_MAX = np.finfo(float).max


def _check_d(d):
    if int(d) != d or d < 3:
        raise ValueError(f"dimension must be an integer >= 3, got {d}")
    return int(d)


def harmonic_dim(d: int, ell: int) -> int:
    """Dimension ``n_{d,l}`` of degree-``l`` spherical harmonics in ``R^d``.

    Exact integer arithmetic. Use :func:`float` on the result at the boundary;
    values beyond double range raise ``OverflowError`` there.
    """
    d = _check_d(d)
    if ell < 0:
        raise ValueError("ell must be >= 0")
    num = (2 * ell + d - 2) * math.comb(d + ell - 3, ell)
    n, rem = divmod(num, d - 2)
    assert rem == 0
    return n


def _sqrt_dim(d, ell):
    n = harmonic_dim(d, ell)
    if n > _FLOAT_MAX:
        raise OverflowError(f"n_{{{d},{ell}}} exceeds double precision range")
    return math.sqrt(n)


def _clamp(t):
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + T_TOL):
        raise ValueError("Gegenbauer argument outside [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def gegenbauer_table(d: int, lmax: int, t, normalized: bool = True):
    """All Gegenbauer polynomials of degree ``0..lmax`` at ``t``.

    Returns an array of shape ``(lmax + 1,) + t.shape``. With
    ``normalized=True`` rows are ``Q_l``; otherwise ``P_l``.
    """
    d = _check_d(d)
    t = _clamp(t)
    out = np.empty((lmax + 1,) + t.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = t
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + d - 2) * t * out[l] - l * out[l - 1]) / (l + d - 2)
    if normalized:
        for l in range(2, lmax + 1):
            out[l] *= _sqrt_dim(d, l)
        if lmax >= 1:
            out[1] *= math.sqrt(d)
    return out


def gegenbauer_p(d: int, ell: int, t):
    """``P_l^{(d)}(t)`` with ``P_l(1) = 1``."""
    return gegenbauer_table(d, ell, t, normalized=False)[ell]


def gegenbauer_eval(d: int, ell: int, t):
    """Orthonormal Gegenbauer polynomial ``Q_l^{(d)}(t)``.

    ``t`` may be a scalar or array; values within 1e-12 of +-1 are clamped.
    """
    out = gegenbauer_table(d, ell, t, normalized=False)[ell] * _sqrt_dim(d, ell)
    return out if out.ndim else float(out)


def gegenbauer_derivative(d: int, ell: int, t):
    """Derivative ``Q_l^{(d)'}(t) = C(d,l) Q_{l-1}^{(d+2)}(t)``.

    Evaluated as ``sqrt(n_{d,l}) * l(l+d-2)/(d-1) * P_{l-1}^{(d+2)}(t)``,
    which is the same quantity without the large ratio of dimensions.
    """
    t = _clamp(t)
    if ell == 0:
        out = np.zeros_like(t)
    else:
        scale = _sqrt_dim(d, ell) * ell * (ell + d - 2) / (d - 1)
        out = scale * gegenbauer_table(d + 2, ell - 1, t, normalized=False)[ell - 1]
    return out if out.ndim else float(out)


def hermite_table(kmax: int, x):
    """Orthonormal Hermite polynomials ``He_0..He_kmax`` at ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for k in range(1, kmax):
        out[k + 1] = (x * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


def hermite_eval(k: int, x):
    """Orthonormal probabilist's Hermite polynomial ``He_k(x)``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    out = hermite_table(k, x)[k]
    return out if out.ndim else float(out)


def hermite_derivative(k: int, x):
    """``He_k'(x) = sqrt(k) He_{k-1}(x)`` in the orthonormal convention."""
    if k == 0:
        out = np.zeros_like(np.asarray(x, dtype=float))
        return out if out.ndim else 0.0
    return math.sqrt(k) * hermite_eval(k - 1, x)


# ---------------------------------------------------------------------------
# chi_d moments


@lru_cache(maxsize=None)
def _rising_even(d, p):
    # prod_{j<p} (d + 2j)
    out = 1
    for j in range(p):
        out *= d + 2 * j
    return out


@lru_cache(maxsize=None)
def _odd_prefactor(d):
    # sqrt(2) Gamma((d+1)/2) / Gamma(d/2), the first odd moment E[r]
    return math.sqrt(2.0) * math.exp(gammaln((d + 1) / 2) - gammaln(d / 2))


def chi_moment_exact(d: int, m: int):
    """``E[r^m]`` for ``r ~ chi_d`` as ``(rational, has_odd_prefactor)``.

    The moment equals ``rational`` for even ``m`` and
    ``rational * E[r]`` for odd ``m``.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    p, odd = divmod(m, 2)
    if odd:
        return Fraction(_rising_even(d + 1, p)), True
    return Fraction(_rising_even(d, p)), False


def chi_moment(d: int, m: int) -> float:
    """``E[r^m]`` for ``r ~ chi_d``."""
    q, odd = chi_moment_exact(d, m)
    return float(q) * _odd_prefactor(d) if odd else float(q)


class ChiMoments:
    """Cached table of chi_d moments up to ``mmax``."""

    def __init__(self, d, mmax=32):
        self.d = _check_d(d)
        self.mmax = mmax
        self._values = np.array([chi_moment(d, m) for m in range(mmax + 1)])

    def __getitem__(self, m):
        if m > self.mmax:
            return chi_moment(self.d, m)
        return self._values[m]


# ---------------------------------------------------------------------------
# Hermite -> Gegenbauer coefficients


@dataclass(frozen=True)
class BetaCoefficient:
    """Radial coefficient ``beta_{k,l}(r)`` of ``He_k(r t)`` on ``Q_l(t)``.

    ``beta(r) = sqrt(scale_sq) * sum_i rational[i] * r^(l + 2i)``, with the
    rational parts kept exact.
    """

    k: int
    ell: int
    d: int
    scale_sq: Fraction
    rational: tuple

    @property
    def is_zero(self):
        return len(self.rational) == 0

    @property
    def monomial_coeffs(self):
        s = math.sqrt(self.scale_sq)
        return np.array([s * float(a) for a in self.rational])

    @property
    def powers(self):
        return np.arange(len(self.rational)) * 2 + self.ell

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.is_zero:
            return np.zeros_like(r)
        out = np.zeros_like(r)
        # Horner in r^2
        r2 = r * r
        for a in reversed(self.rational):
            out = out * r2 + float(a)
        out = out * r**self.ell * math.sqrt(self.scale_sq)
        return out if out.ndim else float(out)


def _kprime(d, ell):
    # Gamma(d-2+l) (d+2l-2) / (l! (d-2) Gamma(d-2)); the gamma ratio is the
    # rising factorial (d-2)_l, so everything is rational.
    rising = 1
    for j in range(ell):
        rising *= d - 2 + j
    return Fraction(rising * (d + 2 * ell - 2), math.factorial(ell) * (d - 2))


@lru_cache(maxsize=None)
def hermite_to_gegenbauer(k: int, ell: int, d: int) -> BetaCoefficient:
    """Coefficient polynomial ``beta_{k,l}`` in ``He_k(r t) = sum_l beta_{k,l}(r) Q_l(t)``."""
    d = _check_d(d)
    if ell > k or (k - ell) % 2:
        return BetaCoefficient(k, ell, d, Fraction(0), ())
    N = (k - ell) // 2
    scale_sq = Fraction(math.factorial(k)) * _kprime(d, ell)
    scale_sq /= (math.factorial(N) * 2**N) ** 2
    coeffs = []
    for i in range(N + 1):
        denom = _rising_even(d, ell + i)
        coeffs.append(Fraction(math.comb(N, i) * (-1) ** (N - i), denom))
    return BetaCoefficient(k, ell, d, scale_sq, tuple(coeffs))


def beta_moment(k: int, ell: int, d: int, order: str = "mean_square", return_flag: bool = False):
    """Closed-form ``E[beta_{k,l}(r)]`` or ``E[beta_{k,l}(r)^2]`` under ``chi_d``.

    Parity or degree mismatch gives 0; with ``return_flag`` the result is a
    pair ``(value, admissible)``.
    """
    if order not in ("mean", "mean_square"):
        raise ValueError("order must be 'mean' or 'mean_square'")
    b = hermite_to_gegenbauer(k, ell, d)
    if b.is_zero:
        return (0.0, False) if return_flag else 0.0
    a = b.rational
    if order == "mean_square":
        tot = Fraction(0)
        for i, ai in enumerate(a):
            for j, aj in enumerate(a):
                q, _ = chi_moment_exact(d, 2 * ell + 2 * i + 2 * j)
                tot += ai * aj * q
        val = float(b.scale_sq * tot)
    else:
        tot = Fraction(0)
        odd = False
        for i, ai in enumerate(a):
            q, odd = chi_moment_exact(d, ell + 2 * i)
            tot += ai * q
        val = math.sqrt(b.scale_sq) * float(tot)
        if odd:
            val *= _odd_prefactor(d)
    return (val, True) if return_flag else val


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=64)
def _quad_cached(d, npoints):
    a = (d - 3) / 2.0
    x, w = roots_jacobi(npoints, a, a)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def tau_d1_quadrature(d: int, npoints: int = 64):
    """Gauss-Jacobi nodes and weights for ``tau_{d,1}``.

    The density is proportional to ``(1 - t^2)^((d-3)/2)`` on ``[-1, 1]``.
    Weights sum to one and the rule is exact for polynomials of degree up
    to ``2 * npoints - 1``.
    """
    if d < 3:
        raise ValueError("tau_{d,1} quadrature needs d >= 3")
    if npoints < 1:
        raise ValueError("npoints must be >= 1")
    return _quad_cached(int(d), int(npoints))


def default_npoints(lmax):
    return max(64, 2 * lmax + 8)


class GegenbauerBasis:
    """Orthonormal Gegenbauer family ``Q_0..Q_lmax`` for fixed ``d``."""

    def __init__(self, d, lmax):
        self.d = _check_d(d)
        self.lmax = int(lmax)
        self.sqrt_dims = np.array([_sqrt_dim(d, l) for l in range(lmax + 1)])

    def __call__(self, t):
        return gegenbauer_table(self.d, self.lmax, t)

    def gram(self, npoints=None):
        """Quadrature Gram matrix ``<Q_l, Q_k>``."""
        npoints = npoints or default_npoints(self.lmax)
        x, w = tau_d1_quadrature(self.d, npoints)
        Q = self(x)
        return (Q * w) @ Q.T
