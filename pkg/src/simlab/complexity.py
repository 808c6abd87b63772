"""Sample/runtime complexity functionals over per-degree signal profiles.

A profile maps each degree ``l`` to ``||xi_{d,l}||^2`` (with a standard
error). From it

    M* = min_l sqrt(n_{d,l}) / ||xi_{d,l}||^2      (samples)
    Q* = min_l n_{d,l} / ||xi_{d,l}||^2            (queries / runtime)

and the minimizing degrees ``l_m*`` and ``l_T*``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .harmonic_core import gegenbauer_eval, harmonic_dim, tau_d1_quadrature

__all__ = [
    "ComplexityProfile",
    "GaussianRatePrediction",
    "OptimalDegree",
    "m_star",
    "q_star",
    "optimal_degree",
    "gaussian_rates",
    "synthetic_profile",
    "mixture_profile",
    "profile_from_link",
    "ldp_bound",
    "smoothing_weight",
]


@dataclass
class ComplexityProfile:
    d: int
    xi_map: Dict[int, Tuple[float, float]]  # l -> (||xi||^2, std error)

    def __post_init__(self):
        if not self.xi_map:
            raise ValueError("empty profile")
        clean = {}
        for l, v in self.xi_map.items():
            if isinstance(v, (int, float)):
                v = (float(v), 0.0)
            val, se = float(v[0]), float(v[1])
            if not (np.isfinite(val) and np.isfinite(se)):
                raise ValueError(f"non-finite profile entry at l={l}")
            if val < 0 or val > 1 + 1e-9:
                raise ValueError(f"profile entry at l={l} outside [0, 1]: {val}")
            if int(l) < 1:
                raise ValueError("profile degrees start at 1")
            clean[int(l)] = (val, se)
        self.xi_map = dict(sorted(clean.items()))

    def scaled(self, c):
        return ComplexityProfile(self.d, {l: (v * c, s * c) for l, (v, s) in self.xi_map.items()})

    def to_dict(self):
        return {"d": self.d, "xi": {str(l): {"value": v, "se": s} for l, (v, s) in self.xi_map.items()}}

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["d"]), {int(l): (e["value"], e["se"]) for l, e in obj["xi"].items()})


@dataclass
class OptimalDegree:
    value: float
    degree: Optional[int]
    stable: bool = True
    runner_up: Optional[int] = None
    candidates: Dict[int, float] = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (value, degree)
        return iter((self.value, self.degree))


def _log_n(d, l):
    n = harmonic_dim(d, l)
    try:
        return math.log(n)
    except OverflowError:
        return math.log(n >> 1000) + 1000 * math.log(2)


def optimal_degree(profile: ComplexityProfile, power: float) -> OptimalDegree:
    """Minimize ``n_{d,l}^power / ||xi_l||^2`` over the profile.

    Comparison is done in log space so large ``n_{d,l}`` never overflow.
    Ties go to the smallest degree. ``stable`` is False when the runner-up
    lies within two combined standard errors of the minimum.
    """
    logs, ses = {}, {}
    for l, (v, se) in profile.xi_map.items():
        if v <= 0:
            continue
        logs[l] = power * _log_n(profile.d, l) - math.log(v)
        ses[l] = se / v  # std error of the log value (delta method)
    if not logs:
        return OptimalDegree(math.inf, None, True, None, {})
    order = sorted(logs, key=lambda l: (logs[l], l))
    best = order[0]
    cand = {l: _safe_exp(x) for l, x in logs.items()}
    stable, ru = True, None
    if len(order) > 1:
        ru = order[1]
        # compare on the linear scale with relative errors
        vb, vr = cand[best], cand[ru]
        if np.isfinite(vb) and np.isfinite(vr):
            comb = math.hypot(vb * ses[best], vr * ses[ru])
            stable = (vr - vb) > 2 * comb
        else:
            comb = math.hypot(ses[best], ses[ru])
            stable = (logs[ru] - logs[best]) > 2 * comb
    return OptimalDegree(cand[best], best, stable, ru, cand)


def _safe_exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def m_star(profile: ComplexityProfile) -> OptimalDegree:
    """``(M*, l_m*)``; unpacks as a pair."""
    return optimal_degree(profile, 0.5)


def q_star(profile: ComplexityProfile) -> OptimalDegree:
    """``(Q*, l_T*)``; unpacks as a pair."""
    return optimal_degree(profile, 1.0)


# ---------------------------------------------------------------------------
# Gaussian predictions


@dataclass
class GaussianRatePrediction:
    k_star: int
    with_norm: bool
    exponents: Dict[int, float]  # l -> exponent e with ||xi_l||^2 ~ d^e
    upper_only: Dict[int, bool]  # True where only an upper bound is known

    def to_dict(self):
        return {
            "k_star": self.k_star,
            "with_norm": self.with_norm,
            "exponents": {str(l): e for l, e in self.exponents.items()},
            "upper_only": {str(l): u for l, u in self.upper_only.items()},
        }


def gaussian_rates(k_star: int, with_norm: bool, lmax: Optional[int] = None) -> GaussianRatePrediction:
    """Exponent table for ``||xi_{d,l}||^2`` of a Gaussian model with generative exponent ``k*``.

    With the norm: ``-(k - l)/2`` for ``l`` of the parity of ``k``, and the
    upper bound ``-(k - l + 1)/2`` otherwise. Without it the exponents are
    doubled. Degrees ``l > k`` only get the trivial bound 0.
    """
    if k_star < 1:
        raise ValueError("k_star must be >= 1")
    lmax = k_star + 2 if lmax is None else lmax
    f = 0.5 if with_norm else 1.0
    ex, up = {}, {}
    for l in range(1, lmax + 1):
        if l > k_star:
            ex[l], up[l] = 0.0, True
        elif (k_star - l) % 2 == 0:
            ex[l], up[l] = -f * (k_star - l) + 0.0, False
        else:
            ex[l], up[l] = -f * (k_star - l + 1), True
    return GaussianRatePrediction(k_star, with_norm, ex, up)


def synthetic_profile(pred: GaussianRatePrediction, d: int, const: float = 1.0) -> ComplexityProfile:
    """Profile with ``||xi_l||^2 = const * d^e_l`` (upper-bound entries at their bound)."""
    return ComplexityProfile(d, {l: (min(1.0, const * float(d) ** e), 0.0)
                                 for l, e in pred.exponents.items()})


def mixture_profile(k: int, d: int, lmax: Optional[int] = None) -> ComplexityProfile:
    """Synthetic profile of :func:`simlab.sim_model.mixture_link`.

    Components are norm-stripped with exponents ``k1 = 2k/5`` and ``k2 = k``;
    the first has weight ``d^(-k/5)``, which enters ``||xi||^2`` squared.
    """
    if k % 5 or k <= 0:
        raise ValueError("k must be a positive multiple of 5")
    k1, alpha = 2 * k // 5, k / 5
    lmax = k + 2 if lmax is None else lmax
    r1 = gaussian_rates(k1, False, lmax).exponents
    r2 = gaussian_rates(k, False, lmax).exponents
    xi = {l: (max(float(d) ** (r1[l] - 2 * alpha), float(d) ** r2[l]), 0.0) for l in range(1, lmax + 1)}
    return ComplexityProfile(d, xi)


def profile_from_link(link, lmax: Optional[int] = None, n_mc: int = 20000, seed=0, npoints=None) -> ComplexityProfile:
    """Monte Carlo profile of a link through its ``xi`` coefficients."""
    from .sim_model import XI_NPOINTS, xi_norms

    if lmax is None:
        k = link.declared_k
        if k is None:
            raise ValueError("lmax is required when the link declares no k*")
        lmax = k + 2
    vals, ses = xi_norms(link, lmax, n_mc, seed, npoints or XI_NPOINTS)
    return ComplexityProfile(link.d, {l: (min(1.0, float(vals[l])), float(ses[l])) for l in range(1, lmax + 1)})


# ---------------------------------------------------------------------------
# low-degree bound


def _geometric_sum(base, n):
    """``sum_{s=1}^n base^s`` with overflow mapped to ``inf``."""
    if n <= 0 or base == 0:
        return 0.0
    if base == 1.0:
        return float(n)
    if base < 1.0:
        return base * (1.0 - base**n) / (1.0 - base)
    lg = n * math.log(base)
    if lg > 700:
        return math.inf
    return base * (base**n - 1.0) / (base - 1.0)


def ldp_bound(m: float, D: int, p: int, Mstar: float, restricted_ell: Optional[int] = None,
              xi_sq: Optional[float] = None) -> float:
    """Upper bound on ``||R_{<=D}||^2 - 1`` for the low-degree likelihood ratio.

    Default form: ``sum_{s<=D} (m D^(p/2-1) e (p+1) / M*)^s``.
    With ``restricted_ell`` set, uses the single-degree variant
    ``sum_{s<=D/l} (m e D^(l/2-1) ||xi_l||^2 / sqrt(n_{d,l}))^s``; then
    ``Mstar`` is read as ``sqrt(n_{d,l})`` and ``xi_sq`` is required.
    """
    if m < 0 or D < 0:
        raise ValueError("m and D must be nonnegative")
    if m == 0 or D == 0:
        return 0.0
    if restricted_ell is None:
        base = m * D ** (p / 2 - 1) * math.e * (p + 1) / Mstar
        return _geometric_sum(base, int(D))
    if xi_sq is None:
        raise ValueError("restricted bound needs xi_sq")
    l = int(restricted_ell)
    base = m * math.e * D ** (l / 2 - 1) * xi_sq / Mstar
    return _geometric_sum(base, int(D) // l)


# ---------------------------------------------------------------------------
# smoothing


def smoothing_weight(ell: int, lam: float, d: int, n_mc: Optional[int] = None, seed=0,
                     npoints: int = 400) -> float:
    """``m_l(lam) = E[Q_l((1 + lam Z) / sqrt(1 + 2 lam Z + lam^2))] / sqrt(n_{d,l})``, ``Z ~ tau_{d,1}``.

    Gauss-Jacobi quadrature by default; Monte Carlo over ``n_mc`` draws if given.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0:
        return 1.0
    if n_mc:
        from .sim_model import stream_rng

        rng = stream_rng(seed, 11)
        g = rng.standard_normal((n_mc, d))
        z = g[:, 0] / np.linalg.norm(g, axis=1)
        w = np.full(n_mc, 1.0 / n_mc)
    else:
        z, w = tau_d1_quadrature(d, npoints)
    den = np.sqrt(np.maximum(1 + 2 * lam * z + lam**2, 1e-300))
    s = np.clip((1 + lam * z) / den, -1.0, 1.0)
    q = gegenbauer_eval(d, ell, s)
    return float(w @ q / math.sqrt(harmonic_dim(d, ell)))
