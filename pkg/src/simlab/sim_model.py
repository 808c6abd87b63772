"""Spherical single-index models: links, sampling, xi coefficients, transformations.

A sample is ``(y, r, z)`` with ``x = r z``, ``z`` uniform on the sphere and
``y | (r, z) ~ nu(. | r, <w*, z>)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammaln, logsumexp, roots_genlaguerre

from .harmonic_core import gegenbauer_eval, gegenbauer_table, hermite_eval, tau_d1_quadrature

__all__ = [
    "LinkSpec",
    "GaussianHermite",
    "GaussianGeneric",
    "SphericalGeneric",
    "NormalizedWrapper",
    "Mixture",
    "Dataset",
    "Transformation",
    "PosteriorUndefined",
    "DegenerateTransformation",
    "link_from_config",
    "mixture_link",
    "sample_planted",
    "sample_null",
    "xi_eval",
    "xi_table",
    "xi_norm",
    "xi_norms",
    "build_transformation",
    "csq_transformation",
    "prtr_transformation",
    "write_dataset",
    "read_dataset",
    "stream_rng",
    "random_direction",
]

XI_NPOINTS = 256
RADIAL_NPOINTS = 48
_LOG_TINY = math.log(1e-300)
_LOG_2PI = math.log(2 * math.pi)


class PosteriorUndefined(ArithmeticError):
    """Observed (y, r) has (numerically) zero likelihood under the model."""


class DegenerateTransformation(ValueError):
    """No detectable correlation between the label and the degree-l harmonic."""


def _seed_words(seed):
    if isinstance(seed, (tuple, list)):
        return [w for s in seed for w in _seed_words(s)]
    return [int(seed) & 0xFFFFFFFFFFFFFFFF]


def stream_rng(seed, stream):
    """Counter-based generator for stream ``stream`` of ``seed``.

    ``seed`` is an integer or a (nested) tuple of integers.
    """
    ss = np.random.SeedSequence(_seed_words(seed) + [int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def random_direction(d, rng):
    g = rng.standard_normal(d)
    return g / np.linalg.norm(g)


def _chi_radius(d, m, rng):
    return np.sqrt(rng.chisquare(d, size=m))


@dataclass(frozen=True)
class LinkSpec:
    """Base class. Subclasses implement sampling and (optionally) densities."""

    d: int

    variant = "abstract"
    has_density = True
    unit_radius = False
    declared_k = None  # exponent declared by the link, when known
    with_norm = True

    def with_d(self, d):
        return replace(self, d=int(d))

    def sample_radius(self, m, rng):
        return _chi_radius(self.d, m, rng)

    def sample_label(self, r, t, rng):
        raise NotImplementedError

    def log_density(self, y, r, t):
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError

    @property
    def fingerprint(self):
        blob = json.dumps(self.to_config(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class GaussianHermite(LinkSpec):
    """``y = He_k(<w*, x>) + sigma g`` with ``x ~ N(0, I_d)``."""

    k: int = 1
    sigma: float = 0.5

    variant = "GaussianHermite"

    @property
    def declared_k(self):
        return self.k

    def sample_label(self, r, t, rng):
        y = hermite_eval(self.k, np.asarray(r) * np.asarray(t))
        return y + self.sigma * rng.standard_normal(np.shape(y))

    def log_density(self, y, r, t):
        if self.sigma <= 0:
            raise ValueError("noiseless GaussianHermite has no density")
        mu = hermite_eval(self.k, r * t)
        s2 = self.sigma**2
        return -0.5 * (y - mu) ** 2 / s2 - 0.5 * (_LOG_2PI + math.log(s2))

    def to_config(self):
        return {"variant": self.variant, "d": self.d, "k": self.k, "sigma": self.sigma}


@dataclass(frozen=True)
class GaussianGeneric(LinkSpec):
    """Gaussian SIM given by callables on the scalar projection ``u = r t``.

    ``sampler(u, rng) -> y`` and ``log_pdf(y, u) -> log p(y | u)``; for
    discrete labels ``log_pdf`` is a log mass function.
    """

    sampler: Callable = None
    log_pdf: Optional[Callable] = None
    name: str = "generic"
    k: Optional[int] = None

    variant = "GaussianGeneric"

    @property
    def has_density(self):
        return self.log_pdf is not None

    @property
    def declared_k(self):
        return self.k

    def sample_label(self, r, t, rng):
        return self.sampler(np.asarray(r) * np.asarray(t), rng)

    def log_density(self, y, r, t):
        return self.log_pdf(y, r * t)

    def to_config(self):
        return {"variant": self.variant, "d": self.d, "name": self.name, "k": self.k}


@dataclass(frozen=True)
class SphericalGeneric(LinkSpec):
    """Spherical SIM with custom radial law and conditional law ``p(y | r, t)``."""

    radius_sampler: Callable = None
    sampler: Callable = None
    log_pdf: Optional[Callable] = None
    name: str = "spherical"

    variant = "SphericalGeneric"

    @property
    def has_density(self):
        return self.log_pdf is not None

    def sample_radius(self, m, rng):
        return np.asarray(self.radius_sampler(m, rng), dtype=float)

    def sample_label(self, r, t, rng):
        return self.sampler(r, t, rng)

    def log_density(self, y, r, t):
        return self.log_pdf(y, r, t)

    def to_config(self):
        return {"variant": self.variant, "d": self.d, "name": self.name}


def _chi_nodes(d, n):
    # r^2/2 ~ Gamma(d/2): generalized Gauss-Laguerre in u = r^2/2
    u, w = roots_genlaguerre(n, d / 2.0 - 1.0)
    logw = np.log(w) - gammaln(d / 2.0)
    return np.sqrt(2 * u), logw - logsumexp(logw)


@dataclass(frozen=True)
class NormalizedWrapper(LinkSpec):
    """Norm-stripped model: only ``(y, z)`` is observed and ``r`` is stored as 1.

    The label is drawn from the inner Gaussian link with a fresh radius
    ``r~ ~ chi_d``; the density integrates over that radius.
    """

    inner: LinkSpec = None
    radial_npoints: int = RADIAL_NPOINTS

    variant = "NormalizedWrapper"
    unit_radius = True
    with_norm = False

    def __post_init__(self):
        if self.inner is not None and self.inner.d != self.d:
            object.__setattr__(self, "inner", self.inner.with_d(self.d))

    def with_d(self, d):
        return replace(self, d=int(d), inner=self.inner.with_d(d))

    @property
    def declared_k(self):
        return self.inner.declared_k

    @property
    def has_density(self):
        return self.inner.has_density

    def sample_radius(self, m, rng):
        return np.ones(m)

    def sample_label(self, r, t, rng):
        t = np.asarray(t)
        rt = _chi_radius(self.d, t.shape[0], rng)
        return self.inner.sample_label(rt, t, rng)

    def log_density(self, y, r, t):
        rn, lw = _chi_nodes(self.d, self.radial_npoints)
        y = np.asarray(y)[..., None]
        t = np.asarray(t)[..., None]
        L = self.inner.log_density(y, rn, t) + lw
        return logsumexp(L, axis=-1)

    def to_config(self):
        return {"variant": self.variant, "d": self.d, "inner": self.inner.to_config()}


@dataclass(frozen=True)
class Mixture(LinkSpec):
    """With probability ``eps`` from ``component1``, else from ``component2``."""

    eps: float = 0.5
    component1: LinkSpec = None
    component2: LinkSpec = None
    declared: Optional[tuple] = None  # (k1, k2) exponents, if known

    variant = "Mixture"

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("mixture weight must lie in (0, 1)")
        for c in (self.component1, self.component2):
            if c is None:
                raise ValueError("mixture needs two components")
        if self.component1.unit_radius != self.component2.unit_radius:
            raise ValueError("mixture components must share the radial law")

    def with_d(self, d):
        return replace(self, d=int(d), component1=self.component1.with_d(d),
                       component2=self.component2.with_d(d))

    @property
    def unit_radius(self):
        return self.component1.unit_radius

    @property
    def with_norm(self):
        return self.component1.with_norm

    @property
    def has_density(self):
        return self.component1.has_density and self.component2.has_density

    def sample_radius(self, m, rng):
        return self.component1.sample_radius(m, rng)

    def sample_label(self, r, t, rng):
        t = np.asarray(t)
        r = np.broadcast_to(np.asarray(r, dtype=float), t.shape)
        pick = rng.random(t.shape[0]) < self.eps
        y = np.empty(t.shape[0])
        # both branches consume the stream so the layout is fixed
        y1 = self.component1.sample_label(r, t, rng)
        y2 = self.component2.sample_label(r, t, rng)
        y[pick] = y1[pick]
        y[~pick] = y2[~pick]
        return y

    def log_density(self, y, r, t):
        l1 = self.component1.log_density(y, r, t) + math.log(self.eps)
        l2 = self.component2.log_density(y, r, t) + math.log1p(-self.eps)
        return np.logaddexp(l1, l2)

    def to_config(self):
        return {
            "variant": self.variant,
            "d": self.d,
            "eps": self.eps,
            "component1": self.component1.to_config(),
            "component2": self.component2.to_config(),
            "declared": list(self.declared) if self.declared else None,
        }


def mixture_link(k: int, d: int, sigma: float = 1.0) -> Mixture:
    """Two-component norm-stripped mixture with a sample/runtime trade-off.

    ``k2 = k``, ``k1 = 2k/5`` and the first component is drawn with
    probability ``d^(-alpha)``, ``alpha = k/5``.
    """
    if k % 5 or k <= 0:
        raise ValueError("k must be a positive multiple of 5")
    if d < 3:
        raise ValueError("d must be >= 3")
    k1, k2, alpha = 2 * k // 5, k, k / 5
    c1 = NormalizedWrapper(d, inner=GaussianHermite(d, k=k1, sigma=sigma))
    c2 = NormalizedWrapper(d, inner=GaussianHermite(d, k=k2, sigma=sigma))
    return Mixture(d, eps=float(d) ** (-alpha), component1=c1, component2=c2, declared=(k1, k2))


def link_from_config(cfg, d=None) -> LinkSpec:
    """Build a link from its JSON configuration (``variant`` tag)."""
    cfg = dict(cfg)
    if d is None:
        d = cfg.get("d")
    if d is None:
        raise ValueError("link configuration needs a dimension 'd'")
    d = int(d)
    v = cfg.get("variant")
    if v == "GaussianHermite":
        return GaussianHermite(d, k=int(cfg["k"]), sigma=float(cfg.get("sigma", 0.5)))
    if v == "NormalizedWrapper":
        return NormalizedWrapper(d, inner=link_from_config(cfg["inner"], d))
    if v == "Mixture":
        if "k" in cfg and "component1" not in cfg:
            return mixture_link(int(cfg["k"]), d, float(cfg.get("sigma", 1.0)))
        dec = cfg.get("declared")
        return Mixture(d, eps=float(cfg["eps"]),
                       component1=link_from_config(cfg["component1"], d),
                       component2=link_from_config(cfg["component2"], d),
                       declared=tuple(dec) if dec else None)
    if v in ("GaussianGeneric", "SphericalGeneric"):
        raise ValueError(f"variant {v} holds callables and cannot be built from JSON")
    raise ValueError(f"unknown link variant {v!r}")


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    y: np.ndarray
    r: np.ndarray
    z: np.ndarray
    planted_direction: Optional[np.ndarray] = None
    fingerprint: str = ""
    seed: Optional[int] = None

    @property
    def m(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.z.shape[1]

    @property
    def x(self):
        return self.r[:, None] * self.z

    def subset(self, lo, hi):
        return Dataset(self.y[lo:hi], self.r[lo:hi], self.z[lo:hi], self.planted_direction,
                       self.fingerprint, self.seed)

    def rotated(self, R):
        """Same samples with directions (and planted direction) mapped by ``R``."""
        w = None if self.planted_direction is None else R @ self.planted_direction
        return Dataset(self.y.copy(), self.r.copy(), self.z @ R.T, w, self.fingerprint, self.seed)


def _uniform_directions(m, d, rng):
    Z = rng.standard_normal((m, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def sample_planted(link: LinkSpec, w_star, m: int, seed) -> Dataset:
    """Draw ``m`` planted samples with hidden direction ``w_star``."""
    w = np.asarray(w_star, dtype=float)
    if abs(np.linalg.norm(w) - 1.0) > 1e-10:
        raise ValueError("w_star must be a unit vector")
    if w.shape[0] != link.d:
        raise ValueError("w_star dimension does not match the link")
    Z = _uniform_directions(m, link.d, stream_rng(seed, 0))
    r = link.sample_radius(m, stream_rng(seed, 1))
    t = np.clip(Z @ w, -1.0, 1.0)
    y = np.asarray(link.sample_label(r, t, stream_rng(seed, 2)), dtype=float).reshape(m)
    return Dataset(y, np.asarray(r, dtype=float), Z, w, link.fingerprint, seed)


def sample_null(link: LinkSpec, m: int, seed) -> Dataset:
    """``(y, r)`` from the planted marginal, directions independent."""
    u = random_direction(link.d, stream_rng(seed, 3))
    ds = sample_planted(link, u, m, seed)
    Z = _uniform_directions(m, link.d, stream_rng(seed, 4))
    return Dataset(ds.y, ds.r, Z, None, link.fingerprint, seed)


def write_dataset(path, data: Dataset):
    header = f"# simlab-v1 d={data.d} m={data.m} link={data.fingerprint} seed={data.seed}"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        if data.m:
            arr = np.column_stack([data.y, data.r, data.z])
            np.savetxt(fh, arr, fmt="%.17g", delimiter=",")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        head = fh.readline().strip()
    if not head.startswith("# simlab-v1"):
        raise ValueError("not a simlab-v1 dataset")
    meta = dict(tok.split("=", 1) for tok in head.split()[2:])
    d, m = int(meta["d"]), int(meta["m"])
    if m == 0:
        arr = np.zeros((0, d + 2))
    else:
        arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if arr.shape != (m, d + 2):
        raise ValueError("dataset body does not match its header")
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    return Dataset(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2:].copy(), None,
                   meta.get("link", ""), seed)


# ---------------------------------------------------------------------------
# xi coefficients


def _posterior_weights(link, y, r, npoints, chunk=2048):
    """Yield ``(lo, hi, P)`` with normalized posterior weights over t-nodes."""
    x, w = tau_d1_quadrature(link.d, npoints)
    logw = np.log(w)
    y = np.asarray(y, dtype=float).reshape(-1)
    r = np.broadcast_to(np.asarray(r, dtype=float).reshape(-1), y.shape)
    for lo in range(0, y.shape[0], chunk):
        hi = min(y.shape[0], lo + chunk)
        L = link.log_density(y[lo:hi, None], r[lo:hi, None], x[None, :]) + logw
        lz = logsumexp(L, axis=1)
        if np.any(~np.isfinite(lz)) or np.any(lz < _LOG_TINY):
            raise PosteriorUndefined("likelihood of an observation is below 1e-300")
        yield lo, hi, np.exp(L - lz[:, None])


def xi_table(link: LinkSpec, lmax: int, y, r, npoints: int = XI_NPOINTS):
    """``xi_{d,l}(y, r)`` for ``l = 0..lmax``; shape ``(lmax + 1, n)``."""
    if not link.has_density:
        raise ValueError("link does not expose a conditional density")
    x, _ = tau_d1_quadrature(link.d, npoints)
    Q = gegenbauer_table(link.d, lmax, x)
    n = np.asarray(y).reshape(-1).shape[0]
    out = np.empty((lmax + 1, n))
    for lo, hi, P in _posterior_weights(link, y, r, npoints):
        out[:, lo:hi] = Q @ P.T
    out[0] = 1.0
    return out


def xi_eval(link: LinkSpec, ell: int, y, r, npoints: int = XI_NPOINTS):
    """Gegenbauer coefficient ``xi_{d,l}(y, r) = E[Q_l(Z) | Y=y, R=r]``."""
    scalar = np.ndim(y) == 0
    if ell == 0:
        out = np.ones(np.shape(y))
    else:
        x, _ = tau_d1_quadrature(link.d, npoints)
        q = gegenbauer_eval(link.d, ell, x)
        n = np.asarray(y).reshape(-1).shape[0]
        out = np.empty(n)
        for lo, hi, P in _posterior_weights(link, y, r, npoints):
            out[lo:hi] = P @ q
        out = out.reshape(np.shape(y))
    return float(out) if scalar else out


def _marginal_draws(link, n, seed):
    w = random_direction(link.d, stream_rng(seed, 5))
    ds = sample_planted(link, w, n, seed)
    return ds.y, ds.r


def xi_norms(link: LinkSpec, lmax: int, n_mc: int, seed, npoints: int = XI_NPOINTS):
    """Monte Carlo ``||xi_{d,l}||^2`` for ``l = 0..lmax`` with standard errors."""
    y, r = _marginal_draws(link, n_mc, seed)
    X = xi_table(link, lmax, y, r, npoints) ** 2
    return X.mean(axis=1), X.std(axis=1, ddof=1) / math.sqrt(n_mc)


def xi_norm(link: LinkSpec, ell: int, n_mc: int, seed, npoints: int = XI_NPOINTS):
    """``(||xi_{d,l}||^2 estimate, standard error)`` over planted (y, r) draws."""
    y, r = _marginal_draws(link, n_mc, seed)
    v = xi_eval(link, ell, y, r, npoints) ** 2
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_mc))


# ---------------------------------------------------------------------------
# transformations


@dataclass
class Transformation:
    """Bounded unit-norm label transformation for degree ``ell``."""

    ell: int
    evaluator: Callable
    norm: float
    kappa: float
    beta: float
    beta_se: float = 0.0
    kind: str = "xi"
    info: dict = field(default_factory=dict)

    def __call__(self, y, r):
        return self.evaluator(np.asarray(y, dtype=float), np.asarray(r, dtype=float))

    def summary(self):
        return {"ell": self.ell, "norm": self.norm, "kappa": self.kappa, "beta": self.beta,
                "beta_se": self.beta_se, "kind": self.kind, **self.info}


def _tabulated_xi(link, ell, y_cal, npoints, ngrid=1201):
    # r is identically 1; xi depends on y alone and is smooth
    lo, hi = np.quantile(y_cal, [0.0, 1.0])
    pad = 0.05 * (hi - lo) + 1e-9
    grid = np.linspace(lo - pad, hi + pad, ngrid)
    vals = xi_eval(link, ell, grid, np.ones_like(grid), npoints)
    spline = CubicSpline(grid, vals)

    def f(y, r):
        return spline(np.clip(y, grid[0], grid[-1]))

    return f


def build_transformation(link: LinkSpec, ell: int, kappa: float = 10.0, n_cal: int = 30000,
                         seed=0, npoints: int = XI_NPOINTS, tabulate=None) -> Transformation:
    """``T_l = clip(xi_l / ||xi_l||, +-kappa)`` renormalized on held-out data.

    The calibration budget is split in three: norm of xi, renormalization,
    and evaluation of the recorded norm and ``beta_{d,l} = E[T_l xi_l]``.
    """
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    n3 = max(n_cal // 3, 10)
    yA, rA = _marginal_draws(link, n3, (seed, 11))
    yB, rB = _marginal_draws(link, n3, (seed, 12))
    yC, rC = _marginal_draws(link, n3, (seed, 13))
    if tabulate is None:
        tabulate = link.unit_radius
    if tabulate:
        xi = _tabulated_xi(link, ell, np.concatenate([yA, yB, yC]), npoints)
    else:
        def xi(y, r):
            return xi_eval(link, ell, y, r, npoints)
    xa = xi(yA, rA)
    n2 = float(np.mean(xa**2))
    n2_se = float(np.std(xa**2, ddof=1) / math.sqrt(n3))
    if n2 <= 1e-20 or n2 <= 3 * n2_se:
        raise DegenerateTransformation(f"||xi_{ell}||^2 = {n2:.3g} is not detectable (se {n2_se:.3g})")
    xnorm = math.sqrt(n2)

    def raw(y, r):
        return np.clip(xi(y, r) / xnorm, -kappa, kappa)

    scale = 1.0 / math.sqrt(float(np.mean(raw(yB, rB) ** 2)))
    kap = kappa * scale

    def T(y, r):
        return scale * raw(y, r)

    tc = T(yC, rC)
    xc = xi(yC, rC)
    prod = tc * xc
    beta = float(prod.mean())
    beta_se = float(prod.std(ddof=1) / math.sqrt(n3))
    if beta < xnorm / kappa - 3 * beta_se:
        raise DegenerateTransformation("clipping destroyed the correlation with Q_l")
    return Transformation(ell, T, float(np.sqrt(np.mean(tc**2))), kap, beta, beta_se, "xi",
                          {"xi_norm_sq": n2, "xi_norm_sq_se": n2_se, "scale": scale})


def _binned_regression(r, v, nbins):
    """Piecewise-linear regression of ``v`` on ``r`` over quantile bins."""
    if np.ptp(r) == 0:
        c = float(v.mean())
        return lambda rr: np.full(np.shape(rr), c), np.array([r[0]]), np.array([c])
    edges = np.unique(np.quantile(r, np.linspace(0, 1, nbins + 1)))
    while True:
        idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, len(edges) - 2)
        counts = np.bincount(idx, minlength=len(edges) - 1)
        if counts.min() > 0 or len(edges) <= 2:
            break
        # merge the emptiest bin into its neighbour
        k = int(np.argmin(counts))
        edges = np.delete(edges, min(k + 1, len(edges) - 2))
    sums = np.bincount(idx, weights=v, minlength=len(edges) - 1)
    cent = np.bincount(idx, weights=r, minlength=len(edges) - 1) / counts
    means = sums / counts
    return (lambda rr: np.interp(rr, cent, means)), cent, means


def csq_transformation(link: LinkSpec, ell: int, n_cal: int = 30000, seed=0, nbins: int = 20) -> Transformation:
    """Correlational transformation ``T(y, r) = y q(r) / norm``.

    ``q(r)`` estimates ``E[Y Q_l(Z) | R = r]`` by binned regression of
    ``y Q_l(<w*, z>)`` on ``r`` over planted calibration samples.
    """
    w = random_direction(link.d, stream_rng((seed, 21), 0))
    cal = sample_planted(link, w, n_cal, (seed, 22))
    v = cal.y * gegenbauer_eval(link.d, ell, cal.z @ w)
    q, cent, means = _binned_regression(cal.r, v, 1 if link.unit_radius else nbins)
    ev = sample_planted(link, w, n_cal, (seed, 23))
    raw = ev.y * q(ev.r)
    s2 = float(np.mean(raw**2))
    if s2 <= 0:
        raise DegenerateTransformation("empty correlational signal")
    scale = 1.0 / math.sqrt(s2)

    def T(y, r):
        return scale * y * q(r)

    te = T(ev.y, ev.r)
    prod = te * gegenbauer_eval(link.d, ell, ev.z @ w)
    beta = float(prod.mean())
    beta_se = float(prod.std(ddof=1) / math.sqrt(n_cal))
    if beta <= 3 * beta_se:
        raise DegenerateTransformation(f"correlation {beta:.3g} within noise (se {beta_se:.3g})")
    return Transformation(ell, T, float(np.sqrt(np.mean(te**2))), math.inf, beta, beta_se, "csq",
                          {"q_centers": cent.tolist(), "q_values": means.tolist(), "scale": scale})


def prtr_transformation(link: LinkSpec, Tstar: Callable, k_star: int, ell: int,
                        n_cal: int = 30000, seed=0) -> Transformation:
    """``T_l(y, r) ∝ Tstar(y) beta_{k*,l}(r)``, normalized on calibration data."""
    from .harmonic_core import hermite_to_gegenbauer

    b = hermite_to_gegenbauer(k_star, ell, link.d)
    if b.is_zero:
        raise DegenerateTransformation(f"beta_{{{k_star},{ell}}} vanishes")
    w = random_direction(link.d, stream_rng((seed, 31), 0))
    ev = sample_planted(link, w, n_cal, (seed, 32))
    raw = Tstar(ev.y) * b(ev.r)
    q = gegenbauer_eval(link.d, ell, ev.z @ w)
    # orient so that the correlation with Q_l is positive
    sign = 1.0 if np.mean(raw * q) >= 0 else -1.0
    scale = sign / math.sqrt(float(np.mean(raw**2)))

    def T(y, r):
        return scale * Tstar(y) * b(r)

    te = T(ev.y, ev.r)
    prod = te * q
    beta = float(prod.mean())
    beta_se = float(prod.std(ddof=1) / math.sqrt(n_cal))
    return Transformation(ell, T, float(np.sqrt(np.mean(te**2))), math.inf, beta, beta_se, "prtr",
                          {"k_star": k_star})
