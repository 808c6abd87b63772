"""Recovery algorithms for spherical single-index models.

Spectral estimators (degree 1 and 2), boosting, online SGD on the harmonic
loss, harmonic tensor unfolding (balanced and diagonal-removed), and the
Gaussian baselines HeSGD and the partial-trace estimator.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .harmonic_core import (
    _sqrt_dim,
    gegenbauer_derivative,
    gegenbauer_eval,
    hermite_to_gegenbauer,
)
from .harmonic_tensor import (
    DENSE_BUDGET,
    HarmonicMatvec,
    HarmonicOperatorSum,
    empirical_harmonic_tensor,
    power_iteration,
    unfold,
    vec_extract,
)
from .constants import SGD_ETA_CONST
from .sim_model import Dataset, Transformation, stream_rng

__all__ = [
    "EstimatorConfig",
    "EstimatorResult",
    "DegenerateEstimate",
    "spectral_l1",
    "spectral_l2",
    "boost_step",
    "boost",
    "boost_schedule",
    "online_sgd",
    "sgd_default_eta",
    "s_star",
    "drift_threshold",
    "population_drift",
    "tensor_unfold_balanced",
    "tensor_unfold",
    "hermite_sgd",
    "partial_trace",
    "overlap",
]

SUCCESS_OVERLAP = 0.25


class DegenerateEstimate(ArithmeticError):
    """The estimator produced a zero (or non-finite) direction."""


@dataclass
class EstimatorConfig:
    algo: str = "spectral1"
    ell: int = 1
    eta: Optional[float] = None
    eta_const: float = SGD_ETA_CONST
    beta: Optional[float] = None  # correlation used by the default step size
    n_iter: Optional[int] = None  # cap on SGD iterations (default: all samples)
    power_iters: Optional[int] = None
    power_tol: float = 1e-10
    a: Optional[int] = None
    b: Optional[int] = None
    n_stages: Optional[int] = None
    proxy_threshold: Optional[float] = None
    restarts: int = 1
    delta: Optional[float] = None
    holdout_frac: float = 0.1
    boost: bool = True
    init_frac: float = 0.5
    method: str = "auto"
    randomize_norm: bool = False
    trace_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.a is not None and self.b is not None and self.a + self.b != self.ell:
            raise ValueError("unfolding split must satisfy a + b = ell")

    def to_dict(self):
        return asdict(self)


@dataclass
class EstimatorResult:
    w_hat: np.ndarray
    overlap: Optional[float]
    samples_consumed: int
    wallclock: float
    trace: Optional[list] = None
    converged: bool = True
    info: dict = field(default_factory=dict)

    @property
    def success(self):
        return self.overlap is not None and self.overlap >= SUCCESS_OVERLAP

    def to_dict(self):
        return {
            "w_hat": [float(v) for v in self.w_hat],
            "overlap": self.overlap,
            "samples_consumed": int(self.samples_consumed),
            "wallclock": self.wallclock,
            "trace": self.trace,
            "converged": self.converged,
            "info": self.info,
        }


def overlap(w_hat, w_star):
    if w_star is None:
        return None
    return float(min(1.0, abs(np.dot(w_hat, w_star))))


def _unit(v, what="estimate"):
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise DegenerateEstimate(f"zero or non-finite {what}")
    return v / n


def _result(w, data, m_used, t0, **kw):
    return EstimatorResult(w, overlap(w, data.planted_direction), int(m_used), time.perf_counter() - t0, **kw)


def _tvals(data, T):
    return np.asarray(T(data.y, data.r), dtype=float)


# ---------------------------------------------------------------------------
# spectral


def spectral_l1(data: Dataset, T: Transformation) -> EstimatorResult:
    """``v = (1/m) sum_i T_1(y_i, r_i) sqrt(d) z_i``, normalized."""
    if T.ell != 1:
        raise ValueError("spectral_l1 needs a degree-1 transformation")
    t0 = time.perf_counter()
    v = math.sqrt(data.d) * (_tvals(data, T) @ data.z) / max(data.m, 1)
    return _result(_unit(v), data, data.m, t0)


def spectral_l2(data: Dataset, T: Transformation, cfg: Optional[EstimatorConfig] = None) -> EstimatorResult:
    """Leading eigenvector of ``(1/m) sum_i T_2(y_i, r_i) (d z_i z_i^T - I)``.

    The matrix is applied implicitly, ``O(m d)`` per power iteration.
    """
    if T.ell != 2:
        raise ValueError("spectral_l2 needs a degree-2 transformation")
    cfg = cfg or EstimatorConfig(algo="spectral2", ell=2)
    t0 = time.perf_counter()
    tv = _tvals(data, T)
    m, d = data.m, data.d
    if m == 0:
        raise DegenerateEstimate("no samples")
    Z = data.z
    tbar = tv.mean()

    def mv(v):
        return d * (Z.T @ (tv * (Z @ v))) / m - tbar * v

    n_iter = cfg.power_iters or int(math.ceil(10 * math.log(d)))
    v, lam, conv = power_iteration(mv, d, n_iter, seed=cfg.seed, tol=cfg.power_tol)
    return _result(_unit(v), data, m, t0, converged=conv, info={"eigenvalue": lam})


# ---------------------------------------------------------------------------
# boosting


def boost_step(v, chunk: Dataset, T: Transformation, ell: int, tvals=None):
    """``v_hat = (1/m) sum_i T_l(y_i, r_i) Q_l'(<v, z_i>) z_i``, normalized."""
    tv = _tvals(chunk, T) if tvals is None else tvals
    s = np.clip(chunk.z @ v, -1.0, 1.0)
    g = tv * gegenbauer_derivative(chunk.d, ell, s)
    return _unit(g @ chunk.z / max(chunk.m, 1), "boost direction")


def boost_schedule(m: int, d: int, n_stages: Optional[int] = None):
    """Chunk sizes ``|S| / 2^(t+2)`` for ``t = 1..ceil(log d)``."""
    n_stages = n_stages or int(math.ceil(math.log(d)))
    return [m // 2 ** (t + 2) for t in range(1, n_stages + 1)]


def boost(w0, data: Dataset, T: Transformation, ell: int, cfg: Optional[EstimatorConfig] = None) -> EstimatorResult:
    """Geometric-chunk boosting from a warm start ``w0``.

    The samples after the scheduled chunks serve as a held-out set; its
    correlation proxy ``mean T_l Q_l(<w, z>)`` picks the returned iterate
    and triggers early exit above ``cfg.proxy_threshold``.
    """
    cfg = cfg or EstimatorConfig(algo="boost", ell=ell)
    t0 = time.perf_counter()
    sizes = boost_schedule(data.m, data.d, cfg.n_stages)
    if min(sizes) < 1:
        raise ValueError(f"{data.m} samples cannot fill the boosting schedule {sizes}")
    tv = _tvals(data, T)
    used = sum(sizes)
    hz, ht = data.z[used:], tv[used:]

    def proxy(w):
        if ht.size == 0:
            return 0.0
        return float(np.mean(ht * gegenbauer_eval(data.d, ell, np.clip(hz @ w, -1, 1))))

    w = _unit(np.asarray(w0, dtype=float))
    best, best_p = w, proxy(w)
    trace = [overlap(w, data.planted_direction)]
    lo = 0
    for n in sizes:
        chunk = data.subset(lo, lo + n)
        w = boost_step(w, chunk, T, ell, tv[lo:lo + n])
        lo += n
        p = proxy(w)
        trace.append(overlap(w, data.planted_direction))
        if p > best_p:
            best, best_p = w, p
        if cfg.proxy_threshold is not None and p >= cfg.proxy_threshold:
            break
    return _result(best, data, data.m, t0, trace=trace, info={"proxy": best_p, "schedule": sizes})


# ---------------------------------------------------------------------------
# online SGD


@numba.njit(cache=True)
def _gegen_pair(s, d, ell):
    # P_ell^{(d)}(s) and P_{ell-1}^{(d+2)}(s)
    p0, p1 = 1.0, s
    if ell == 0:
        p = 1.0
    else:
        for l in range(1, ell):
            p0, p1 = p1, ((2 * l + d - 2) * s * p1 - l * p0) / (l + d - 2)
        p = p1
    dd = d + 2
    q0, q1 = 1.0, s
    if ell - 1 <= 0:
        dp = 1.0
    else:
        for l in range(1, ell - 1):
            q0, q1 = q1, ((2 * l + dd - 2) * s * q1 - l * q0) / (l + dd - 2)
        dp = q1
    return p, dp


@numba.njit(cache=True)
def _hermite_pair(x, k):
    # orthonormal He_k(x) and He_k'(x) = sqrt(k) He_{k-1}(x)
    if k == 0:
        return 1.0, 0.0
    h0, h1 = 1.0, x
    for j in range(1, k):
        h0, h1 = h1, (x * h1 - math.sqrt(j) * h0) / math.sqrt(j + 1)
    return h1, math.sqrt(k) * h0


@numba.njit(cache=True)
def _sgd_kernel(Z, radii, tv, w, eta, d, ell, poly, qscale, dscale, wstar, trace_every, trace):
    """One pass of projected SGD; poly 0 = Gegenbauer, 1 = Hermite on r<w,z>."""
    m = Z.shape[0]
    dim = Z.shape[1]
    nt = 0
    for i in range(m):
        s = 0.0
        for j in range(dim):
            s += w[j] * Z[i, j]
        if poly == 0:
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
            p, dp = _gegen_pair(s, d, ell)
            q = qscale * p
            dq = dscale * dp
            x = 1.0
        else:
            x = radii[i]
            q, dq = _hermite_pair(x * s, ell)
            dq = dq * x
        coef = -2.0 * (tv[i] - q) * dq
        nrm = 0.0
        for j in range(dim):
            w[j] = w[j] - eta * coef * (Z[i, j] - s * w[j])
            nrm += w[j] * w[j]
        nrm = math.sqrt(nrm)
        if not (nrm > 0.0) or not math.isfinite(nrm):
            return i, nt
        for j in range(dim):
            w[j] /= nrm
        if trace_every > 0 and (i + 1) % trace_every == 0 and nt < trace.shape[0]:
            o = 0.0
            for j in range(dim):
                o += w[j] * wstar[j]
            trace[nt] = o
            nt += 1
    return m, nt


def sgd_default_eta(beta, d, ell, const=SGD_ETA_CONST):
    """``eta = c beta d^(-l/2)``."""
    return const * beta * d ** (-ell / 2.0)


def _sgd_run(Z, radii, tv, w0, eta, d, ell, poly, wstar, trace_every):
    w = np.array(w0, dtype=float)
    qscale = _sqrt_dim(d, ell) if poly == 0 else 1.0
    dscale = qscale * ell * (ell + d - 2) / (d - 1) if poly == 0 else 1.0
    ws = np.zeros(Z.shape[1]) if wstar is None else np.asarray(wstar, dtype=float)
    nt_max = Z.shape[0] // trace_every if trace_every > 0 else 0
    trace = np.zeros(nt_max)
    stop, nt = _sgd_kernel(np.ascontiguousarray(Z), np.ascontiguousarray(radii),
                           np.ascontiguousarray(tv, dtype=float), w, float(eta), float(d), int(ell),
                           int(poly), float(qscale), float(dscale), ws, int(trace_every), trace)
    if stop < Z.shape[0]:
        raise FloatingPointError(f"SGD iterate became non-finite at step {stop}")
    return w, trace[:nt].tolist()


def _sgd_driver(data, tv, ell, cfg, poly, radii, proxy_fn, t0):
    m, d = data.m, data.d
    if m == 0:
        raise DegenerateEstimate("no samples")
    if cfg.eta is not None:
        eta = cfg.eta
    else:
        if cfg.beta is None:
            raise ValueError("default step size needs the correlation beta")
        eta = sgd_default_eta(cfg.beta, d, ell, cfg.eta_const)
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    R = cfg.restarts
    if cfg.delta is not None:
        R = max(1, int(math.ceil(math.log(1.0 / cfg.delta))))
    n_hold = int(round(cfg.holdout_frac * m)) if R > 1 else 0
    n_run = (m - n_hold) // R
    if cfg.n_iter is not None:
        n_run = min(n_run, cfg.n_iter)
    rng = stream_rng(cfg.seed, 7)
    best, best_p, traces = None, -np.inf, []
    hold = slice(m - n_hold, m)
    for k in range(R):
        w0 = rng.standard_normal(d)
        w0 /= np.linalg.norm(w0)
        sl = slice(k * n_run, (k + 1) * n_run)
        w, tr = _sgd_run(data.z[sl], radii[sl], tv[sl], w0, eta, d, ell, poly,
                         data.planted_direction, cfg.trace_every)
        traces.append(tr)
        p = proxy_fn(w, hold) if R > 1 else 0.0
        if best is None or p > best_p:
            best, best_p = w, p
    used = R * n_run + n_hold
    return _result(_unit(best), data, used, t0, trace=traces if cfg.trace_every else None,
                   info={"eta": eta, "restarts": R, "proxy": best_p})


def online_sgd(stream: Dataset, T: Transformation, ell: int, cfg: Optional[EstimatorConfig] = None) -> EstimatorResult:
    """One-pass spherical SGD on ``(T_l(y, r) - Q_l(<w, z>))^2``."""
    cfg = cfg or EstimatorConfig(algo="sgd", ell=ell, beta=T.beta)
    if cfg.beta is None and cfg.eta is None:
        cfg = EstimatorConfig(**{**cfg.to_dict(), "beta": T.beta})
    t0 = time.perf_counter()
    tv = _tvals(stream, T)

    def proxy(w, sl):
        s = np.clip(stream.z[sl] @ w, -1, 1)
        return float(np.mean(tv[sl] * gegenbauer_eval(stream.d, ell, s)))

    return _sgd_driver(stream, tv, ell, cfg, 0, np.ones(stream.m), proxy, t0)


def hermite_sgd(data: Dataset, Tstar: Callable, k_star: int, cfg: Optional[EstimatorConfig] = None) -> EstimatorResult:
    """One-pass spherical SGD on ``(Tstar(y) - He_k(<w, x>))^2`` with ``x = r z``.

    With ``cfg.randomize_norm`` the radius is replaced by an independent
    ``chi_d`` draw.
    """
    from .harmonic_core import hermite_eval

    cfg = cfg or EstimatorConfig(algo="hesgd", ell=k_star)
    t0 = time.perf_counter()
    tv = np.asarray(Tstar(data.y), dtype=float)
    radii = data.r
    if cfg.randomize_norm:
        radii = np.sqrt(stream_rng(cfg.seed, 8).chisquare(data.d, size=data.m))

    def proxy(w, sl):
        return float(np.mean(tv[sl] * hermite_eval(k_star, radii[sl] * (data.z[sl] @ w))))

    if cfg.beta is None and cfg.eta is None:
        raise ValueError("hermite_sgd needs eta or beta in the config")
    return _sgd_driver(data, tv, k_star, cfg, 1, np.asarray(radii, dtype=float), proxy, t0)


def s_star(d, ell):
    """Largest-root constant of the drift condition, with ``|.|`` inside the root."""
    num = (ell - 2) * (ell + d - 3)
    den = (ell - d / 2 - 3) * (ell + d / 2 - 2)
    return math.sqrt(abs(num / den)) * math.cos(math.pi / ell)


def drift_threshold(d, ell):
    """Overlap ``2 sqrt(s_star / d)`` above which the drift is claimed positive."""
    return 2.0 * math.sqrt(s_star(d, ell) / d)


def population_drift(d, ell, m_t, T: Transformation, link, n: int, seed=0, eta=None, eta_const=SGD_ETA_CONST):
    """Monte Carlo ``E[m_{t+1} - m_t]`` for one SGD step at overlap ``m_t``.

    Draws ``n`` planted samples, places the iterate at overlap ``m_t`` with
    ``w*`` and averages the one-step change. Returns ``(mean, std_error)``.
    """
    from .sim_model import sample_planted

    rng = stream_rng(seed, 9)
    ws = np.zeros(d)
    ws[0] = 1.0
    u = np.zeros(d)
    u[1] = 1.0
    w = m_t * ws + math.sqrt(1 - m_t**2) * u
    if eta is None:
        eta = sgd_default_eta(T.beta, d, ell, eta_const)
    out = np.empty(n)
    chunk = 200_000
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        ds = sample_planted(link, ws, hi - lo, (seed, lo, int(rng.integers(1 << 31))))
        tv = T(ds.y, ds.r)
        s = np.clip(ds.z @ w, -1, 1)
        q = gegenbauer_eval(d, ell, s)
        dq = gegenbauer_derivative(d, ell, s)
        coef = -2 * (tv - q) * dq
        G = coef[:, None] * (ds.z - s[:, None] * w[None, :])
        Wn = w[None, :] - eta * G
        Wn /= np.linalg.norm(Wn, axis=1, keepdims=True)
        out[lo:hi] = Wn[:, 0] - m_t
    return float(out.mean()), float(out.std(ddof=1) / math.sqrt(n))


# ---------------------------------------------------------------------------
# tensor unfolding


def _use_dense(cfg, d, ell):
    if cfg.method == "dense":
        return True
    if cfg.method == "implicit":
        return False
    return d**ell <= DENSE_BUDGET // 4


def _gram_constants(d, ell):
    # Mat_{1,l-1}(H(z)) Mat_{1,l-1}(H(z))^T = A I + B z z^T for unit z
    z = np.zeros(d)
    z[0] = 1.0
    op = HarmonicMatvec(z, ell, 1, ell - 1)
    e2 = np.zeros(d)
    e2[1] = 1.0
    A = float(op.matvec(op.rmatvec(e2))[1])
    AB = float(op.matvec(op.rmatvec(z))[0])
    return A, AB - A


def tensor_unfold_balanced(data: Dataset, T: Transformation, ell: int,
                           cfg: Optional[EstimatorConfig] = None) -> EstimatorResult:
    """Top left singular vector of ``Mat_{floor(l/2), ceil(l/2)}`` of the empirical tensor."""
    cfg = cfg or EstimatorConfig(algo="unfold-balanced", ell=ell)
    if ell < 3:
        raise ValueError("tensor unfolding needs ell >= 3")
    t0 = time.perf_counter()
    a, b = ell // 2, ell - ell // 2
    m, d = data.m, data.d
    tv = _tvals(data, T) / max(m, 1)
    if _use_dense(cfg, d, ell):
        A = unfold(empirical_harmonic_tensor(data.z, tv * m, ell), a)
        mv = lambda u: A @ (A.T @ u)  # noqa: E731
    else:
        op = HarmonicOperatorSum(data.z, tv, ell, a, b)
        mv = lambda u: op.matvec(op.rmatvec(u))  # noqa: E731
    n_iter = cfg.power_iters or int(math.ceil(10 * math.log(d**a)))
    u, lam, conv = power_iteration(mv, d**a, n_iter, seed=cfg.seed, tol=cfg.power_tol)
    w = vec_extract(u, d, a)
    return _result(w, data, m, t0, converged=conv, info={"eigenvalue": lam, "split": [a, b]})


def tensor_unfold(data: Dataset, T: Transformation, ell: int, a: int, b: int,
                  cfg: Optional[EstimatorConfig] = None) -> EstimatorResult:
    """Diagonal-removed unfolding: power iteration on ``M1 M1^T - M2``.

    ``M1 = (1/m) sum_i T_i Mat_{a,b}(H(z_i))`` and
    ``M2 = (1/m^2) sum_i T_i^2 Mat(H(z_i)) Mat(H(z_i))^T``.
    """
    cfg = cfg or EstimatorConfig(algo="unfold", ell=ell, a=a, b=b)
    if not (1 <= a < b and a + b == ell):
        raise ValueError("tensor_unfold needs 1 <= a < b with a + b = ell")
    t0 = time.perf_counter()
    m, d = data.m, data.d
    if m == 0:
        raise DegenerateEstimate("no samples")
    tv = _tvals(data, T)
    dense = _use_dense(cfg, d, ell)
    if dense:
        M1 = unfold(empirical_harmonic_tensor(data.z, tv, ell), a)
    op = HarmonicOperatorSum(data.z, tv, ell, a, b)
    if dense and a == 1:
        A, B = _gram_constants(d, ell)
        t2 = tv**2
        M2 = (A * t2.sum() * np.eye(d) + B * (data.z.T * t2) @ data.z) / m**2
        M = M1 @ M1.T - M2
        mv = lambda u: M @ u  # noqa: E731
        sigma = float(np.linalg.eigvalsh(M2)[-1])
    else:
        def m2(u):
            rows = op.per_sample_rmatvec(u)
            return op.per_sample_matvec(rows) / m**2

        if dense:
            mv = lambda u: M1 @ (M1.T @ u) - m2(u)  # noqa: E731
        else:
            mv = lambda u: op.matvec(op.rmatvec(u)) / m**2 - m2(u)  # noqa: E731
        # M2 is PSD: its top eigenvalue bounds the negative part of M
        sigma = power_iteration(m2, d**a, 30, seed=cfg.seed, tol=1e-6)[1] * 1.05
    # shifted operator is PSD, so power iteration lands on the top algebraic
    # eigenvalue (the planted spike is positive, noise is two-sided)
    n_iter = cfg.power_iters or max(100, int(math.ceil(10 * math.log(d**a))))
    u, lam, conv = power_iteration(lambda u: mv(u) + sigma * u, d**a, n_iter,
                                   seed=cfg.seed, tol=cfg.power_tol)
    w = vec_extract(u, d, a)
    return _result(w, data, m, t0, converged=conv,
                   info={"eigenvalue": lam - sigma, "shift": sigma, "split": [a, b]})


# ---------------------------------------------------------------------------
# partial trace (spectral on radius-weighted labels)


def partial_trace(data: Dataset, Tstar: Callable, k_star: int,
                  cfg: Optional[EstimatorConfig] = None) -> EstimatorResult:
    """Spectral estimator with ``T_l(y, r) ∝ Tstar(y) beta_{k*,l}(r)``.

    ``l = 1`` for odd ``k*`` (followed by boosting at degree ``k*`` when
    ``cfg.boost`` and ``k* >= 3``), ``l = 2`` for even ``k*``.
    """
    cfg = cfg or EstimatorConfig(algo="prtr", ell=k_star)
    t0 = time.perf_counter()
    ell = 1 if k_star % 2 else 2
    d = data.d
    ty = np.asarray(Tstar(data.y), dtype=float)

    def make_T(l, sl):
        bfun = hermite_to_gegenbauer(k_star, l, d)
        raw = ty[sl] * bfun(data.r[sl])
        scale = 1.0 / math.sqrt(max(float(np.mean(raw**2)), 1e-300))
        return Transformation(l, lambda y, r: scale * np.asarray(Tstar(y)) * bfun(r),
                              1.0, math.inf, float("nan"), kind="prtr")

    do_boost = ell == 1 and k_star >= 3 and cfg.boost
    n_init = int(cfg.init_frac * data.m) if do_boost else data.m
    init = data.subset(0, n_init)
    T0 = make_T(ell, slice(0, n_init))
    if ell == 1:
        res = spectral_l1(init, T0)
    else:
        res = spectral_l2(init, T0, cfg)
    info = {"dispatch": ell, "init_overlap": res.overlap}
    w = res.w_hat
    trace = None
    if do_boost:
        rest = data.subset(n_init, data.m)
        Tk = make_T(k_star, slice(n_init, data.m))
        br = boost(w, rest, Tk, k_star, cfg)
        w, trace = br.w_hat, br.trace
        info["boost_schedule"] = br.info["schedule"]
    return _result(w, data, data.m, t0, trace=trace, info=info)
