"""Seeded trials, (d, m) sweeps, critical sample sizes and exponent fits.

Trial seeds are derived as

    seed = first 8 bytes (little endian) of sha256("simlab-trial:{master}:{d}:{m}:{trial}")

so adding or removing grid points never perturbs any other cell.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats
from scipy.optimize import isotonic_regression

from . import estimators as est
from .constants import HESGD_ETA_CONST, N_CAL, SPECTRAL_KAPPA, TRANSFORM_KAPPA
from .harmonic_core import hermite_eval
from .sim_model import (
    build_transformation,
    csq_transformation,
    link_from_config,
    random_direction,
    sample_planted,
    stream_rng,
)

__all__ = [
    "ExperimentConfig",
    "SweepResult",
    "ConfigError",
    "RangeExhausted",
    "trial_seed",
    "run_trial",
    "critical_m",
    "critical_curve",
    "chance_rate",
    "corrected_rate",
    "scaling_exponent",
    "sweep",
    "m_grid",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ["d", "m", "algo", "seed", "overlap", "success", "wallclock_s", "samples", "reason"]
ALGOS = ("spectral1", "spectral2", "sgd", "unfold", "unfold-balanced", "hesgd", "prtr")
TSTARS = {
    "identity": lambda y: y,
    "sign": np.sign,
    "tanh": np.tanh,
    "abs": np.abs,
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class RangeExhausted(RuntimeError):
    """No success-rate crossing inside the configured m range."""

    def __init__(self, msg, curve):
        super().__init__(msg)
        self.curve = curve


@dataclass
class ExperimentConfig:
    link: dict
    algo: str
    d_grid: list
    estimator: dict = field(default_factory=dict)  # EstimatorConfig overrides
    transform: dict = field(default_factory=dict)
    m_grid: Optional[list] = None
    m_range: Optional[list] = None  # [lo, hi], multiplied by d^m_power
    m_power: float = 0.0
    ratio: float = 1.25
    seeds: int = 20
    threshold: float = est.SUCCESS_OVERLAP
    rate_level: float = 0.5
    stop_after: Optional[int] = None  # early exit after this many grid points at/above rate_level
    chance_correct: bool = False  # rescale rates by the overlap a uniform random guess reaches
    master_seed: int = 0
    workers: int = 1
    record_wallclock: bool = True
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algo {self.algo!r}; expected one of {ALGOS}")
        if not self.d_grid:
            raise ConfigError("d_grid must be nonempty")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.m_grid is not None and not self.m_grid:
            raise ConfigError("m_grid must be nonempty")
        if self.m_range is not None:
            lo, hi = self.m_range
            if not 0 < lo <= hi:
                raise ConfigError("m_range needs 0 < lo <= hi")
        if self.ratio <= 1:
            raise ConfigError("ratio must exceed 1")
        if not isinstance(self.link, dict) or "variant" not in self.link:
            raise ConfigError("link must be a configuration dict with a 'variant'")
        known = set(est.EstimatorConfig.__dataclass_fields__)
        bad = set(self.estimator) - known
        if bad:
            raise ConfigError(f"unknown estimator fields {sorted(bad)}")
        ts = self.transform.get("tstar", "identity")
        if ts not in TSTARS:
            raise ConfigError(f"unknown tstar {ts!r}")

    @classmethod
    def from_json(cls, path_or_obj):
        obj = path_or_obj
        if not isinstance(obj, dict):
            with open(path_or_obj) as fh:
                obj = json.load(fh)
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)


@dataclass
class SweepResult:
    rows: list
    aggregates: dict  # (d, m) -> success rate

    def curve(self, d):
        ms = sorted(m for (dd, m) in self.aggregates if dd == d)
        return ms, [self.aggregates[(d, m)] for m in ms]


# ---------------------------------------------------------------------------
# trials


def trial_seed(master, d, m, trial) -> int:
    h = hashlib.sha256(f"simlab-trial:{master}:{d}:{m}:{trial}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def m_grid(lo, hi, ratio=1.25):
    """Geometric integer grid from ``lo`` up to the first point ``>= hi``."""
    out, x = [], float(lo)
    while True:
        v = max(1, int(round(x)))
        if not out or v > out[-1]:
            out.append(v)
        if x >= hi:
            break
        x *= ratio
    return out


def _grid_for(cfg, d):
    if cfg.m_grid is not None:
        return sorted(int(m) for m in cfg.m_grid)
    if cfg.m_range is None:
        raise ConfigError("config needs m_grid or m_range")
    s = float(d) ** cfg.m_power
    return m_grid(cfg.m_range[0] * s, cfg.m_range[1] * s, cfg.ratio)


_T_CACHE = {}


def _key(obj):
    return json.dumps(obj, sort_keys=True)


def _transformation(cfg, link, ell):
    tr = cfg.transform
    kind = tr.get("kind", "ghd")
    key = (_key(link.to_config()), ell, _key(tr), cfg.algo.startswith("spectral"))
    if key not in _T_CACHE:
        n_cal, seed = int(tr.get("n_cal", N_CAL)), tr.get("seed", 0)
        if kind == "ghd":
            kap = tr.get("kappa", SPECTRAL_KAPPA if cfg.algo.startswith("spectral") else TRANSFORM_KAPPA)
            T = build_transformation(link, ell, kappa=float(kap), n_cal=n_cal, seed=seed)
        elif kind == "csq":
            T = csq_transformation(link, ell, n_cal=n_cal, seed=seed)
        else:
            raise ConfigError(f"unknown transformation kind {kind!r}")
        _T_CACHE[key] = T
    return _T_CACHE[key]


def _hermite_beta(cfg, link, tstar, k):
    # E[T*(y) He_k(<w*, x>)] from calibration draws
    tr = cfg.transform
    key = ("hebeta", _key(link.to_config()), k, _key(tr))
    if key not in _T_CACHE:
        n_cal, seed = int(tr.get("n_cal", N_CAL)), tr.get("seed", 0)
        w = random_direction(link.d, stream_rng(seed, 21))
        ds = sample_planted(link, w, n_cal, (seed, 21))
        _T_CACHE[key] = float(np.mean(tstar(ds.y) * hermite_eval(k, ds.r * (ds.z @ w))))
    return _T_CACHE[key]


def _estimate(cfg, link, data, seed):
    algo = cfg.algo
    over = dict(cfg.estimator)
    if "ell" not in over and algo not in ("spectral1", "spectral2"):
        # degree defaults to the exponent the link declares
        if link.declared_k is None:
            raise ConfigError(f"algo {algo!r} needs estimator.ell for this link")
        over["ell"] = int(link.declared_k)
    ecfg = est.EstimatorConfig(**{"algo": algo, **over, "seed": seed})
    tstar = TSTARS[cfg.transform.get("tstar", "identity")]
    if algo == "spectral1":
        return est.spectral_l1(data, _transformation(cfg, link, 1))
    if algo == "spectral2":
        return est.spectral_l2(data, _transformation(cfg, link, 2), ecfg)
    if algo == "sgd":
        T = _transformation(cfg, link, ecfg.ell)
        return est.online_sgd(data, T, ecfg.ell, ecfg)
    if algo == "unfold":
        a = ecfg.a or 1
        T = _transformation(cfg, link, ecfg.ell)
        return est.tensor_unfold(data, T, ecfg.ell, a, ecfg.ell - a, ecfg)
    if algo == "unfold-balanced":
        return est.tensor_unfold_balanced(data, _transformation(cfg, link, ecfg.ell), ecfg.ell, ecfg)
    k = int(cfg.transform.get("k_star", ecfg.ell))
    if algo == "hesgd":
        if ecfg.eta is None and ecfg.beta is None:
            ecfg.beta = _hermite_beta(cfg, link, tstar, k)
            if "eta_const" not in cfg.estimator:
                ecfg.eta_const = HESGD_ETA_CONST
        return est.hermite_sgd(data, tstar, k, ecfg)
    return est.partial_trace(data, tstar, k, ecfg)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_trial(cfg: ExperimentConfig, d: int, m: int, trial: int) -> dict:
    """One seeded trial; estimator errors become failure rows."""
    seed = trial_seed(cfg.master_seed, d, m, trial)
    row = {"d": int(d), "m": int(m), "algo": cfg.algo, "seed": int(trial), "overlap": None,
           "success": False, "wallclock_s": 0.0, "samples": 0, "reason": ""}
    try:
        if m <= 0:
            raise est.DegenerateEstimate("no samples")
        link = link_from_config(cfg.link, d)
        w = random_direction(d, stream_rng(seed, 20))
        data = sample_planted(link, w, int(m), seed)
        t0 = time.perf_counter()
        res = _estimate(cfg, link, data, seed % (1 << 32))
        wall = time.perf_counter() - t0
        if res.samples_consumed > m:
            raise RuntimeError(f"estimator used {res.samples_consumed} > {m} samples")
        row.update(overlap=res.overlap, success=bool(res.overlap >= cfg.threshold),
                   wallclock_s=wall if cfg.record_wallclock else 0.0, samples=int(res.samples_consumed))
    except (ConfigError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
        row["reason"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_cells(cfg, cells):
    if cfg.workers <= 1 or len(cells) <= 1:
        return [run_trial(cfg, *c) for c in cells]
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        return list(ex.map(_trial_star, [(cfg, c) for c in cells], chunksize=4))


def _trial_star(arg):
    cfg, c = arg
    return run_trial(cfg, *c)


def _aggregate(rows):
    agg = {}
    for r in rows:
        agg.setdefault((r["d"], r["m"]), []).append(r["success"])
    return {k: float(np.mean(v)) for k, v in sorted(agg.items())}


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_rows(path):
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append({
                "d": int(r["d"]), "m": int(r["m"]), "algo": r["algo"], "seed": int(r["seed"]),
                "overlap": float(r["overlap"]) if r["overlap"] else None,
                "success": r["success"] == "1", "wallclock_s": float(r["wallclock_s"]),
                "samples": int(r["samples"]), "reason": r.get("reason", ""),
            })
    return out


def summarize(rows, cfg: Optional[ExperimentConfig] = None):
    cells = {}
    for r in rows:
        cells.setdefault((r["d"], r["m"]), []).append(r)
    out = []
    for (d, m), rs in sorted(cells.items()):
        ov = [r["overlap"] for r in rs if r["overlap"] is not None]
        out.append({
            "d": d, "m": m, "trials": len(rs),
            "successes": sum(r["success"] for r in rs),
            "success_rate": sum(r["success"] for r in rs) / len(rs),
            "failed_rows": sum(bool(r["reason"]) for r in rs),
            "mean_overlap": float(np.mean(ov)) if ov else None,
        })
    s = {"cells": out, "rows": len(rows), "failed_rows": sum(bool(r["reason"]) for r in rows)}
    if cfg is not None:
        s["config"] = cfg.to_dict()
    return s


def sweep(cfg: ExperimentConfig) -> SweepResult:
    """All (d, m, trial) cells; rows ordered by (d, m, seed)."""
    cells = [(d, m, t) for d in sorted(cfg.d_grid) for m in _grid_for(cfg, d) for t in range(cfg.seeds)]
    rows = sorted(_run_cells(cfg, cells), key=lambda r: (r["d"], r["m"], r["seed"]))
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, "results.csv"), "w", newline="") as fh:
            fh.write(rows_to_csv(rows))
        with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
            json.dump(summarize(rows, cfg), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return SweepResult(rows, _aggregate(rows))


# ---------------------------------------------------------------------------
# critical sample size


def _smooth(rates, counts):
    if len(rates) == 1:
        return np.asarray(rates, dtype=float)
    return isotonic_regression(np.asarray(rates, dtype=float), weights=np.asarray(counts, dtype=float)).x


def chance_rate(d: int, threshold: float = est.SUCCESS_OVERLAP) -> float:
    """``P(|<u, w>| >= threshold)`` for ``u`` uniform on the sphere ``S^{d-1}``."""
    if threshold <= 0:
        return 1.0
    if threshold >= 1:
        return 0.0
    # <u, w>^2 ~ Beta(1/2, (d-1)/2)
    return float(special.betainc((d - 1) / 2, 0.5, 1.0 - threshold**2))


def corrected_rate(rate, d: int, threshold: float = est.SUCCESS_OVERLAP):
    """``(rate - p0) / (1 - p0)`` with ``p0`` the random-guess success rate, clipped at 0."""
    p0 = chance_rate(d, threshold)
    return np.maximum((np.asarray(rate, dtype=float) - p0) / (1.0 - p0), 0.0)


def critical_curve(cfg: ExperimentConfig, d: int):
    """Success curve over the m grid: dict with ``m``, ``rate``, ``smoothed`` and ``rows``.

    With ``cfg.chance_correct`` the smoothed curve and the early stop use
    :func:`corrected_rate`; ``rate`` stays the raw fraction.
    """
    grid = _grid_for(cfg, d)
    ms, rates, rows = [], [], []
    adj = (lambda r: float(corrected_rate(r, d, cfg.threshold))) if cfg.chance_correct else float
    hits = 0
    for m in grid:
        rs = _run_cells(cfg, [(d, m, t) for t in range(cfg.seeds)])
        rows.extend(rs)
        ms.append(m)
        rates.append(float(np.mean([r["success"] for r in rs])))
        hits = hits + 1 if adj(rates[-1]) >= cfg.rate_level else 0
        if cfg.stop_after and hits >= cfg.stop_after:
            break
    sm = _smooth([adj(r) for r in rates], [cfg.seeds] * len(rates))
    return {"d": int(d), "m": ms, "rate": rates, "smoothed": [float(v) for v in sm], "rows": rows}


def critical_m(cfg: ExperimentConfig, d: int, curve=None) -> float:
    """Smallest grid m whose isotonic-smoothed success rate reaches ``cfg.rate_level``."""
    curve = curve or critical_curve(cfg, d)
    for m, s in zip(curve["m"], curve["smoothed"]):
        if s >= cfg.rate_level - 1e-12:
            return float(m)
    raise RangeExhausted(f"no crossing of {cfg.rate_level} at d={d} over m in "
                         f"[{curve['m'][0]}, {curve['m'][-1]}]", curve)


def scaling_exponent(points: Sequence) -> tuple:
    """Least-squares slope of ``log m_c`` on ``log d`` with its standard error."""
    pts = [(float(d), float(m)) for d, m in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 (d, m_c) points")
    if any(d <= 0 or m <= 0 for d, m in pts):
        raise ValueError("d and m_c must be positive")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.ptp(x) == 0:
        raise ValueError("all d values coincide")
    fit = stats.linregress(x, y)
    se = float(fit.stderr)
    if not math.isfinite(se):
        se = 0.0
    return float(fit.slope), se
