"""Command line entry point: ``simlab <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 partial failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _dump(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


# ---------------------------------------------------------------------------


def cmd_basis(args):
    from .harmonic_core import GegenbauerBasis, gegenbauer_eval, harmonic_dim

    basis = GegenbauerBasis(args.d, args.lmax)
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.check:
        G = basis.gram()
        w.writerow(["l", "k", "inner_product", "error"])
        for l in range(args.lmax + 1):
            for k in range(args.lmax + 1):
                w.writerow([l, k, repr(float(G[l, k])), repr(abs(float(G[l, k]) - (l == k)))])
        for l in range(args.lmax + 1):
            q1 = float(gegenbauer_eval(args.d, l, 1.0))
            rel = abs(q1 - harmonic_dim(args.d, l) ** 0.5) / harmonic_dim(args.d, l) ** 0.5
            w.writerow([l, "Q(1)", repr(q1), repr(rel)])
        return EXIT_OK
    ts = np.linspace(-1, 1, args.points)
    vals = basis(ts)
    w.writerow(["t"] + [f"Q{l}" for l in range(args.lmax + 1)])
    for i, t in enumerate(ts):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in vals[:, i]])
    return EXIT_OK


def cmd_tensor(args):
    from .harmonic_core import gegenbauer_eval
    from .harmonic_tensor import HarmonicMatvec, harmonic_tensor_dense, unfold

    rng = np.random.default_rng(args.seed)
    z = rng.standard_normal(args.d)
    z /= np.linalg.norm(z)
    H = harmonic_tensor_dense(z, args.ell)
    rows = []
    wv = rng.standard_normal(args.d)
    wv /= np.linalg.norm(wv)
    c = H
    for _ in range(args.ell):
        c = np.tensordot(c, wv, axes=([0], [0]))
    rows.append(("defining_relation", abs(float(c) - float(gegenbauer_eval(args.d, args.ell, z @ wv)))))
    if args.ell >= 2:
        tr = np.trace(H, axis1=0, axis2=1)
        rows.append(("trace", float(np.max(np.abs(tr)))))
    for a in range(1, args.ell):
        op = HarmonicMatvec(z, args.ell, a, args.ell - a)
        v = rng.standard_normal(args.d ** (args.ell - a))
        dense = unfold(H, a) @ v
        rows.append((f"matvec_a{a}", float(np.max(np.abs(op.matvec(v) - dense)))))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["check", "error"])
    for name, err in rows:
        w.writerow([name, repr(err)])
    bad = any(e > args.tol for _, e in rows)
    return EXIT_PARTIAL if (args.check and bad) else EXIT_OK


def cmd_generate(args):
    from .sim_model import link_from_config, random_direction, sample_planted, stream_rng, write_dataset

    link = link_from_config(_load_json(args.link), args.d)
    w = random_direction(args.d, stream_rng(args.seed, 20))
    data = sample_planted(link, w, args.m, args.seed)
    write_dataset(args.out, data)
    if args.planted_out:
        np.savetxt(args.planted_out, w, fmt="%.17g")
    return EXIT_OK


def cmd_estimate(args):
    from . import estimators as est
    from .harness import TSTARS, ExperimentConfig, _hermite_beta, _transformation
    from .sim_model import link_from_config, read_dataset

    cfg_obj = _load_json(args.config)
    data = read_dataset(args.data)
    if args.planted:
        w = np.loadtxt(args.planted, ndmin=1)
        data = type(data)(data.y, data.r, data.z, w / np.linalg.norm(w), data.fingerprint, data.seed)
    link = link_from_config(cfg_obj["link"], data.d)
    algo = args.algo
    ell = args.ell or cfg_obj.get("estimator", {}).get("ell") or {"spectral1": 1, "spectral2": 2}.get(algo)
    ell = ell or link.declared_k
    if ell is None:
        raise ValueError(f"--ell is required for {algo} on this link")
    ecfg = est.EstimatorConfig(**{**cfg_obj.get("estimator", {}), "algo": algo, "ell": ell})
    xcfg = ExperimentConfig(link=cfg_obj["link"], algo="sgd" if algo == "boost" else algo, d_grid=[data.d],
                            transform=cfg_obj.get("transform", {}))
    tstar = TSTARS[xcfg.transform.get("tstar", "identity")]
    if algo == "spectral1":
        res = est.spectral_l1(data, _transformation(xcfg, link, 1))
    elif algo == "spectral2":
        res = est.spectral_l2(data, _transformation(xcfg, link, 2), ecfg)
    elif algo == "sgd":
        res = est.online_sgd(data, _transformation(xcfg, link, ell), ell, ecfg)
    elif algo == "unfold":
        a = ecfg.a or 1
        res = est.tensor_unfold(data, _transformation(xcfg, link, ell), ell, a, ell - a, ecfg)
    elif algo == "unfold-balanced":
        res = est.tensor_unfold_balanced(data, _transformation(xcfg, link, ell), ell, ecfg)
    elif algo == "hesgd":
        if ecfg.beta is None and ecfg.eta is None:
            ecfg.beta = _hermite_beta(xcfg, link, tstar, ell)
        res = est.hermite_sgd(data, tstar, ell, ecfg)
    elif algo == "prtr":
        res = est.partial_trace(data, tstar, int(xcfg.transform.get("k_star", ell)), ecfg)
    elif algo == "boost":
        if "w0" not in cfg_obj:
            raise ValueError("boost needs a warm start 'w0' in the config")
        res = est.boost(np.asarray(cfg_obj["w0"], dtype=float), data, _transformation(xcfg, link, ell), ell, ecfg)
    else:
        raise ValueError(f"unknown algo {algo}")
    out = res.to_dict()
    out["config"] = {"algo": algo, "ell": ell, "estimator": ecfg.to_dict(), "file": cfg_obj}
    _dump(out, args.out)
    return EXIT_OK


def cmd_complexity(args):
    from .complexity import gaussian_rates, m_star, profile_from_link, q_star
    from .sim_model import link_from_config

    link = link_from_config(_load_json(args.link), args.d)
    prof = profile_from_link(link, args.lmax, args.nmc, args.seed)
    ms, qs = m_star(prof), q_star(prof)
    out = {
        "profile": prof.to_dict(),
        "m_star": {"value": ms.value, "degree": ms.degree, "stable": ms.stable, "runner_up": ms.runner_up},
        "q_star": {"value": qs.value, "degree": qs.degree, "stable": qs.stable, "runner_up": qs.runner_up},
        # reported separately, never merged into one runtime bound
        "d_times_m_star": args.d * ms.value,
    }
    k = link.declared_k
    if k is not None and not isinstance(k, tuple):
        out["gaussian_prediction"] = gaussian_rates(int(k), bool(link.with_norm), args.lmax).to_dict()
    _dump(out, args.out)
    return EXIT_OK


def cmd_sweep(args):
    from .harness import ExperimentConfig, sweep

    cfg = ExperimentConfig.from_json(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.workers:
        cfg.workers = args.workers
    res = sweep(cfg)
    failed = sum(bool(r["reason"]) for r in res.rows)
    print(f"{len(res.rows)} rows, {failed} failed")
    return EXIT_PARTIAL if failed else EXIT_OK


def _critical_points(cfg, ds):
    from .harness import RangeExhausted, critical_curve, critical_m

    pts, curves, missing = [], [], []
    for d in ds:
        cur = critical_curve(cfg, d)
        cur_out = {k: v for k, v in cur.items() if k != "rows"}
        try:
            mc = critical_m(cfg, d, cur)
            pts.append((d, mc))
            cur_out["m_c"] = mc
        except RangeExhausted:
            missing.append(d)
            cur_out["m_c"] = None
        curves.append(cur_out)
    return pts, curves, missing


def cmd_critical(args):
    from .harness import ExperimentConfig

    cfg = ExperimentConfig.from_json(args.config)
    ds = [args.d] if args.d else list(cfg.d_grid)
    pts, curves, missing = _critical_points(cfg, ds)
    _dump({"curves": curves, "points": pts}, args.out)
    return EXIT_PARTIAL if missing else EXIT_OK


def cmd_scaling(args):
    from .harness import ExperimentConfig, scaling_exponent

    if args.points:
        pts = []
        with open(args.points, newline="") as fh:
            for r in csv.DictReader(fh):
                pts.append((float(r["d"]), float(r["m_c"])))
        curves, missing = None, []
    else:
        if not args.config:
            raise ValueError("scaling needs --config or --points")
        cfg = ExperimentConfig.from_json(args.config)
        pts, curves, missing = _critical_points(cfg, list(cfg.d_grid))
    slope, se = scaling_exponent(pts)
    _dump({"slope": slope, "stderr": se, "points": pts, "curves": curves, "range_exhausted": missing}, args.out)
    return EXIT_PARTIAL if missing else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="simlab", description="Single-index model toolkit on the sphere.",
                                epilog="Exit codes: 0 success, 2 configuration error, 3 partial failures.")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("basis", help="Gegenbauer basis values or orthonormality diagnostics")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--lmax", type=int, required=True)
    s.add_argument("--check", action="store_true")
    s.add_argument("--points", type=int, default=11)
    s.set_defaults(func=cmd_basis)

    s = sub.add_parser("tensor", help="harmonic tensor self-checks at a random direction")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--ell", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--check", action="store_true")
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=cmd_tensor)

    s = sub.add_parser("generate", help="draw a planted dataset")
    s.add_argument("--link", required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--planted-out")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("estimate", help="run one estimator on a dataset file")
    s.add_argument("--algo", required=True,
                   choices=["spectral1", "spectral2", "sgd", "unfold", "unfold-balanced", "hesgd", "prtr", "boost"])
    s.add_argument("--ell", type=int)
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--planted", help="file with the planted direction, to report the overlap")
    s.add_argument("--out")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("complexity", help="signal profile, M*/Q* and optimal degrees of a link")
    s.add_argument("--link", required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--lmax", type=int)
    s.add_argument("--nmc", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("sweep", help="run a (d, m, seed) grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("critical-m", help="critical sample size per d")
    s.add_argument("--config", required=True)
    s.add_argument("--d", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_critical)

    s = sub.add_parser("scaling", help="log-log exponent of the critical sample size")
    s.add_argument("--config")
    s.add_argument("--points", help="CSV with columns d,m_c")
    s.add_argument("--out")
    s.set_defaults(func=cmd_scaling)
    return p


def main(argv=None):
    from .harness import ConfigError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"simlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
