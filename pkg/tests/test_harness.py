import hashlib
import json

import numpy as np
import pytest

from simlab.harness import (
    ConfigError,
    ExperimentConfig,
    RangeExhausted,
    chance_rate,
    corrected_rate,
    critical_curve,
    critical_m,
    m_grid,
    read_rows,
    rows_to_csv,
    run_trial,
    scaling_exponent,
    sweep,
    trial_seed,
)

GH1 = {"variant": "GaussianHermite", "k": 1, "sigma": 0.5}


def cfg(**kw):
    base = dict(link=GH1, algo="spectral1", d_grid=[10, 20], m_grid=[5, 40, 200], seeds=4,
                transform={"n_cal": 3000}, record_wallclock=False)
    base.update(kw)
    return ExperimentConfig(**base)


def test_trial_seed_definition():
    h = hashlib.sha256(b"simlab-trial:3:10:40:2").digest()
    assert trial_seed(3, 10, 40, 2) == int.from_bytes(h[:8], "little")
    assert trial_seed(3, 10, 40, 2) != trial_seed(3, 10, 40, 3)


def test_m_grid():
    assert m_grid(10, 20, 1.25) == [10, 12, 16, 20, 24]
    g = m_grid(1, 100, 1.5)
    assert g[0] == 1 and g[-1] >= 100 and all(a < b for a, b in zip(g, g[1:]))


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        cfg(algo="magic")
    with pytest.raises(ConfigError):
        cfg(d_grid=[])
    with pytest.raises(ConfigError):
        cfg(estimator={"bogus": 1})
    with pytest.raises(ConfigError):
        cfg(ratio=1.0)
    with pytest.raises(ConfigError):
        cfg(link={"k": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"link": GH1, "algo": "sgd", "d_grid": [5], "wat": 1})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg().to_dict()))
    assert ExperimentConfig.from_json(str(p)) == cfg()


def test_run_trial_rows():
    c = cfg()
    r1, r2 = run_trial(c, 10, 40, 1), run_trial(c, 10, 40, 1)
    assert r1 == r2
    assert set(r1) == {"d", "m", "algo", "seed", "overlap", "success", "wallclock_s", "samples", "reason"}
    assert r1["samples"] == 40 and r1["reason"] == ""
    r0 = run_trial(c, 10, 0, 0)
    assert r0["success"] is False and r0["reason"].startswith("DegenerateEstimate")


def test_sweep_is_reproducible_across_workers(tmp_path):
    a = sweep(cfg(out_dir=str(tmp_path / "a")))
    b = sweep(cfg(out_dir=str(tmp_path / "b"), workers=2))
    ta = (tmp_path / "a" / "results.csv").read_bytes()
    assert ta == (tmp_path / "b" / "results.csv").read_bytes()
    assert len(a.rows) == 2 * 3 * 4
    assert [(r["d"], r["m"], r["seed"]) for r in a.rows] == sorted((r["d"], r["m"], r["seed"]) for r in a.rows)
    assert read_rows(tmp_path / "a" / "results.csv") == a.rows
    ms, rates = a.curve(20)
    assert ms == [5, 40, 200] and rates[-1] == 1.0
    summ = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summ["rows"] == 24 and summ["failed_rows"] == 0
    assert rows_to_csv(b.rows).encode() == ta


def test_critical_m_edge_cases():
    c = cfg(rate_level=0.5)
    assert critical_m(c, 10, {"m": [3, 6, 9], "smoothed": [1.0, 1.0, 1.0]}) == 3.0
    with pytest.raises(RangeExhausted) as ei:
        critical_m(c, 10, {"m": [3, 6, 9], "smoothed": [0.0, 0.0, 0.0]})
    assert ei.value.curve["m"] == [3, 6, 9]


def test_critical_curve_is_monotone_and_stops_early():
    c = cfg(m_grid=None, m_range=[0.5, 50], m_power=1, seeds=8, stop_after=2, rate_level=0.75)
    cur = critical_curve(c, 20)
    sm = cur["smoothed"]
    assert all(a <= b + 1e-12 for a, b in zip(sm, sm[1:]))
    assert cur["m"][-1] < 50 * 20
    assert sum(r >= 0.75 for r in cur["rate"][-2:]) == 2
    mc = critical_m(c, 20, cur)
    assert mc in cur["m"]


def test_chance_rate_closed_forms_and_monte_carlo():
    # d=2: angle uniform; d=3: <u, w> uniform on [-1, 1]
    assert chance_rate(2, 0.25) == pytest.approx(1 - 2 * np.arcsin(0.25) / np.pi, abs=1e-12)
    assert chance_rate(3, 0.25) == pytest.approx(0.75, abs=1e-12)
    assert chance_rate(10, 0.0) == 1.0 and chance_rate(10, 1.0) == 0.0
    g = np.random.default_rng(0).standard_normal((200000, 20))
    mc = np.mean(np.abs(g[:, 0]) / np.linalg.norm(g, axis=1) >= 0.25)
    assert chance_rate(20, 0.25) == pytest.approx(mc, abs=4e-3)


def test_corrected_rate():
    p0 = chance_rate(10)
    assert corrected_rate(1.0, 10) == pytest.approx(1.0)
    assert corrected_rate(p0, 10) == pytest.approx(0.0, abs=1e-12)
    assert corrected_rate(0.0, 10) == 0.0
    np.testing.assert_allclose(corrected_rate([p0 + (1 - p0) / 2], 10), [0.5])


def test_chance_corrected_curve_keeps_raw_rates():
    c = cfg(m_grid=[5, 40, 200], seeds=6, chance_correct=True)
    cur = critical_curve(c, 10)
    raw = cfg(m_grid=[5, 40, 200], seeds=6)
    assert cur["rate"] == critical_curve(raw, 10)["rate"]
    adj = corrected_rate(cur["rate"], 10)
    assert all(s <= r + 1e-12 for s, r in zip(cur["smoothed"], np.maximum.accumulate(adj)))


def test_scaling_exponent():
    ds = np.array([10, 20, 40, 80])
    s, se = scaling_exponent(list(zip(ds, 3.0 * ds**1.5)))
    assert s == pytest.approx(1.5, abs=1e-12) and se < 1e-10
    s, _ = scaling_exponent(list(zip(ds, np.full(4, 7.0))))
    assert s == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        scaling_exponent([(10, 1), (20, 2)])
    with pytest.raises(ValueError):
        scaling_exponent([(10, 1), (10, 2), (10, 3)])
    with pytest.raises(ValueError):
        scaling_exponent([(10, 1), (20, 0), (30, 3)])


@pytest.mark.parametrize("algo,link,ell,m", [
    ("spectral2", {"variant": "GaussianHermite", "k": 2, "sigma": 0.5}, None, 300),
    ("hesgd", {"variant": "GaussianHermite", "k": 3, "sigma": 0.5}, None, 20000),
    ("prtr", {"variant": "GaussianHermite", "k": 3, "sigma": 0.5}, None, 20000),
    ("unfold", {"variant": "NormalizedWrapper", "inner": {"variant": "GaussianHermite", "k": 3, "sigma": 0.5}},
     None, 5000),
])
def test_every_algo_runs(algo, link, ell, m):
    tr = {"n_cal": 20000, "kind": "csq"} if algo == "unfold" else {"n_cal": 5000}
    c = ExperimentConfig(link=link, algo=algo, d_grid=[10], m_grid=[m], seeds=1, transform=tr)
    row = run_trial(c, 10, m, 0)
    assert row["reason"] == "" and row["success"]


def test_missing_degree_is_a_config_error():
    link = {"variant": "Mixture", "eps": 0.5, "component1": GH1, "component2": GH1}
    c = ExperimentConfig(link=link, algo="sgd", d_grid=[10], m_grid=[50], seeds=1)
    with pytest.raises(ConfigError):
        run_trial(c, 10, 50, 0)
