import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from simlab import estimators as est
from simlab.estimators import DegenerateEstimate, EstimatorConfig
from simlab.sim_model import (
    GaussianHermite,
    NormalizedWrapper,
    build_transformation,
    csq_transformation,
    random_direction,
    sample_planted,
    stream_rng,
)


def planted(link, m, seed):
    w = random_direction(link.d, stream_rng(seed, 99))
    return sample_planted(link, w, m, seed)


@pytest.fixture(scope="module")
def gh1():
    L = GaussianHermite(40, k=1, sigma=0.5)
    return L, build_transformation(L, 1, n_cal=6000)


@pytest.fixture(scope="module")
def gh2():
    L = GaussianHermite(60, k=2, sigma=0.5)
    return L, build_transformation(L, 2, kappa=2.0, n_cal=6000)


@pytest.fixture(scope="module")
def nw3():
    L = NormalizedWrapper(12, inner=GaussianHermite(12, k=3, sigma=0.5))
    return L, csq_transformation(L, 3, n_cal=30000)


def test_spectral_l1_recovers(gh1):
    L, T = gh1
    ds = planted(L, 20 * L.d, 0)
    r = est.spectral_l1(ds, T)
    assert r.overlap >= 0.8 and r.success and r.samples_consumed == ds.m


def test_spectral_l1_equivariant(gh1):
    L, T = gh1
    ds = planted(L, 300, 1)
    R = ortho_group.rvs(L.d, random_state=2)
    a = est.spectral_l1(ds, T).w_hat
    b = est.spectral_l1(ds.rotated(R), T).w_hat
    assert np.allclose(R @ a, b, atol=1e-12)


def test_spectral_l2_recovers_and_is_deterministic(gh2):
    L, T = gh2
    ds = planted(L, 10 * L.d, 3)
    r1, r2 = est.spectral_l2(ds, T), est.spectral_l2(ds, T)
    assert r1.overlap >= 0.7
    assert np.array_equal(r1.w_hat, r2.w_hat)
    with pytest.raises(ValueError):
        est.spectral_l2(ds, build_transformation(L, 2, n_cal=3000).__class__(
            1, T.evaluator, T.norm, T.kappa, T.beta))


def test_degenerate_inputs(gh1, gh2):
    L, T = gh2
    ds = planted(L, 10, 0).subset(0, 0)
    with pytest.raises(DegenerateEstimate):
        est.spectral_l2(ds, T)
    L1, T1 = gh1
    with pytest.raises(DegenerateEstimate):
        est.online_sgd(planted(L1, 10, 0).subset(0, 0), T1, 1)
    with pytest.raises(ValueError):
        EstimatorConfig(algo="unfold", ell=3, a=1, b=1)
    with pytest.raises(ValueError):
        est.hermite_sgd(planted(L1, 10, 0), lambda y: y, 1, EstimatorConfig(algo="hesgd", ell=1))


def test_online_sgd_recovers_and_is_deterministic(gh1):
    L, T = gh1
    ds = planted(L, 40 * L.d, 4)
    cfg = EstimatorConfig(algo="sgd", ell=1, beta=T.beta, seed=5)
    r1, r2 = est.online_sgd(ds, T, 1, cfg), est.online_sgd(ds, T, 1, cfg)
    assert r1.overlap >= 0.7
    assert np.array_equal(r1.w_hat, r2.w_hat)
    assert r1.info["eta"] == pytest.approx(est.sgd_default_eta(T.beta, L.d, 1))


def test_online_sgd_degree3_trace(nw3):
    L, T = nw3
    ok = 0
    for s in range(8):
        cfg = EstimatorConfig(algo="sgd", ell=3, beta=T.beta, trace_every=5000, seed=s)
        r = est.online_sgd(planted(L, 300 * L.d**2, s), T, 3, cfg)
        ok += r.success
    assert ok >= 5
    tr = np.asarray(r.trace[0])
    assert tr.ndim >= 1 and len(tr) >= 2


def test_unfold_dense_matches_implicit(nw3):
    L, T = nw3
    ds = planted(L, 4000, 7)
    a = est.tensor_unfold(ds, T, 3, 1, 2, EstimatorConfig(algo="unfold", ell=3, method="dense"))
    b = est.tensor_unfold(ds, T, 3, 1, 2, EstimatorConfig(algo="unfold", ell=3, method="implicit"))
    assert abs(a.w_hat @ b.w_hat) == pytest.approx(1.0, abs=1e-6)
    assert a.info["eigenvalue"] == pytest.approx(b.info["eigenvalue"], rel=1e-6)
    assert a.success


def test_unfold_diagonal_removal_is_exact(nw3):
    # M1 M1^T - M2 equals the off-diagonal pair sum (1/m^2) sum_{i != j}
    L, T = nw3
    from simlab.harmonic_tensor import harmonic_tensor_dense, unfold

    ds = planted(L, 30, 8)
    tv = T(ds.y, ds.r)
    mats = [tv[i] * unfold(harmonic_tensor_dense(z, 3), 1) for i, z in enumerate(ds.z)]
    S = sum(mats)
    ref = (S @ S.T - sum(A @ A.T for A in mats)) / ds.m**2
    r = est.tensor_unfold(ds, T, 3, 1, 2, EstimatorConfig(algo="unfold", ell=3, method="dense", power_iters=3000))
    top = np.linalg.eigh(ref)
    assert r.info["eigenvalue"] == pytest.approx(top[0][-1], rel=1e-6)


def test_unfold_balanced_and_split_checks(nw3):
    L, T = nw3
    ds = planted(L, 3000, 9)
    r = est.tensor_unfold_balanced(ds, T, 3)
    assert r.info["split"] == [1, 2]
    with pytest.raises(ValueError):
        est.tensor_unfold(ds, T, 3, 2, 1)
    with pytest.raises(ValueError):
        est.tensor_unfold_balanced(ds, T, 2)


def test_boost_schedule_and_improvement(nw3):
    assert est.boost_schedule(1600, 20) == [200, 100, 50]
    L, T = nw3
    ds = planted(L, 400_000, 10)
    w = ds.planted_direction
    u = np.linalg.qr(np.column_stack([w, np.eye(L.d)[:, 0]]))[0][:, 1]
    w0 = 0.3 * w + math.sqrt(1 - 0.09) * u
    r = est.boost(w0, ds, T, 3)
    assert r.trace[0] == pytest.approx(0.3, abs=1e-9)
    assert r.overlap >= 0.6


def test_partial_trace_recovers():
    L = GaussianHermite(20, k=3, sigma=0.5)
    ds = planted(L, 20000, 11)
    r = est.partial_trace(ds, lambda y: y, 3)
    assert r.success


def test_hermite_sgd_recovers():
    L = GaussianHermite(10, k=3, sigma=0.5)
    ds = planted(L, 30000, 12)
    cfg = EstimatorConfig(algo="hesgd", ell=3, beta=1.0, seed=1)
    assert est.hermite_sgd(ds, lambda y: y, 3, cfg).success


def test_drift_constants():
    assert est.drift_threshold(30, 3) == pytest.approx(0.1535, abs=5e-4)
    d, ell = 30, 3
    ss = math.sqrt(abs((ell - 2) * (ell + d - 3) / ((ell - d / 2 - 3) * (ell + d / 2 - 2)))) * math.cos(math.pi / ell)
    assert est.s_star(d, ell) == pytest.approx(ss)


def test_population_drift_positive_at_half():
    d = 30
    L = NormalizedWrapper(d, inner=GaussianHermite(d, k=3, sigma=0.5))
    T = csq_transformation(L, 3, n_cal=30000)
    mean, se = est.population_drift(d, 3, 0.5, T, L, 200_000, seed=0)
    assert mean > 3 * se
