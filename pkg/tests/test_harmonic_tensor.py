import itertools
import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from simlab.harmonic_core import gegenbauer_eval, harmonic_dim
from simlab.harmonic_tensor import (
    HarmonicMatvec,
    HarmonicOperatorSum,
    c_coeff,
    empirical_harmonic_tensor,
    harmonic_tensor_dense,
    matvec_unfolded,
    power_iteration,
    reproducing_check,
    unfold,
    vec_extract,
    wick_moment,
    zero_diagonal_tensor_dense,
)


def unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def probe(T, w):
    for _ in range(T.ndim):
        T = np.tensordot(T, w, axes=([0], [0]))
    return float(T)


def test_c_coeff_closed_forms():
    for d in (3, 7, 40):
        n2 = harmonic_dim(d, 2)
        assert c_coeff(1, 0, d) == pytest.approx(math.sqrt(d))
        assert c_coeff(2, 0, d) == pytest.approx(d * math.sqrt(n2) / (d - 1))
        assert c_coeff(2, 1, d) == pytest.approx(-math.sqrt(n2) / (d - 1))


def test_low_order_tensors():
    rng = np.random.default_rng(0)
    d = 6
    z = unit(rng, d)
    assert np.allclose(harmonic_tensor_dense(z, 1), math.sqrt(d) * z)
    H2 = math.sqrt(harmonic_dim(d, 2)) / (d - 1) * (d * np.outer(z, z) - np.eye(d))
    assert np.allclose(harmonic_tensor_dense(z, 2), H2)


@pytest.mark.parametrize("ell", [1, 2, 3, 4, 5])
def test_defining_relation_symmetry_trace(ell):
    rng = np.random.default_rng(ell)
    d = 8
    z = unit(rng, d)
    H = harmonic_tensor_dense(z, ell)
    for _ in range(4):
        w = unit(rng, d)
        assert abs(probe(H, w) - gegenbauer_eval(d, ell, w @ z)) <= 1e-9
    for perm in itertools.permutations(range(ell)):
        assert np.abs(H - H.transpose(perm)).max() <= 1e-12
    if ell >= 2:
        for s, t in itertools.combinations(range(ell), 2):
            assert np.abs(np.trace(H, axis1=s, axis2=t)).max() <= 1e-9


def test_rotation_equivariance():
    rng = np.random.default_rng(3)
    d = 7
    R = ortho_group.rvs(d, random_state=4)
    z = unit(rng, d)
    for ell in range(1, 5):
        H = harmonic_tensor_dense(z, ell)
        HR = harmonic_tensor_dense(R @ z, ell)
        rot = H
        for ax in range(ell):
            rot = np.moveaxis(np.tensordot(R, rot, axes=([1], [ax])), 0, ax)
        assert np.abs(HR - rot).max() <= 1e-9


def test_budget_and_unit_checks():
    z = np.ones(10) / math.sqrt(10)
    with pytest.raises(MemoryError):
        harmonic_tensor_dense(z, 6, budget=10**5)
    with pytest.raises(ValueError):
        harmonic_tensor_dense(np.ones(4), 2)
    with pytest.raises(NotImplementedError):
        HarmonicMatvec(z, 7, 3, 4)


def test_unfold_index_convention():
    # flat index 1 + sum (i_k - 1) d^(k-1): first index fastest
    d = 3
    T = np.arange(d**3, dtype=float).reshape((d,) * 3, order="F")
    M = unfold(T, 1)
    assert M.shape == (3, 9)
    assert M[1, 0] == T[1, 0, 0] and M[0, 1] == T[0, 1, 0] and M[0, 3] == T[0, 0, 1]


@pytest.mark.parametrize("d,ell", [(5, 3), (9, 4), (12, 5), (12, 3), (6, 2)])
def test_implicit_matvec_matches_dense(d, ell):
    rng = np.random.default_rng(d * 10 + ell)
    z = unit(rng, d)
    H = harmonic_tensor_dense(z, ell)
    for a in range(ell + 1):
        op = HarmonicMatvec(z, ell, a, ell - a)
        M = unfold(H, a)
        v = rng.standard_normal(d ** (ell - a))
        u = rng.standard_normal(d**a)
        assert np.abs(matvec_unfolded(op, v) - M @ v).max() <= 1e-10
        assert np.abs(op.rmatvec(u) - M.T @ u).max() <= 1e-10


def test_matvec_l2_closed_form_and_probe():
    rng = np.random.default_rng(11)
    d = 10
    z, v, w = unit(rng, d), rng.standard_normal(d), unit(rng, d)
    op = HarmonicMatvec(z, 2, 1, 1)
    ref = math.sqrt(harmonic_dim(d, 2)) / (d - 1) * (d * (z @ v) * z - v)
    assert np.allclose(op.matvec(v), ref)
    op = HarmonicMatvec(z, 4, 1, 3)
    w3 = np.multiply.outer(np.multiply.outer(w, w), w).reshape(-1, order="F")
    assert abs(w @ op.matvec(w3) - gegenbauer_eval(d, 4, w @ z)) <= 1e-9


def test_operator_sum_and_empirical_tensor():
    rng = np.random.default_rng(5)
    d, m, ell = 6, 40, 3
    Z = rng.standard_normal((m, d))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    wts = rng.standard_normal(m)
    dense = sum(w * harmonic_tensor_dense(z, ell) for z, w in zip(Z, wts)) / m
    assert np.abs(empirical_harmonic_tensor(Z, wts, ell) - dense).max() <= 1e-10
    op = HarmonicOperatorSum(Z, wts, ell, 1, 2)
    v = rng.standard_normal(d * d)
    assert np.abs(op.matvec(v) / m - unfold(dense, 1) @ v).max() <= 1e-10
    # per-sample products
    rows = op.per_sample_rmatvec(np.ones(d))
    ref = np.array([w * unfold(harmonic_tensor_dense(z, ell), 1).T @ np.ones(d) for z, w in zip(Z, wts)])
    assert np.abs(rows - ref).max() <= 1e-10


def test_zero_diagonal_tensor():
    rng = np.random.default_rng(2)
    z = unit(rng, 5)
    K = zero_diagonal_tensor_dense(z, 3)
    H = harmonic_tensor_dense(z, 3)
    assert K[0, 0, 1] == 0 and K[2, 2, 2] == 0
    assert K[0, 1, 2] == pytest.approx(H[0, 1, 2])


def test_reproducing_property():
    d, n = 10, 100_000
    for ell in (1, 2, 3):
        r = reproducing_check(d, ell, ell, n, rng_seed=ell, detail=True)
        assert r["error"] / r["pred_norm"] <= 0.05
    for ell, k in ((2, 1), (3, 1), (2, 4)):
        r = reproducing_check(d, ell, k, 20_000, rng_seed=7, detail=True)
        assert r["pred_norm"] == 0 and r["error"] <= 5 * r["std_error"]


def test_reproducing_l1_is_isotropy():
    assert reproducing_check(6, 1, 1, 200_000, rng_seed=1) <= 0.02


def test_vec_extract():
    rng = np.random.default_rng(8)
    d = 20
    w = unit(rng, d)
    u = np.outer(w, w).reshape(-1, order="F")
    assert abs(vec_extract(u, d, 2) @ w) == pytest.approx(1.0, abs=1e-12)
    noisy = u + 0.05 * rng.standard_normal(u.shape) / math.sqrt(u.size) * np.linalg.norm(u)
    assert abs(vec_extract(noisy, d, 2) @ w) >= 0.99
    v = vec_extract(-w, d, 1)
    assert np.allclose(np.abs(v), np.abs(w)) and v[np.flatnonzero(v)[0]] >= 0
    with pytest.raises(ValueError):
        vec_extract(np.zeros(d))


def test_power_iteration_deterministic():
    rng = np.random.default_rng(0)
    Q = np.linalg.qr(rng.standard_normal((15, 15)))[0]
    A = Q @ np.diag(np.r_[5.0, np.linspace(-2, 2, 14)]) @ Q.T
    v1, l1, c1 = power_iteration(lambda x: A @ x, 15, 500, seed=3)
    v2, l2, _ = power_iteration(lambda x: A @ x, 15, 500, seed=3)
    assert np.array_equal(v1, v2) and l1 == l2
    ev = np.linalg.eigvalsh(A)
    assert abs(l1) == pytest.approx(np.abs(ev).max(), rel=1e-6)


def test_wick_moments():
    d = 9
    assert wick_moment(d, [0, 0]) == pytest.approx(1 / d)
    assert wick_moment(d, [0, 0, 0, 0]) == pytest.approx(3 / (d * (d + 2)))
    assert wick_moment(d, [0, 0, 1, 1]) == pytest.approx(1 / (d * (d + 2)))
    assert wick_moment(d, [0, 1, 1]) == 0
    with pytest.raises(NotImplementedError):
        wick_moment(d, [0] * 14)


def test_quadratic_form_bound_monte_carlo():
    # sqrt(n) E[<H(z), A>^2] stays O(||A||_F^2) for random A
    rng = np.random.default_rng(9)
    d, ell = 8, 3
    A = rng.standard_normal((d,) * ell)
    Z = rng.standard_normal((4000, d))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    vals = [np.sum(harmonic_tensor_dense(z, ell) * A) ** 2 for z in Z[:2000]]
    ratio = np.mean(vals) / np.sum(A * A)
    assert ratio <= 2.0
