"""Harmonic tensors ``H_l(z)``: dense construction and implicit unfoldings.

``H_l(z)`` is the symmetric traceless tensor with
``<H_l(z), w^{(x)l}> = Q_l(<w, z>)``. It expands as

    H_l(z) = sum_j c_{l,j} Sym(z^{(x)(l-2j)} (x) I^{(x)j}).

Flat indices follow the column-major convention: the multi-index
``(i_1, ..., i_k)`` maps to ``i_1 + i_2 d + ... + i_k d^(k-1)``, which is
``numpy`` ``order='F'``.
"""
from __future__ import annotations

import itertools
import math
import string
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .harmonic_core import _sqrt_dim, gegenbauer_eval

__all__ = [
    "c_coeff",
    "sym_patterns",
    "harmonic_tensor_dense",
    "zero_diagonal_tensor_dense",
    "unfold",
    "HarmonicMatvec",
    "HarmonicOperatorSum",
    "matvec_unfolded",
    "empirical_harmonic_tensor",
    "reproducing_check",
    "vec_extract",
    "power_iteration",
    "wick_moment",
    "MAX_DEGREE",
]

MAX_DEGREE = 6
DENSE_BUDGET = 2**25  # entries


def _pochhammer(x, n):
    out = Fraction(1)
    for i in range(n):
        out *= x + i
    return out


@lru_cache(maxsize=None)
def _c_rational(ell, j, d):
    if not 0 <= j <= ell // 2:
        raise ValueError("need 0 <= j <= ell // 2")
    comb = Fraction(math.factorial(ell), math.factorial(j) * math.factorial(ell - 2 * j))
    sign = -1 if j % 2 else 1
    half = Fraction(d, 2) - 1
    return sign * 2 ** (ell - 2 * j) * comb * _pochhammer(half, ell - j) / _pochhammer(Fraction(d - 2), ell)


def c_coeff(ell: int, j: int, d: int) -> float:
    """Coefficient ``c_{l,j}`` of ``Sym(z^(l-2j) (x) I^j)`` in ``H_l(z)``."""
    return float(_c_rational(ell, j, d)) * _sqrt_dim(d, ell)


def _matchings(slots):
    if not slots:
        yield ()
        return
    first, rest = slots[0], slots[1:]
    for i, s in enumerate(rest):
        for m in _matchings(rest[:i] + rest[i + 1:]):
            yield ((first, s),) + m


@lru_cache(maxsize=None)
def sym_patterns(ell: int, j: int):
    """Distinct index patterns of ``Sym(z^(l-2j) (x) I^j)``.

    Each pattern is ``(zslots, pairs)``. There are
    ``l! / ((l-2j)! j! 2^j)`` of them and the symmetrization is their
    uniform average.
    """
    out = []
    for zs in itertools.combinations(range(ell), ell - 2 * j):
        rest = tuple(s for s in range(ell) if s not in zs)
        for m in _matchings(rest):
            out.append((zs, m))
    return tuple(out)


def _sym_from_moments(moments, ell, d, coeffs):
    """``sum_j coeffs[j] Sym(S_{l-2j} (x) I^j)`` for symmetric moments ``S_p``.

    ``moments[p]`` is a symmetric p-tensor (scalar for p = 0).
    """
    out = np.zeros((d,) * ell)
    eye = np.eye(d)
    letters = string.ascii_letters[:ell]
    for j, c in enumerate(coeffs):
        if c == 0.0:
            continue
        pats = sym_patterns(ell, j)
        acc = np.zeros((d,) * ell)
        S = moments[ell - 2 * j]
        for zs, pairs in pats:
            ops, subs = [], []
            if zs:
                ops.append(S)
                subs.append("".join(letters[s] for s in zs))
            for s, t in pairs:
                ops.append(eye)
                subs.append(letters[s] + letters[t])
            term = np.einsum(",".join(subs) + "->" + letters, *ops, optimize=True)
            acc += term if zs else float(S) * term
        out += (c / len(pats)) * acc
    return out


def _check_budget(d, ell, budget):
    if d**ell > budget:
        raise MemoryError(
            f"dense tensor with {d}^{ell} entries exceeds the budget of {budget}; "
            "use HarmonicMatvec for implicit products"
        )


def harmonic_tensor_dense(z, ell: int, budget: int = DENSE_BUDGET):
    """Dense ``H_l(z)`` as an array of shape ``(d,)*l``."""
    z = np.asarray(z, dtype=float)
    d = z.shape[0]
    if abs(np.linalg.norm(z) - 1.0) > 1e-10:
        raise ValueError("z must be a unit vector")
    if ell == 0:
        return np.array(1.0)
    _check_budget(d, ell, budget)
    moments = {}
    for j in range(ell // 2 + 1):
        p = ell - 2 * j
        S = np.array(1.0)
        for _ in range(p):
            S = np.multiply.outer(S, z)
        moments[p] = S
    coeffs = [c_coeff(ell, j, d) for j in range(ell // 2 + 1)]
    return _sym_from_moments(moments, ell, d, coeffs)


def zero_diagonal_tensor_dense(z, ell: int, budget: int = DENSE_BUDGET):
    """Dense ``K_l(z)``: ``H_l(z)`` with every repeated-index entry set to 0.

    On entries with distinct indices only the ``j = 0`` term contributes, so
    ``K_l(z) = c_{l,0} z^(x)l`` off the generalized diagonal.
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[0]
    _check_budget(d, ell, budget)
    T = np.array(c_coeff(ell, 0, d))
    for _ in range(ell):
        T = np.multiply.outer(T, z)
    idx = np.indices((d,) * ell).reshape(ell, -1)
    distinct = np.ones(idx.shape[1], dtype=bool)
    for s, t in itertools.combinations(range(ell), 2):
        distinct &= idx[s] != idx[t]
    T = T.reshape(-1)
    T[~distinct] = 0.0
    return T.reshape((d,) * ell)


def unfold(T, a: int):
    """``Mat_{a,b}(T)`` with column-major multi-index identification."""
    T = np.asarray(T)
    d = T.shape[0]
    ell = T.ndim
    return T.reshape(d**a, d ** (ell - a), order="F")


# ---------------------------------------------------------------------------
# implicit products


@lru_cache(maxsize=None)
def _pattern_exprs(ell, a, b, j, per_sample_v):
    """einsum recipes for each pattern of degree-j at split (a, b).

    Operands are, in order: weights 'n', one Z per z-slot, v, then one eye
    per left-left pair. Output carries 'n' only when per-sample results are
    requested via ``per_sample_v``.
    """
    letters = string.ascii_letters.replace("n", "")
    recipes = []
    for zs, pairs in sym_patterns(ell, j):
        lab = {s: letters[s] for s in range(ell)}
        eyes = []
        for s, t in pairs:
            if s >= a and t >= a:
                lab[t] = lab[s]
            elif s < a and t < a:
                eyes.append((s, t))
            else:
                lo, hi = (s, t) if s < a else (t, s)
                lab[hi] = lab[lo]
        subs = ["n"]
        subs += ["n" + lab[s] for s in zs]
        vsub = "".join(lab[s] for s in range(a, ell))
        subs.append(("n" if per_sample_v else "") + vsub)
        subs += [lab[s] + lab[t] for s, t in eyes]
        out = "".join(lab[s] for s in range(a))
        recipes.append((",".join(subs) + "->n" + out, len(zs), len(eyes)))
    return tuple(recipes)


class HarmonicOperatorSum:
    """Implicit weighted sum ``sum_i w_i Mat_{a,b}(H_l(z_i))``.

    Parameters
    ----------
    Z : (m, d) array of unit rows
    weights : (m,) array
    ell, a, b : degree and split, ``a + b = ell``
    """

    def __init__(self, Z, weights, ell, a, b, chunk_entries=2**22):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if a + b != ell or a < 0 or b < 0:
            raise ValueError("need a + b = ell")
        if ell > MAX_DEGREE:
            raise NotImplementedError(f"implicit products support ell <= {MAX_DEGREE}")
        self.Z = Z
        self.w = np.broadcast_to(np.asarray(weights, dtype=float), (Z.shape[0],))
        self.ell, self.a, self.b = ell, a, b
        self.m, self.d = Z.shape
        self.coeffs = np.array([c_coeff(ell, j, self.d) for j in range(ell // 2 + 1)])
        width = self.d ** max(a, b, 1)
        self.chunk = max(1, chunk_entries // width)
        self._eye = np.eye(self.d)

    @property
    def shape(self):
        return (self.d**self.a, self.d**self.b)

    def _apply(self, V, a, b, per_sample):
        d, ell = self.d, self.ell
        out_shape = (self.m,) + (d,) * a
        res = np.zeros(out_shape) if per_sample else np.zeros((d,) * a)
        if per_sample:
            Vt = np.asarray(V).reshape((self.m,) + (d,) * b, order="F")
        else:
            Vt = np.asarray(V).reshape((d,) * b, order="F")
        for j, c in enumerate(self.coeffs):
            recipes = _pattern_exprs(ell, a, b, j, per_sample)
            scale = c / len(recipes)
            for expr, nz, ne in recipes:
                for lo in range(0, self.m, self.chunk):
                    hi = min(self.m, lo + self.chunk)
                    Zc = self.Z[lo:hi]
                    ops = [self.w[lo:hi]] + [Zc] * nz
                    ops.append(Vt[lo:hi] if per_sample else Vt)
                    ops += [self._eye] * ne
                    r = np.einsum(expr, *ops, optimize=True)
                    if per_sample:
                        res[lo:hi] += scale * r
                    else:
                        res += scale * r.sum(axis=0)
        if per_sample:
            return res.reshape(self.m, -1, order="F") if a else res.reshape(self.m, 1)
        return res.reshape(-1, order="F")

    def matvec(self, v):
        """``sum_i w_i Mat_{a,b}(H(z_i)) v`` for ``v`` of length ``d^b``."""
        return self._apply(v, self.a, self.b, False)

    def rmatvec(self, u):
        """Transpose product; by symmetry ``Mat_{a,b}^T = Mat_{b,a}``."""
        return self._apply(u, self.b, self.a, False)

    def per_sample_rmatvec(self, u):
        """Rows ``w_i Mat_{b,a}(H(z_i)) u`` as an ``(m, d^b)`` array."""
        U = np.broadcast_to(np.asarray(u, dtype=float).reshape(-1), (self.m, self.d**self.a))
        return self._apply(np.ascontiguousarray(U), self.b, self.a, True)

    def per_sample_matvec(self, V):
        """``sum_i w_i Mat_{a,b}(H(z_i)) V[i]`` for per-sample rows ``V``."""
        V = np.asarray(V, dtype=float).reshape(self.m, self.d**self.b)
        return self._apply(V, self.a, self.b, True).sum(axis=0)


class HarmonicMatvec(HarmonicOperatorSum):
    """Implicit ``Mat_{a,b}(H_l(z))`` for a single unit vector ``z``."""

    def __init__(self, z, ell, a, b):
        z = np.asarray(z, dtype=float)
        if abs(np.linalg.norm(z) - 1.0) > 1e-10:
            raise ValueError("z must be a unit vector")
        super().__init__(z[None, :], np.ones(1), ell, a, b)
        self.z = z


def matvec_unfolded(op: HarmonicOperatorSum, v):
    """Apply ``op`` to ``v`` (length ``d^b``), returning length ``d^a``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != op.d**op.b:
        raise ValueError("dimension mismatch")
    return op.matvec(v)


def empirical_harmonic_tensor(Z, weights, ell, budget=DENSE_BUDGET, chunk=4096):
    """Dense ``(1/m) sum_i w_i H_l(z_i)`` via moment tensors.

    Uses linearity: only the weighted moments ``(1/m) sum_i w_i z_i^(x)p``
    for ``p = l, l-2, ...`` are formed, each by a matrix product.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    m, d = Z.shape
    w = np.broadcast_to(np.asarray(weights, dtype=float), (m,))
    _check_budget(d, ell, budget)
    moments = {}
    for j in range(ell // 2 + 1):
        p = ell - 2 * j
        if p == 0:
            moments[0] = np.array(w.mean())
            continue
        pl = p // 2
        pr = p - pl
        acc = np.zeros((d**pl, d**pr))
        for lo in range(0, m, chunk):
            Zc = Z[lo:lo + chunk]
            L = _khatri_rao(Zc, pl) * w[lo:lo + chunk, None]
            R = _khatri_rao(Zc, pr)
            acc += L.T @ R
        moments[p] = (acc / m).reshape((d,) * p, order="F")
    coeffs = [c_coeff(ell, j, d) for j in range(ell // 2 + 1)]
    return _sym_from_moments(moments, ell, d, coeffs)


def _khatri_rao(Z, p):
    # rows z_i^(x)p flattened column-major
    m, d = Z.shape
    out = np.ones((m, 1))
    for _ in range(p):
        out = (Z[:, :, None] * out[:, None, :]).reshape(m, -1)
    return out


def reproducing_check(d: int, ell: int, k: int, n_mc: int, rng_seed=0, w=None, detail=False):
    """Monte Carlo check of ``E_z[Q_k(<w,z>) H_l(z)] = delta_{lk} H_l(w) / sqrt(n_{d,l})``.

    Returns the Frobenius norm of (MC average - prediction). With
    ``detail=True`` a dict with the prediction norm and a standard error is
    returned instead.
    """
    rng = np.random.default_rng(rng_seed)
    if w is None:
        w = rng.standard_normal(d)
    w = np.asarray(w, dtype=float)
    w = w / np.linalg.norm(w)
    Z = rng.standard_normal((n_mc, d))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    q = gegenbauer_eval(d, k, Z @ w)
    avg = empirical_harmonic_tensor(Z, q, ell)
    Hw = harmonic_tensor_dense(w, ell)
    pred = Hw / _sqrt_dim(d, ell) if ell == k else np.zeros_like(Hw)
    err = float(np.linalg.norm(avg - pred))
    if not detail:
        return err
    # ||H_l(z)||_F does not depend on z
    hnorm2 = float(np.sum(Hw * Hw))
    se = math.sqrt(max(np.mean(q * q) * hnorm2 - np.sum(pred * pred), 0.0) / n_mc)
    return {"error": err, "pred_norm": float(np.linalg.norm(pred)), "std_error": se}


# ---------------------------------------------------------------------------
# power iteration and extraction


def power_iteration(matvec, dim, n_iter=None, seed=0, tol=1e-10, sym_dim=None):
    """Leading (largest magnitude) eigenvector of a symmetric operator.

    Deterministic start from ``seed``; stops when the relative change
    (modulo sign) drops below ``tol``. Returns ``(v, eigenvalue, converged)``.
    """
    if n_iter is None:
        n_iter = int(math.ceil(10 * math.log(max(sym_dim or dim, 2))))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    converged = False
    for _ in range(n_iter):
        u = matvec(v)
        nu = np.linalg.norm(u)
        if nu == 0 or not np.isfinite(nu):
            return v, 0.0, False
        lam = float(v @ u)
        u = u / nu
        change = min(np.linalg.norm(u - v), np.linalg.norm(u + v))
        v = u
        if change < tol:
            converged = True
            break
    return v, lam, converged


def _canon_sign(v):
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def vec_extract(u, d: int | None = None, a: int | None = None):
    """Top left singular vector of ``u`` folded into ``d x d^(a-1)``.

    Either ``d`` or ``a`` may be omitted when the other determines it.
    The result is unit norm with nonnegative first nonzero coordinate.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    n = u.shape[0]
    if not np.any(u):
        raise ValueError("cannot extract a direction from the zero vector")
    if d is None:
        d = round(n ** (1.0 / a))
    if a is None:
        a = round(math.log(n) / math.log(d)) if d > 1 else 1
    if d**a != n:
        raise ValueError("length is not d^a")
    U = u.reshape(d, d ** (a - 1), order="F")
    if a == 1:
        v = U[:, 0] / np.linalg.norm(U)
    else:
        _, vecs = np.linalg.eigh(U @ U.T)
        v = vecs[:, -1]
    return _canon_sign(v)


# ---------------------------------------------------------------------------
# Wick moments


def wick_moment(d: int, multi_index, exact: bool = False):
    """``E[prod_j z_{k_j}]`` for ``z`` uniform on the sphere in ``R^d``.

    Counts perfect pairings with matching indices and divides by
    ``d (d+2) ... (d+2p-2)``.
    """
    idx = tuple(multi_index)
    n = len(idx)
    if n > 12:
        raise NotImplementedError("Wick moments supported up to total degree 12")
    if n % 2:
        return Fraction(0) if exact else 0.0
    p = n // 2
    count = sum(
        all(idx[s] == idx[t] for s, t in m) for m in _matchings(tuple(range(n)))
    )
    denom = 1
    for j in range(p):
        denom *= d + 2 * j
    val = Fraction(count, denom)
    return val if exact else float(val)
