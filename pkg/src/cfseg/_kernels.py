"""Hot numeric kernels: numba-jitted with a pure-numpy fallback.

The embedding stage dominates runtime (O(n^2) per gradient step), so its
inner loops live here.  Each kernel has two implementations:

* ``*_numba`` — explicit loops compiled with ``@njit(cache=True)``;
* ``*_numpy`` — vectorized numpy.

The active backend is chosen at import time: numba when importable,
unless the environment variable ``CFSEG_PURE_NUMPY`` is set to a truthy
value (or numba is missing).  Both backends are deterministic; they may
differ in the last float bits because summation order differs, which is
why bit-exactness contracts are scoped to a single backend.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import math
import os

import numpy as np

_EPS = float(np.finfo(np.float64).eps)
_LN2 = math.log(2.0)

PURE_NUMPY_ENV = "CFSEG_PURE_NUMPY"


def _env_disables_numba() -> bool:
    return os.environ.get(PURE_NUMPY_ENV, "").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy implementations

def pairwise_sq_dists_numpy(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def entropy_bisection_numpy(d2: np.ndarray, target_bits: float, tol: float,
                            max_steps: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row precision search so each conditional row hits the target
    entropy (in bits).  Returns (conditional P, betas, achieved bits)."""
    n = d2.shape[0]
    p = np.zeros((n, n), dtype=np.float64)
    betas = np.ones(n, dtype=np.float64)
    achieved = np.zeros(n, dtype=np.float64)
    for i in range(n):
        row = np.delete(d2[i], i)
        shift = row.min()
        beta, beta_lo, beta_hi = 1.0, 0.0, math.inf
        h_bits, expo = 0.0, np.zeros_like(row)
        for _ in range(max_steps):
            expo = np.exp(-beta * (row - shift))
            s = expo.sum()
            mean_d = float((row - shift) @ expo) / s
            h_bits = (math.log(s) + beta * mean_d) / _LN2
            diff = h_bits - target_bits
            if abs(diff) <= tol:
                break
            if diff > 0.0:
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == math.inf else 0.5 * (beta + beta_hi)
            else:
                beta_hi = beta
                beta = 0.5 * beta if beta_lo == 0.0 else 0.5 * (beta + beta_lo)
        expo /= expo.sum()
        p[i, :i] = expo[:i]
        p[i, i + 1 :] = expo[i:]
        betas[i] = beta
        achieved[i] = h_bits
    return p, betas, achieved


def kl_and_grad_numpy(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) and its exact gradient for Student-t (1 dof) Q."""
    d2 = pairwise_sq_dists_numpy(y)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    s = num.sum()
    q = np.maximum(num / s, _EPS)
    mask = p > 0.0
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    pq_num = (p - num / s) * num
    grad = 4.0 * (pq_num.sum(axis=1)[:, None] * y - pq_num @ y)
    return kl, grad


# ---------------------------------------------------------------------------
# numba implementations (compiled lazily at import unless disabled)

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def pairwise_sq_dists_nb(x):
        n, d = x.shape
        out = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    acc += diff * diff
                out[i, j] = acc
                out[j, i] = acc
        return out

    @njit(cache=True)
    def entropy_bisection_nb(d2, target_bits, tol, max_steps):
        n = d2.shape[0]
        p = np.zeros((n, n), dtype=np.float64)
        betas = np.ones(n, dtype=np.float64)
        achieved = np.zeros(n, dtype=np.float64)
        ln2 = math.log(2.0)
        for i in range(n):
            shift = math.inf
            for j in range(n):
                if j != i and d2[i, j] < shift:
                    shift = d2[i, j]
            beta = 1.0
            beta_lo = 0.0
            beta_hi = math.inf
            h_bits = 0.0
            for _ in range(max_steps):
                s = 0.0
                sum_d = 0.0
                for j in range(n):
                    if j != i:
                        e = math.exp(-beta * (d2[i, j] - shift))
                        p[i, j] = e
                        s += e
                        sum_d += (d2[i, j] - shift) * e
                h_bits = (math.log(s) + beta * sum_d / s) / ln2
                diff = h_bits - target_bits
                if abs(diff) <= tol:
                    break
                if diff > 0.0:
                    beta_lo = beta
                    if beta_hi == math.inf:
                        beta = beta * 2.0
                    else:
                        beta = 0.5 * (beta + beta_hi)
                else:
                    beta_hi = beta
                    if beta_lo == 0.0:
                        beta = 0.5 * beta
                    else:
                        beta = 0.5 * (beta + beta_lo)
            s = 0.0
            for j in range(n):
                if j != i:
                    s += p[i, j]
            for j in range(n):
                if j != i:
                    p[i, j] /= s
            betas[i] = beta
            achieved[i] = h_bits
        return p, betas, achieved

    @njit(cache=True)
    def kl_and_grad_nb(p, y):
        n = y.shape[0]
        eps = 2.220446049250313e-16
        num = np.zeros((n, n), dtype=np.float64)
        s = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(2):
                    diff = y[i, k] - y[j, k]
                    acc += diff * diff
                v = 1.0 / (1.0 + acc)
                num[i, j] = v
                num[j, i] = v
                s += 2.0 * v
        kl = 0.0
        grad = np.zeros((n, 2), dtype=np.float64)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                q = num[i, j] / s
                if q < eps:
                    q = eps
                pij = p[i, j]
                if pij > 0.0:
                    kl += pij * math.log(pij / q)
                coef = 4.0 * (pij - num[i, j] / s) * num[i, j]
                for k in range(2):
                    grad[i, k] += coef * (y[i, k] - y[j, k])
        return kl, grad

    return pairwise_sq_dists_nb, entropy_bisection_nb, kl_and_grad_nb


NUMBA_ACTIVE = False
pairwise_sq_dists = pairwise_sq_dists_numpy
entropy_bisection = entropy_bisection_numpy
kl_and_grad = kl_and_grad_numpy

if not _env_disables_numba():
    try:
        pairwise_sq_dists, entropy_bisection, kl_and_grad = _build_numba()
        NUMBA_ACTIVE = True
    except ImportError:
        pass


def backend_name() -> str:
    return "numba" if NUMBA_ACTIVE else "numpy"
