"""Special functions and a small dominant-singular-vector kernel.

Everything here is pure and works on float64 / complex128 data. Scalar
inputs return Python floats, array inputs return arrays of the same shape.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = [
    "DegenerateSpectrumError",
    "inv_norm_cdf",
    "norm_cdf",
    "marcum_q1",
    "bessel_i0",
    "bessel_i0e",
    "exp_integral_e1",
    "digamma",
    "dominant_left_singular_vector",
    "dominant_left_singular_vectors",
    "EULER_GAMMA",
]

EULER_GAMMA = 0.57721566490153286061

# Acklam's rational approximation; ~1e-9 relative before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


class DegenerateSpectrumError(ArithmeticError):
    """The two leading singular values coincide; the direction is undefined."""


def _as_output(values, scalar):
    return float(values[()]) if scalar else values


def norm_cdf(x):
    """Standard normal CDF, accurate in both tails."""
    arr = np.asarray(x, dtype=float)
    return _as_output(special.ndtr(arr), arr.ndim == 0)


def _lower_half_quantile(q: np.ndarray) -> np.ndarray:
    # q in (0, 0.5]; returns x <= 0 with Phi(x) = q
    x = np.empty_like(q)
    tail = q < _P_LOW
    if np.any(tail):
        r = np.sqrt(-2.0 * np.log(q[tail]))
        num = ((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]
        den = (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        x[tail] = num / den
    mid = ~tail
    if np.any(mid):
        s = q[mid] - 0.5
        r = s * s
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    for _ in range(2):
        # Halley step; erfc keeps the residual accurate for x <= 0
        e = 0.5 * special.erfc(-x / _SQRT2) - q
        u = e * _SQRT2PI * np.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def inv_norm_cdf(p):
    """Inverse of the standard normal CDF.

    Rational approximation followed by two Halley iterations. Upper-half
    probabilities are handled through ``-inv_norm_cdf(1 - p)``, where the
    subtraction is exact in floating point.

    Raises
    ------
    ValueError
        If any ``p`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("inv_norm_cdf: probability must lie in (0, 1)")
    flat = arr.reshape(-1)
    upper = flat > 0.5
    q = np.where(upper, 1.0 - flat, flat)
    x = _lower_half_quantile(q)
    x = np.where(upper, -x, x)
    x[flat == 0.5] = 0.0
    return _as_output(x.reshape(arr.shape), arr.ndim == 0)


def bessel_i0(x):
    """Modified Bessel function of the first kind, order zero."""
    arr = np.asarray(x, dtype=float)
    return _as_output(special.i0(arr), arr.ndim == 0)


def bessel_i0e(x):
    """Exponentially scaled ``exp(-|x|) * I0(x)``; safe for large arguments."""
    arr = np.asarray(x, dtype=float)
    return _as_output(special.i0e(arr), arr.ndim == 0)


def exp_integral_e1(x):
    """Exponential integral E1(x) for x > 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("exp_integral_e1: argument must be positive")
    return _as_output(special.exp1(arr), arr.ndim == 0)


def digamma(n: int) -> float:
    """psi(n) for a positive integer, by the harmonic recurrence."""
    if int(n) != n or n < 1:
        raise ValueError("digamma: argument must be a positive integer")
    return -EULER_GAMMA + math.fsum(1.0 / k for k in range(1, int(n)))


_LGK = special.gammaln(np.arange(4096, dtype=float) + 1.0)


def _log_factorials(k0: int, k1: int) -> np.ndarray:
    global _LGK
    if k1 >= _LGK.shape[0]:
        _LGK = special.gammaln(np.arange(2 * k1 + 2, dtype=float) + 1.0)
    return _LGK[k0:k1 + 1]


def _marcum_q1_scalar(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0
    x = 0.5 * b * b
    if a == 0.0:
        return math.exp(-x)
    lam = 0.5 * a * a
    lo, hi = min(lam, x), max(lam, x)
    # Poisson masses outside mean +/- 12 sd (+ slack) are below 1e-30
    k0 = max(0, int(math.floor(lo - 12.0 * math.sqrt(lo) - 40.0)))
    k1 = int(math.ceil(hi + 12.0 * math.sqrt(hi) + 60.0))
    k = np.arange(k0, k1 + 1, dtype=float)
    lgk = _log_factorials(k0, k1)
    log_pois = -lam + k * math.log(lam) - lgk
    log_term = -x + k * math.log(x) - lgk
    if x >= lam:
        # Q1 = sum_k Pois(k; lam) * P(Pois(x) <= k); terms below k0 are negligible
        log_head = np.logaddexp.accumulate(log_term)
        return float(min(1.0, math.exp(special.logsumexp(log_pois + log_head))))
    # 1 - Q1 = sum_k Pois(k; lam) * P(Pois(x) > k)
    log_tail = np.full(k.shape[0], -np.inf)
    log_tail[:-1] = np.logaddexp.accumulate(log_term[::-1])[::-1][1:]
    comp = math.exp(special.logsumexp(log_pois + log_tail))
    return float(min(1.0, max(0.0, 1.0 - comp)))


def marcum_q1(a, b):
    """First-order Marcum Q-function Q1(a, b).

    Evaluated as a Poisson mixture of regularized incomplete gamma tails in
    log space; when ``b < a`` the complementary sum is used so that values
    close to one keep their precision.
    """
    aa = np.asarray(a, dtype=float)
    bb = np.asarray(b, dtype=float)
    if np.any(aa < 0.0) or np.any(bb < 0.0):
        raise ValueError("marcum_q1: arguments must be nonnegative")
    aa, bb = np.broadcast_arrays(aa, bb)
    if aa.ndim == 0:
        return _marcum_q1_scalar(float(aa), float(bb))
    out = np.empty(aa.shape)
    for idx in np.ndindex(aa.shape):
        out[idx] = _marcum_q1_scalar(float(aa[idx]), float(bb[idx]))
    return out


# --------------------------------------------------------------------------
# dominant singular direction
# --------------------------------------------------------------------------

_DEGENERATE_GAP = 1e-12


def _gram(Y: np.ndarray) -> tuple[np.ndarray, bool]:
    # returns the smaller Gram matrix and whether it acts on the left side
    T, N = Y.shape[-2], Y.shape[-1]
    if T <= N:
        return Y @ np.conj(np.swapaxes(Y, -1, -2)), True
    return np.conj(np.swapaxes(Y, -1, -2)) @ Y, False


def _dominant_eig(G: np.ndarray, tol: float, max_iters: int):
    """Batched power iteration with repeated squaring on PSD matrices.

    ``G`` has shape (n, k, k). Squaring the normalized iteration matrix each
    step makes the error contract like ``(l2/l1)**(2**it)`` instead of
    ``(l2/l1)**it``.
    """
    n, k, _ = G.shape
    col_norms = np.linalg.norm(G, axis=1)
    start = np.argmax(col_norms, axis=1)
    v = G[np.arange(n), :, start]
    v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), np.finfo(float).tiny)
    M = G / np.maximum(np.linalg.norm(G, axis=(1, 2), keepdims=True), np.finfo(float).tiny)
    converged = np.zeros(n, dtype=bool)
    for _ in range(max_iters):
        w = np.einsum("nij,nj->ni", M, v)
        norm = np.linalg.norm(w, axis=1, keepdims=True)
        w = np.where(norm > 0, w / np.where(norm > 0, norm, 1.0), v)
        # align phase before comparing directions
        ph = np.einsum("ni,ni->n", np.conj(w), v)
        ph = np.where(np.abs(ph) > 0, ph / np.where(np.abs(ph) > 0, np.abs(ph), 1.0), 1.0)
        w = w * ph[:, None]
        delta = np.linalg.norm(w - v, axis=1)
        v = np.where(converged[:, None], v, w)
        converged |= delta <= tol
        if converged.all():
            break
        M = M @ M
        M = M / np.maximum(np.linalg.norm(M, axis=(1, 2), keepdims=True), np.finfo(float).tiny)
    lam = np.real(np.einsum("ni,nij,nj->n", np.conj(v), G, v))
    return v, lam, converged


def dominant_left_singular_vectors(Y, tol: float = 1e-10, max_iters: int = 500):
    """Batched dominant left singular vectors.

    Parameters
    ----------
    Y : array, shape (n, T, N)
        Stack of observation matrices.

    Returns
    -------
    u : array, shape (n, T)
        Unit-norm directions maximizing ``||Y^H u||``.
    degenerate : bool array, shape (n,)
        True where the two leading singular values coincide (relative gap
        below 1e-12) or the iteration did not settle; ``u`` is then an
        arbitrary unit vector from the dominant subspace.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 3:
        raise ValueError("expected a stack of matrices with shape (n, T, N)")
    G, left = _gram(Y)
    k = G.shape[-1]
    v, lam1, converged = _dominant_eig(G, tol, max_iters)
    if k == 1:
        lam2 = np.zeros_like(lam1)
    elif k == 2:
        lam2 = np.real(np.trace(G, axis1=1, axis2=2)) - lam1
    else:
        deflated = G - lam1[:, None, None] * np.einsum("ni,nj->nij", v, np.conj(v))
        _, lam2, _ = _dominant_eig(deflated, tol, max_iters)
    degenerate = (lam1 - lam2 <= _DEGENERATE_GAP * np.abs(lam1)) | ~converged
    if left:
        u = v
    else:
        u = np.einsum("nij,nj->ni", Y, v)
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    degenerate |= norms[:, 0] == 0
    u = u / np.where(norms > 0, norms, 1.0)
    return u, degenerate


def dominant_left_singular_vector(Y, tol: float = 1e-10, max_iters: int = 500) -> np.ndarray:
    """Unit vector ``u`` maximizing ``||Y^H u||^2`` for one T x N matrix.

    Deterministic: the iteration starts from the largest-norm column of the
    smaller Gram matrix.

    Raises
    ------
    DegenerateSpectrumError
        When the two leading singular values are equal to within a relative
        gap of 1e-12, so that no unique direction exists.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2:
        raise ValueError("expected a T x N matrix")
    if not np.any(Y):
        raise ValueError("dominant_left_singular_vector: Y is zero")
    u, degenerate = dominant_left_singular_vectors(Y[None], tol, max_iters)
    if degenerate[0]:
        raise DegenerateSpectrumError("leading singular values are not separated")
    return u[0]
