"""Analytic error probabilities of the greedy decoder for CS(T, 1), N = 1.

``arccot`` is taken on the branch (0, pi), i.e. ``pi/2 - arctan(z)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .constellation import cs_t1_constants
from .numerics import bessel_i0e, marcum_q1

__all__ = [
    "AnalyticConstants",
    "QuadratureError",
    "analytic_constants",
    "arccot",
    "cell_error_prob",
    "cell_error_prob_t2",
    "coord_error_prob_given_cell",
    "symbol_error_bound",
    "symbol_error_exact_t2",
]


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested accuracy."""


@dataclass(frozen=True)
class AnalyticConstants:
    T: int
    rho: float
    m: float
    c: float
    rho0: float


def analytic_constants(T: int, rho: float) -> AnalyticConstants:
    if T < 2:
        raise ValueError("T must be at least 2")
    if not rho > 0:
        raise ValueError("rho must be positive")
    m, c = cs_t1_constants(T)
    return AnalyticConstants(T, rho, m, c, rho * T / (1.0 + (T - 1) * c))


def arccot(z: float) -> float:
    return 0.5 * math.pi - math.atan(z)


def _disc(c: float, r0: float) -> float:
    # sqrt((2 + (1+c) r0)^2 - 4 c r0^2)
    return math.sqrt((2.0 + (1.0 + c) * r0) ** 2 - 4.0 * c * r0 * r0)


def cell_error_prob_t2(rho: float) -> float:
    """Closed-form cell error probability for T = 2."""
    k = analytic_constants(2, rho)
    c, r0 = k.c, k.rho0
    return 0.5 * (1.0 - (1.0 - c) * r0 / _disc(c, r0))


def _cell_integrand_inner(v: float, x: float, k: AnalyticConstants) -> float:
    # y = (sqrt(rho0 x) + v)^2 centres the Rician-like peak at v = 0
    s = math.sqrt(k.rho0 * x)
    r = s + v
    y = r * r
    q = marcum_q1(math.sqrt(2.0 * k.c * k.rho0 * x), math.sqrt(2.0) * r)
    miss = -math.expm1((k.T - 1) * math.log1p(-q)) if q < 1.0 else 1.0
    if miss == 0.0:
        return 0.0
    z = 2.0 * s * r
    # I0(z) exp(-y - (rho0+1) x) = i0e(z) exp(-(sqrt(y) - sqrt(rho0 x))^2 - x)
    dens = bessel_i0e(z) * math.exp(-v * v - x)
    return miss * dens * 2.0 * r


def cell_error_prob(T: int, rho: float, epsabs: float = 1e-9, limit: int = 200) -> float:
    """Cell error probability of greedy decoding on CS(T, 1) with one antenna.

    Nested adaptive Gauss-Kronrod quadrature. The outer variable ``x`` is the
    channel power; the inner variable is shifted so that the integrand peak
    sits at the origin for every ``x``.

    Raises
    ------
    QuadratureError
        If either quadrature reports an error estimate above ``epsabs``-scale
        tolerances.
    """
    k = analytic_constants(T, rho)
    inner_err = [0.0]

    def outer(x: float) -> float:
        lo = -math.sqrt(k.rho0 * x)
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = _split_inner(lo, x, k, epsabs, limit)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"inner quadrature failed at x={x!r}: {exc}") from exc
        inner_err[0] = max(inner_err[0], err)
        return val

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(outer, 0.0, math.inf, epsabs=epsabs, epsrel=1e-9, limit=limit)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"outer quadrature failed (T={T}, rho={rho}): {exc}") from exc
    if err > 1e-6 or inner_err[0] > 1e-6:
        raise QuadratureError(
            f"quadrature error estimate too large: outer {err:.3g}, inner {inner_err[0]:.3g}"
        )
    return min(1.0, max(0.0, val))


def _split_inner(lo: float, x: float, k: AnalyticConstants, epsabs: float, limit: int):
    # finite part up to the peak neighbourhood, then the tail
    hi = 8.0
    a, ea = integrate.quad(_cell_integrand_inner, lo, hi, args=(x, k),
                           epsabs=epsabs * 0.05, epsrel=1e-10, limit=limit)
    b, eb = integrate.quad(_cell_integrand_inner, hi, math.inf, args=(x, k),
                           epsabs=epsabs * 0.05, epsrel=1e-10, limit=limit)
    return a + b, ea + eb


def coord_error_prob_given_cell(rho: float, T: int = 2) -> float:
    """Error probability of one pair of local coordinates given the right cell."""
    k = analytic_constants(T, rho)
    c, r0 = k.c, k.rho0
    D = _disc(c, r0)
    S = math.sqrt(1.0 + (1.0 + c) * r0 + 0.5 * c * r0 * r0)
    A = (math.sqrt(2.0 * c) * r0 * arccot((1.0 + (c - math.sqrt(0.5 * c)) * r0) / S)) / (math.pi * S)
    B = ((1.0 - c) * r0 * arccot((2.0 + (1.0 - 2.0 * math.sqrt(2.0 * c) + c) * r0) / D)) / (math.pi * D)
    p = 1.0 - (0.25 + A + B) / (1.0 + (1.0 - c) * r0 / D)
    return min(1.0, max(0.0, p))


def symbol_error_bound(T: int, rho: float, p_cell: float | None = None) -> float:
    """``Pcell + (T - 1)(1 - Pcell) Pcoord``, capped at one."""
    pc = cell_error_prob(T, rho) if p_cell is None else p_cell
    pq = coord_error_prob_given_cell(rho, T)
    return min(1.0, pc + (T - 1) * (1.0 - pc) * pq)


def symbol_error_exact_t2(rho: float) -> float:
    """Exact symbol error probability of CS(2, 1) under greedy decoding."""
    k = analytic_constants(2, rho)
    c, r0 = k.c, k.rho0
    D = _disc(c, r0)
    S = math.sqrt(1.0 + (1.0 + c) * r0 + 0.5 * c * r0 * r0)
    t1 = math.sqrt(c) * r0 * arccot((1.0 + (c - math.sqrt(0.5 * c)) * r0) / S) / (
        math.pi * math.sqrt(2.0 + 2.0 * (1.0 + c) * r0 + c * r0 * r0)
    )
    t2 = (1.0 - c) * r0 * arccot((2.0 + (1.0 - 2.0 * math.sqrt(2.0 * c) + c) * r0) / D) / (
        2.0 * math.pi * D
    )
    return min(1.0, max(0.0, 0.875 - t1 - t2))
