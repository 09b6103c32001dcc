"""Spatial interaction kernel of the quadratic nonlinearity.

Products of sine modes project back onto the sine basis through the triple
integral I(m,m1,m2) = int_0^pi sin(mx) sin(m1 x) sin(m2 x) dx, which vanishes
unless m+m1+m2 is odd and otherwise equals

    I = -4 m m1 m2 / ((m^2-(m1-m2)^2)(m^2-(m1+m2)^2)).

The kernel used throughout is the Galerkin projection coefficient
v_{m,m1,m2} = (2/pi) * I.  The closed form is cross-checked against adaptive
quadrature and an independent complex-exponential sign sum.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

__all__ = [
    "C_NORM",
    "triple_sine_integral",
    "triple_sine_closed",
    "triple_sine_quadrature",
    "kernel_v",
    "kernel_tensor",
    "nonlinearity_coefficient",
    "kernel_sum_probe",
    "KernelDisagreementError",
]

C_NORM = 2.0 / math.pi

ORACLE_TOL = 1e-10


class KernelDisagreementError(ArithmeticError):
    """Quadrature and closed-form evaluations differ beyond tolerance."""


def triple_sine_closed(m: int, m1: int, m2: int) -> float:
    """Exact value of the triple sine integral; 0 on even-parity triples."""
    if (m + m1 + m2) % 2 == 0:
        return 0.0
    return -4.0 * m * m1 * m2 / ((m * m - (m1 - m2) ** 2) * (m * m - (m1 + m2) ** 2))


def triple_sine_quadrature(m: int, m1: int, m2: int) -> float:
    val, _ = quad(lambda x: math.sin(m * x) * math.sin(m1 * x) * math.sin(m2 * x),
                  0.0, math.pi, limit=60 + 12 * max(m, m1, m2))
    return val


def _triple_sine_signsum(m: int, m1: int, m2: int) -> float:
    """Complex-exponential expansion of the product; independent of both others."""
    tot = 0j
    for e0 in (1, -1):
        for e1 in (1, -1):
            for e2 in (1, -1):
                s = e0 * m + e1 * m1 + e2 * m2
                pref = e0 * e1 * e2
                if s == 0:
                    tot += pref * math.pi
                else:
                    tot += pref * (np.exp(1j * s * math.pi) - 1.0) / (1j * s)
    return (tot / (-8j)).real


@lru_cache(maxsize=200_000)
def triple_sine_integral(m: int, m1: int, m2: int) -> float:
    """Dual-route evaluation of the integral; raises if the routes disagree."""
    q = triple_sine_quadrature(m, m1, m2)
    c = triple_sine_closed(m, m1, m2)
    if abs(q - c) > ORACLE_TOL * max(1.0, abs(c)):
        raise KernelDisagreementError(
            f"triple sine integral mismatch at {(m, m1, m2)}: quad={q!r} closed={c!r}")
    return c


@lru_cache(maxsize=400_000)
def kernel_v(m: int, m1: int, m2: int) -> float:
    """Projection coefficient of sin(m1 x) sin(m2 x) onto sin(m x)."""
    return C_NORM * triple_sine_closed(m, m1, m2)


def kernel_tensor(m_out: int, m_in: int) -> np.ndarray:
    """Dense table V[m, m1, m2] = v_{m,m1,m2} for m <= m_out, m1,m2 <= m_in.

    Index 0 corresponds to mode 1.  Even-parity entries are exactly zero, so
    the apparent poles of the closed form never evaluate.
    """
    m = np.arange(1, m_out + 1)[:, None, None].astype(float)
    m1 = np.arange(1, m_in + 1)[None, :, None].astype(float)
    m2 = np.arange(1, m_in + 1)[None, None, :].astype(float)
    odd = (m + m1 + m2) % 2 == 1
    d1 = m * m - (m1 - m2) ** 2
    d2 = m * m - (m1 + m2) ** 2
    denom = d1 * d2
    denom[~odd] = 1.0  # parity zeros mask the poles
    out = np.where(odd, C_NORM * (-4.0) * m * m1 * m2 / denom, 0.0)
    return out


def nonlinearity_coefficient(a: float, b: float, Omega: float, n1: int, n2: int) -> float:
    """Coefficient a - b Omega^2 n1 n2 carried by one quadratic pairing."""
    return a - b * Omega ** 2 * n1 * n2


def kernel_sum_probe(m: int, Mmax: int) -> float:
    """Weighted kernel sum S(m) = sum* |v_{m,m1,m2}| / (m1^3 m2^3).

    The sum runs over parity-admissible m1, m2 <= Mmax; m^3 * S(m) staying
    bounded in m is the summability mechanism that keeps the mode expansion
    convergent.
    """
    m1 = np.arange(1, Mmax + 1, dtype=float)[:, None]
    m2 = np.arange(1, Mmax + 1, dtype=float)[None, :]
    odd = (m + m1 + m2) % 2 == 1
    d1 = m * m - (m1 - m2) ** 2
    d2 = m * m - (m1 + m2) ** 2
    denom = d1 * d2
    denom[~odd] = 1.0
    v = np.where(odd, C_NORM * 4.0 * m * m1 * m2 / np.abs(denom), 0.0)
    return float(np.sum(v / (m1 ** 3 * m2 ** 3)))


def kernel_sum_probe_restricted(m: int, Mmax: int) -> float:
    """S(m) with the larger index limited to m/4; decays like m^-4."""
    cap = max(1, m // 4)
    m1 = np.arange(1, cap + 1, dtype=float)[:, None]
    m2 = np.arange(1, cap + 1, dtype=float)[None, :]
    odd = (m + m1 + m2) % 2 == 1
    denom = (m * m - (m1 - m2) ** 2) * (m * m - (m1 + m2) ** 2)
    denom[~odd] = 1.0
    v = np.where(odd, C_NORM * 4.0 * m * m1 * m2 / np.abs(denom), 0.0)
    return float(np.sum(v / (m1 ** 3 * m2 ** 3)))
