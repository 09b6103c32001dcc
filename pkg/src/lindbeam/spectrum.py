"""Linear frequencies, small divisors, propagators and the dyadic cutoff partition.

Everything here is a pure function of its arguments; the rest of the package
is built on top of these primitives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ModelParams",
    "NuTable",
    "omega",
    "big_omega",
    "omega_eff",
    "x_divisor",
    "propagator",
    "chi",
    "chi_h",
    "chi_support",
    "scaled_propagator",
    "admissible_h_for",
    "in_lambda",
    "DegenerateRadicandError",
    "ResonantDivisorError",
]

MU_MAX = 0.125          # admissible mass window [0, 1/8]
GAMMA_MAX = 2.0 ** -6   # largest allowed Diophantine constant
H_MAX_DEFAULT = 40      # scales below 2^-H_max * gamma treated as resonant


class DegenerateRadicandError(ValueError):
    """omega_m^2 + n*nu_{n,m} <= 0; cannot happen for admissible nu tables."""


class ResonantDivisorError(ZeroDivisionError):
    """Exactly resonant mode hit; the parameter point is not Diophantine."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and arithmetic parameters of the beam model.

    a, b           strengths of the v^2 and v_t^2 nonlinearities
    mu             mass in [0, 1/8]
    eps0           amplitude window bound, 0 < eps0 < 1
    gamma          Diophantine constant, 0 < gamma <= 2^-6
    tau0           exponent of the mass conditions, >= 4
    tau            exponent of the shifted-frequency conditions, > tau0 + 5 by default
    sigma          target exponential decay rate in the time index
    nu_cap         c in the counterterm box |nu| < c*eps0
    omega_branch   +1 for Omega = omega_1 + eps, -1 for Omega = omega_1 - eps
    Kmax/Mmax/Nmax truncation order, spatial cutoff, temporal scan cutoff
    """

    a: float = 1.0
    b: float = 0.5
    mu: float = 0.1
    eps0: float = 0.01
    gamma: float = 2.0 ** -6
    tau0: float = 4.0
    tau: float = field(default=-1.0)
    sigma: float = 0.5
    nu_cap: float = 0.25
    omega_branch: int = 1
    Kmax: int = 2
    Mmax: int = 64
    Nmax: int = 500
    h_max: int = H_MAX_DEFAULT
    extended_precision: bool = False

    def __post_init__(self):
        if self.tau < 0:
            object.__setattr__(self, "tau", self.tau0 + 5.0)
        self.validate()

    def validate(self):
        if not 0.0 <= self.mu <= MU_MAX:
            raise ValueError(f"mu={self.mu} outside [0, {MU_MAX}]")
        if not 0.0 < self.gamma <= GAMMA_MAX:
            raise ValueError(f"gamma={self.gamma} outside (0, {GAMMA_MAX}]")
        if self.tau0 < 4.0:
            raise ValueError(f"tau0={self.tau0} must be >= 4")
        if not 0.0 < self.eps0 < 1.0:
            raise ValueError(f"eps0={self.eps0} outside (0, 1)")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.omega_branch not in (1, -1):
            raise ValueError("omega_branch must be +1 or -1")
        if min(self.Kmax, self.Mmax, self.Nmax) < 1:
            raise ValueError("cutoffs must be positive")

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


def omega(m, mu: float):
    """Linear frequency sqrt(m^4 + mu) of the m-th sine mode."""
    m = np.asarray(m, dtype=float)
    return np.sqrt(m ** 4 + mu)


def big_omega(mu: float, eps: float) -> float:
    """Forcing frequency omega_1 + eps of the continued branch."""
    return float(omega(1, mu)) + eps


def omega_eff(params: ModelParams, eps: float) -> float:
    """Branch-aware forcing frequency omega_1 + omega_branch * eps."""
    return float(omega(1, params.mu)) + params.omega_branch * eps


class NuTable:
    """Frequency-shift table nu_{n,m}, supported on the near-resonant set.

    Stored for n >= 1 and extended oddly, nu_{-n,m} = -nu_{n,m}, so that the
    combination n*nu_{n,m} entering every divisor is even in n (reality of
    the solution).  nu is zero off the near-resonant set and at (+-1, 1).
    """

    def __init__(self, entries=None, eps0: float = 0.01, nu_cap: float = 0.25):
        self.eps0 = eps0
        self.nu_cap = nu_cap
        self._d: dict[tuple[int, int], float] = {}
        if entries:
            for (n, m), v in dict(entries).items():
                self.set(n, m, v)

    def set(self, n: int, m: int, value: float):
        if n == 0:
            raise ValueError("nu_{0,m} is identically zero")
        if (abs(n), m) == (1, 1):
            raise ValueError("no frequency shift at the primary mode (+-1, 1)")
        key = (abs(n), m)
        self._d[key] = float(value) * (1 if n > 0 else -1)

    def get(self, n: int, m: int) -> float:
        if n == 0:
            return 0.0
        v = self._d.get((abs(n), m), 0.0)
        return v if n > 0 else -v

    def n_nu(self, n: int, m: int) -> float:
        """The divisor shift n * nu_{n,m}; even in n."""
        return abs(n) * self._d.get((abs(n), m), 0.0)

    def items(self):
        return self._d.items()

    def sup_norm(self) -> float:
        return max((abs(v) for v in self._d.values()), default=0.0)

    def copy(self) -> "NuTable":
        t = NuTable(eps0=self.eps0, nu_cap=self.nu_cap)
        t._d = dict(self._d)
        return t

    def check_invariants(self, mu: float):
        om1 = float(omega(1, mu))
        for (n, m), v in self._d.items():
            if abs(om1 * n - m * m) >= 1.0 + self.eps0 * n and v != 0.0:
                raise ValueError(f"nu supported outside the near-resonant set at {(n, m)}")
            if abs(v) >= self.nu_cap * self.eps0:
                raise ValueError(f"|nu_{(n,m)}| = {abs(v)} exceeds {self.nu_cap}*eps0")

    def __eq__(self, other):
        return isinstance(other, NuTable) and self._d == other._d

    def __len__(self):
        return len(self._d)


def _radicand(n: int, m: int, mu: float, nu: NuTable | None) -> float:
    r = m ** 4 + mu
    if nu is not None:
        r += nu.n_nu(n, m)
    return r


def x_divisor(n: int, m: int, params: ModelParams, eps: float,
              nu: NuTable | None = None) -> float:
    """Small divisor |Omega n| - sqrt(omega_m^2 + n nu_{n,m}); even in n."""
    rad = _radicand(n, m, params.mu, nu)
    if rad <= 0.0:
        raise DegenerateRadicandError(f"radicand {rad} <= 0 at mode {(n, m)}")
    Om = omega_eff(params, eps)
    if params.extended_precision:
        import mpmath as mp
        with mp.workdps(40):
            om1 = mp.sqrt(1 + mp.mpf(params.mu))
            Omq = om1 + params.omega_branch * mp.mpf(eps)
            radq = mp.mpf(m) ** 4 + mp.mpf(params.mu)
            if nu is not None:
                radq += mp.mpf(nu.n_nu(n, m))
            return float(abs(Omq * abs(n)) - mp.sqrt(radq))
    return abs(Om * n) - math.sqrt(rad)


def propagator(n: int, m: int, params: ModelParams, eps: float,
               nu: NuTable | None = None) -> float:
    """Inverse linearized operator on mode (n, m); exactly 1 at (+-1, 1)."""
    if (abs(n), m) == (1, 1):
        return 1.0
    Om = omega_eff(params, eps)
    denom = -(Om * n) ** 2 + _radicand(n, m, params.mu, nu)
    if denom == 0.0:
        raise ResonantDivisorError(f"exact resonance at mode {(n, m)}")
    return 1.0 / denom


def _smoothstep(t):
    """C-infinity step: 0 for t<=0, 1 for t>=1, built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    lo = t <= 0.0
    hi = t >= 1.0
    mid = ~(lo | hi)
    out = np.where(hi, 1.0, 0.0)
    if np.any(mid):
        tm = t[mid]
        f = np.exp(-1.0 / tm)
        g = np.exp(-1.0 / (1.0 - tm))
        out = out.astype(float)
        out[mid] = f / (f + g)
    return out if out.shape else float(out)


def chi(x, gamma: float):
    """Smooth even cutoff: 0 for |x| <= gamma, 1 for |x| >= 2 gamma."""
    return _smoothstep((np.abs(x) - gamma) / gamma)


def chi_h(x, h: int, gamma: float):
    """Member h >= -1 of the dyadic partition of unity.

    chi_{-1} covers |x| >= gamma (large divisors); chi_h for h >= 0 covers the
    dyadic shell 2^{-h-1} gamma <= |x| <= 2^{-h+1} gamma.  For every x != 0,
    sum_{h=-1}^{H} chi_h(x) = 1 exactly once 2^{-H} gamma < |x|.
    """
    if h < -1:
        raise ValueError("scale index must be >= -1")
    if h == -1:
        return chi(x, gamma)
    x = np.asarray(x, dtype=float)
    # chibar = 1 - chi is the small-divisor cutoff; telescoping differences
    return chi(np.ldexp(x, h + 1), gamma) - chi(np.ldexp(x, h), gamma)


def chi_support(h: int, gamma: float) -> tuple[float, float]:
    """Closure of {|x| : chi_h != 0}; (gamma, inf) for h = -1."""
    if h == -1:
        return (gamma, math.inf)
    return (2.0 ** (-h - 1) * gamma, 2.0 ** (-h + 1) * gamma)


def admissible_h_for(x: float, gamma: float, h_max: int = H_MAX_DEFAULT) -> list[int]:
    """Scale labels h with chi_h(x) != 0; at most two, empty below the floor."""
    ax = abs(x)
    if ax < 2.0 ** (-h_max - 1) * gamma:
        return []
    out = []
    if chi(ax, gamma) != 0.0:
        out.append(-1)
    if ax < 2.0 * gamma:
        # candidate shells: 2^{-h-1} gamma < ax < 2^{-h+1} gamma
        hc = int(math.floor(-math.log2(ax / gamma)))
        for h in (hc - 1, hc, hc + 1):
            if 0 <= h <= h_max and chi_h(ax, h, gamma) != 0.0:
                out.append(h)
    return out


def scaled_propagator(n: int, m: int, h: int, params: ModelParams, eps: float,
                      nu: NuTable | None = None, kind: str = "a") -> float:
    """Scale-h slice of the propagator; b-lines carry an extra factor n.

    At the primary mode (+-1, 1) there is no cutoff: the value is 1 for an
    a-line and n (= +-1) for a b-line.
    """
    if kind not in ("a", "b"):
        raise ValueError("kind must be 'a' or 'b'")
    if (abs(n), m) == (1, 1):
        return 1.0 if kind == "a" else float(n)
    g = propagator(n, m, params, eps, nu)
    cut = float(chi_h(x_divisor(n, m, params, eps, nu), h, params.gamma))
    val = cut * g
    return val if kind == "a" else n * val


def in_lambda(n: int, m: int, params: ModelParams) -> bool:
    """Whether (n, m) lies in the zone where divisors can be small."""
    om1 = float(omega(1, params.mu))
    return abs(om1 * abs(n) - m * m) <= 1.0 + params.eps0 * abs(n)
