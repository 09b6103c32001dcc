"""Order-by-order construction of the periodic solution.

The solution ansatz v = sqrt(eps) * sum_{n,m} u_{n,m} e^{i n Omega t} sin(mx)
turns the PDE into a mode system solved as a power series in eta = sqrt(eps):
u = sum_k eta^k u^(k), with the primary-mode amplitude q = u^(0)_{+-1,1} fixed
by the (+-1,1) equation and a frequency-shift table nu absorbing the
near-resonant corrections (fixed point nu = eta * l(eta, eps, nu)).
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernel import kernel_tensor, kernel_v
from .spectrum import ModelParams, NuTable, omega, omega_eff, propagator

__all__ = [
    "CoeffTable",
    "CountertermTable",
    "SignExcludedError",
    "NonConvergenceError",
    "InconsistentInputsError",
    "compute_coeffs",
    "amplitude_cubic_coefficient",
    "solve_amplitude",
    "amplitude_series",
    "solve_nu",
    "assemble_solution",
    "residual_norm",
    "order_consistency",
    "decay_check",
    "save_coeffs_csv",
    "load_coeffs_csv",
    "save_counterterms_csv",
    "save_nu_csv",
    "summary_json",
]

AMPLITUDE_TOL = 1e-12
NU_TOL = 1e-10
TAIL_TOL = 1e-3

_V2_CACHE: dict[int, np.ndarray] = {}


class SignExcludedError(ValueError):
    """Cubic coefficient A <= 0 on this branch; the mirrored branch has A > 0."""


class NonConvergenceError(RuntimeError):
    pass


class InconsistentInputsError(ValueError):
    """Coefficient table was built with different (eps, nu, counterterm) inputs."""


class CountertermTable:
    """Order/scale-resolved shift coefficients l^(k)_{n,m,h}.

    Stored for n >= 1 and extended oddly in n (so that n * l is even, matching
    the reality of the solution).  The aggregate l^(k)_{n,m} used by the
    recursion is the h = -1 entry, which sums every scale shell.
    """

    def __init__(self):
        self._d: dict[tuple[int, int, int, int], float] = {}

    def set(self, k: int, n: int, m: int, h: int, value: float):
        if n == 0 or (abs(n), m) == (1, 1):
            raise ValueError(f"no counterterm at mode {(n, m)}")
        self._d[(k, abs(n), m, h)] = float(value) * (1 if n > 0 else -1)

    def get(self, k: int, n: int, m: int, h: int) -> float:
        if n == 0:
            return 0.0
        v = self._d.get((k, abs(n), m, h), 0.0)
        return v if n > 0 else -v

    def aggregate(self, k: int, n: int, m: int) -> float:
        return self.get(k, n, m, -1)

    def orders(self) -> list[int]:
        return sorted({k for (k, _, _, _) in self._d})

    def items(self):
        return self._d.items()

    def __len__(self):
        return len(self._d)

    def __eq__(self, other):
        return isinstance(other, CountertermTable) and self._d == other._d

    def copy(self) -> "CountertermTable":
        t = CountertermTable()
        t._d = dict(self._d)
        return t


@dataclass
class CoeffTable:
    """Per-order mode coefficients u^(k)_{n,m}.

    u[k] has shape (2(k+1)+1, Mmax): row i holds temporal index n = i-(k+1),
    column j spatial index m = j+1.  Order 0 carries only the primary
    amplitude q at (+-1, 1).
    """

    K: int
    Mmax: int
    q: float
    u: list[np.ndarray]
    eps: float = 0.0
    provenance: dict = field(default_factory=dict)

    def value(self, k: int, n: int, m: int) -> float:
        if k > self.K or abs(n) > k + 1 or not 1 <= m <= self.Mmax:
            return 0.0
        return float(self.u[k][n + k + 1, m - 1])

    def order_norm(self, k: int) -> float:
        return float(np.max(np.abs(self.u[k])))

    def summed(self, eta: float) -> np.ndarray:
        """sum_k eta^k u^(k) on the common grid (2(K+1)+1, Mmax)."""
        K = self.K
        out = np.zeros((2 * (K + 1) + 1, self.Mmax))
        for k in range(K + 1):
            off = (K + 1) - (k + 1)
            out[off:off + 2 * (k + 1) + 1, :] += eta ** k * self.u[k]
        return out

    def check_invariants(self):
        for k in range(self.K + 1):
            arr = self.u[k]
            for i in range(arr.shape[0]):
                n = i - (k + 1)
                # reality: even in n
                if not np.array_equal(arr[i], arr[arr.shape[0] - 1 - i]):
                    raise AssertionError(f"u^({k}) not even in n at n={n}")
                if k >= 1 and abs(n) > k + 1 and np.any(arr[i] != 0.0):
                    raise AssertionError(f"support violation at order {k}, n={n}")
                # parity in n: modes need n = k+1 (mod 2)
                if (n - (k + 1)) % 2 != 0 and np.any(arr[i] != 0.0):
                    raise AssertionError(f"parity violation at order {k}, n={n}")
            # even m columns vanish
            if np.any(arr[:, 1::2] != 0.0):
                raise AssertionError(f"even-m content at order {k}")
        # primary mode only at order 0
        for k in range(1, self.K + 1):
            if self.value(k, 1, 1) != 0.0 or self.value(k, -1, 1) != 0.0:
                raise AssertionError(f"primary-mode content at order {k}")


def _v2(Mmax: int) -> np.ndarray:
    if Mmax not in _V2_CACHE:
        _V2_CACHE[Mmax] = kernel_tensor(2 * Mmax, Mmax)
    return _V2_CACHE[Mmax]


def quad_conv(u1: np.ndarray, u2: np.ndarray, k1: int, k2: int,
              a: float, b: float, Om: float, Mmax: int) -> np.ndarray:
    """Quadratic interaction of two coefficient arrays.

    Returns C[n, m] = sum_{n1+n2=n} (a - b Om^2 n1 n2)
                      sum_{m1,m2} v_{m,m1,m2} u1_{n1,m1} u2_{n2,m2}
    on the extended grid m <= 2*Mmax, |n| <= (k1+1)+(k2+1).
    """
    V2 = _v2(Mmax)
    noff = (k1 + 1) + (k2 + 1)
    out = np.zeros((2 * noff + 1, 2 * Mmax))
    for i1 in range(u1.shape[0]):
        row1 = u1[i1]
        if not row1.any():
            continue
        n1 = i1 - (k1 + 1)
        for i2 in range(u2.shape[0]):
            row2 = u2[i2]
            if not row2.any():
                continue
            n2 = i2 - (k2 + 1)
            coef = a - b * Om * Om * n1 * n2
            if coef == 0.0:
                continue
            s = np.tensordot(V2, np.outer(row1, row2), axes=2)
            out[n1 + n2 + noff, :] += coef * s
    return out


def fhat_order(table: CoeffTable, j: int, params: ModelParams, eps: float) -> np.ndarray:
    """Order-j coefficient of the quadratic forcing sum_{k1+k2=j} (u^k1 * u^k2)."""
    Om = omega_eff(params, eps)
    noff = j + 2
    out = np.zeros((2 * noff + 1, 2 * table.Mmax))
    for k1 in range(0, j + 1):
        k2 = j - k1
        if k1 > table.K or k2 > table.K:
            continue
        c = quad_conv(table.u[k1], table.u[k2], k1, k2, params.a, params.b, Om, table.Mmax)
        off = noff - ((k1 + 1) + (k2 + 1))
        out[off:off + c.shape[0], :] += c
    return out


def compute_coeffs(params: ModelParams, eps: float, nu: NuTable | None,
                   counterterms: CountertermTable | None, K: int, Mmax: int,
                   q: float = 1.0) -> CoeffTable:
    """Fill orders 1..K of the mode recursion.

    u^(k)_{n,m} = g_{n,m} ( n sum_{r=2}^{k-1} l^(r)_{n,m} u^(k-r)_{n,m}
                            + F^(k)_{n,m} ),
    with F^(k) the quadratic convolution of lower orders.  q enters as the
    order-0 primary amplitude and is solved separately (solve_amplitude).
    """
    lt = counterterms or CountertermTable()
    Om = omega_eff(params, eps)
    u0 = np.zeros((3, Mmax))
    u0[0, 0] = q   # n = -1, m = 1
    u0[2, 0] = q   # n = +1, m = 1
    us = [u0]
    table = CoeffTable(K=0, Mmax=Mmax, q=q, u=us, eps=eps)
    tail_flag = 0.0
    for k in range(1, K + 1):
        F = np.zeros((2 * (k + 1) + 1, 2 * Mmax))
        for k1 in range(0, k):
            k2 = k - 1 - k1
            c = quad_conv(us[k1], us[k2], k1, k2, params.a, params.b, Om, Mmax)
            off = (k + 1) - ((k1 + 1) + (k2 + 1))
            F[off:off + c.shape[0], :] += c
        # spectral-tail diagnostic on the extended grid
        inner = np.abs(F[:, :Mmax]).max()
        outer = np.abs(F[:, Mmax:]).max()
        if inner > 0:
            tail_flag = max(tail_flag, outer / inner)
        uk = np.zeros((2 * (k + 1) + 1, Mmax))
        for n in range(0, k + 2):
            if (n - (k + 1)) % 2 != 0:
                continue
            for m in range(1, Mmax + 1, 2):
                if (abs(n), m) == (1, 1):
                    continue
                rhs = F[n + k + 1, m - 1]
                lsum = 0.0
                for r in range(2, k):
                    if abs(n) > (k - r) + 1:
                        continue   # lower order has no support there
                    lr = lt.aggregate(r, n, m)
                    if lr != 0.0:
                        lsum += lr * us[k - r][n + (k - r) + 1, m - 1]
                rhs += n * lsum
                if rhs != 0.0:
                    uk[n + k + 1, m - 1] = propagator(n, m, params, eps, nu) * rhs
            uk[-n + k + 1, :] = uk[n + k + 1, :]   # reality: exactly even in n
        us.append(uk)
        table.K = k
    if tail_flag > TAIL_TOL:
        warnings.warn(f"convolution mass beyond Mmax: relative tail {tail_flag:.2e}",
                      RuntimeWarning, stacklevel=2)
    table.provenance = {
        "eps": eps, "q": q, "nu_items": tuple(sorted(nu.items())) if nu else (),
        "l_orders": tuple(lt.orders()), "tail": tail_flag,
    }
    table.check_invariants()
    return table


def _beta(params: ModelParams, eps: float) -> float:
    """Linear factor of the primary-mode equation, (omega_1^2 - Omega^2)/eps."""
    om1sq = 1.0 + params.mu
    Om = omega_eff(params, eps)
    return (om1sq - Om * Om) / eps


def amplitude_cubic_coefficient(params: ModelParams, eps: float, Mmax: int,
                                nu: NuTable | None = None,
                                with_tail: bool = False):
    """Cubic coefficient A of the reduced amplitude equation q = A q^3 + O(eta^2).

    Assembled from the order-1 coefficients feeding back into the primary
    mode; the m-sum is truncated at Mmax (terms decay like m^-10).
    """
    Om = omega_eff(params, eps)
    a, b = params.a, params.b
    acc = 0.0
    for m in range(1, Mmax + 1, 2):
        v = kernel_v(1, 1, m)
        g0 = propagator(0, m, params, eps, nu)
        g2 = propagator(2, m, params, eps, nu)
        acc += 2.0 * v * v * (2 * a * (a + b * Om * Om) * g0
                              + (a - b * Om * Om) * (a + 2 * b * Om * Om) * g2)
    beta = _beta(params, eps)
    A = acc / beta
    if not with_tail:
        return A
    # |v_{1,1,m}| <= 8/(pi m^3) and |g| <= 2/m^4 for large m
    cmax = abs(2 * a * (a + b * Om * Om)) + abs((a - b * Om * Om) * (a + 2 * b * Om * Om))
    tail = 2.0 * (8.0 / math.pi) ** 2 * cmax * 2.0 / (9.0 * Mmax ** 9) / abs(beta)
    return A, tail


def amplitude_series(params: ModelParams, eps: float, nu: NuTable | None,
                     counterterms: CountertermTable | None, K: int, Mmax: int
                     ) -> np.ndarray:
    """Coefficients A_j(1), j = 1..K, of the primary-mode equation at q = 1.

    The equation for q reads beta q = sum_j eta^{j-1} A_j(1) q^{j+2}
    (each order is homogeneous of degree j+2 in q).  Even j vanish by parity.
    """
    table = compute_coeffs(params, eps, nu, counterterms, K, Mmax, q=1.0)
    out = np.zeros(K + 1)
    for j in range(1, K + 1):
        fj = fhat_order(table, j, params, eps)
        out[j] = fj[1 + (j + 2), 0]   # row n=1, column m=1
    return out[1:]


def solve_amplitude(params: ModelParams, eps: float, nu: NuTable | None,
                    counterterms: CountertermTable | None, K: int, Mmax: int,
                    max_iter: int = 80) -> float:
    """Positive root of the truncated primary-mode equation.

    Solves beta q = sum_{j<=K} eta^{j-1} A_j q^{j+2} by damped Newton in
    s = q^2, seeded at the cubic solution s0 = beta/A_1.  Raises
    SignExcludedError when A = A_1/beta <= 0 (wrong frequency branch).
    """
    if params.a == 0.0 and params.b == 0.0:
        return 0.0   # linear equation: only the trivial periodic solution
    eta = math.sqrt(eps)
    beta = _beta(params, eps)
    A = amplitude_series(params, eps, nu, counterterms, K, Mmax)
    if A[0] / beta <= 0.0:
        raise SignExcludedError(
            f"cubic coefficient A = {A[0] / beta:.3e} <= 0 on branch "
            f"{params.omega_branch:+d}; use omega_branch = {-params.omega_branch:+d}")

    def rhs_of_s(s):
        # beta = sum_j eta^{j-1} A_j s^{(j+1)/2} ... only odd j contribute
        tot, dtot = 0.0, 0.0
        for j in range(1, K + 1):
            p = (j + 1) / 2.0
            cj = eta ** (j - 1) * A[j - 1]
            tot += cj * s ** p
            dtot += cj * p * s ** (p - 1.0)
        return tot, dtot

    s = beta / A[0]
    for _ in range(max_iter):
        f, df = rhs_of_s(s)
        step = (f - beta) / df
        s_new = s - step
        if s_new <= 0:
            s_new = s / 2.0
        if abs(s_new - s) < 1e-16 * max(1.0, abs(s)):
            s = s_new
            break
        s = s_new
    else:
        raise NonConvergenceError("amplitude iteration did not converge")
    q = math.sqrt(s)
    resid = abs(beta * q - sum(eta ** (j - 1) * A[j - 1] * q ** (j + 2)
                               for j in range(1, K + 1)))
    if resid > AMPLITUDE_TOL * max(1.0, abs(beta * q)):
        raise NonConvergenceError(f"amplitude residual {resid:.2e} above tolerance")
    return q


def lambda_modes(params: ModelParams, Mmax: int | None = None,
                 Nmax: int | None = None) -> list[tuple[int, int]]:
    """Near-resonant modes (n >= 1, m odd) within the cutoffs, primary excluded."""
    Mmax = Mmax or params.Mmax
    Nmax = Nmax or params.Nmax
    om1 = float(omega(1, params.mu))
    out = []
    for m in range(1, Mmax + 1, 2):
        lo = (m * m - 1.0) / (om1 + params.eps0)
        hi = (m * m + 1.0) / max(om1 - params.eps0, 1e-9)
        for n in range(max(1, math.floor(lo)), min(Nmax, math.ceil(hi)) + 1):
            if (n, m) == (1, 1):
                continue
            if abs(om1 * n - m * m) <= 1.0 + params.eps0 * n:
                out.append((n, m))
    return out


def solve_nu(params: ModelParams, eps: float, K: int,
             Mmax: int | None = None, Nmax: int | None = None,
             tol: float = NU_TOL, max_sweeps: int = 40,
             use_trees: bool = False) -> tuple[NuTable, dict]:
    """Fixed point of the shift equation nu = sum_{k<=K} eta^k l^(k)(eps, nu).

    Each sweep re-solves the amplitude and rebuilds the counterterms at the
    current table.  Odd orders vanish, so K = 2, 3 use the closed-form
    order-2 counterterm with the amplitude solved at its cubic order (exact
    for K = 2; at K = 3 the dropped quintic term shifts q, and hence nu, at
    relative order eps).  use_trees or K > 3 switches to tree enumeration
    with the fully truncated amplitude equation.
    """
    from .trees import counterterm, counterterm_order2_closed

    Mmax = Mmax or params.Mmax
    Nmax = Nmax or params.Nmax
    if not 0.0 < eps < params.eps0:
        raise ValueError(f"eps={eps} outside (0, eps0={params.eps0})")
    modes = lambda_modes(params, Mmax, Nmax)
    nu = NuTable(eps0=params.eps0, nu_cap=params.nu_cap)
    eta = math.sqrt(eps)
    info = {"sweeps": 0, "converged": False, "q": 0.0, "modes": len(modes)}
    lt = CountertermTable()
    fast = not use_trees and K <= 3
    for sweep in range(1, max_sweeps + 1):
        if fast:
            # odd amplitude orders vanish, so the K <= 3 equation is the
            # plain cubic: beta q = A1 q^3 with A1 from the closed form
            if params.a == 0.0 and params.b == 0.0:
                q = 0.0
            else:
                A = amplitude_cubic_coefficient(params, eps, Mmax, nu)
                if A <= 0.0:
                    raise SignExcludedError(
                        f"cubic coefficient A = {A:.3e} <= 0 on branch "
                        f"{params.omega_branch:+d}")
                q = math.sqrt(1.0 / A)
        else:
            q = solve_amplitude(params, eps, nu, lt, K, Mmax)
        lt = CountertermTable()
        if fast:
            l2 = counterterm_order2_closed(params, eps, nu, q, modes, Mmax)
            for (n, m), val in zip(modes, l2):
                if val != 0.0:
                    lt.set(2, n, m, -1, val)
        else:
            for k in range(2, K + 1):
                for (n, m) in modes:
                    val = counterterm(k, n, m, -1, params, eps, nu, q, lt, Mmax)
                    if val != 0.0:
                        lt.set(k, n, m, -1, val)
        new = NuTable(eps0=params.eps0, nu_cap=params.nu_cap)
        delta = 0.0
        for (n, m) in modes:
            v = sum(eta ** k * lt.aggregate(k, n, m) for k in range(2, K + 1))
            if v != 0.0:
                new.set(n, m, v)
            delta = max(delta, abs(v - nu.get(n, m)))
        nu = new
        info["sweeps"] = sweep
        info["q"] = q
        if delta < tol:
            info["converged"] = True
            break
    if not info["converged"]:
        raise NonConvergenceError(
            f"nu fixed point did not converge in {max_sweeps} sweeps (last update {delta:.2e})")
    if nu.sup_norm() >= params.nu_cap * params.eps0:
        raise NonConvergenceError("nu left the admissible box; eps too large")
    nu.check_invariants(params.mu)
    info["counterterms"] = lt
    return nu, info


def assemble_solution(table: CoeffTable, eps: float, x, t,
                      params: ModelParams | None = None) -> np.ndarray:
    """Field values v(x, t) = sqrt(eps) sum eta^k u^(k)_{n,m} e^{i n Om t} sin(mx).

    Reality of the table makes the result a plain cosine sum; output shape is
    (len(x), len(t)).
    """
    params = params or ModelParams()
    eta = math.sqrt(eps)
    U = table.summed(eta)
    K = table.K
    Om = omega_eff(params, eps)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    ms = np.arange(1, table.Mmax + 1)
    sin_mx = np.sin(np.outer(x, ms))               # (nx, M)
    out = np.zeros((x.size, t.size))
    for n in range(0, K + 2):
        row = U[n + K + 1]
        if not row.any():
            continue
        spatial = sin_mx @ row                     # (nx,)
        temporal = np.cos(n * Om * t)              # (nt,)
        weight = 1.0 if n == 0 else 2.0
        out += weight * np.outer(spatial, temporal)
    return math.sqrt(eps) * out


def _check_provenance(table: CoeffTable, eps: float, nu: NuTable | None):
    want = tuple(sorted(nu.items())) if nu else ()
    if table.provenance and (table.provenance.get("eps") != eps
                             or table.provenance.get("nu_items") != want):
        raise InconsistentInputsError("table provenance disagrees with (eps, nu)")


def residual_norm(table: CoeffTable, params: ModelParams, eps: float,
                  nu: NuTable | None = None, per_mode: bool = False):
    """Sup norm of the PDE residual of the assembled truncation.

    R_{n,m} = (-Om^2 n^2 + om_m^2) V_{n,m} - [a V^2 + b V_t^2]_{n,m} with
    V = sqrt(eps) * (summed table); computed spectrally on the extended grid.
    """
    _check_provenance(table, eps, nu)
    eta = math.sqrt(eps)
    Om = omega_eff(params, eps)
    U = table.summed(eta)
    K = table.K
    conv = quad_conv(U, U, K, K, params.a, params.b, Om, table.Mmax)
    noff = 2 * (K + 1)
    R = np.array(conv) * (-eps)     # -[aV^2 + b V_t^2], with V = sqrt(eps) U
    for n in range(-(K + 1), K + 2):
        row = U[n + K + 1]
        lin = (-(Om * n) ** 2 + omega(np.arange(1, table.Mmax + 1), params.mu) ** 2) * row
        R[n + noff, :table.Mmax] += math.sqrt(eps) * lin
    if per_mode:
        return R, noff
    # sup over the resolved window m <= Mmax (the spatial cutoff defines the
    # Galerkin truncation; mass beyond it is reported by compute_coeffs)
    return float(np.max(np.abs(R[:, :table.Mmax])))


def order_consistency(table: CoeffTable, params: ModelParams, eps: float,
                      nu: NuTable | None, counterterms: CountertermTable | None
                      ) -> float:
    """Worst relative defect of the order-k identities, k <= K.

    Rebuilds every F^(k) by fresh convolution and checks
    (-Om^2 n^2 + om_m^2 + n nu) u^(k) = n sum_r l^(r) u^(k-r) + F^(k).
    Telescoping of the construction makes this round-off small.
    """
    _check_provenance(table, eps, nu)
    lt = counterterms or CountertermTable()
    Om = omega_eff(params, eps)
    worst = 0.0
    for k in range(1, table.K + 1):
        F = np.zeros((2 * (k + 1) + 1, 2 * table.Mmax))
        for k1 in range(0, k):
            k2 = k - 1 - k1
            c = quad_conv(table.u[k1], table.u[k2], k1, k2,
                          params.a, params.b, Om, table.Mmax)
            off = (k + 1) - ((k1 + 1) + (k2 + 1))
            F[off:off + c.shape[0], :] += c
        scale = max(1.0, np.abs(F).max())
        for n in range(-(k + 1), k + 2):
            for m in range(1, table.Mmax + 1):
                if (abs(n), m) == (1, 1):
                    continue
                unm = table.value(k, n, m)
                nnu = nu.n_nu(n, m) if nu else 0.0
                lhs = (-(Om * n) ** 2 + float(omega(m, params.mu)) ** 2 + nnu) * unm
                rhs = F[n + k + 1, m - 1]
                for r in range(2, k):
                    rhs += n * lt.aggregate(r, n, m) * table.value(k - r, n, m)
                worst = max(worst, abs(lhs - rhs) / scale)
    return worst


@dataclass
class DecayReport:
    C0: float
    sigma_fit: float
    m_powers: dict[int, float]
    n_support_ok: bool
    violations: list[str]

    @property
    def ok(self) -> bool:
        return self.n_support_ok and not self.violations


def decay_check(table: CoeffTable, params: ModelParams, m_floor: float = 3.0
                ) -> DecayReport:
    """Fit exponential n-decay and power-law m-decay of the computed table."""
    eta = math.sqrt(table.eps) if table.eps > 0 else 0.1
    violations: list[str] = []
    n_support_ok = True
    m_powers: dict[int, float] = {}
    for k in range(1, table.K + 1):
        arr = np.abs(table.u[k])
        for i in range(arr.shape[0]):
            n = i - (k + 1)
            if abs(n) > k + 1 and arr[i].any():
                n_support_ok = False
        prof = arr.max(axis=0)
        ms = np.arange(1, table.Mmax + 1)
        mask = (prof > 0) & (ms >= 3) & (ms % 2 == 1)
        if mask.sum() >= 3:
            slope, _ = np.polyfit(np.log(ms[mask]), np.log(prof[mask]), 1)
            m_powers[k] = -float(slope)
            if m_powers[k] < m_floor:
                violations.append(f"order {k}: m-decay power {m_powers[k]:.2f} < {m_floor}")
    U = np.abs(table.summed(eta))
    K = table.K
    n_norms = [(n, U[n + K + 1].max()) for n in range(0, K + 2) if U[n + K + 1].max() > 0]
    if len(n_norms) >= 3:
        ns = np.array([n for n, _ in n_norms], dtype=float)
        vals = np.log([v for _, v in n_norms])
        slope, intercept = np.polyfit(ns, vals, 1)
        sigma_fit, C0 = -float(slope), float(np.exp(intercept))
    else:
        sigma_fit, C0 = math.inf, max((v for _, v in n_norms), default=0.0)
    return DecayReport(C0=C0, sigma_fit=sigma_fit, m_powers=m_powers,
                       n_support_ok=n_support_ok, violations=violations)


# ---------------------------------------------------------------------------
# serialization

def save_coeffs_csv(table: CoeffTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "n", "m", "value"])
        w.writerow([0, 1, 1, repr(table.q)])
        w.writerow([0, -1, 1, repr(table.q)])
        for k in range(1, table.K + 1):
            arr = table.u[k]
            for i in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    if arr[i, j] != 0.0:
                        w.writerow([k, i - (k + 1), j + 1, repr(float(arr[i, j]))])


def load_coeffs_csv(path, K: int, Mmax: int, eps: float = 0.0) -> CoeffTable:
    us = [np.zeros((2 * (k + 1) + 1, Mmax)) for k in range(K + 1)]
    q = 0.0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            k, n, m, v = int(row["k"]), int(row["n"]), int(row["m"]), float(row["value"])
            if k == 0:
                q = v
            us[k][n + k + 1, m - 1] = v
    return CoeffTable(K=K, Mmax=Mmax, q=q, u=us, eps=eps)


def save_counterterms_csv(lt: CountertermTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "n", "m", "h", "value"])
        for (k, n, m, h), v in sorted(lt.items()):
            w.writerow([k, n, m, h, repr(v)])


def save_nu_csv(nu: NuTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "m", "value"])
        for (n, m), v in sorted(nu.items()):
            w.writerow([n, m, repr(v)])


def summary_json(table: CoeffTable, params: ModelParams, eps: float,
                 A: float | None = None, extra: dict | None = None) -> str:
    rep = decay_check(table, params)
    doc = {
        "schema_version": 1,
        "q": table.q,
        "eps": eps,
        "A": A,
        "order_norms": {k: table.order_norm(k) for k in range(table.K + 1)},
        "decay": {"C0": rep.C0, "sigma": rep.sigma_fit,
                  "m_powers": rep.m_powers, "ok": rep.ok},
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True, default=float)
