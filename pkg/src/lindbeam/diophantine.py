"""Arithmetic non-resonance conditions and their measure estimates.

Membership tests store margins, not booleans: every condition family reports
its worst normalized margin |combination| * |n|^exponent so that thresholds
in gamma can be applied afterwards.  Measure estimates combine exact interval
widths of the finitely many near-resonances inside the cutoffs with an
explicit analytic bound for the tail beyond them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectrum import ModelParams, NuTable, omega, omega_eff

__all__ = [
    "MU_MAX",
    "DiophReport",
    "mass_margins",
    "check_mass",
    "measure_mass_complement",
    "melnikov_margins",
    "check_melnikov",
    "cantor_margins",
    "check_cantor",
    "measure_cantor",
    "find_diophantine_mu",
]

MU_MAX = 0.125


@dataclass
class DiophReport:
    condition: str
    Nmax: int
    Mmax: int
    grid: int
    fail_fraction: float
    excluded_measure: float
    tail_bound: float
    worst: dict = field(default_factory=dict)

    @property
    def excluded_with_tail(self) -> float:
        return self.excluded_measure + self.tail_bound


def _mstar_single(Nmax: int) -> int:
    return int(math.isqrt(int((1 + MU_MAX) * Nmax + 2))) + 1


def mass_margins(mu, tau0: float, Nmax: int):
    """Normalized margins of the three linear-frequency condition families.

    Returns (single, diff, sum) arrays over the mu grid: the minimum over all
    conditions within the cutoff of |omega_1 n +- omega_m (+- omega_m')| *
    n^tau0.  Conditions away from the nearest integer n carry margin >= 1/2
    and cannot compete with any admissible gamma <= 2^-6.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    om1 = np.sqrt(1.0 + mu)
    best = [np.full(mu.shape, np.inf) for _ in range(3)]

    def consider(idx, target):
        # only the nearest integers to target / om1 can compete
        base = np.rint(target / om1)
        for dn in (-1.0, 0.0, 1.0):
            n = base + dn
            valid = (n >= 1) & (n <= Nmax)
            if not valid.any():
                continue
            margin = np.where(valid, np.abs(om1 * n - target) * n ** tau0, np.inf)
            best[idx] = np.minimum(best[idx], margin)

    mstar = _mstar_single(Nmax)
    for m in range(2, mstar + 1):
        consider(0, omega(m, mu))

    # difference pairs: m1 > m2 >= 2, m1^2 - m2^2 within reach of omega_1 n
    bound = (1 + MU_MAX) * Nmax + 3
    m2 = 2
    while 2 * m2 + 1 <= bound:
        m1 = m2 + 1
        while m1 * m1 - m2 * m2 <= bound:
            consider(1, omega(m1, mu) - omega(m2, mu))
            m1 += 1
        m2 += 1

    # sum pairs: m1^2 + m2^2 within reach
    for m2 in range(2, mstar + 1):
        for m1 in range(m2, mstar + 1):
            if m1 * m1 + m2 * m2 > bound:
                break
            consider(2, omega(m1, mu) + omega(m2, mu))

    return best


def check_mass(mu: float, gamma: float, tau0: float, Nmax: int,
               Mmax: int | None = None) -> bool:
    """Whether the linear frequencies at mass mu clear gamma |n|^-tau0.

    The spatial range is derived from Nmax internally: near-failures force
    m ~ sqrt(n) for single frequencies and m1 +- m2 ~ n for pairs.
    """
    s, d, su = mass_margins(np.array([mu]), tau0, Nmax)
    return bool(min(s[0], d[0], su[0]) >= gamma)


def _mass_tail_bound(gamma: float, tau0: float, Nmax: int) -> float:
    """Excluded measure that conditions with n > Nmax could still carry.

    Interval length per condition is <= 2 gamma n^-tau0 / (0.4 n) once n >= 4;
    counts per n: <= 1.04 sqrt(n)+2 singles, <= 2.2 n + 4(1+log(1.1n+2))
    difference pairs, <= 0.85 n + 2 sum pairs.
    """
    total = 0.0
    for n in range(Nmax + 1, 20 * Nmax):
        cnt = (1.04 * math.sqrt(n) + 2) + (2.2 * n + 4 * (1 + math.log(1.1 * n + 2))) \
            + (0.85 * n + 2)
        total += cnt * 2 * gamma / (0.4 * n ** (tau0 + 1))
    # integral remainder for n >= 20 Nmax, counts bounded by 4.2 n
    N2 = 20 * Nmax
    total += 4.2 * 2 * gamma / 0.4 * N2 ** (1 - tau0) / (tau0 - 1)
    return total


def _mass_combos(Nmax: int):
    """(family, combo(mu) callable, kind-tag) for all condition families."""
    combos = []
    mstar = _mstar_single(Nmax)
    bound = (1 + MU_MAX) * Nmax + 3
    for m in range(2, mstar + 1):
        combos.append(("single", (m,), lambda mu, m=m: omega(m, mu)))
    m2 = 2
    while 2 * m2 + 1 <= bound:
        m1 = m2 + 1
        while m1 * m1 - m2 * m2 <= bound:
            combos.append(("diff", (m1, m2),
                           lambda mu, m1=m1, m2=m2: omega(m1, mu) - omega(m2, mu)))
            m1 += 1
        m2 += 1
    for m2 in range(2, mstar + 1):
        for m1 in range(m2, mstar + 1):
            if m1 * m1 + m2 * m2 > bound:
                break
            combos.append(("sum", (m1, m2),
                           lambda mu, m1=m1, m2=m2: omega(m1, mu) + omega(m2, mu)))
    return combos


def mass_exclusion_intervals(gamma: float, tau0: float, Nmax: int
                             ) -> list[tuple[float, float, tuple]]:
    """Excluded mass intervals located by root-finding each near-resonance.

    For each condition the resonant mass solves omega_1(mu) n = combo(mu);
    the condition fails on an interval of width 2 gamma n^-tau0 / |f'| around
    it.  Every combination is monotone in mu for the relevant n >= 2, so a
    sign change on [0, 1/8] brackets exactly one root.
    """
    out = []
    for fam, idx, combo in _mass_combos(Nmax):
        t0, t1 = float(combo(0.0)), float(combo(MU_MAX))
        n_lo = max(2, int(math.floor(min(t0, t1) / math.sqrt(1 + MU_MAX))) - 1)
        n_hi = min(Nmax, int(math.ceil(max(t0, t1))) + 1)
        if n_hi < n_lo:
            continue
        ns = np.arange(n_lo, n_hi + 1, dtype=float)

        def f(mu):
            return np.sqrt(1 + mu) * ns - combo(mu)

        fa, fb = f(0.0), f(MU_MAX)
        bracket = fa * fb <= 0.0
        if not bracket.any():
            continue
        lo = np.zeros_like(ns)
        hi = np.full_like(ns, MU_MAX)
        for _ in range(52):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            left = (f(lo) * fm) <= 0.0
            hi = np.where(left, mid, hi)
            lo = np.where(left, lo, mid)
        mu_star = 0.5 * (lo + hi)
        for j in np.nonzero(bracket)[0]:
            n = float(ns[j])
            ms = float(mu_star[j])
            # |f'| >= n/(2 om1) - sum 1/(2 om_m) >= 0.4 n for the scanned combos
            h = 1e-6
            slope = abs((math.sqrt(1 + ms + h) * n - float(combo(ms + h)))
                        - (math.sqrt(1 + ms) * n - float(combo(ms)))) / h
            slope = max(slope, 0.3 * n)
            width = 2 * gamma * n ** (-tau0) / slope
            out.append((float(ms), width, (fam, int(n)) + idx))
    return out


def _merge_length(intervals: list[tuple[float, float]], lo: float, hi: float
                  ) -> float:
    segs = sorted((max(lo, c - w / 2), min(hi, c + w / 2)) for c, w in intervals)
    total, cur_a, cur_b = 0.0, None, None
    for a, b in segs:
        if b <= a:
            continue
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


def measure_mass_complement(gamma: float, tau0: float, grid: int, Nmax: int
                            ) -> DiophReport:
    """Estimate of the excluded mass measure in [0, 1/8].

    The headline estimate is the union length of the analytically located
    exclusion intervals (exact widths from margins and slopes); the uniform
    grid rejection is reported as a cross-check (its resolution floor is one
    grid step per hit).
    """
    if grid < 1000:
        raise ValueError("grid must be >= 1e3")
    mu = (np.arange(grid) + 0.5) / grid * MU_MAX
    s, d, su = mass_margins(mu, tau0, Nmax)
    worst = np.minimum(np.minimum(s, d), su)
    frac = float((worst < gamma).mean())
    ivs = mass_exclusion_intervals(gamma, tau0, Nmax)
    est = _merge_length([(c, w) for (c, w, _) in ivs], 0.0, MU_MAX)
    return DiophReport(
        condition="mass", Nmax=Nmax, Mmax=_mstar_single(Nmax), grid=grid,
        fail_fraction=frac, excluded_measure=est,
        tail_bound=_mass_tail_bound(gamma, tau0, Nmax),
        worst={"min_margin": float(worst.min()),
               "argmin_mu": float(mu[int(np.argmin(worst))]),
               "grid_excluded": frac * MU_MAX,
               "intervals": len(ivs)},
    )


def find_diophantine_mu(gamma: float, tau0: float, Nmax: int,
                        lo: float = 0.05, hi: float = MU_MAX,
                        grid: int = 4000) -> float:
    """A mass value clearing the conditions with maximal margin on a scan."""
    mu = np.linspace(lo, hi, grid, endpoint=False)
    s, d, su = mass_margins(mu, tau0, Nmax)
    worst = np.minimum(np.minimum(s, d), su)
    j = int(np.argmax(worst))
    if worst[j] < gamma:
        raise RuntimeError("no admissible mass found on the scan grid")
    return float(mu[j])


# ---------------------------------------------------------------------------
# shifted-frequency (Melnikov) conditions

def _lambda_windows(params: ModelParams, Mmax: int, Nmax: int) -> dict[int, tuple]:
    """Near-resonant |n| window per m (inclusive), within the cutoffs."""
    om1 = float(omega(1, params.mu))
    out = {}
    for m in range(1, Mmax + 1):
        lo = max(1, math.floor((m * m - 1.0) / (om1 + params.eps0)))
        hi = min(Nmax, math.ceil((m * m + 1.0) / max(om1 - params.eps0, 1e-9)))
        if lo <= hi:
            out[m] = (lo, hi)
    return out


_PAIR_CACHE: dict = {}


def _pair_rows(params: ModelParams, Nmax: int, Mmax: int):
    """Flat (n1, m1, m2, lo2, hi2) candidate rows for the pair condition."""
    key = (round(params.mu, 14), round(params.eps0, 14), Nmax, Mmax)
    if key in _PAIR_CACHE:
        return _PAIR_CACHE[key]
    wins = _lambda_windows(params, Mmax, Nmax)
    ms = sorted(wins)
    n1_l, m1_l, m2_l, lo2_l, hi2_l = [], [], [], [], []
    for i1, m1 in enumerate(ms):
        lo1, hi1 = wins[m1]
        n1s = np.arange(lo1, hi1 + 1)
        n1s = np.concatenate([-n1s[::-1], n1s])
        for m2 in ms[i1 + 1:]:
            lo2, hi2 = wins[m2]
            n1_l.append(n1s)
            m1_l.append(np.full(n1s.size, m1))
            m2_l.append(np.full(n1s.size, m2))
            lo2_l.append(np.full(n1s.size, lo2))
            hi2_l.append(np.full(n1s.size, hi2))
    rows = tuple(np.concatenate(x) if x else np.zeros(0, dtype=int)
                 for x in (n1_l, m1_l, m2_l, lo2_l, hi2_l))
    _PAIR_CACHE[key] = rows
    return rows


def _nu_dense(params: ModelParams, nu: NuTable | None, Mmax: int, Nmax: int):
    """Per-m dense arrays of the divisor shift n*nu over the near-resonant window."""
    wins = _lambda_windows(params, Mmax, Nmax)
    out = {}
    for m, (lo, hi) in wins.items():
        if nu is None:
            out[m] = (lo, np.zeros(hi - lo + 1))
        else:
            out[m] = (lo, np.array([nu.n_nu(n, m) for n in range(lo, hi + 1)]))
    return out


def _omt_vec(params: ModelParams, dense: dict, n_abs: np.ndarray,
             m_arr: np.ndarray) -> np.ndarray:
    """sqrt(om_m^2 + n nu) vectorized; nu vanishes outside the windows."""
    base = (m_arr.astype(float)) ** 4 + params.mu
    shift = np.zeros(n_abs.shape)
    for m in np.unique(m_arr):
        ent = dense.get(int(m))
        if ent is None:
            continue   # no near-resonant window: shift identically zero
        lo, arr = ent
        sel = m_arr == m
        idx = n_abs[sel] - lo
        ok = (idx >= 0) & (idx < arr.size)
        vals = np.where(ok, arr[np.clip(idx, 0, arr.size - 1)], 0.0)
        shift[sel] = vals
    return np.sqrt(base + shift)


def melnikov_margins(eps: float, nu: NuTable | None, params: ModelParams,
                     Nmax: int | None = None, Mmax: int | None = None) -> dict:
    """Worst normalized margins of the two shifted-frequency families.

    first:  |Omega n +- sqrt(om_m^2 + n nu)| * |n|^tau over n != 0, m >= 2;
    second: the four sign combinations over pairs of near-resonant modes with
    m1 != m2.  Combinations away from the nearest resonant integer carry
    margin >= 0.4 >= gamma and are skipped.
    """
    Nmax = Nmax or params.Nmax
    Mmax = Mmax or params.Mmax
    Om = omega_eff(params, eps)
    dense = _nu_dense(params, nu, Mmax, Nmax)
    out = {"first": math.inf, "second": math.inf,
           "first_at": None, "second_at": None}

    # first condition: only n ~ omt/Om competes
    for m in range(2, Mmax + 1):
        om_m = float(omega(m, params.mu))
        base = int(round(om_m / Om))
        for n in range(max(1, base - 2), min(Nmax, base + 2) + 1):
            omt = float(_omt_vec(params, dense, np.array([n]), np.array([m]))[0])
            margin = abs(Om * n - omt) * n ** params.tau
            if margin < out["first"]:
                out["first"] = margin
                out["first_at"] = (n, m)

    n1, m1, m2, lo2, hi2 = _pair_rows(params, Nmax, Mmax)
    if n1.size:
        w1 = _omt_vec(params, dense, np.abs(n1), m1)
        om2_plain = _omt_vec(params, dense, np.zeros_like(m2) + 10 ** 9, m2)
        for a1 in (1.0, -1.0):
            for a2 in (1.0, -1.0):
                d0 = -(a1 * w1 + a2 * om2_plain) / Om
                for dd in (-1.0, 0.0, 1.0):
                    delta = (np.rint(d0) + dd).astype(int)
                    n2 = n1 + delta
                    sel = (np.abs(n2) >= lo2) & (np.abs(n2) <= hi2) & (delta != 0)
                    if not sel.any():
                        continue
                    n2v = n2[sel]
                    w2 = _omt_vec(params, dense, np.abs(n2v), m2[sel])
                    dn = n2v - n1[sel]
                    marg = np.abs(Om * dn + a1 * w1[sel] + a2 * w2) \
                        * np.abs(dn).astype(float) ** params.tau
                    j = int(np.argmin(marg))
                    if marg[j] < out["second"]:
                        out["second"] = float(marg[j])
                        out["second_at"] = (int(n1[sel][j]), int(m1[sel][j]),
                                            int(n2v[j]), int(m2[sel][j]))
    return out


def check_melnikov(eps: float, nu: NuTable | None, params: ModelParams,
                   gamma: float | None = None, Nmax: int | None = None,
                   Mmax: int | None = None) -> bool:
    gamma = gamma if gamma is not None else params.gamma
    marg = melnikov_margins(eps, nu, params, Nmax, Mmax)
    return marg["first"] >= gamma and marg["second"] >= gamma


def square_margins(eps: float, params: ModelParams, Nmax: int | None = None
                   ) -> tuple[float, tuple | None]:
    """Worst |Omega n - m^2| |n|^tau0 margin over n <= Nmax, m >= 2."""
    Nmax = Nmax or params.Nmax
    Om = omega_eff(params, eps)
    ns = np.arange(1, Nmax + 1, dtype=float)
    m = np.rint(np.sqrt(Om * ns))
    m = np.maximum(m, 2.0)
    best = np.inf
    at = None
    for dm in (-1.0, 0.0, 1.0):
        mm = np.maximum(m + dm, 2.0)
        marg = np.abs(Om * ns - mm ** 2) * ns ** params.tau0
        j = int(np.argmin(marg))
        if marg[j] < best:
            best = float(marg[j])
            at = (int(ns[j]), int(mm[j]))
    return best, at


def cantor_margins(eps: float, nu_of_eps: NuTable | None, params: ModelParams,
                   Nmax: int | None = None, Mmax: int | None = None) -> dict:
    """Margins of the accepted-amplitude conditions at one eps.

    square: |Omega n - m^2| |n|^tau0 (threshold 4 gamma, primary mode and
    m = 1 excluded); first/second: the shifted-frequency families evaluated
    at nu(eps) (threshold 2 gamma).
    """
    sq, sq_at = square_margins(eps, params, Nmax)
    mel = melnikov_margins(eps, nu_of_eps, params, Nmax, Mmax)
    return {"square": sq, "square_at": sq_at,
            "first": mel["first"], "first_at": mel["first_at"],
            "second": mel["second"], "second_at": mel["second_at"]}


def check_cantor(eps: float, nu_of_eps: NuTable | None, params: ModelParams,
                 gamma: float | None = None, Nmax: int | None = None,
                 Mmax: int | None = None) -> bool:
    gamma = gamma if gamma is not None else params.gamma
    m = cantor_margins(eps, nu_of_eps, params, Nmax, Mmax)
    return (m["square"] > 4 * gamma and m["first"] >= 2 * gamma
            and m["second"] >= 2 * gamma)


def _cantor_exclusion_widths(params: ModelParams, window: float,
                             Nmax: int) -> list[tuple[float, float, str]]:
    """Near-resonance locations and interval widths inside (0, window).

    Square-type exclusions dominate (exponent tau0); the shifted families
    carry exponent tau and are included with the nu = 0 approximation of the
    resonant location.
    """
    om1 = float(omega(1, params.mu))
    br = params.omega_branch
    g = params.gamma
    out = []
    for n in range(1, Nmax + 1):
        # square family: Omega n = m^2  =>  eps* = br*(m^2 - om1 n)/n
        m = max(2, int(round(math.sqrt(om1 * n))))
        for mm in (m - 1, m, m + 1):
            if mm < 2:
                continue
            est = br * (mm * mm - om1 * n) / n
            if 0.0 < est < window:
                width = 2 * 4 * g * n ** (-params.tau0) / n
                out.append((est, width, f"square n={n} m={mm}"))
        # first shifted family: Omega n = om_m  =>  m ~ sqrt(Om n)
        if m >= 2:
            om_m = float(omega(m, params.mu))
            est = br * (om_m - om1 * n) / n
            if 0.0 < est < window:
                width = 2 * 2 * g * n ** (-params.tau) / (n / 2)
                out.append((est, width, f"first n={n} m={m}"))
    return out


def measure_cantor(params: ModelParams, window: float, grid: int,
                   K: int = 2, Nmax: int | None = None,
                   Mmax: int | None = None) -> DiophReport:
    """Excluded measure of the accepted-amplitude set in (0, window).

    Reports the grid-rejection fraction and, as the headline estimate, the
    summed widths of the analytically located near-resonance intervals plus
    the explicit n > Nmax tail (a 10^3 grid cannot resolve widths that reach
    down to gamma Nmax^-tau0-1).
    """
    from .series import NonConvergenceError, solve_nu

    Nmax = Nmax or params.Nmax
    Mmax = Mmax or params.Mmax
    pw = params if params.eps0 >= window else params.with_(eps0=min(2 * window, 0.9))
    eps_grid = (np.arange(grid) + 0.5) / grid * window
    fails = 0
    nonconv = 0
    for e in eps_grid:
        try:
            nu, _ = solve_nu(pw, float(e), K, Mmax, Nmax)
        except NonConvergenceError:
            nonconv += 1
            continue
        if not check_cantor(float(e), nu, pw, Nmax=Nmax, Mmax=Mmax):
            fails += 1
    widths = _cantor_exclusion_widths(pw, window, Nmax)
    excluded = sum(min(w, window) for (_, w, _) in widths)
    # tail: conditions with n > Nmax; counts ~ window sqrt(om1 n)/2 per n
    om1 = float(omega(1, pw.mu))
    tail = 0.0
    for n in range(Nmax + 1, 10 * Nmax):
        tail += (window * math.sqrt(om1 * n) / 2 + 1) * 8 * pw.gamma / n ** (pw.tau0 + 1)
    tail += (window * math.sqrt(om1) / 2 + 1) * 8 * pw.gamma \
        * (10 * Nmax) ** (-pw.tau0 + 0.5) / (pw.tau0 - 0.5)
    return DiophReport(
        condition="cantor", Nmax=Nmax, Mmax=Mmax, grid=grid,
        fail_fraction=(fails + nonconv) / grid,
        excluded_measure=excluded, tail_bound=tail,
        worst={"intervals": len(widths), "nonconverged": nonconv,
               "relative_excluded": (excluded + tail) / window},
    )
