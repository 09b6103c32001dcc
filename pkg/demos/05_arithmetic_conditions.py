"""Arithmetic non-resonance: which masses and amplitudes survive.

Two layers of exclusions protect the construction: the mass mu must keep the
linear frequencies away from rational collisions (a condition imposed once),
and the amplitude eps must keep the shifted frequencies away from resonance
(a condition re-checked at the fixed point nu(eps)).  Both excluded sets are
tiny and shrink linearly with the arithmetic constant gamma.
"""
import numpy as np

from lindbeam import ModelParams
from lindbeam.diophantine import (
    check_cantor,
    check_mass,
    find_diophantine_mu,
    mass_exclusion_intervals,
    measure_cantor,
    measure_mass_complement,
)
from lindbeam.series import solve_nu

G = 2.0 ** -6

print("== mass conditions ==")
print(f"mu = 0       admissible? {check_mass(0.0, G, 4.0, 300)}   "
      "(exact resonances n = m^2)")
mu_star = find_diophantine_mu(G, 4.0, 500)
print(f"mu = {mu_star:.6f} admissible? {check_mass(mu_star, G, 4.0, 500)}")

print("\n== excluded mass measure, three gammas ==")
for gam in (2.0 ** -6, 2.0 ** -7, 2.0 ** -8):
    rep = measure_mass_complement(gam, 4.0, 10_000, 500)
    print(f"  gamma = 2^{int(np.log2(gam))}: excluded = {rep.excluded_measure:.3e}"
          f" (+ tail {rep.tail_bound:.1e})   / gamma = "
          f"{rep.excluded_measure / gam:.4f}   bound 6*gamma = {6 * gam:.4f}")

ivs = sorted(mass_exclusion_intervals(G, 4.0, 300), key=lambda t: -t[1])[:5]
print("\nwidest excluded mass intervals (center, width, condition):")
for c, w, tag in ivs:
    print(f"  mu ~ {c:.6f}   width {w:.2e}   {tag}")

print("\n== amplitude conditions along a window ==")
params = ModelParams(a=1.0, b=0.5, mu=0.1, eps0=0.15, nu_cap=0.45,
                     omega_branch=-1, Mmax=64, Nmax=300)
om1 = float(np.sqrt(1 + params.mu))
for eps, note in [(0.002, "generic"), (0.03, "generic"),
                  ((om1 * 4 - 4) / 4, "on Omega*4 = 2^2"),
                  ((om1 * 24 - 25) / 24, "on Omega*24 = 5^2"),
                  ((om1 * 62 - 64) / 62, "on Omega*62 = 8^2")]:
    nu, _ = solve_nu(params, eps, 2)
    print(f"  eps = {eps:.7f} ({note:>18}): accepted? "
          f"{check_cantor(eps, nu, params)}")
print("(excluded intervals shrink like gamma n^-5, so only exact hits reject)")

print("\n== excluded amplitude fraction shrinks with the window ==")
pw = params.with_(eps0=0.35)
for w in (0.08, 0.02, 0.005):
    rep = measure_cantor(pw, w, 200, K=2)
    print(f"  window (0, {w:5}): relative excluded = "
          f"{rep.excluded_with_tail / w:.3e}   ({rep.worst['intervals']} intervals)")
