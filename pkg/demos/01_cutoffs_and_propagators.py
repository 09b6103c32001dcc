"""Dyadic cutoffs and mode propagators.

The linearized beam operator acts diagonally on modes e^{i n Omega t} sin(mx)
with symbol -Omega^2 n^2 + omega_m^2, omega_m = sqrt(m^4 + mu).  Near
resonances Omega |n| ~ omega_m the inverse blows up; a smooth dyadic
partition classifies how small each divisor is, and every estimate downstream
is organized around those scale labels.
"""
import numpy as np

from lindbeam import ModelParams, chi_h, omega, propagator, x_divisor
from lindbeam.spectrum import admissible_h_for, chi_support, in_lambda

params = ModelParams(mu=0.01, eps0=0.05)
g = params.gamma

print("== partition of unity ==")
xs = np.geomspace(g * 2 ** -12, 30.0, 9)
H = 16
for x in xs:
    total = float(chi_h(x, -1, g)) + sum(float(chi_h(x, h, g)) for h in range(H + 1))
    labels = admissible_h_for(x, g)
    print(f"  |x| = {x:10.3e}   sum_h chi_h = {total:.15f}   live labels {labels}")

print("\n== scale shells ==")
for h in range(-1, 6):
    lo, hi = chi_support(h, g)
    print(f"  h = {h:2d}: support {lo:9.3e} .. {hi if hi != float('inf') else float('inf'):9.3e}")

print("\n== divisors along the near-resonant ladder m^2 ~ Omega n ==")
eps = 0.004
for m in (1, 3, 5, 7):
    n = round(float(omega(m, params.mu)) / (float(omega(1, params.mu)) + eps))
    if n < 2:
        continue
    x = x_divisor(n, m, params, eps)
    print(f"  mode (n={n:3d}, m={m}):  x = {x:+.6f}   near-resonant zone: "
          f"{in_lambda(n, m, params)}   labels {admissible_h_for(x, g)}")

print("\n== propagators ==")
for (n, m) in [(1, 1), (0, 3), (2, 1), (9, 3)]:
    print(f"  g({n:2d},{m}) = {propagator(n, m, params, eps):+.6e}")
print("\nThe primary mode (±1,1) carries no divisor: its propagator is 1 by")
print("convention and its amplitude is fixed by a separate scalar equation.")
