"""
Exact answers on tiny tori
==========================

On a ring the periodic cell problem is a series circuit and the energy is
the harmonic mean of the conductances.  On a 3x3 torus every configuration
of a two-valued medium can be enumerated, which gives exact expectations
to compare the Monte Carlo estimators with.
"""

import math

from perturbhom import DistributionSpec, TorusGeometry, a1_mc, ahom_periodic_mc
from perturbhom.enumeration import exact_a1, exact_ahom

# %%
# Ring of 9 bonds, each 1 or 4 with equal probability
ring = TorusGeometry(1, 4)
law = DistributionSpec.two_point(1.0, 4.0, 0.5)
closed = sum(math.comb(9, k) / 2**9 * 9 / (k + (9 - k) / 4) for k in range(10))
est = ahom_periodic_mc(law, law, 0.0, ring, samples=1000, seed=0)
print(f"ring: closed form {closed:.6f}, enumeration {exact_ahom(law, law, 0.0, ring):.6f}, "
      f"Monte Carlo {est.mean:.6f} +- {est.std_error:.6f}")

# %%
# 3x3 torus, base law {1, 3}, replacement 2
box = TorusGeometry(2, 1)
s0, s1 = DistributionSpec.two_point(1.0, 3.0, 0.5), DistributionSpec.point_mass(2.0)
print(f"3x3 energy at p=0: exact {exact_ahom(s0, s1, 0.0, box):.6f}")
exact = exact_a1(s0, s1, 0.0, box)
mc = a1_mc(s0, s1, 0.0, box, samples=2000, seed=0)
print(f"3x3 first-order coefficient: exact {exact:.6f}, Monte Carlo {mc.mean:.6f} +- {mc.std_error:.6f}")
