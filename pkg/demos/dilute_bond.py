"""
A single stronger bond in a homogeneous lattice
===============================================

Start from unit conductances on the periodic box and raise one bond to 2.
The first-order coefficient at ``p = 0`` is then deterministic, and the
single-edge update of the corrector reduces to a rank-one formula involving
the effective resistance between neighbouring sites.
"""

import numpy as np

from perturbhom import DistributionSpec, TorusGeometry, a1_spatial_average, dilute_bond_coefficient, sample_coupled
from perturbhom.homogenize import torus_neighbor_resistance

a, b = 1.0, 2.0

# direct route: forced-edge periodic correctors on the sampled environment
# closed form: (b - a) / (1 + (b - a) h_n) with h_n from a Green column
print(f"{'n':>4} {'direct':>12} {'closed form':>12} {'h_n':>10} {'Foster':>10}")
for n in (2, 4, 8, 16, 32):
    geom = TorusGeometry(2, n)
    env = sample_coupled(geom, DistributionSpec.point_mass(a), DistributionSpec.point_mass(b), seed=0)
    direct = a1_spatial_average(env, 0.0)
    closed, h = dilute_bond_coefficient(a, b, geom)
    print(f"{n:>4} {direct:>12.8f} {closed:>12.8f} {h:>10.6f} {torus_neighbor_resistance(geom):>10.6f}")

# On the infinite square lattice the neighbour resistance is 1/2, hence the limit
print("n -> infinity:", (b - a) / (1 + (b - a) * 0.5))

# Only the bond aligned with xi contributes: with xi = e_2 the roles swap,
# and the sum over both origin bonds is unchanged by symmetry.
geom = TorusGeometry(2, 8)
env = sample_coupled(geom, DistributionSpec.point_mass(a), DistributionSpec.point_mass(b), seed=0)
print("xi = e_1:", a1_spatial_average(env, 0.0, np.array([1.0, 0.0])))
print("xi = e_2:", a1_spatial_average(env, 0.0, np.array([0.0, 1.0])))
