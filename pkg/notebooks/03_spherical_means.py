"""
The spherical mean operator
===========================

L_t averages a function over the sphere of radius t.  On the hyperbolic
plane its L^2 norm is the spherical function P_{-1/2}(cosh t), which decays
like t e^{-t/2}.
"""

import numpy as np

from anosovlab import geometry as G
from anosovlab import spherical as S

hyp = G.ConstantCurvature(1.0)
ts = np.arange(1.0, 7.0)
for t in ts:
    est = S.sm_norm_power(hyp, t)
    print(f"t={t:.0f}  power iteration {est.norm:.5f}  exact {S.exact_norm_hyperbolic(2, t):.5f}"
          f"  ({est.iterations} iterations)")

# A test-function lower bound from an annulus
lb = S.sm_norm_lower(hyp, 0j, 4.0, 10_000, seed=1)
print("lower bound at t=4:", lb.value, "+-", lb.stderr)

# The two forms of L_t on a perturbed metric agree
pert = G.Perturbed(G.default_group(), 0.05)
f = lambda z: np.exp(-np.abs(z) ** 2)
print(S.apply_spherical_mean(pert, f, 0.2, 1.5, 64, "direction"),
      S.apply_spherical_mean(pert, f, 0.2, 1.5, 64, "surface"))

# Thin triangles and divergence of geodesics
rng = np.random.default_rng(0)
print("largest inscribed triple:",
      max(S.gromov_delta(hyp, *S._random_points(rng, 3, 8.0)) for _ in range(100)),
      "bound log 3 =", np.log(3))
w = S.direction_pair_at_separation(hyp, 0.1j, 0.3, 8.0, 0.5)
print("divergence rate:", S.geodesic_divergence(hyp, 0.1j, 0.3, w, 8.0, 0.5).rate)
