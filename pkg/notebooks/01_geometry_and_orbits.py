"""
Geodesics on the Bolza surface
==============================

The genus-2 surface of maximal symmetry, as a quotient of the Poincare disk,
with its constant curvature metric and a small periodic bump.
"""

import numpy as np

from anosovlab import geometry as G
from anosovlab import orbits as O

group = G.bolza_group()
print("genus", group.genus, "generators", group.rank)
print("inradius", group.inradius, "circumradius", group.circumradius)

# Two metrics on the same surface
hyp = G.ConstantCurvature(1.0, group)
pert = G.Perturbed(group, 0.05)
print("perturbed curvature lies in", -pert.kappa_max ** 2, -pert.kappa_min ** 2)

# The numerical flow agrees with the closed-form Moebius flow
p = G.PhasePoint(0.2 + 0.1j, 1.0)
print(G.geodesic_flow(hyp, p, 5.0))
print(G.exact_flow(hyp, p, 5.0))

# Jacobi fields grow like sinh t at curvature -1
ts = np.linspace(0.5, 5.0, 4)
j, dj = G.jacobi_path(hyp, p, ts, G.JacobiState(0.0, 1.0))
print(np.round(j, 6), np.round(np.sinh(ts), 6))

# Closed geodesics up to length 6: counted by length
classes = O.enumerate_geodesics(group, 6.0)
lengths = np.array([c.length for c in classes])
print(len(classes), "classes; the shortest has length", lengths.min())
print("systoles:", np.sum(np.abs(lengths - lengths.min()) < 1e-9))

# Close a few of them on the perturbed metric by multiple shooting
for c in classes[:4]:
    o = O.close_geodesic(pert, c.word)
    print(O.word_to_str(c.word), round(c.length, 5), "->", round(o.length, 5),
          "Lyapunov", round(o.unstable_exponent, 5), "det P", round(np.linalg.det(o.poincare), 12))
