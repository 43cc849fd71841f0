"""
Random permutation representations
==================================

Uniform homomorphisms into S_n give random degree-n covers.  For the free
group the adjacency element has norm 2 sqrt 3 in the regular representation;
on the new part of a random cover it should come close.
"""

import math

import numpy as np

from anosovlab import randrep as R

# Exact counts of surface-group homomorphisms, and the brute-force check
print([R.hom_count_surface(n, 2) for n in range(1, 7)])
print(R.enumerate_surface_homs(3, 2))

# Ball compressions of the regular representation increase towards the norm
w = R.GroupAlgebraElement.adjacency(2)
for r in (2, 4, 6, 8):
    print(r, R.regular_norm_ball(w, "free", r).value, "limit", R.kesten_norm(2))

# Norms on the standard representation of random covers
for n in (50, 200, 500):
    hom = R.sample_hom_free(n, 2, seed=n)
    print(n, R.rep_norm(w, hom).value, R.new_spectrum(hom, w, 2))

# Schreier graphs look like trees locally and have logarithmic diameter
for n in (100, 400):
    rep = R.schreier_diagnostics(R.sample_hom_free(n, 2, seed=1), 4)
    print(n, rep.diameter, round(rep.diameter / math.log(n), 2), rep.fractions)

print(R.resonance_map(0.0), R.resonance_map(1.25))
