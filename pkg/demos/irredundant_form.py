"""
Irredundant max-min form of a one-dimensional PWA function
==========================================================

Four affine literals on [0, 7] and one sample in each of the six regions
where the ordering of the literals is constant.  The sampled lattice has six
terms; after simplification two remain and the function is unchanged.
"""

import numpy as np

from lattice_empc import AffinePiece, build_lattice, eval_lattice, simplify

a = np.array([1.0, -1.0, 2.0, 0.5])
b = np.array([0.0, 6.0, -7.0, 1.0])
xs = [1.0, 2.5, 3.2, 4.0, 5.0, 6.0]
active = [0, 0, 1, 1, 2, 3]  # literal equal to the function at each sample

samples = [(np.array([x]), AffinePiece([[a[j]]], [b[j]])) for x, j in zip(xs, active)]
lat = build_lattice(samples)
name = lambda t: "min{" + ",".join(f"l{j + 1}" for j in t) + "}"  # noqa: E731
print("sampled terms:   ", ", ".join(name(t) for t in lat.terms))

s = simplify(lat)
# simplified indices point into the compacted literal table
orig = [int(np.flatnonzero((a == s.a[j, 0]) & (b == s.b[j]))[0]) for j in range(s.n_literals)]
print("simplified terms:", ", ".join(name([orig[j] for j in t]) for t in s.terms))

grid = np.linspace(0, 7, 1000)
gap = max(abs(eval_lattice(s, [x]) - eval_lattice(lat, [x])) for x in grid)
print(f"largest difference on a 1000-point grid: {gap:.1e}")
