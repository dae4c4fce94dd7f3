"""Jones beta numbers of a wavy graph against the Cantor set, level by level.

On the graph the coefficients shrink once cubes are smaller than the wavelength; on the
Cantor set they stay of order one at every scale.
"""
import numpy as np

from rieszrect.generators import gen_cantor_four_corner
from rieszrect.geometry import beta_number, dyadic_lattice
from rieszrect.graphs import make_graph_function, sample_graph_measure

A = make_graph_function([{"freq": [2], "amp": [0.02]}], n=1, d=2, box=(0.0, 1.0), h=2 ** -10)
curves = {"graph": sample_graph_measure(A), "cantor": gen_cantor_four_corner(6)}
for name, mu in curves.items():
    lat = dyadic_lattice(mu, range(1, 6))
    print(name)
    for j in range(1, 6):
        vals = [beta_number(mu, Q, 2).value for Q in lat.at_level(j) if Q.atoms3.size > 2]
        print(f"  level {j}: median beta_2 {np.median(vals):.4f} over {len(vals)} cubes")
