"""The two small numerical kernels: Gram assembly and the safe-control projection.

Run with ``python demos/certificates.py``.
"""

import numpy as np

from sisynth import Poly, assemble, leading_minors, monomial_basis
from sisynth.gram import reconstruct
from sisynth.verify import project_control

x, y = Poly.variables(2)
p = (x ** 2 + x * y - 1) ** 2 + (y - 2) ** 2 + 1
G = assemble(p, monomial_basis(p))
print("basis", G.basis.entries)
print("Gram matrix\n", np.round(G.values, 3))
print("leading minors", np.round(leading_minors(G.values), 4))
print("reconstructs exactly:", reconstruct(G) == p)
# p is a sum of squares, yet routing each monomial to one fixed entry puts -2
# on the x diagonal: the fixed assignment trades SOS freedom for linearity,
# which is why the synthesis carries free multipliers in every certificate
print("positive definite:", bool(np.all(leading_minors(G.values) > 0)))

# safe control: keep u close to the reference while forcing phi_dot <= 0
Lf, Lg = 0.4, np.array([-1.0, 0.5])
u_ref = np.array([-2.0, 0.8])
u, infeasible = project_control(Lf, Lg, u_ref, [-1, -1], [1, 1])
print(f"u_ref {u_ref} -> u {u}, phi_dot {Lf + Lg @ u:.3g}, infeasible {infeasible}")
