"""A tour of the 1D building blocks: nodes, weights, derivatives, filter.

Everything the 3D solver does is a tensor product of the operators shown
here, so this is the best place to build intuition.
"""
import numpy as np

from sembox.reference_element import (ReferenceElement, boyd_vandeven_damping,
                                      lobatto_points)

# Lobatto nodes cluster toward the interval ends; that clustering is what
# shrinks the stable timestep at high order.
for p in (2, 3, 4, 7):
    x, w = lobatto_points(p)
    print(f"p={p}: min gap {np.diff(x).min():.4f}, sum of weights {w.sum():.15f}")

# quadrature: exact through degree 2p-1, visibly wrong one degree later
p = 3
x, w = lobatto_points(p)
for k in (2, 4, 5, 6):
    exact = 0.0 if k % 2 else 2.0 / (k + 1)
    print(f"integral of x^{k}: rule {w @ x**k:+.12f}  exact {exact:+.12f}")

# the differentiation matrix reproduces polynomial derivatives at the nodes
ref = ReferenceElement.create(3)
D = ref.diff_matrix
print("\nmax |D x^3 - 3x^2| =", np.abs(D @ x**3 - 3 * x**2).max())
print("row sums (derivative of a constant):", np.abs(D.sum(axis=1)).max())

# the low-pass filter: transfer values per Legendre mode
print("\nerfc-log damping across the cutoff-to-top range:")
for theta in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"  theta={theta:4.2f}  damping={boyd_vandeven_damping(theta, 12):.6f}")

# as a matrix it leaves constants alone and shaves the top mode
F = ref.filter_matrix
print("\nfilter on a constant:", np.abs(F @ np.ones(4) - 1).max())
Vi, V = ref.vandermonde_inv, ref.vandermonde
print("mode amplitudes of filtered P3 samples:", np.round(Vi @ (F @ V[:, 3]), 6))
