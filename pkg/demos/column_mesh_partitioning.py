"""Columns on the z-curve, and why contiguous segments make good partitions."""
import numpy as np

from sembox.mesh import (build_box_mesh, morton_encode, partition_columns,
                         partition_quality, summary_text)

# the z-curve visit order on a 4x4 grid
print("Morton indices on a 4x4 grid (rows = y):")
for j in range(3, -1, -1):
    print("  " + " ".join(f"{morton_encode(i, j, 2):2d}" for i in range(4)))

# a box mesh: 8x8 columns, 5 layers each, elements contiguous per column
mesh = build_box_mesh(8, 8, 5, 1000.0, 1000.0, 1000.0)
print()
print(summary_text(mesh))

# contiguous Morton segments give compact partitions...
parts = partition_columns(mesh, 4)
ratios, rmax, rmean = partition_quality(parts, mesh)
print("\nMorton quarters, boundary faces per element:", np.round(ratios, 3))

# ...compare with 1D strips of the same column count
order = np.lexsort((mesh.col_ij[:, 0], mesh.col_ij[:, 1]))
strip = np.empty(mesh.n_columns, dtype=int)
strip[order] = np.arange(mesh.n_columns) // 16
grid = {tuple(ij): c for c, ij in enumerate(mesh.col_ij)}
faces = np.zeros(4)
for c, (i, j) in enumerate(mesh.col_ij):
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = grid.get((i + di, j + dj))
        if nb is not None and strip[nb] != strip[c]:
            faces[strip[c]] += mesh.col_layers[c]
counts = np.array([(strip == s).sum() * 5 for s in range(4)])
print("1D strips,      boundary faces per element:", np.round(faces / counts, 3))

# balance with ragged columns: weights are layers, columns stay whole
ragged = build_box_mesh(4, 4, 1, 1.0, 1.0, 1.0,
                        layer_counts=np.array([1, 2, 3, 4] * 4))
for P in (2, 3, 4):
    sizes = [p.n_elements for p in partition_columns(ragged, P)]
    print(f"ragged mesh into {P}: element counts {sizes}")
