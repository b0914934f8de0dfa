"""
Cells, sectors and the handcrafted context
==========================================

A 3x3 grid with radius-1 neighborhoods split into left/right/up/down
sectors. Each cell spreads its weight evenly over all of its neighbors, so
corner cells (two neighbors) weigh each one 0.5 while the center cell (four
neighbors) weighs each one 0.25.
"""

import numpy as np

from ctxkernel import ContextStack, GridSpec, build_adjacency

spec = GridSpec(rows=3, cols=3, radius=1, sectors=4)
adj = build_adjacency(spec)

# neighbor counts per cell, laid out on the grid
print("degrees:\n", adj.degrees().reshape(spec.rows, spec.cols))

# which sector each neighbor of the center falls in
center = spec.cell_index(1, 1)
for c, name in enumerate(spec.sector_names()):
    hits = [tuple(int(v) for v in spec.cell_coords(j)) for j in np.flatnonzero(adj.matrices[c, center])]
    print(f"{name:>5}: {hits}")

ctx = ContextStack.handcrafted(adj, depth=3, gamma=1.0)
print("row sums of layer 0 (summed over sectors):",
      ctx.weights[0].sum(axis=(0, 2)))
print("contraction bound:", ctx.contraction_bound())
