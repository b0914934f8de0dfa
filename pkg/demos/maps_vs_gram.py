"""
Explicit maps reproduce the context-aware gram matrix
=====================================================

The recursive kernel ``K = S + gamma * sum_c P_c K P_c'`` can be computed
either on the full cell-by-cell gram matrix or through explicit finite
dimensional maps. Here both routes are run on two random images and
compared entry by entry.
"""

import numpy as np

from ctxkernel import ContextStack, GridSpec, gram_fixed_point, map_dims
from ctxkernel.kernelcore import map_layers, pooled_maps

rng = np.random.default_rng(0)
spec = GridSpec(3, 4)
n, d0, depth = spec.n_cells, 3, 3

V = rng.random((2, n, d0))
ctx = ContextStack.handcrafted(spec, depth=depth, gamma=0.5)

# explicit route: top-layer maps for every cell of both images
top = map_layers(V, ctx, keep_layers=False)[-1].reshape(2 * n, -1)
print("map dimensions per layer:", map_dims(d0, spec.sectors, depth))

# gram route: recursion on the (2n x 2n) matrix
flat = V.reshape(2 * n, d0)
K = gram_fixed_point(flat @ flat.T, ctx, n_images=2)

print("max |<Phi_x, Phi_y> - K_xy|:", np.abs(top @ top.T - K).max())

# the image-level convolution kernel is a block sum of K
pooled = pooled_maps(V, ctx)
print("pooled inner product:", pooled[0] @ pooled[1])
print("block sum of K:      ", K[:n, n:].sum())
