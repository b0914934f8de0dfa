"""Recursive explicit context-aware kernel maps.

For every cell ``x`` of an image the map of layer ``t + 1`` concatenates the
cell's own content with, for each sector ``c``, the ``P_c``-weighted sum of
the layer-``t`` maps of its neighbors, scaled by ``sqrt(gamma)``::

    Phi[t+1][x] = [ V[x], sqrt(g) * sum_x' P_0[x, x'] Phi[t][x'], ..., sqrt(g) * sum_x' P_{C-1}[x, x'] Phi[t][x'] ]

Inner products of these maps reproduce the gram recursion
``K[t+1] = S + g * sum_c P_c K[t] P_c'`` exactly, and summing the top
layer over cells gives the image-level map whose inner products are the
convolution kernel.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .featio import ImageFeatures, stack_cells
from .grid import AdjacencySet, GridSpec, build_adjacency

__all__ = [
    "ContextStack",
    "MapStack",
    "map_dims",
    "map_layers",
    "pooled_maps",
    "forward_map",
    "forward_batch",
    "gram_fixed_point",
    "convolution_kernel",
    "pooled_gram",
    "context_to_dict",
    "context_from_dict",
]

logger = logging.getLogger(__name__)


@dataclass
class ContextStack:
    """Learnable per-layer, per-sector adjacency weights.

    Attributes
    ----------
    weights : ndarray, shape (T, C, n, n)
        ``weights[t, c]`` is ``P_c`` of layer ``t``; zero outside ``mask``.
    mask : ndarray of bool, shape (C, n, n)
        Fixed support shared by all layers.
    gamma : float
        Context mixing ratio (>= 0).
    spec : GridSpec, optional
        Grid the context was built for.
    """

    weights: np.ndarray
    mask: np.ndarray
    gamma: float = 1.0
    spec: GridSpec | None = None

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.mask = np.array(self.mask, dtype=bool)
        self.gamma = float(self.gamma)
        if self.weights.ndim != 4:
            raise ShapeMismatchError(f"weights must have shape (T, C, n, n), got {self.weights.shape}")
        T, C, n, n2 = self.weights.shape
        if T < 1 or n != n2:
            raise ShapeMismatchError(f"weights must have shape (T>=1, C, n, n), got {self.weights.shape}")
        if self.mask.shape != (C, n, n):
            raise ShapeMismatchError(f"mask shape {self.mask.shape} does not match weights {self.weights.shape}")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("context weights must be finite")
        if np.any(self.weights[:, ~self.mask] != 0):
            raise ValueError("context weights are nonzero outside the adjacency mask")
        self.weights[:, ~self.mask] = 0.0  # drop signed zeros
        if self.spec is not None and (self.spec.n_cells, self.spec.sectors) != (n, C):
            raise ShapeMismatchError(f"grid {self.spec} does not match weights {self.weights.shape}")
        self.weights.setflags(write=False)
        self.mask.setflags(write=False)

    @classmethod
    def handcrafted(cls, adjacency: AdjacencySet | GridSpec, depth: int = 3, gamma: float = 1.0):
        """Replicate the handcrafted adjacency on every one of ``depth`` layers."""
        if isinstance(adjacency, GridSpec):
            adjacency = build_adjacency(adjacency)
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        weights = np.broadcast_to(adjacency.matrices, (depth,) + adjacency.matrices.shape)
        return cls(weights, adjacency.mask, gamma, adjacency.spec)

    @property
    def depth(self) -> int:
        return self.weights.shape[0]

    @property
    def sectors(self) -> int:
        return self.weights.shape[1]

    @property
    def n_cells(self) -> int:
        return self.weights.shape[2]

    def with_weights(self, weights) -> "ContextStack":
        """Copy with new weights; entries outside the mask are zeroed."""
        weights = np.where(self.mask[None], weights, 0.0)
        return ContextStack(weights, self.mask, self.gamma, self.spec)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.gamma).tobytes())
        h.update(np.asarray(self.weights.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        h.update(np.packbits(self.mask).tobytes())
        return h.hexdigest()

    def contraction_bound(self) -> float:
        """Upper bound ``gamma * max_t sum_c ||P_c||_1 ||P_c||_inf`` on the gram update's gain.

        Below 1 the gram recursion is a contraction; at or above 1 it may
        still converge but nothing guarantees it.
        """
        w = np.abs(self.weights)
        norm1 = w.sum(axis=2).max(axis=2)
        norm_inf = w.sum(axis=3).max(axis=2)
        return float(self.gamma * (norm1 * norm_inf).sum(axis=1).max())

    def warn_if_not_contractive(self):
        bound = self.contraction_bound()
        if bound >= 1.0:
            logger.warning(
                "context gain bound %.4g >= 1: gram recursion is not provably contractive "
                "(gamma=%.4g, depth=%d)", bound, self.gamma, self.depth,
            )
        return bound


@dataclass
class MapStack:
    """Explicit maps of one image.

    ``per_layer[t]`` has shape ``(n, D_t)``. When built without retaining
    layers only the top layer is kept and ``complete`` is False.
    """

    per_layer: list
    pooled: np.ndarray
    ctx_digest: str = ""
    image_id: str = ""
    complete: bool = True

    @property
    def top(self) -> np.ndarray:
        return self.per_layer[-1]


def map_dims(d0: int, sectors: int, depth: int) -> list[int]:
    """Map dimension of every layer: ``D_0 = d0``, ``D_{t+1} = d0 + C * D_t``."""
    dims = [d0]
    for _ in range(depth):
        dims.append(d0 + sectors * dims[-1])
    return dims


def _check_cells(V: np.ndarray, ctx: ContextStack):
    if V.ndim != 3 or V.shape[1] != ctx.n_cells:
        raise ShapeMismatchError(
            f"cell features of shape {V.shape} do not match a context over {ctx.n_cells} cells"
        )


def map_layers(V, ctx: ContextStack, keep_layers: bool = True) -> list[np.ndarray]:
    """All map layers for a batch of images.

    Parameters
    ----------
    V : ndarray, shape (N, n, d0)
        Cell features after the initial map.
    ctx : ContextStack

    Returns
    -------
    list of ndarray
        ``layers[t]`` has shape ``(N, n, D_t)``. With ``keep_layers=False``
        only the top layer is returned (as a one-element list).
    """
    V = np.asarray(V, dtype=np.float64)
    _check_cells(V, ctx)
    scale = np.sqrt(ctx.gamma)
    phi = V
    layers = [V] if keep_layers else []
    for t in range(ctx.depth):
        # (C, n, n) x (N, n, D) -> (N, n, C, D)
        ctx_blocks = np.einsum("cxy,pyd->pxcd", ctx.weights[t], phi) * scale
        N, n = phi.shape[:2]
        phi = np.concatenate([V, ctx_blocks.reshape(N, n, -1)], axis=2)
        if keep_layers:
            layers.append(phi)
    if not keep_layers:
        layers.append(phi)
    return layers


def pooled_maps(V, ctx: ContextStack) -> np.ndarray:
    """Sum-pooled top-layer maps, shape ``(N, D_T)``."""
    return map_layers(V, ctx, keep_layers=False)[-1].sum(axis=1)


def forward_map(img: ImageFeatures, ctx: ContextStack, keep_layers: bool = True) -> MapStack:
    """Explicit maps of a single image; touches no other image."""
    V = img.cells[None] if isinstance(img, ImageFeatures) else np.asarray(img, dtype=np.float64)[None]
    layers = map_layers(V, ctx, keep_layers)
    return MapStack(
        per_layer=[layer[0] for layer in layers],
        pooled=layers[-1][0].sum(axis=0),
        ctx_digest=ctx.digest(),
        image_id=getattr(img, "image_id", ""),
        complete=keep_layers,
    )


def forward_batch(images, ctx: ContextStack, keep_layers: bool = True) -> list[MapStack]:
    """:func:`forward_map` over many images, vectorized."""
    V = stack_cells(images)
    layers = map_layers(V, ctx, keep_layers)
    pooled = layers[-1].sum(axis=1)
    digest = ctx.digest()
    ids = [img.image_id for img in images] if not isinstance(images, np.ndarray) else [""] * len(V)
    return [
        MapStack([layer[p] for layer in layers], pooled[p], digest, ids[p], keep_layers)
        for p in range(len(V))
    ]


def gram_fixed_point(S, ctx: ContextStack, n_images: int = 1) -> np.ndarray:
    """Run the gram recursion ``K <- S + gamma * sum_c P_c K P_c'`` for ``ctx.depth`` steps.

    ``S`` is the context-free similarity over all ``n_images * n`` cells, with
    cells of image ``p`` occupying rows ``p*n : (p+1)*n``. Each ``P_c`` acts
    block-diagonally (one identical block per image), layer ``t`` using
    ``ctx.weights[t]``.
    """
    S = np.asarray(S, dtype=np.float64)
    n = ctx.n_cells
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatchError(f"S must be square, got shape {S.shape}")
    if S.shape[0] != n_images * n:
        raise ShapeMismatchError(f"S has {S.shape[0]} rows; {n_images} images x {n} cells expected")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if S.size and np.max(np.abs(S - S.T)) > 1e-10 * scale:
        raise ValueError("S is not symmetric")
    eye = np.eye(n_images)
    K = S
    for t in range(ctx.depth):
        acc = np.zeros_like(S)
        for c in range(ctx.sectors):
            P = np.kron(eye, ctx.weights[t, c])
            acc += P @ K @ P.T
        K = S + ctx.gamma * acc
    return K


def convolution_kernel(ma: MapStack, mb: MapStack) -> float:
    """Image-level kernel value: inner product of the two pooled maps."""
    a, b = np.asarray(ma.pooled), np.asarray(mb.pooled)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"pooled map dimensions differ: {a.shape} vs {b.shape}")
    return float(a @ b)


def pooled_gram(pooled) -> np.ndarray:
    """Gram matrix of pooled maps, shape ``(N, N)``."""
    pooled = np.asarray(pooled, dtype=np.float64)
    return pooled @ pooled.T


def context_to_dict(ctx: ContextStack) -> dict:
    """JSON-ready description of a context: grid geometry plus every masked edge per layer and sector.

    Edges are listed for the whole mask (including entries learned down to
    zero) so :func:`context_from_dict` recovers the support exactly.
    """
    spec = ctx.spec
    names = spec.sector_names() if spec is not None else tuple(f"s{c}" for c in range(ctx.sectors))
    layers = []
    for t in range(ctx.depth):
        sectors = []
        for c in range(ctx.sectors):
            xs, ys = np.nonzero(ctx.mask[c])
            edges = [
                {"from_cell": int(x), "to_cell": int(y), "weight": float(ctx.weights[t, c, x, y])}
                for x, y in zip(xs, ys)
            ]
            sectors.append({"sector": c, "name": names[c], "edges": edges})
        layers.append({"layer": t, "sectors": sectors})
    grid = None
    if spec is not None:
        grid = {"rows": spec.rows, "cols": spec.cols, "radius": spec.radius, "sectors": spec.sectors}
    return {
        "format": "ctxkernel-context",
        "version": 1,
        "grid": grid,
        "n_cells": ctx.n_cells,
        "gamma": ctx.gamma,
        "depth": ctx.depth,
        "layers": layers,
    }


def context_from_dict(doc: dict) -> ContextStack:
    if doc.get("format") != "ctxkernel-context" or doc.get("version") != 1:
        raise ValueError("not a version-1 ctxkernel context document")
    grid = doc.get("grid")
    spec = GridSpec(**grid) if grid else None
    n, T = int(doc["n_cells"]), int(doc["depth"])
    C = len(doc["layers"][0]["sectors"]) if T else 0
    weights = np.zeros((T, C, n, n))
    masks = np.zeros((T, C, n, n), dtype=bool)
    for layer in doc["layers"]:
        t = layer["layer"]
        for sector in layer["sectors"]:
            c = sector["sector"]
            for e in sector["edges"]:
                masks[t, c, e["from_cell"], e["to_cell"]] = True
                weights[t, c, e["from_cell"], e["to_cell"]] = e["weight"]
    if not np.all(masks == masks[0]):
        raise ValueError("layers disagree on the adjacency support")
    return ContextStack(weights, masks[0], doc["gamma"], spec)
