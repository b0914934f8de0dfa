import numpy as np
import pytest

from ctxkernel import svm
from ctxkernel.featio import LabelMatrix
from ctxkernel.grid import GridSpec, build_adjacency
from ctxkernel.kernelcore import ContextStack, map_layers


def random_context(rng, spec: GridSpec, depth: int, gamma: float, low=-1.0, high=1.0) -> ContextStack:
    """Sign-unconstrained context with uniform random values on the handcrafted mask."""
    adj = build_adjacency(spec)
    weights = rng.uniform(low, high, size=(depth,) + adj.mask.shape) * adj.mask
    return ContextStack(weights, adj.mask, gamma, spec)


def random_spec(rng, max_side=3, radius=1) -> GridSpec:
    return GridSpec(int(rng.integers(1, max_side + 1)), int(rng.integers(1, max_side + 1)), radius, 4)


def end_to_end_objective(V, ctx, model, labels):
    pooled = map_layers(V, ctx, keep_layers=False)[-1].sum(axis=1)
    return svm.objective(model, pooled, labels)


def random_labels(rng, N, K):
    Y = np.where(rng.random((N, K)) < 0.5, 1, -1)
    Y[0], Y[1] = 1, -1
    return LabelMatrix(Y, [f"k{k}" for k in range(K)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gradient_instance(seed):
    """Random small instance for end-to-end gradient checks: (V, ctx, model, labels)."""
    rng = np.random.default_rng(seed)
    spec = GridSpec(int(rng.integers(1, 4)), int(rng.integers(2, 4)), 1, 4)
    depth = int(rng.integers(1, 4))
    gamma = float(rng.choice([0.3, 1.0]))
    d0 = int(rng.integers(1, 4))
    N, K = 5, 2
    ctx = random_context(rng, spec, depth, gamma)
    V = rng.standard_normal((N, spec.n_cells, d0))
    labels = random_labels(rng, N, K)
    pooled = map_layers(V, ctx, keep_layers=False)[-1].sum(axis=1)
    W = rng.standard_normal((K, pooled.shape[1]))
    W /= np.median(np.abs(pooled @ W.T))
    model = svm.SvmModel(W, rng.uniform(0.5, 2.0, K), labels.concept_names)
    return V, ctx, model, labels


def finite_difference_context_grad(V, ctx, model, labels, eps=1e-5):
    """Central differences of the end-to-end objective over every masked context entry."""
    fd = np.zeros(ctx.weights.shape)
    base = ctx.weights
    for t in range(ctx.depth):
        for c, x, y in zip(*np.nonzero(ctx.mask)):
            w = base.copy()
            w[t, c, x, y] += eps
            up = end_to_end_objective(V, ctx.with_weights(w), model, labels)
            w[t, c, x, y] -= 2 * eps
            down = end_to_end_objective(V, ctx.with_weights(w), model, labels)
            fd[t, c, x, y] = (up - down) / (2 * eps)
    return fd


def near_kink(V, ctx, model, labels, tol=1e-6):
    pooled = map_layers(V, ctx, keep_layers=False)[-1].sum(axis=1)
    margins = labels.Y * svm.score(model, pooled)
    return bool(np.any(np.abs(1.0 - margins) < tol))
