"""Context learning: hinge-loss backpropagation into the adjacency weights.

Training alternates two phases until the objective settles:

1. with the context fixed, refit the one-vs-rest SVMs on the pooled maps;
2. with the SVMs fixed, take a few backtracking gradient steps on the
   masked adjacency entries of every layer.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import svm
from .errors import DivergenceError, FormatError, ShapeMismatchError, StaleMapError
from .featio import LabelMatrix, stack_cells
from .grid import GridSpec
from .kernelcore import ContextStack, MapStack, map_dims, map_layers

__all__ = [
    "ContextGradient",
    "LearnConfig",
    "LogRow",
    "TrainState",
    "loss_and_grad_pooled",
    "backward_context",
    "alternate_optimize",
    "checkpoint_to_bytes",
    "checkpoint_from_bytes",
    "save_checkpoint",
    "load_checkpoint",
    "write_training_log",
]

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CTXC"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("outer_iter", "E", "svm_objective", "hinge_sum", "backtrack_halvings")


@dataclass
class ContextGradient:
    """``dE/dP`` for every layer and sector; zero outside the mask."""

    weights: np.ndarray  # (T, C, n, n)
    mask: np.ndarray

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.weights))) if self.weights.size else 0.0


@dataclass(frozen=True)
class LearnConfig:
    gamma: float = 1.0
    depth: int = 3
    svm_cost: float = 1.0
    costs: tuple | None = None
    eta: float = 1e-3
    inner_steps: int = 10
    max_outer: int = 100
    tol: float = 1e-4
    bias: bool = False
    max_halvings: int = 10
    svm_tol: float = 1e-6
    svm_max_epochs: int = 1000

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not self.svm_cost > 0:
            raise ValueError(f"svm_cost must be > 0, got {self.svm_cost}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.inner_steps < 0 or self.max_outer < 1 or self.max_halvings < 0:
            raise ValueError("inner_steps >= 0, max_outer >= 1 and max_halvings >= 0 required")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")

    def cost_vector(self, n_concepts: int):
        return self.svm_cost if self.costs is None else np.asarray(self.costs, dtype=np.float64)


@dataclass(frozen=True)
class LogRow:
    outer_iter: int
    E: float
    svm_objective: float
    hinge_sum: float
    backtrack_halvings: int


@dataclass
class TrainState:
    ctx: ContextStack
    model: svm.SvmModel | None
    objective_history: list = field(default_factory=list)
    outer_iter: int = 0
    log: list = field(default_factory=list)


def loss_and_grad_pooled(model: svm.SvmModel, pooled, labels: LabelMatrix, costs=None):
    """Objective and its gradient with respect to each pooled map.

    Returns
    -------
    E : float
        ``sum_k 0.5 ||w_k||^2 + C_k sum_p hinge``.
    G : ndarray, shape (N, D)
        ``G[p] = -sum_k C_k Y[p,k] w_k [1 - Y[p,k] w_k . phi_p > 0]``; the
        regularizer does not contribute (w is held fixed).
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim != 2 or pooled.shape[1] != model.dim:
        raise ShapeMismatchError(f"pooled maps of shape {pooled.shape}, model expects dimension {model.dim}")
    costs = model.reg_costs if costs is None else np.broadcast_to(np.asarray(costs, dtype=np.float64), (model.n_concepts,))
    Y = labels.Y.astype(np.float64)
    W = model.weights
    E = float(svm.concept_objectives(W, costs, pooled, Y, model.bias).sum())
    active = (1.0 - Y * svm.score(model, pooled)) > 0
    coef = -(costs[None, :] * Y) * active
    G = coef @ W[:, : model.dim]
    return E, G


def _backward_layers(layers, ctx: ContextStack, G) -> np.ndarray:
    N, n, d0 = layers[0].shape
    T, C = ctx.depth, ctx.sectors
    dims = map_dims(d0, C, T)
    s = np.sqrt(ctx.gamma)
    grad = np.zeros(ctx.weights.shape)
    # sum pooling hands the image gradient to every cell unchanged
    Gt = np.broadcast_to(np.asarray(G, dtype=np.float64)[:, None, :], (N, n, dims[T]))
    for t in range(T, 0, -1):
        g = Gt[:, :, d0:].reshape(N, n, C, dims[t - 1])
        grad[t - 1] = s * np.einsum("pxcd,pyd->cxy", g, layers[t - 1])
        if t > 1:
            Gt = s * np.einsum("cxy,pxcd->pyd", ctx.weights[t - 1], g)
    grad *= ctx.mask[None]
    return grad


def backward_context(stacks, ctx: ContextStack, G) -> ContextGradient:
    """Chain-rule gradient of the objective with respect to every ``P_c`` of every layer.

    Parameters
    ----------
    stacks : sequence of MapStack
        Complete map stacks of the N images, produced under ``ctx``.
    ctx : ContextStack
    G : ndarray, shape (N, D_T)
        Gradient of the objective with respect to each pooled map.
    """
    stacks = list(stacks)
    digest = ctx.digest()
    for m in stacks:
        if not m.complete:
            raise StaleMapError(f"map stack {m.image_id!r} was built without retaining layers")
        if m.ctx_digest and m.ctx_digest != digest:
            raise StaleMapError(f"map stack {m.image_id!r} was built under a different context")
    G = np.asarray(G, dtype=np.float64)
    if G.shape[0] != len(stacks):
        raise ShapeMismatchError(f"{G.shape[0]} pooled gradients for {len(stacks)} map stacks")
    layers = [np.stack([m.per_layer[t] for m in stacks]) for t in range(ctx.depth + 1)]
    if G.shape[1] != layers[-1].shape[2]:
        raise ShapeMismatchError(f"gradient dimension {G.shape[1]} != map dimension {layers[-1].shape[2]}")
    return ContextGradient(_backward_layers(layers, ctx, G), ctx.mask)


def _hinge_sum(model: svm.SvmModel, pooled, labels: LabelMatrix) -> float:
    margins = labels.Y * svm.score(model, pooled)
    return float(np.maximum(0.0, 1.0 - margins).sum())


def alternate_optimize(
    features,
    labels: LabelMatrix,
    spec: GridSpec | None = None,
    config: LearnConfig = LearnConfig(),
    ctx: ContextStack | None = None,
    resume: TrainState | None = None,
) -> TrainState:
    """Learn the context and the SVMs jointly by alternating minimization.

    Parameters
    ----------
    features : list of ImageFeatures or ndarray (N, n, d0)
        Cell features after the initial map.
    labels : LabelMatrix
    spec : GridSpec, optional
        Grid used to build the handcrafted starting context when neither
        ``ctx`` nor ``resume`` is given.
    config : LearnConfig
    ctx : ContextStack, optional
        Starting context.
    resume : TrainState, optional
        Continue from a previous state (its history is extended).

    Raises
    ------
    DivergenceError
        If the objective becomes non-finite; ``.state`` is the last finite state.
    """
    V = stack_cells(features)
    if V.shape[0] != labels.n_images:
        raise ShapeMismatchError(f"{V.shape[0]} images for {labels.n_images} label rows")
    labels.check_trainable()
    if resume is not None:
        state = TrainState(resume.ctx, resume.model, list(resume.objective_history), resume.outer_iter, list(resume.log))
    else:
        if ctx is None:
            if spec is None:
                raise ValueError("need a GridSpec or a starting ContextStack")
            ctx = ContextStack.handcrafted(spec, config.depth, config.gamma)
        state = TrainState(ctx, None)
    state.ctx.warn_if_not_contractive()
    costs = config.cost_vector(labels.n_concepts)

    def evaluate(c):
        layers = map_layers(V, c)
        return layers, layers[-1].sum(axis=1)

    for _ in range(config.max_outer):
        it = state.outer_iter + 1
        ctx = state.ctx
        layers, pooled = evaluate(ctx)
        model = svm.train(
            pooled, labels, costs, config.bias, config.svm_tol, config.svm_max_epochs, ctx.digest()
        )
        E_w = svm.objective(model, pooled, labels)
        if state.model is not None and state.model.weights.shape == model.weights.shape:
            # the solver stops at a small duality gap; never let a re-fit raise E
            E_prev_w = svm.objective(state.model, pooled, labels)
            if E_prev_w < E_w:
                model, E_w = replace(state.model, ctx_digest=ctx.digest()), E_prev_w
        if not np.isfinite(E_w):
            raise DivergenceError(f"non-finite objective at outer iteration {it}", state)

        halvings = 0
        if config.eta > 0:
            for _ in range(config.inner_steps):
                E0, G = loss_and_grad_pooled(model, pooled, labels)
                grad = _backward_layers(layers, ctx, G)
                if not np.any(grad):
                    break
                step = config.eta
                accepted = False
                for h in range(config.max_halvings + 1):
                    trial = ctx.with_weights(ctx.weights - step * grad)
                    t_layers, t_pooled = evaluate(trial)
                    E1 = svm.objective(model, t_pooled, labels)
                    if np.isfinite(E1) and E1 < E0:
                        accepted = True
                        break
                    step *= 0.5
                    halvings += 1
                if not accepted:
                    # the next attempt would repeat this one exactly
                    break
                ctx, layers, pooled = trial, t_layers, t_pooled
                model = replace(model, ctx_digest=ctx.digest())

        E = svm.objective(model, pooled, labels)
        if not np.isfinite(E):
            raise DivergenceError(f"non-finite objective at outer iteration {it}", state)
        row = LogRow(it, E, E_w, _hinge_sum(model, pooled, labels), halvings)
        prev = state.objective_history[-1] if state.objective_history else None
        state = TrainState(ctx, model, state.objective_history + [E], it, state.log + [row])
        logger.info("outer %d: E=%.10g svm=%.10g halvings=%d", it, E, E_w, halvings)
        if prev is not None and abs(prev - E) < config.tol * abs(prev):
            break
    return state


def checkpoint_to_bytes(state: TrainState) -> bytes:
    ctx = state.ctx
    spec = ctx.spec or GridSpec(1, 1, 1, 1)
    has_spec = ctx.spec is not None
    T, C, n, _ = ctx.weights.shape
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IB4I", CHECKPOINT_VERSION, int(has_spec), spec.rows, spec.cols, spec.radius, spec.sectors),
        struct.pack("<d3I", ctx.gamma, T, C, n),
        np.ascontiguousarray(ctx.weights, dtype="<f8").tobytes(),
        np.ascontiguousarray(ctx.mask, dtype=np.uint8).tobytes(),
    ]
    blob = svm.model_to_bytes(state.model) if state.model is not None else b""
    parts += [struct.pack("<I", len(blob)), blob]
    hist = np.asarray(state.objective_history, dtype="<f8")
    parts += [struct.pack("<II", state.outer_iter, len(hist)), hist.tobytes()]
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> TrainState:
    """Parse a checkpoint; raises :class:`FormatError` on any corruption."""
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    try:
        version, has_spec, rows, cols, radius, sectors = struct.unpack_from("<IB4I", data, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 4 + struct.calcsize("<IB4I")
        gamma, T, C, n = struct.unpack_from("<d3I", data, pos)
        pos += struct.calcsize("<d3I")
        count = T * C * n * n
        weights = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(T, C, n, n)
        pos += 8 * count
        mask = np.frombuffer(data, dtype=np.uint8, count=C * n * n, offset=pos).reshape(C, n, n)
        pos += C * n * n
        (blob_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        model = None
        if blob_len:
            model, end = svm.model_from_bytes(data[: pos + blob_len], pos)
            if end != pos + blob_len:
                raise FormatError("model blob length mismatch")
        pos += blob_len
        outer_iter, n_hist = struct.unpack_from("<II", data, pos)
        pos += 8
        history = np.frombuffer(data, dtype="<f8", count=n_hist, offset=pos).tolist()
        pos += 8 * n_hist
        if pos != len(data):
            raise FormatError("trailing bytes after checkpoint")
        spec = GridSpec(rows, cols, radius, sectors) if has_spec else None
        ctx = ContextStack(weights, mask.astype(bool), gamma, spec)
    except FormatError:
        raise
    except (struct.error, ValueError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from None
    return TrainState(ctx, model, history, outer_iter)


def save_checkpoint(path, state: TrainState):
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(state))


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def write_training_log(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            writer.writerow([r.outer_iter, repr(r.E), repr(r.svm_objective), repr(r.hinge_sum), r.backtrack_halvings])
