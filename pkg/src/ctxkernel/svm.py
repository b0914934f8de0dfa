"""One-vs-rest linear SVMs on pooled maps, solved by dual coordinate descent.

Each concept ``k`` gets ``w_k`` minimizing::

    0.5 * ||w_k||^2 + C_k * sum_p max(0, 1 - Y[p, k] * w_k . phi_p)

There is no intercept unless ``bias=True``, which appends a constant 1
feature to every pooled map.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, LabelError, ShapeMismatchError
from .featio import LabelMatrix

__all__ = [
    "SvmModel",
    "train",
    "solve_binary",
    "objective",
    "concept_objectives",
    "score",
    "annotate",
    "model_to_bytes",
    "model_from_bytes",
    "save_model",
    "load_model",
]

MODEL_MAGIC = b"CTXM"
MODEL_VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class SvmModel:
    weights: np.ndarray  # (K, D) or (K, D + 1) with bias
    reg_costs: np.ndarray  # (K,)
    concept_names: list
    bias: bool = False
    ctx_digest: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.reg_costs = np.asarray(self.reg_costs, dtype=np.float64)
        self.concept_names = list(self.concept_names)
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.concept_names):
            raise ShapeMismatchError(
                f"weights of shape {self.weights.shape} for {len(self.concept_names)} concepts"
            )
        if self.reg_costs.shape != (len(self.concept_names),):
            raise ShapeMismatchError(f"need one cost per concept, got shape {self.reg_costs.shape}")
        if not np.all(self.reg_costs > 0):
            raise ValueError("SVM costs must be > 0")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("SVM weights must be finite")

    @property
    def n_concepts(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        """Dimension of the pooled maps this model scores."""
        return self.weights.shape[1] - int(self.bias)


def _costs_vector(costs, K: int) -> np.ndarray:
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim == 0:
        c = np.full(K, float(c))
    if c.shape != (K,):
        raise ShapeMismatchError(f"expected a scalar or {K} costs, got shape {c.shape}")
    if not np.all(c > 0) or not np.all(np.isfinite(c)):
        raise ValueError("SVM costs must be finite and > 0")
    return c


def _design(pooled, bias: bool) -> np.ndarray:
    X = np.asarray(pooled, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    if bias:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return X


def solve_binary(X, y, cost: float, tol: float = 1e-6, max_epochs: int = 1000):
    """Dual coordinate descent for one hinge-loss SVM without intercept.

    Visits examples in index order, so the result is a deterministic
    function of the inputs. Stops once the duality gap falls to
    ``tol * primal`` or after ``max_epochs`` sweeps.

    Returns
    -------
    w : ndarray
    alpha : ndarray
        Dual variables in ``[0, cost]``.
    gap : float
        Final duality gap.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    N, D = X.shape
    q = np.einsum("ij,ij->i", X, X)
    alpha = np.zeros(N)
    w = np.zeros(D)
    gap = np.inf
    for _ in range(max_epochs):
        for i in range(N):
            if q[i] == 0.0:
                # gradient of the dual is constantly 1 here
                alpha[i] = cost
                continue
            grad = y[i] * (w @ X[i]) - 1.0
            new = min(max(alpha[i] - grad / q[i], 0.0), cost)
            delta = new - alpha[i]
            if delta != 0.0:
                w += (delta * y[i]) * X[i]
                alpha[i] = new
        half_sq = 0.5 * (w @ w)
        primal = half_sq + cost * np.maximum(0.0, 1.0 - y * (X @ w)).sum()
        dual = alpha.sum() - half_sq
        gap = primal - dual
        if gap <= tol * abs(primal):
            break
    return w, alpha, gap


def train(
    pooled,
    labels: LabelMatrix,
    costs=1.0,
    bias: bool = False,
    tol: float = 1e-6,
    max_epochs: int = 1000,
    ctx_digest: str = "",
) -> SvmModel:
    """Fit one SVM per concept on pooled maps of shape ``(N, D)``."""
    X = _design(pooled, bias)
    Y = labels.Y
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatchError(f"{X.shape[0]} pooled maps for {Y.shape[0]} label rows")
    if X.shape[0] < 2:
        raise LabelError("need at least 2 training images")
    labels.check_trainable()
    C = _costs_vector(costs, labels.n_concepts)
    W = np.empty((labels.n_concepts, X.shape[1]))
    for k in range(labels.n_concepts):
        W[k], _, _ = solve_binary(X, Y[:, k], C[k], tol, max_epochs)
    return SvmModel(W, C, labels.concept_names, bias, ctx_digest)


def concept_objectives(weights, costs, pooled, Y, bias: bool = False) -> np.ndarray:
    """Per-concept primal objective values, shape ``(K,)``."""
    X = _design(pooled, bias)
    W = np.asarray(weights, dtype=np.float64)
    margins = np.asarray(Y, dtype=np.float64) * (X @ W.T)
    hinge = np.maximum(0.0, 1.0 - margins).sum(axis=0)
    return 0.5 * np.einsum("kd,kd->k", W, W) + np.asarray(costs) * hinge


def objective(model: SvmModel, pooled, labels: LabelMatrix) -> float:
    """Total objective summed over concepts."""
    return float(concept_objectives(model.weights, model.reg_costs, pooled, labels.Y, model.bias).sum())


def score(model: SvmModel, pooled) -> np.ndarray:
    """``w_k . phi`` for every concept; ``(K,)`` for one map, ``(N, K)`` for a batch."""
    arr = np.asarray(pooled, dtype=np.float64)
    if arr.shape[-1] != model.dim:
        raise ShapeMismatchError(f"pooled map of dimension {arr.shape[-1]}, model expects {model.dim}")
    scores = _design(arr, model.bias) @ model.weights.T
    return scores[0] if arr.ndim == 1 else scores


def annotate(model: SvmModel, pooled) -> list:
    """Concepts with a strictly positive score, in model order."""
    s = score(model, pooled)
    if s.ndim != 1:
        raise ShapeMismatchError("annotate takes a single pooled map")
    return [name for name, v in zip(model.concept_names, s) if v > 0]


def model_to_bytes(model: SvmModel) -> bytes:
    """Serialize: magic, version, K, D, bias, names, float32 weights, float64 costs, ctx digest."""
    K, D = model.weights.shape
    parts = [MODEL_MAGIC, struct.pack("<IIIB", MODEL_VERSION, K, D, int(model.bias))]
    for name in model.concept_names:
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw]
    parts.append(np.ascontiguousarray(model.weights, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(model.reg_costs, dtype="<f8").tobytes())
    parts.append(bytes.fromhex(model.ctx_digest) if model.ctx_digest else bytes(32))
    return b"".join(parts)


def model_from_bytes(data: bytes, offset: int = 0) -> tuple[SvmModel, int]:
    """Inverse of :func:`model_to_bytes`; returns the model and the offset past it."""
    try:
        if data[offset:offset + 4] != MODEL_MAGIC:
            raise FormatError(f"bad model magic {data[offset:offset + 4]!r}")
        version, K, D, bias = struct.unpack_from("<IIIB", data, offset + 4)
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}")
        pos = offset + 4 + 13
        names = []
        for _ in range(K):
            (length,) = _U32.unpack_from(data, pos)
            pos += 4
            names.append(data[pos:pos + length].decode("utf-8"))
            pos += length
        W = np.frombuffer(data, dtype="<f4", count=K * D, offset=pos).reshape(K, D)
        pos += 4 * K * D
        costs = np.frombuffer(data, dtype="<f8", count=K, offset=pos)
        pos += 8 * K
        digest = data[pos:pos + 32]
        if len(digest) != 32:
            raise FormatError("truncated model")
        pos += 32
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt model: {exc}") from None
    hexdigest = "" if digest == bytes(32) else digest.hex()
    return SvmModel(W.astype(np.float64), costs.copy(), names, bool(bias), hexdigest), pos


def save_model(path, model: SvmModel):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        data = fh.read()
    model, end = model_from_bytes(data)
    if end != len(data):
        raise FormatError(f"{path}: trailing bytes after model")
    return model
