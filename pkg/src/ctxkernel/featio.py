"""Per-cell feature ingestion, context-free initial maps and synthetic data.

Feature files are little-endian binary::

    magic b"CTXF" | version u32 | n_images u32 | rows u32 | cols u32 | d0 u32
    | mode u8 (0 linear, 1 hi) | levels u32 (0 if linear)
    then per image: id_len u32 | id utf-8 | rows*cols*d0 float32 (row-major cells)

Labels are CSV with header ``image_id,concept,label`` and labels in {-1, 1}.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FeatureRangeError,
    FormatError,
    LabelError,
    ShapeMismatchError,
    UnknownModeError,
)
from .grid import GridSpec

__all__ = [
    "MODES",
    "DEFAULT_HI_LEVELS",
    "ImageFeatures",
    "FeatureSet",
    "LabelMatrix",
    "phi0_linear",
    "phi0_hi",
    "apply_phi0",
    "write_feature_file",
    "read_feature_file",
    "load_features",
    "stack_cells",
    "write_labels",
    "read_labels",
    "gen_synthetic",
]

MAGIC = b"CTXF"
FORMAT_VERSION = 1
MODES = ("linear", "hi")
DEFAULT_HI_LEVELS = 16

_HEADER = struct.Struct("<4sIIIIIBI")
_U32 = struct.Struct("<I")


@dataclass
class ImageFeatures:
    """Cell features of one image after the initial map has been applied."""

    image_id: str
    cells: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.cells.ndim != 2:
            raise ShapeMismatchError(f"{self.image_id}: cells must be 2-D, got shape {self.cells.shape}")
        if not np.all(np.isfinite(self.cells)):
            raise FeatureRangeError(f"{self.image_id}: non-finite feature values")

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def dim(self) -> int:
        return self.cells.shape[1]


@dataclass
class FeatureSet:
    """Raw (pre-map) cell features for a collection of images, as stored on disk."""

    image_ids: list[str]
    values: np.ndarray  # (N, rows*cols, d0)
    spec: GridSpec
    mode: str = "linear"
    levels: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mode not in MODES:
            raise UnknownModeError(f"unknown feature mode {self.mode!r}")
        if self.values.ndim != 3 and not (self.values.size == 0 and not self.image_ids):
            raise ShapeMismatchError(f"values must have shape (N, n, d0), got {self.values.shape}")
        if self.values.ndim == 3:
            if self.values.shape[0] != len(self.image_ids):
                raise ShapeMismatchError(
                    f"{len(self.image_ids)} image ids for {self.values.shape[0]} images"
                )
            if self.values.shape[1] != self.spec.n_cells:
                raise ShapeMismatchError(
                    f"images have {self.values.shape[1]} cells, grid has {self.spec.n_cells}"
                )

    @property
    def d0(self) -> int:
        return self.values.shape[2] if self.values.ndim == 3 else 0

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass
class LabelMatrix:
    """``Y[p, k]`` in {-1, +1}: membership of image ``p`` to concept ``k``."""

    Y: np.ndarray
    concept_names: list[str]
    image_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.Y = np.asarray(self.Y)
        if self.Y.ndim != 2:
            raise ShapeMismatchError(f"label matrix must be 2-D, got shape {self.Y.shape}")
        if not np.all((self.Y == 1) | (self.Y == -1)):
            raise LabelError("labels must be exactly -1 or +1")
        self.Y = self.Y.astype(np.int8)
        if self.Y.shape[1] != len(self.concept_names):
            raise ShapeMismatchError(
                f"{len(self.concept_names)} concept names for {self.Y.shape[1]} columns"
            )
        if self.image_ids and len(self.image_ids) != self.Y.shape[0]:
            raise ShapeMismatchError(f"{len(self.image_ids)} image ids for {self.Y.shape[0]} rows")

    @property
    def n_images(self) -> int:
        return self.Y.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.Y.shape[1]

    def check_trainable(self):
        """Raise :class:`LabelError` naming the first concept lacking a positive or a negative."""
        for k, name in enumerate(self.concept_names):
            col = self.Y[:, k]
            if not (np.any(col == 1) and np.any(col == -1)):
                raise LabelError(f"concept {name!r} has single-sign labels; cannot train")


def phi0_linear(cell):
    """Identity map: inner products of outputs equal the linear kernel."""
    v = np.asarray(cell, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise FeatureRangeError("non-finite feature values")
    return v.copy()


def phi0_hi(cell, levels: int = DEFAULT_HI_LEVELS):
    """Unary (decimal-to-unary) map of the histogram intersection kernel.

    Each entry ``v`` in [0, 1] is quantized to ``m = round(v * levels)`` and
    written as ``levels`` slots whose first ``m`` equal ``1/sqrt(levels)``.
    Works on the last axis, so whole ``(..., d0)`` arrays map at once to
    ``(..., d0 * levels)``.

    ``<phi0_hi(u), phi0_hi(v)> == sum_i min(q(u_i), q(v_i))`` with
    ``q(v) = round(v * levels) / levels``.
    """
    if isinstance(levels, bool) or int(levels) != levels or levels <= 0:
        raise ValueError(f"levels must be a positive integer, got {levels!r}")
    levels = int(levels)
    v = np.asarray(cell, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise FeatureRangeError("non-finite feature values")
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise FeatureRangeError("histogram intersection features must lie in [0, 1]")
    m = np.floor(v * levels + 0.5)
    unary = (np.arange(levels) < m[..., None]).astype(np.float64) / np.sqrt(levels)
    return unary.reshape(*v.shape[:-1], v.shape[-1] * levels)


def apply_phi0(values, mode: str, levels: int = DEFAULT_HI_LEVELS) -> np.ndarray:
    if mode == "linear":
        return phi0_linear(values)
    if mode == "hi":
        return phi0_hi(values, levels)
    raise UnknownModeError(f"unknown feature mode {mode!r}")


def write_feature_file(path, features: FeatureSet):
    """Write raw features in the binary feature format."""
    spec = features.spec
    mode_code = MODES.index(features.mode)
    levels = features.levels if features.mode == "hi" else 0
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                MAGIC, FORMAT_VERSION, len(features), spec.rows, spec.cols, features.d0, mode_code, levels
            )
        )
        for p, image_id in enumerate(features.image_ids):
            raw = image_id.encode("utf-8")
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(features.values[p], dtype="<f4").tobytes())


def read_feature_file(path, radius: int = 1, sectors: int = 4) -> FeatureSet:
    """Read a feature file without applying any map.

    The returned ``spec`` takes rows/cols from the header and ``radius`` /
    ``sectors`` from the arguments (the file does not store them).
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n_images, rows, cols, d0, mode_code, levels = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported feature format version {version}")
    if mode_code >= len(MODES):
        raise UnknownModeError(f"{path}: unknown mode code {mode_code}")
    spec = GridSpec(rows, cols, radius, sectors)
    n_vals = rows * cols * d0
    offset = _HEADER.size
    ids, blocks = [], []
    for p in range(n_images):
        if offset + 4 > len(data):
            raise ShapeMismatchError(f"{path}: file ends before image {p} (declared {n_images} images)")
        (id_len,) = _U32.unpack_from(data, offset)
        offset += 4
        ids.append(data[offset:offset + id_len].decode("utf-8"))
        offset += id_len
        end = offset + 4 * n_vals
        if end > len(data):
            got = (len(data) - offset) // 4
            raise ShapeMismatchError(
                f"{path}: image {ids[-1]!r} holds {got} values, header declares "
                f"{rows * cols} cells x {d0} dims = {n_vals}"
            )
        blocks.append(np.frombuffer(data, dtype="<f4", count=n_vals, offset=offset).reshape(rows * cols, d0))
        offset = end
    if offset != len(data):
        raise ShapeMismatchError(f"{path}: {len(data) - offset} trailing bytes after last image")
    values = np.stack(blocks).astype(np.float64) if blocks else np.zeros((0, rows * cols, d0))
    return FeatureSet(ids, values, spec, MODES[mode_code], int(levels))


def load_features(path, spec: GridSpec, mode: str | None = None) -> list[ImageFeatures]:
    """Load a feature file and apply the initial map to every cell.

    ``mode`` defaults to the mode recorded in the file; when given it must
    agree with it.
    """
    if mode is not None and mode not in MODES:
        raise UnknownModeError(f"unknown feature mode {mode!r}")
    fs = read_feature_file(path, spec.radius, spec.sectors)
    if (fs.spec.rows, fs.spec.cols) != (spec.rows, spec.cols):
        raise ShapeMismatchError(
            f"{path}: file grid is {fs.spec.rows}x{fs.spec.cols}, expected {spec.rows}x{spec.cols}"
        )
    if mode is not None and mode != fs.mode:
        raise UnknownModeError(f"{path}: file holds {fs.mode!r} features, {mode!r} requested")
    if not np.all(np.isfinite(fs.values)):
        raise FeatureRangeError(f"{path}: non-finite feature values")
    if fs.mode == "hi" and fs.levels <= 0:
        raise FormatError(f"{path}: hi mode requires a positive number of levels")
    mapped = apply_phi0(fs.values, fs.mode, fs.levels)
    return [ImageFeatures(i, m) for i, m in zip(fs.image_ids, mapped)]


def stack_cells(images) -> np.ndarray:
    """Stack ``ImageFeatures`` (or pass through an array) into shape ``(N, n, d)``."""
    if isinstance(images, np.ndarray):
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        return arr
    images = list(images)
    if not images:
        raise ShapeMismatchError("no images given")
    shapes = {img.cells.shape for img in images}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"images have differing cell shapes: {sorted(shapes)}")
    return np.stack([img.cells for img in images])


def write_labels(path, labels: LabelMatrix):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "concept", "label"])
        for p, image_id in enumerate(labels.image_ids):
            for k, name in enumerate(labels.concept_names):
                writer.writerow([image_id, name, int(labels.Y[p, k])])


def read_labels(path, image_ids=None) -> LabelMatrix:
    """Read a labels CSV.

    Rows of the result follow ``image_ids`` when given (every image must be
    labelled for every concept); otherwise first-appearance order.
    Concepts are ordered by first appearance.
    """
    table: dict[tuple[str, str], int] = {}
    ids_seen: list[str] = []
    concepts: list[str] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "concept", "label"]:
            raise FormatError(f"{path}: expected header image_id,concept,label, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            image_id, concept, raw = row
            try:
                value = int(raw)
            except ValueError:
                raise LabelError(f"{path}:{lineno}: label {raw!r} is not an integer") from None
            if value not in (-1, 1):
                raise LabelError(f"{path}:{lineno}: label must be -1 or 1, got {value}")
            if (image_id, concept) in table:
                raise LabelError(f"{path}:{lineno}: duplicate label for ({image_id}, {concept})")
            table[image_id, concept] = value
            if image_id not in ids_seen:
                ids_seen.append(image_id)
            if concept not in concepts:
                concepts.append(concept)
    order = list(image_ids) if image_ids is not None else ids_seen
    Y = np.zeros((len(order), len(concepts)), dtype=np.int8)
    for p, image_id in enumerate(order):
        for k, concept in enumerate(concepts):
            try:
                Y[p, k] = table[image_id, concept]
            except KeyError:
                raise LabelError(f"{path}: no label for image {image_id!r}, concept {concept!r}") from None
    return LabelMatrix(Y, concepts, order)


def gen_synthetic(
    spec: GridSpec,
    n_images: int,
    seed: int,
    d0: int = 4,
    noise: float = 0.05,
) -> tuple[FeatureSet, LabelMatrix]:
    """Two-class dataset whose classes differ only in spatial arrangement.

    Images come in pairs. The first image of a pair (class ``a_left``) puts
    noisy copies of prototype A in the left half of the grid and of B in the
    right half; the second (``a_right``) is its exact left-right mirror. A
    middle column, if any, is filled at random and mirrored onto itself. Both
    images of a pair thus hold the same multiset of cell vectors, so any
    context-free pooled representation is identical across the pair.

    Values are snapped to multiples of 1/256 so that sums over cells are
    exact in float64 regardless of summation order, and lie in [0, 1] so the
    data also serve the histogram intersection map.
    """
    if isinstance(n_images, bool) or int(n_images) != n_images or n_images < 4 or n_images % 2:
        raise ValueError(f"n_images must be an even integer >= 4, got {n_images!r}")
    if spec.cols < 2:
        raise ValueError("synthetic context data need at least 2 grid columns")
    rng = np.random.default_rng(seed)
    protos = rng.dirichlet(np.ones(d0), size=2)
    half = spec.cols // 2
    values = np.empty((n_images, spec.rows, spec.cols, d0))
    for pair in range(n_images // 2):
        which = np.zeros((spec.rows, spec.cols), dtype=int)
        which[:, spec.cols - half:] = 1
        if spec.cols % 2:
            which[:, half] = rng.integers(0, 2, size=spec.rows)
        cells = protos[which] + noise * rng.standard_normal((spec.rows, spec.cols, d0))
        cells = np.round(np.clip(cells, 0.0, 1.0) * 256.0) / 256.0
        values[2 * pair] = cells
        values[2 * pair + 1] = cells[:, ::-1]
    values = values.reshape(n_images, spec.n_cells, d0)
    ids = [f"syn{p:05d}" for p in range(n_images)]
    Y = np.where(np.arange(n_images)[:, None] % 2 == np.arange(2)[None, :], 1, -1)
    return FeatureSet(ids, values, spec, "linear", 0), LabelMatrix(Y, ["a_left", "a_right"], ids)
