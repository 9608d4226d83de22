"""Typed embedding containers shared by every other module.

Containers are frozen and their arrays are marked read-only.  Constructors do
not enforce invariants so that :func:`validate` can report on malformed data;
the file loaders call :func:`validate` and raise on the first violation.

Vectors are stored as float32.  Dot products and sums elsewhere accumulate in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import (
    DimensionMismatch,
    DistillError,
    IndexGap,
    NormalizationViolation,
    NormViolation,
    PatchCountMismatch,
)

NORM_TOLERANCE = 1e-4
DEFAULT_MASS_TOLERANCE = 1e-3


def _frozen(array: Any, dtype=np.float32) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalisation in float64; zero rows are rejected."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0):
        flat = np.flatnonzero(norms.reshape(-1) == 0)
        raise NormViolation(f"zero vector at flat index {int(flat[0])} cannot be normalised",
                            index=int(flat[0]))
    return vectors / norms


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors as a float64 dot product, clipped to [-1, 1].

    Bitwise-identical vectors return exactly 1.0; float32 storage otherwise
    leaves ``a . a`` a few ulps away from 1, which would break ``tau = 1``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    if np.array_equal(a, b):
        return 1.0
    value = float(np.dot(a.astype(np.float64), b.astype(np.float64)))
    return min(1.0, max(-1.0, value))


# -- domain types -------------------------------------------------------------

@dataclass(frozen=True)
class FrameEmbedding:
    vector: np.ndarray
    frame_index: int

    def __post_init__(self):
        object.__setattr__(self, "vector", _frozen(self.vector))


@dataclass(frozen=True)
class PatchGrid:
    """The M patch embeddings (M x d_p) of one frame."""

    patches: np.ndarray
    frame_index: int

    def __post_init__(self):
        object.__setattr__(self, "patches", _frozen(self.patches))

    @property
    def m(self) -> int:
        return self.patches.shape[0]

    @property
    def dim(self) -> int:
        return self.patches.shape[1]


@dataclass(frozen=True)
class QueryEmbedding:
    """Query vectors in the frame-encoder space and in the patch-encoder space."""

    frame_space: np.ndarray
    patch_space: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frame_space", _frozen(self.frame_space))
        object.__setattr__(self, "patch_space", _frozen(self.patch_space))

    @classmethod
    def shared(cls, vector) -> "QueryEmbedding":
        """Query whose frame and patch spaces coincide."""
        return cls(vector, vector)


@dataclass(frozen=True)
class AttentionDump:
    """Per-frame, per-patch attention mass (N x M), pre-averaged upstream.

    Held in float64 (files store float32).
    """

    weights: np.ndarray
    video_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, dtype=np.float64))

    @property
    def n_frames(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]


# -- patch sources ------------------------------------------------------------

@runtime_checkable
class PatchSource(Protocol):
    """Hands out in-order iterators over a video's patch grids.

    Each call to :meth:`iter_grids` returns an independent iterator, so
    concurrent consumers never share read position.
    """

    n_frames: int
    m: int
    dim: int

    def iter_grids(self) -> Iterator[PatchGrid]: ...


class ArrayPatchSource:
    """Patch grids held in memory as an (N, M, d_p) array."""

    def __init__(self, patches: np.ndarray):
        patches = _frozen(patches)
        if patches.ndim != 3:
            raise DimensionMismatch(f"patch array must be 3-D (N, M, d_p), got shape {patches.shape}")
        self.array = patches
        self.n_frames, self.m, self.dim = patches.shape

    def iter_grids(self) -> Iterator[PatchGrid]:
        for i in range(self.n_frames):
            yield PatchGrid(self.array[i], i)

    def grid(self, index: int) -> PatchGrid:
        return PatchGrid(self.array[index], index)


# -- video container ----------------------------------------------------------

@dataclass(frozen=True)
class VideoEmbeddingSet:
    video_id: str
    frame_vectors: np.ndarray
    patch_source: PatchSource | None = None
    fps: float = 1.0
    frame_indices: np.ndarray | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frame_vectors", _frozen(self.frame_vectors))
        idx = self.frame_indices
        if idx is None:
            idx = np.arange(self.frame_vectors.shape[0])
        object.__setattr__(self, "frame_indices", _frozen(idx, dtype=np.int64))

    @classmethod
    def from_arrays(cls, frames, patches=None, video_id: str = "video", fps: float = 1.0,
                    **kwargs) -> "VideoEmbeddingSet":
        source = None if patches is None else ArrayPatchSource(patches)
        return cls(video_id=video_id, frame_vectors=frames, patch_source=source, fps=fps, **kwargs)

    @property
    def n_frames(self) -> int:
        return self.frame_vectors.shape[0]

    @property
    def frame_dim(self) -> int:
        return self.frame_vectors.shape[1]

    @property
    def frames(self) -> list[FrameEmbedding]:
        return [FrameEmbedding(v, int(i)) for v, i in zip(self.frame_vectors, self.frame_indices)]

    def frame(self, index: int) -> FrameEmbedding:
        return FrameEmbedding(self.frame_vectors[index], int(self.frame_indices[index]))

    def patch_array(self) -> np.ndarray:
        """All patch grids stacked into one (N, M, d_p) array (reads the whole source)."""
        if self.patch_source is None:
            raise DimensionMismatch(f"video {self.video_id!r} has no patch grids")
        if isinstance(self.patch_source, ArrayPatchSource):
            return self.patch_source.array
        return np.stack([g.patches for g in self.patch_source.iter_grids()])


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    field: str
    index: Any
    observed: Any

    def __str__(self) -> str:
        return f"{self.kind}: {self.field}[{self.index}] observed {self.observed!r}"


_EXCEPTIONS = {
    "NormViolation": NormViolation,
    "NormalizationViolation": NormalizationViolation,
    "IndexGap": IndexGap,
    "DimensionMismatch": DimensionMismatch,
    "PatchCountMismatch": PatchCountMismatch,
}


def _norm_violations(vectors: np.ndarray, field_name: str, tol: float) -> list[Violation]:
    flat = vectors.reshape(-1, vectors.shape[-1]) if vectors.size else vectors.reshape(0, 1)
    norms = np.sqrt(np.einsum("ij,ij->i", flat.astype(np.float64), flat.astype(np.float64)))
    bad = np.flatnonzero(~(np.abs(norms - 1.0) <= tol))
    out = []
    for b in bad:
        index = np.unravel_index(int(b), vectors.shape[:-1]) if vectors.ndim > 2 else int(b)
        if isinstance(index, tuple):
            index = tuple(int(i) for i in index)
        out.append(Violation("NormViolation", field_name, index, float(norms[b])))
    return out


def _grid_violations(grid: PatchGrid, tol: float, expected_m: int | None = None,
                     expected_dim: int | None = None) -> list[Violation]:
    out = []
    if grid.patches.ndim != 2 or grid.patches.shape[0] == 0:
        return [Violation("PatchCountMismatch", "patches", grid.frame_index, grid.patches.shape)]
    if expected_m is not None and grid.m != expected_m:
        out.append(Violation("PatchCountMismatch", "patches", grid.frame_index, grid.m))
    if expected_dim is not None and grid.dim != expected_dim:
        out.append(Violation("DimensionMismatch", "patches", grid.frame_index, grid.dim))
    for v in _norm_violations(grid.patches, "patches", tol):
        out.append(Violation(v.kind, f"patches[frame {grid.frame_index}]", v.index, v.observed))
    return out


def validate(container, *, tol: float = NORM_TOLERANCE, check_patches: bool = False,
             mass_tolerance: float = DEFAULT_MASS_TOLERANCE) -> list[Violation]:
    """Return every invariant violation found in ``container`` (empty list if valid).

    Never raises on malformed-but-parseable data.  For videos, patch grids
    are only read when ``check_patches`` is set (it consumes one full pass
    of the patch source).
    """
    out: list[Violation] = []
    if isinstance(container, VideoEmbeddingSet):
        fv = container.frame_vectors
        if fv.ndim != 2 or fv.shape[0] < 1 or fv.shape[1] < 1:
            return [Violation("DimensionMismatch", "frames", None, fv.shape)]
        if container.fps <= 0:
            out.append(Violation("InvalidValue", "fps", None, container.fps))
        idx = container.frame_indices
        if len(idx) != fv.shape[0]:
            out.append(Violation("IndexGap", "frame_index", None, len(idx)))
        else:
            for pos, observed in enumerate(idx):
                if int(observed) != pos:
                    out.append(Violation("IndexGap", "frame_index", pos, int(observed)))
        out.extend(_norm_violations(fv, "frames", tol))
        src = container.patch_source
        if src is not None:
            if src.n_frames != fv.shape[0]:
                out.append(Violation("IndexGap", "patch_source.n_frames", None, src.n_frames))
            if check_patches:
                for grid in src.iter_grids():
                    out.extend(_grid_violations(grid, tol, src.m, src.dim))
    elif isinstance(container, FrameEmbedding):
        out.extend(_norm_violations(container.vector.reshape(1, -1), "vector", tol))
    elif isinstance(container, PatchGrid):
        out.extend(_grid_violations(container, tol))
    elif isinstance(container, QueryEmbedding):
        out.extend(_norm_violations(container.frame_space.reshape(1, -1), "frame_space", tol))
        out.extend(_norm_violations(container.patch_space.reshape(1, -1), "patch_space", tol))
    elif isinstance(container, AttentionDump):
        w = container.weights
        if w.ndim != 2 or w.size == 0:
            return [Violation("DimensionMismatch", "weights", None, w.shape)]
        for n, m in zip(*np.nonzero(~((w >= 0) & (w <= 1)))):
            out.append(Violation("RangeViolation", "weights", (int(n), int(m)), float(w[n, m])))
        total = float(np.sum(w, dtype=np.float64))
        if not abs(total - 1.0) <= mass_tolerance:
            out.append(Violation("NormalizationViolation", "weights", "total", total))
    elif isinstance(container, ArrayPatchSource):
        for grid in container.iter_grids():
            out.extend(_grid_violations(grid, tol, container.m, container.dim))
    else:
        out.append(Violation("UnknownContainer", type(container).__name__, None, None))
    return out


def raise_first(violations: Sequence[Violation]) -> None:
    """Raise the exception matching the first violation, if any."""
    if not violations:
        return
    v = violations[0]
    exc = _EXCEPTIONS.get(v.kind, DistillError)
    message = str(v) if len(violations) == 1 else f"{v} (and {len(violations) - 1} more)"
    if exc is NormViolation:
        raise NormViolation(message, index=v.index)
    raise exc(message)


def check_dims(video: VideoEmbeddingSet, query: QueryEmbedding) -> None:
    if video.frame_dim != query.frame_space.shape[-1]:
        raise DimensionMismatch(
            f"frame embeddings have d_f={video.frame_dim}, query frame space has "
            f"{query.frame_space.shape[-1]}")
    src = video.patch_source
    if src is not None and src.dim != query.patch_space.shape[-1]:
        raise DimensionMismatch(
            f"patch embeddings have d_p={src.dim}, query patch space has "
            f"{query.patch_space.shape[-1]}")
