"""Differential feature merging.

A non-keyframe's M patches are pooled into a single token.  Each patch is
scored by its cosine to the query minus ``lambda`` times its cosine to the
same-position patch of the paired keyframe; the scores, divided by the
temperature ``alpha``, go through a softmax that gives the pooling weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import PatchGrid, QueryEmbedding
from .errors import ConfigError, DimensionMismatch, NonPositiveAlpha, PatchCountMismatch

DEFAULT_LAMBDA = 1.0
DEFAULT_ALPHA = 1e-2


@dataclass(frozen=True)
class DfmConfig:
    lam: float = DEFAULT_LAMBDA
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not self.alpha > 0:
            raise NonPositiveAlpha(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class MergedToken:
    """Pooled token of one non-keyframe.

    ``vector`` is kept in float64 so it can be compared against the
    extended-precision oracle; serialisation to tensor files casts to float32.
    """

    vector: np.ndarray
    source_frame: int
    paired_keyframe: int | None
    weights: np.ndarray


def _patches(x) -> np.ndarray:
    return x.patches if isinstance(x, PatchGrid) else np.asarray(x)


def _rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sims = np.einsum("md,md->m", a.astype(np.float64), b.astype(np.float64))
    sims[np.all(a == b, axis=1)] = 1.0
    return np.clip(sims, -1.0, 1.0)


def patch_saliency(frame, keyframe, query: QueryEmbedding, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Per-patch saliency: cos(p, q) - lam * cos(p, p_key), position-aligned.

    With no keyframe the redundancy term is zero.
    """
    p = _patches(frame)
    q = query.patch_space
    if p.ndim != 2 or p.shape[1] != q.shape[0]:
        raise DimensionMismatch(f"patch grid of shape {p.shape} vs query patch space {q.shape}")
    relevance = _rowwise_cosine(p, np.broadcast_to(q, p.shape))
    if keyframe is None or lam == 0:
        return relevance
    k = _patches(keyframe)
    if k.shape[0] != p.shape[0]:
        raise PatchCountMismatch(f"frame has {p.shape[0]} patches, keyframe has {k.shape[0]}")
    if k.shape[1] != p.shape[1]:
        raise DimensionMismatch(f"frame patch dim {p.shape[1]} vs keyframe patch dim {k.shape[1]}")
    return relevance - lam * _rowwise_cosine(p, k)


def merge_weights(saliency, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """softmax(saliency / alpha) with max subtraction (alpha=1e-2 overflows naive exp)."""
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    z = np.asarray(saliency, dtype=np.float64) / alpha
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def merge_frame(frame, keyframe, query: QueryEmbedding, cfg: DfmConfig = DfmConfig()) -> MergedToken:
    saliency = patch_saliency(frame, keyframe, query, cfg.lam)
    w = merge_weights(saliency, cfg.alpha)
    p = _patches(frame).astype(np.float64)
    # the sum of weights is 1 already; dividing by it mirrors the pooling formula
    vector = (w @ p) / np.sum(w)
    return MergedToken(
        vector=vector,
        source_frame=frame.frame_index if isinstance(frame, PatchGrid) else -1,
        paired_keyframe=keyframe.frame_index if isinstance(keyframe, PatchGrid) else None,
        weights=w,
    )


def pool(frame, saliency, alpha: float) -> np.ndarray:
    """Pooled vector for given saliency scores (the map that :func:`merge_gradient` differentiates)."""
    w = merge_weights(saliency, alpha)
    return (w @ _patches(frame).astype(np.float64)) / np.sum(w)


def merge_gradient(frame, saliency, alpha: float) -> np.ndarray:
    """Jacobian (d_p x M) of the pooled vector w.r.t. the saliency scores.

    Column j is ``w_j * (p_j - t) / alpha``.
    """
    p = _patches(frame).astype(np.float64)
    w = merge_weights(saliency, alpha)
    t = w @ p
    return ((p - t) * w[:, None]).T / alpha
