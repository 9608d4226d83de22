"""Differential keyframe selection.

Frames are ranked by cosine relevance to the query; the ranked list is then
scanned once, admitting a frame only while fewer than ``k_max`` keyframes are
held and its maximum cosine to the keyframes already held is strictly below
``tau``.  Cost is O(N log N) for the sort plus O(N K d) for the scan; no N x N
similarity matrix is built.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .embeddings import FrameEmbedding, QueryEmbedding, VideoEmbeddingSet, cosine
from .errors import ConfigError, DimensionMismatch

DEFAULT_TAU = 0.85
DEFAULT_K_MAX = 32


@dataclass(frozen=True)
class DksConfig:
    tau: float = DEFAULT_TAU
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self):
        if not (-1.0 < self.tau <= 1.0):
            raise ConfigError(f"tau must lie in (-1, 1], got {self.tau}")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ConfigError(f"k_max must be an integer >= 1, got {self.k_max}")


@dataclass(frozen=True)
class KeyframeSelection:
    keyframe_indices: tuple[int, ...]
    selection_order: tuple[int, ...]
    relevance: dict[int, float] = field(default_factory=dict)
    video_id: str = ""
    tau: float | None = None
    k_max: int | None = None

    def __len__(self) -> int:
        return len(self.keyframe_indices)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "tau": self.tau,
            "k_max": self.k_max,
            "keyframe_indices": list(self.keyframe_indices),
            "selection_order": list(self.selection_order),
            "relevance": {str(k): v for k, v in sorted(self.relevance.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "KeyframeSelection":
        return cls(
            keyframe_indices=tuple(int(i) for i in data["keyframe_indices"]),
            selection_order=tuple(int(i) for i in data["selection_order"]),
            relevance={int(k): float(v) for k, v in data.get("relevance", {}).items()},
            video_id=data.get("video_id", ""),
            tau=data.get("tau"),
            k_max=data.get("k_max"),
        )


def _vector(x) -> np.ndarray:
    return x.vector if isinstance(x, FrameEmbedding) else np.asarray(x)


def frame_relevance(frame, query: QueryEmbedding) -> float:
    """Cosine between a frame embedding and the frame-space query."""
    v = _vector(frame)
    if v.shape != query.frame_space.shape:
        raise DimensionMismatch(f"frame dim {v.shape} vs query frame space {query.frame_space.shape}")
    return cosine(v, query.frame_space)


def frame_redundancy(frame, context) -> float:
    """Maximum cosine between ``frame`` and any member of ``context``; -1.0 if empty."""
    v = _vector(frame)
    best = -1.0
    for c in context:
        best = max(best, cosine(v, _vector(c)))
    return best


def relevance_scores(frames: np.ndarray, query_vec: np.ndarray) -> np.ndarray:
    """Relevance of every row of ``frames`` (N x d) against ``query_vec``, in float64.

    Bitwise-duplicate rows share one score, so exact ties stay exact.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != np.shape(query_vec)[0]:
        raise DimensionMismatch(f"frames of shape {frames.shape} vs query of shape {np.shape(query_vec)}")
    unique, inverse = np.unique(frames, axis=0, return_inverse=True)
    scores = unique.astype(np.float64) @ np.asarray(query_vec, dtype=np.float64)
    identical = np.all(unique == np.asarray(query_vec, dtype=unique.dtype), axis=1)
    scores[identical] = 1.0
    return np.clip(scores, -1.0, 1.0)[inverse.reshape(-1)]


def rank_by_relevance(scores: np.ndarray) -> np.ndarray:
    """Frame indices by descending score, ascending index on ties."""
    return np.lexsort((np.arange(len(scores)), -scores))


def _select(frames: np.ndarray, order: np.ndarray, tau: float, k_max: int) -> list[int]:
    frames64 = frames.astype(np.float64)
    d = frames.shape[1]
    held = np.empty((min(k_max, len(order)), d), dtype=np.float64)
    held_raw = np.empty((held.shape[0], d), dtype=frames.dtype)
    chosen = [int(order[0])]
    held[0], held_raw[0] = frames64[order[0]], frames[order[0]]
    for idx in order[1:]:
        if len(chosen) >= k_max:
            break
        count = len(chosen)
        sims = held[:count] @ frames64[idx]
        sims[np.all(held_raw[:count] == frames[idx], axis=1)] = 1.0
        if float(np.max(np.minimum(sims, 1.0))) < tau:
            held[count], held_raw[count] = frames64[idx], frames[idx]
            chosen.append(int(idx))
    return chosen


def select_keyframes(video: VideoEmbeddingSet, query: QueryEmbedding,
                     cfg: DksConfig = DksConfig()) -> KeyframeSelection:
    frames = video.frame_vectors
    if frames.shape[0] < 1:
        raise ConfigError("video has no frames")
    scores = relevance_scores(frames, query.frame_space)
    order = rank_by_relevance(scores)
    chosen = _select(frames, order, cfg.tau, cfg.k_max)
    return KeyframeSelection(
        keyframe_indices=tuple(sorted(chosen)),
        selection_order=tuple(chosen),
        relevance={i: float(scores[i]) for i in chosen},
        video_id=video.video_id,
        tau=cfg.tau,
        k_max=cfg.k_max,
    )


def select_top_relevance(video: VideoEmbeddingSet, query: QueryEmbedding, k: int) -> KeyframeSelection:
    """Top-k frames by relevance alone (the query-only ablation)."""
    scores = relevance_scores(video.frame_vectors, query.frame_space)
    chosen = [int(i) for i in rank_by_relevance(scores)[: max(1, min(k, len(scores)))]]
    return KeyframeSelection(tuple(sorted(chosen)), tuple(chosen),
                             {i: float(scores[i]) for i in chosen}, video.video_id, None, k)


def select_uniform(n_frames: int, k: int, video_id: str = "") -> KeyframeSelection:
    """Indices floor(i*N/K) for i < K (deduplicated); ignores the query."""
    k = max(1, min(k, n_frames))
    chosen = sorted({(i * n_frames) // k for i in range(k)})
    return KeyframeSelection(tuple(chosen), tuple(chosen), {}, video_id, None, k)


def select_keyframes_oracle(video: VideoEmbeddingSet, query: QueryEmbedding,
                            cfg: DksConfig = DksConfig()) -> KeyframeSelection:
    """Naive reference selection; the algorithm lives in :mod:`diffdistill.oracles`."""
    ref = oracles.select_keyframes_oracle(video, query, cfg)
    return KeyframeSelection(ref.keyframe_indices, ref.selection_order, dict(ref.relevance),
                             video.video_id, cfg.tau, cfg.k_max)
