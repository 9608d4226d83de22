"""Attention-concentration and redundancy statistics over attention dumps.

Curves and buckets use 1% resolution.  For N ranked items, percentile p
(1..100) covers the top ``ceil(p * N / 100)`` items, so the item at rank r
(0-based) falls into bucket ``floor(100 * r / N)`` (bucket b holds
percentile b + 1).
"""

from __future__ import annotations

import csv
import io
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .embeddings import (
    DEFAULT_MASS_TOLERANCE,
    AttentionDump,
    PatchSource,
    VideoEmbeddingSet,
)
from .errors import AllZero, DimensionMismatch, KTopExceedsN, NormalizationViolation, TooFewFrames
from .rng import SplitMix64

PERCENTILES = np.arange(1, 101)


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sims = np.einsum("...d,...d->...", a.astype(np.float64), b.astype(np.float64))
    sims = np.where(np.all(a == b, axis=-1), 1.0, sims)
    return np.clip(sims, -1.0, 1.0)


def _rank_desc(scores: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(len(scores)), -scores))


def _bucket_of_rank(n: int) -> np.ndarray:
    return (100 * np.arange(n)) // n


def frame_attention(dump: AttentionDump, *, tolerance: float = DEFAULT_MASS_TOLERANCE,
                    lenient: bool = False) -> np.ndarray:
    """Per-frame attention a_n = sum over patches of a_n^m.

    Raises :class:`NormalizationViolation` when the total mass is more than
    ``tolerance`` away from 1; with ``lenient`` it warns instead.
    """
    w = np.asarray(dump.weights, dtype=np.float64)
    total = float(w.sum())
    if not abs(total - 1.0) <= tolerance:
        message = f"attention mass sums to {total:.6g}, outside 1 +/- {tolerance:g}"
        if not lenient:
            raise NormalizationViolation(message)
        warnings.warn(message, stacklevel=2)
    return w.sum(axis=1)


@dataclass(frozen=True)
class CumulativeCurve:
    """Cumulative share of mass held by the top p% of items, p = 1..100."""

    mass: np.ndarray
    n_items: int

    def at(self, percent: int) -> float:
        if percent == 0:
            return 0.0
        return float(self.mass[int(percent) - 1])


def cumulative_curve(scores) -> CumulativeCurve:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0 or np.any(scores < 0):
        raise ValueError("scores must be a non-empty array of non-negative values")
    total = scores.sum()
    if not total > 0:
        raise AllZero("all scores are zero; the cumulative curve is undefined")
    ranked = scores[_rank_desc(scores)]
    cum = np.cumsum(ranked) / total
    n = len(scores)
    counts = (PERCENTILES * n + 99) // 100
    return CumulativeCurve(cum[counts - 1], n)


def neighbor_similarity(ranked_frames, window: int = 3) -> np.ndarray:
    """Mean cosine of each frame to its ``window`` nearest neighbours in the ranking, per bucket.

    ``ranked_frames`` is an (N, d) array already sorted by attention.  The
    neighbours of rank r are the ``window`` closest other ranks by distance,
    with the higher-attention side first on equal distance.  Returns 100
    bucket means; buckets with no frame are NaN.
    """
    frames = np.asarray(ranked_frames)
    n = frames.shape[0]
    if n < window + 1:
        raise TooFewFrames(f"need at least {window + 1} frames, got {n}")
    per_frame = np.empty(n)
    for r in range(n):
        neighbours = _rank_neighbours(r, n, window)
        centre = np.broadcast_to(frames[r], (window, frames.shape[1]))
        per_frame[r] = _cosine_rows(frames[neighbours], centre).mean()
    return _bucket_means(per_frame)


def _rank_neighbours(r: int, n: int, window: int) -> list[int]:
    out: list[int] = []
    step = 1
    while len(out) < window:
        for i in (r - step, r + step):
            if 0 <= i < n and len(out) < window:
                out.append(i)
        step += 1
    return out


def _bucket_means(values_by_rank: np.ndarray) -> np.ndarray:
    n = len(values_by_rank)
    buckets = _bucket_of_rank(n)
    sums = np.bincount(buckets, weights=values_by_rank, minlength=100)
    counts = np.bincount(buckets, minlength=100)
    out = np.full(100, np.nan)
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz]
    return out


def random_pair_baseline(frames, n_pairs: int, seed: int = 0) -> float:
    """Mean cosine over ``n_pairs`` distinct unordered frame pairs drawn by SplitMix64.

    All pairs are used when ``n_pairs`` reaches N(N-1)/2.
    """
    frames = np.asarray(frames.frame_vectors if isinstance(frames, VideoEmbeddingSet) else frames)
    n = frames.shape[0]
    if n < 2:
        raise TooFewFrames(f"need at least 2 frames, got {n}")
    total = n * (n - 1) // 2
    if n_pairs >= total:
        pairs = list(itertools.combinations(range(n), 2))
    else:
        rng = SplitMix64(seed)
        seen: set[tuple[int, int]] = set()
        pairs = []
        while len(pairs) < n_pairs:
            i, j = rng.randint(0, n - 1), rng.randint(0, n - 1)
            key = (min(i, j), max(i, j))
            if i != j and key not in seen:
                seen.add(key)
                pairs.append(key)
    a = frames[[p[0] for p in pairs]]
    b = frames[[p[1] for p in pairs]]
    return float(_cosine_rows(a, b).mean())


@dataclass(frozen=True)
class AttentionProfile:
    frame_scores: np.ndarray
    ranking: np.ndarray
    cumulative: CumulativeCurve
    neighbor_similarity: np.ndarray
    baseline: float

    def to_csv(self) -> str:
        return _profile_csv(self.cumulative, self.neighbor_similarity)


def frame_profile(dump: AttentionDump, video: VideoEmbeddingSet, *, window: int = 3,
                  n_pairs: int = 1000, seed: int = 0, tolerance: float = DEFAULT_MASS_TOLERANCE,
                  lenient: bool = False) -> AttentionProfile:
    """Frame-level concentration curve, neighbour similarity and random-pair baseline."""
    if dump.n_frames != video.n_frames:
        raise DimensionMismatch(f"dump has {dump.n_frames} frames, video has {video.n_frames}")
    scores = frame_attention(dump, tolerance=tolerance, lenient=lenient)
    ranking = _rank_desc(scores)
    return AttentionProfile(
        frame_scores=scores,
        ranking=ranking,
        cumulative=cumulative_curve(scores),
        neighbor_similarity=neighbor_similarity(video.frame_vectors[ranking], window),
        baseline=random_pair_baseline(video.frame_vectors, n_pairs, seed),
    )


@dataclass(frozen=True)
class PatchProfile:
    keyframes: tuple[int, ...]
    pairing: dict[int, int]
    patch_weights: np.ndarray | None
    similarity: np.ndarray | None
    cumulative: CumulativeCurve | None
    similarity_by_bucket: np.ndarray | None

    @property
    def empty(self) -> bool:
        return self.cumulative is None

    def to_csv(self) -> str:
        if self.empty:
            return "# EmptyProfile: every frame is a keyframe\n" + _profile_csv(None, None)
        return _profile_csv(self.cumulative, self.similarity_by_bucket)


def patch_profile(dump: AttentionDump, grids, k_top: int = 32, *,
                  tolerance: float = DEFAULT_MASS_TOLERANCE, lenient: bool = False) -> PatchProfile:
    """Patch-level attention and keyframe-similarity profile.

    The ``k_top`` frames with the most attention are keyframes (ties to the
    lower index).  Each non-keyframe is paired with its nearest preceding
    keyframe, or the first keyframe if none precedes it.  For every
    non-keyframe patch the profile records its attention (normalised over
    all non-keyframe patches) and its cosine to the same-position keyframe
    patch.  ``grids`` is an (N, M, d_p) array or a :class:`PatchSource`.
    """
    n, m = dump.n_frames, dump.m
    if k_top > n or k_top < 1:
        raise KTopExceedsN(f"k_top={k_top} must lie in [1, N={n}]")
    scores = frame_attention(dump, tolerance=tolerance, lenient=lenient)
    keyframes = tuple(sorted(int(i) for i in _rank_desc(scores)[:k_top]))
    keyset = set(keyframes)
    others = [i for i in range(n) if i not in keyset]
    pairing = {}
    for i in others:
        preceding = [k for k in keyframes if k < i]
        pairing[i] = preceding[-1] if preceding else keyframes[0]
    if not others:
        return PatchProfile(keyframes, pairing, None, None, None, None)

    array = _grid_array(grids, n, m)
    weights = np.asarray(dump.weights, dtype=np.float64)[others]
    total = weights.sum()
    if not total > 0:
        raise AllZero("non-keyframe patches carry no attention")
    weights = weights / total
    paired = array[[pairing[i] for i in others]]
    similarity = _cosine_rows(array[others], paired)
    flat_w, flat_s = weights.reshape(-1), similarity.reshape(-1)
    ranking = _rank_desc(flat_w)
    return PatchProfile(
        keyframes=keyframes,
        pairing=pairing,
        patch_weights=weights,
        similarity=similarity,
        cumulative=cumulative_curve(flat_w),
        similarity_by_bucket=_bucket_means(flat_s[ranking]),
    )


def _grid_array(grids, n: int, m: int) -> np.ndarray:
    if isinstance(grids, VideoEmbeddingSet):
        grids = grids.patch_source
    if isinstance(grids, PatchSource):
        grids = np.stack([g.patches for g in grids.iter_grids()])
    array = np.asarray(grids)
    if array.ndim != 3 or array.shape[:2] != (n, m):
        raise DimensionMismatch(f"patch grids of shape {array.shape} do not match dump ({n}, {m})")
    return array


def _profile_csv(curve: CumulativeCurve | None, similarity: np.ndarray | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["percentile", "cumulative_mass", "mean_similarity"])
    if curve is None:
        return buf.getvalue()
    for p in PERCENTILES:
        s = similarity[p - 1]
        writer.writerow([int(p), repr(curve.at(int(p))), "" if np.isnan(s) else repr(float(s))])
    return buf.getvalue()
