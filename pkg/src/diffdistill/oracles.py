"""Brute-force reference implementations used for differential testing.

Nothing here imports from :mod:`diffdistill.dks` or :mod:`diffdistill.dfm`;
the code is deliberately plain Python (lists, loops, ``math.fsum``) so that a
bug in the vectorised path cannot be mirrored here.
"""

from __future__ import annotations

import math
from typing import NamedTuple

from .errors import DimensionMismatch, NonPositiveAlpha, PatchCountMismatch


class OracleSelection(NamedTuple):
    keyframe_indices: tuple
    selection_order: tuple
    relevance: dict


class OracleToken(NamedTuple):
    vector: list
    weights: list


def _as_rows(x) -> list[list[float]]:
    if hasattr(x, "frame_vectors"):
        x = x.frame_vectors
    elif hasattr(x, "patches"):
        x = x.patches
    return [[float(v) for v in row] for row in x]


def _as_vec(x) -> list[float]:
    return [float(v) for v in x]


def _cos(a: list[float], b: list[float]) -> float:
    if len(a) != len(b):
        raise DimensionMismatch(f"length {len(a)} vs {len(b)}")
    if a == b:
        return 1.0
    value = math.fsum(x * y for x, y in zip(a, b))
    return min(1.0, max(-1.0, value))


def select_keyframes_oracle(video, query, cfg) -> OracleSelection:
    """Keyframe selection recomputing every similarity it needs at every step."""
    frames = _as_rows(video)
    q = _as_vec(query.frame_space)
    tau, k_max = float(cfg.tau), int(cfg.k_max)
    relevance = [_cos(f, q) for f in frames]
    ranked = sorted(range(len(frames)), key=lambda i: (-relevance[i], i))
    kept = [ranked[0]]
    for candidate in ranked:
        if candidate in kept:
            continue
        redundancy = max(_cos(frames[candidate], frames[b]) for b in kept)
        if len(kept) < k_max and redundancy < tau:
            kept.append(candidate)
    return OracleSelection(tuple(sorted(kept)), tuple(kept), {i: relevance[i] for i in kept})


def dfm_oracle(frame, keyframe, query, cfg) -> OracleToken:
    """Straight-line merge of one frame with exactly rounded sums throughout."""
    alpha, lam = float(cfg.alpha), float(cfg.lam)
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    patches = _as_rows(frame)
    q = _as_vec(query.patch_space)
    key = _as_rows(keyframe) if keyframe is not None else None
    if key is not None and len(key) != len(patches):
        raise PatchCountMismatch(f"{len(patches)} vs {len(key)} patches")
    saliency = []
    for m, p in enumerate(patches):
        s = _cos(p, q)
        if key is not None:
            s -= lam * _cos(p, key[m])
        saliency.append(s)
    top = max(s / alpha for s in saliency)
    raw = [math.exp(s / alpha - top) for s in saliency]
    total = math.fsum(raw)
    weights = [r / total for r in raw]
    wsum = math.fsum(weights)
    dim = len(patches[0])
    vector = [math.fsum(weights[m] * patches[m][j] for m in range(len(patches))) / wsum
              for j in range(dim)]
    return OracleToken(vector, weights)


def pairwise_max_cosine(vectors) -> float:
    """Largest cosine over all unordered pairs (brute force); -1.0 for fewer than two."""
    rows = _as_rows(vectors)
    best = -1.0
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            best = max(best, _cos(rows[i], rows[j]))
    return best
