"""Deterministic synthetic embeddings and attention dumps.

All randomness comes from :class:`~diffdistill.rng.SplitMix64` sub-streams
derived from one 64-bit seed:

* ``"query"``            frame-space query (d_f normals), then patch-space query (d_p normals)
* ``"frame-centers"``    C x d_f normals
* ``"frame-noise"``      N x d_f normals
* ``"patch-centers"``    C x M x d_p normals
* ``"patch-noise:<n>"``  M x d_p normals for frame n (so grids can be generated lazily)

Frame ``n`` belongs to cluster ``n * C // N``.  Each member vector is
``normalize(blend * unit(center) + (1 - blend) * unit(noise))``; with
``blend = 1`` every member of a cluster is bitwise identical.  A blend that
cancels to the zero vector (possible when d = 1) falls back to the center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .embeddings import (
    ArrayPatchSource,
    AttentionDump,
    PatchGrid,
    QueryEmbedding,
    VideoEmbeddingSet,
    l2_normalize,
)
from .errors import ConfigError, InvalidFractions
from .rng import SplitMix64, derive_seed


@dataclass(frozen=True)
class SynthSpec:
    n_frames: int
    m_patches: int = 4
    d_f: int = 16
    d_p: int = 8
    cluster_centers: int = 1
    blend: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_frames", "m_patches", "d_f", "d_p", "cluster_centers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError(f"blend must lie in [0, 1], got {self.blend}")


def _unit_rows(rng: SplitMix64, rows: int, dim: int) -> np.ndarray:
    return l2_normalize(rng.normals(rows * dim).reshape(rows, dim))


def _stream(recipe: SynthSpec, label: str) -> SplitMix64:
    return SplitMix64(derive_seed(recipe.seed, label))


def _blend(center: np.ndarray, noise: np.ndarray, blend: float) -> np.ndarray:
    mixed = blend * center + (1.0 - blend) * noise
    cancelled = np.linalg.norm(mixed, axis=-1) < 1e-12
    mixed[cancelled] = np.broadcast_to(center, mixed.shape)[cancelled]
    return l2_normalize(mixed).astype(np.float32)


def _cluster_of(n: int, recipe: SynthSpec) -> int:
    return n * recipe.cluster_centers // recipe.n_frames


class GeneratedPatchSource:
    """Patch grids generated on demand, one frame at a time."""

    def __init__(self, recipe: SynthSpec):
        self.recipe = recipe
        self.n_frames, self.m, self.dim = recipe.n_frames, recipe.m_patches, recipe.d_p
        rng = _stream(recipe, "patch-centers")
        self._centers = _unit_rows(rng, recipe.cluster_centers * recipe.m_patches, recipe.d_p).reshape(
            recipe.cluster_centers, recipe.m_patches, recipe.d_p)

    def grid_array(self, n: int) -> np.ndarray:
        noise = _unit_rows(_stream(self.recipe, f"patch-noise:{n}"), self.m, self.dim)
        return _blend(self._centers[_cluster_of(n, self.recipe)], noise, self.recipe.blend)

    def iter_grids(self) -> Iterator[PatchGrid]:
        for n in range(self.n_frames):
            yield PatchGrid(self.grid_array(n), n)


def gen_query(recipe: SynthSpec) -> QueryEmbedding:
    rng = _stream(recipe, "query")
    frame_q = _unit_rows(rng, 1, recipe.d_f)[0].astype(np.float32)
    patch_q = _unit_rows(rng, 1, recipe.d_p)[0].astype(np.float32)
    return QueryEmbedding(frame_q, patch_q)


def gen_embeddings(recipe: SynthSpec, *, lazy_patches: bool = False,
                   video_id: str | None = None) -> tuple[VideoEmbeddingSet, QueryEmbedding]:
    """Synthetic video (frames + patch grids) and query for ``recipe``.

    ``lazy_patches`` returns a :class:`GeneratedPatchSource` instead of an
    in-memory array; both produce identical grids.
    """
    centers = _unit_rows(_stream(recipe, "frame-centers"), recipe.cluster_centers, recipe.d_f)
    noise = _unit_rows(_stream(recipe, "frame-noise"), recipe.n_frames, recipe.d_f)
    clusters = np.arange(recipe.n_frames) * recipe.cluster_centers // recipe.n_frames
    frames = _blend(centers[clusters], noise, recipe.blend)
    generated = GeneratedPatchSource(recipe)
    if lazy_patches:
        source = generated
    else:
        source = ArrayPatchSource(np.stack([generated.grid_array(n) for n in range(recipe.n_frames)]))
    video = VideoEmbeddingSet(video_id=video_id or f"synth-{recipe.seed}", frame_vectors=frames,
                              patch_source=source)
    return video, gen_query(recipe)


def _top_count(frac: float, total: int) -> int:
    # tolerate representation error such as 0.05 * 100 = 5.000000000000001
    return min(total, max(1, math.ceil(round(frac * total, 9))))


def _permutation(rng: SplitMix64, n: int) -> list[int]:
    items = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.randint(0, i)
        items[i], items[j] = items[j], items[i]
    return items


def _check_fractions(top_frac: float, mass_frac: float) -> None:
    if not 0.0 < top_frac < 1.0:
        raise InvalidFractions(f"top_frac must lie in (0, 1), got {top_frac}")
    if not 0.0 < mass_frac <= 1.0:
        raise InvalidFractions(f"mass_frac must lie in (0, 1], got {mass_frac}")


def gen_attention_dump(n: int, m: int, top_frac: float, mass_frac: float, seed: int = 0,
                       video_id: str = "synth-attention") -> AttentionDump:
    """N x M dump in which ceil(top_frac * n) frames share ``mass_frac`` of the mass.

    Mass is uniform within the top frames and within the rest; the top
    frames are a seeded random subset.  Total mass is 1.
    """
    _check_fractions(top_frac, mass_frac)
    if n < 1 or m < 1:
        raise ConfigError("n and m must be >= 1")
    n_top = _top_count(top_frac, n)
    rest = n - n_top
    top = _permutation(SplitMix64(derive_seed(seed, "attention-top")), n)[:n_top]
    top_mass = mass_frac if rest else 1.0
    weights = np.full((n, m), (1.0 - top_mass) / (rest * m) if rest else 0.0)
    weights[top, :] = top_mass / (n_top * m)
    return AttentionDump(weights, video_id=video_id)


def gen_patch_attention_dump(n: int, m: int, k_top: int, top_frac: float, mass_frac: float,
                             seed: int = 0, video_id: str = "synth-patch-attention") -> AttentionDump:
    """Dump whose non-keyframe patches follow the top_frac / mass_frac split.

    ``k_top`` seeded frames get strictly more frame-level mass than any other
    frame, so the patch profiler designates exactly those as keyframes.  Among
    the remaining (n - k_top) * m patches, ceil(top_frac * count) of them hold
    ``mass_frac`` of the non-keyframe mass.
    """
    _check_fractions(top_frac, mass_frac)
    if not 0 <= k_top < n:
        raise ConfigError(f"k_top must lie in [0, n), got {k_top}")
    rng = SplitMix64(derive_seed(seed, "patch-attention"))
    keyframes = sorted(_permutation(rng, n)[:k_top])
    others = [i for i in range(n) if i not in set(keyframes)]
    count = len(others) * m
    n_top = _top_count(top_frac, count)
    rest = count - n_top
    top_mass = mass_frac if rest else 1.0
    flat = np.full(count, (1.0 - top_mass) / rest if rest else 0.0)
    flat[_permutation(rng, count)[:n_top]] = top_mass / n_top
    weights = np.zeros((n, m))
    weights[others, :] = flat.reshape(len(others), m)
    if keyframes:
        heaviest = float(weights.sum(axis=1).max())
        weights[keyframes, :] = 2.0 * heaviest / m
    return AttentionDump(weights / weights.sum(), video_id=video_id)
