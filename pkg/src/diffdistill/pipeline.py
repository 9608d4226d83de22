"""Distillation pipeline: keyframe selection, then merging of every other frame.

The output keeps frames in temporal order: keyframes as full patch grids,
non-keyframes as one merged token paired with their nearest preceding
keyframe (frames before the first keyframe are merged without a pairing).
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .dfm import DfmConfig, MergedToken, merge_frame
from .dks import (
    DksConfig,
    KeyframeSelection,
    select_keyframes,
    select_top_relevance,
    select_uniform,
)
from .embeddings import PatchGrid, PatchSource, QueryEmbedding, VideoEmbeddingSet, check_dims
from .errors import DimensionMismatch, EmptyGrid, IoFailure, KExceedsN, StreamExhausted


class SamplingMode(str, enum.Enum):
    DKS = "dks"
    QUERY_ONLY = "query_only"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class DistillConfig:
    dks: DksConfig = field(default_factory=DksConfig)
    dfm: DfmConfig = field(default_factory=DfmConfig)
    sampling_mode: SamplingMode = SamplingMode.DKS

    def to_dict(self) -> dict:
        return {"tau": self.dks.tau, "k_max": self.dks.k_max, "lambda": self.dfm.lam,
                "alpha": self.dfm.alpha, "sampling_mode": SamplingMode(self.sampling_mode).value}


@dataclass(frozen=True)
class BudgetReport:
    n_frames: int
    patches_per_frame: int
    keyframes: int
    original_tokens: int
    compressed_tokens: int
    reduction_ratio: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def budget(n: int, m: int, k: int) -> BudgetReport:
    """Token counts before (M*N) and after (M*K + N - K) distillation."""
    if m < 1 or n < 1 or k < 1:
        raise KExceedsN(f"need N >= 1, M >= 1, K >= 1 (got N={n}, M={m}, K={k})")
    if k > n:
        raise KExceedsN(f"K={k} exceeds N={n}")
    original = m * n
    compressed = m * k + (n - k)
    return BudgetReport(n, m, k, original, compressed, 1.0 - compressed / original)


@dataclass(frozen=True)
class CostProfile:
    per_token_cost: float = 1.0
    attention_quadratic_coeff: float = 0.0


def estimate_cost(token_count: int, profile: CostProfile = CostProfile()) -> float:
    """Proxy cost a*L + b*L**2; a stand-in for measured compute, not a FLOP count."""
    if token_count < 0:
        raise ValueError(f"token_count must be >= 0, got {token_count}")
    L = float(token_count)
    return profile.per_token_cost * L + profile.attention_quadratic_coeff * L * L


# -- sequence items -------------------------------------------------------------

@dataclass(frozen=True)
class KeyframeGrid:
    frame_index: int
    patches: np.ndarray


@dataclass(frozen=True)
class Merged:
    token: MergedToken

    @property
    def frame_index(self) -> int:
        return self.token.source_frame


@dataclass(frozen=True)
class DistilledSequence:
    video_id: str
    items: tuple
    budget: BudgetReport
    selection: KeyframeSelection
    config: DistillConfig
    saturated: bool = False

    def token_count(self) -> int:
        return sum(it.patches.shape[0] if isinstance(it, KeyframeGrid) else 1 for it in self.items)

    def token_matrix(self) -> np.ndarray:
        """All output tokens in order as one float32 (L x d_p) array."""
        rows = [it.patches if isinstance(it, KeyframeGrid) else it.token.vector[None, :]
                for it in self.items]
        return np.concatenate(rows).astype(np.float32)

    def to_dict(self, include_vectors: bool = True) -> dict:
        items, offset = [], 0
        for it in self.items:
            if isinstance(it, KeyframeGrid):
                entry = {"type": "keyframe", "frame_index": it.frame_index, "token_offset": offset,
                         "n_tokens": int(it.patches.shape[0])}
                if include_vectors:
                    entry["patches"] = it.patches.tolist()
                offset += it.patches.shape[0]
            else:
                tok = it.token
                entry = {"type": "merged", "frame_index": tok.source_frame,
                         "paired_keyframe": tok.paired_keyframe, "token_offset": offset,
                         "n_tokens": 1}
                if include_vectors:
                    entry["vector"] = tok.vector.tolist()
                offset += 1
            items.append(entry)
        return {
            "video_id": self.video_id,
            "config": self.config.to_dict(),
            "selection": self.selection.to_dict(),
            "budget": self.budget.to_dict(),
            "saturated_below_k": self.saturated,
            "items": items,
        }

    def to_json(self, include_vectors: bool = True) -> str:
        return json.dumps(self.to_dict(include_vectors), sort_keys=True)


def weights_csv(seq: DistilledSequence) -> str:
    """Per-frame merge weights as CSV (frame_index, paired_keyframe, patch, weight)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_index", "paired_keyframe", "patch", "weight"])
    for it in seq.items:
        if isinstance(it, Merged):
            pk = "" if it.token.paired_keyframe is None else it.token.paired_keyframe
            for m, w in enumerate(it.token.weights):
                writer.writerow([it.frame_index, pk, m, repr(float(w))])
    return buf.getvalue()


# -- selection --------------------------------------------------------------------

def _select(video: VideoEmbeddingSet, query: QueryEmbedding, cfg: DistillConfig) -> KeyframeSelection:
    mode = SamplingMode(cfg.sampling_mode)
    if mode is SamplingMode.DKS:
        return select_keyframes(video, query, cfg.dks)
    if mode is SamplingMode.QUERY_ONLY:
        return select_top_relevance(video, query, cfg.dks.k_max)
    return select_uniform(video.n_frames, cfg.dks.k_max, video.video_id)


def _finish(video, selection, items, m, cfg) -> DistilledSequence:
    k = len(selection.keyframe_indices)
    return DistilledSequence(
        video_id=video.video_id,
        items=tuple(items),
        budget=budget(video.n_frames, m, k),
        selection=selection,
        config=cfg,
        saturated=k < min(cfg.dks.k_max, video.n_frames),
    )


def _require_patches(video: VideoEmbeddingSet) -> PatchSource:
    if video.patch_source is None:
        raise DimensionMismatch(f"video {video.video_id!r} has no patch grids to distill")
    if video.patch_source.n_frames != video.n_frames:
        raise StreamExhausted(f"patch source holds {video.patch_source.n_frames} grids "
                              f"for {video.n_frames} frames")
    return video.patch_source


def distill(video: VideoEmbeddingSet, query: QueryEmbedding,
            cfg: DistillConfig = DistillConfig()) -> DistilledSequence:
    """Select keyframes and merge the rest, with all patch grids loaded at once."""
    check_dims(video, query)
    _require_patches(video)
    selection = _select(video, query, cfg)
    grids = video.patch_array()
    keyset = set(selection.keyframe_indices)
    items: list = []
    last_key = None
    for n in range(video.n_frames):
        if n in keyset:
            items.append(KeyframeGrid(n, grids[n]))
            last_key = n
        else:
            key = None if last_key is None else PatchGrid(grids[last_key], last_key)
            items.append(Merged(merge_frame(PatchGrid(grids[n], n), key, query, cfg.dfm)))
    return _finish(video, selection, items, grids.shape[1], cfg)


class ResidencyMeter:
    """Counts live :class:`PatchGrid` objects handed out by a patch source.

    Every grid pulled through :meth:`track` gets a finaliser; the peak is
    sampled each time a new grid enters.
    """

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.pulled = 0

    def _released(self):
        self.live -= 1

    def track(self, source: PatchSource) -> Iterator[PatchGrid]:
        it = source.iter_grids()
        while True:
            try:
                grid = next(it)
            except StopIteration:
                return
            self.live += 1
            self.pulled += 1
            self.peak = max(self.peak, self.live)
            weakref.finalize(grid, self._released)
            yield grid
            del grid


def stream_distill(video: VideoEmbeddingSet, query: QueryEmbedding,
                   cfg: DistillConfig = DistillConfig(),
                   meter: ResidencyMeter | None = None) -> DistilledSequence:
    """Two-pass distillation holding at most two patch grids at a time.

    Pass 1 selects keyframes from frame embeddings only.  Pass 2 reads the
    patch source once, in order, keeping just the current grid and the most
    recent keyframe grid.  Output is identical to :func:`distill`.
    """
    check_dims(video, query)
    source = video.patch_source
    if source is None:
        raise DimensionMismatch(f"video {video.video_id!r} has no patch grids to distill")
    selection = _select(video, query, cfg)
    keyset = set(selection.keyframe_indices)
    meter = meter if meter is not None else ResidencyMeter()
    grids = meter.track(source)
    items: list = []
    key_grid = None
    for n in range(video.n_frames):
        try:
            grid = next(grids)
        except StopIteration:
            raise StreamExhausted(f"patch stream ended after {n} of {video.n_frames} grids") from None
        if grid.frame_index != n:
            raise StreamExhausted(f"patch stream out of order: expected frame {n}, got {grid.frame_index}")
        if n in keyset:
            items.append(KeyframeGrid(n, grid.patches))
            key_grid = grid
        else:
            items.append(Merged(merge_frame(grid, key_grid, query, cfg.dfm)))
        del grid
    return _finish(video, selection, items, source.m, cfg)


def distill_many(pairs: Sequence[tuple[VideoEmbeddingSet, QueryEmbedding]],
                 cfg: DistillConfig = DistillConfig(), *, jobs: int = 1,
                 streaming: bool = False) -> list[DistilledSequence]:
    """Distill several videos; results keep input order whatever ``jobs`` is."""
    fn = stream_distill if streaming else distill
    if jobs <= 1:
        return [fn(v, q, cfg) for v, q in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda vq: fn(vq[0], vq[1], cfg), pairs))


# -- hyperparameter sweep -----------------------------------------------------------

DEFAULT_TAU_GRID = (0.35, 0.5, 0.85, 1.0)
DEFAULT_ALPHA_GRID = (1.0, 1e-1, 1e-2, 1e-3)
SWEEP_COLUMNS = ("tau", "alpha", "n_videos", "mean_keyframes", "mean_reduction", "score")

ScoreHook = Callable[[float, float, Sequence[DistilledSequence]], "float | None"]


@dataclass(frozen=True)
class SweepRow:
    tau: float
    alpha: float
    n_videos: int
    mean_keyframes: float
    mean_reduction: float
    score: float | None = None


def run_sweep(videos: Sequence[VideoEmbeddingSet], queries: Sequence[QueryEmbedding],
              tau_grid: Sequence[float] = DEFAULT_TAU_GRID,
              alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
              cfg: DistillConfig = DistillConfig(), score_hook: ScoreHook | None = None,
              *, jobs: int = 1) -> list[SweepRow]:
    """One row per (tau, alpha) cell, tau-major in grid order.

    Budget columns depend only on the selection, so full merging runs only
    when ``score_hook`` is given; the hook receives the cell's sequences.
    """
    if not tau_grid or not alpha_grid:
        raise EmptyGrid("tau and alpha grids must both be non-empty")
    if len(queries) == 1 and len(videos) > 1:
        queries = list(queries) * len(videos)
    if len(queries) != len(videos):
        raise DimensionMismatch(f"{len(videos)} videos but {len(queries)} queries")
    rows = []
    for tau in tau_grid:
        dks_cfg = DksConfig(tau=tau, k_max=cfg.dks.k_max)
        stats = []
        for video, query in zip(videos, queries):
            sel = _select(video, query, DistillConfig(dks_cfg, cfg.dfm, cfg.sampling_mode))
            m = video.patch_source.m if video.patch_source is not None else 1
            stats.append(budget(video.n_frames, m, len(sel.keyframe_indices)))
        for alpha in alpha_grid:
            score = None
            if score_hook is not None:
                cell_cfg = DistillConfig(dks_cfg, DfmConfig(cfg.dfm.lam, alpha), cfg.sampling_mode)
                seqs = distill_many(list(zip(videos, queries)), cell_cfg, jobs=jobs)
                score = score_hook(tau, alpha, seqs)
            rows.append(SweepRow(
                tau=float(tau), alpha=float(alpha), n_videos=len(videos),
                mean_keyframes=float(np.mean([b.keyframes for b in stats])) if stats else math.nan,
                mean_reduction=float(np.mean([b.reduction_ratio for b in stats])) if stats else math.nan,
                score=score))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([repr(r.tau), repr(r.alpha), r.n_videos, repr(r.mean_keyframes),
                         repr(r.mean_reduction), "" if r.score is None else repr(r.score)])
    return buf.getvalue()


def predictions_score_hook(path: str | Path) -> ScoreHook:
    """Score hook backed by a JSON-lines file of ``{tau, alpha, video_id, correct}`` records.

    A cell's score is the fraction of matching records marked correct; cells
    without records score ``None``.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    records = [json.loads(line) for line in lines if line.strip()]

    def hook(tau: float, alpha: float, seqs: Sequence[DistilledSequence]) -> float | None:
        ids = {s.video_id for s in seqs}
        hits = [bool(r["correct"]) for r in records
                if math.isclose(float(r["tau"]), tau) and math.isclose(float(r["alpha"]), alpha)
                and r.get("video_id", next(iter(ids), None)) in ids]
        return sum(hits) / len(hits) if hits else None

    return hook
