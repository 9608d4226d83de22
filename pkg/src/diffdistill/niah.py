"""VideoNIAH: needle clips spliced into long haystack videos, scored by depth and length.

Manifest generation draws from a single SplitMix64 stream.  For each haystack
length (config order) and each case index, the draws are, in order:

1. haystack source: uniform over catalog haystacks at least that long
2. needle source: uniform within the next question type (round-robin over
   the sorted type labels), or uniform over all needles if none are labelled
3. needle length: uniform integer in [lo, min(hi, source length, haystack length)]
4. insert index: uniform integer in [0, haystack_len - needle_len]

The spliced video always has exactly ``haystack_len`` frames: the needle
takes the place of an equal number of trailing haystack frames.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .embeddings import PatchGrid, VideoEmbeddingSet
from .errors import CatalogTooSmall, DimensionMismatch, SourceTooShort, UnknownCaseId
from .rng import SplitMix64

GENERATOR_VERSION = "niah-manifest/1"
DEFAULT_LENGTHS = (2000, 4000, 6000, 8000, 10000)
DEFAULT_NEEDLE_RANGE = (30, 120)


@dataclass(frozen=True)
class CatalogEntry:
    video_id: str
    length: int
    role: str = "haystack"  # or "needle"
    question_type: str | None = None
    query_id: str | None = None
    answer_key: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "CatalogEntry":
        return cls(str(d["video_id"]), int(d["length"]), d.get("role", "haystack"),
                   d.get("question_type"), d.get("query_id"), d.get("answer_key"))


@dataclass(frozen=True)
class NiahConfig:
    lengths: tuple[int, ...] = DEFAULT_LENGTHS
    cases_per_length: int = 600
    needle_range: tuple[int, int] = DEFAULT_NEEDLE_RANGE


@dataclass(frozen=True)
class NiahCase:
    case_id: str
    haystack_source: str
    needle_source: str
    haystack_len: int
    needle_len: int
    insert_index: int
    depth: float
    query_id: str | None
    answer_key: str | None
    question_type: str | None = None


@dataclass(frozen=True)
class NiahManifest:
    cases: tuple[NiahCase, ...]
    seed: int
    generator_version: str = GENERATOR_VERSION
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"generator_version": self.generator_version, "seed": self.seed,
               "config": self.config, "cases": [asdict(c) for c in self.cases]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NiahManifest":
        doc = json.loads(text)
        return cls(tuple(NiahCase(**c) for c in doc["cases"]), int(doc["seed"]),
                   doc.get("generator_version", GENERATOR_VERSION), doc.get("config", {}))

    def case(self, case_id: str) -> NiahCase:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise UnknownCaseId(f"unknown case id {case_id!r}")


def depth_of(insert_index: int, haystack_len: int, needle_len: int) -> float:
    span = haystack_len - needle_len
    return 0.0 if span == 0 else insert_index / span


def build_manifest(catalog: Sequence, cfg: NiahConfig = NiahConfig(), seed: int = 0) -> NiahManifest:
    entries = [e if isinstance(e, CatalogEntry) else CatalogEntry.from_dict(e) for e in catalog]
    lo, hi = cfg.needle_range
    if not 1 <= lo <= hi:
        raise CatalogTooSmall(f"invalid needle range {cfg.needle_range}")
    needles = [e for e in entries if e.role == "needle" and e.length >= lo]
    haystacks = [e for e in entries if e.role != "needle"]
    if not needles:
        raise CatalogTooSmall(f"catalog has no needle clip of at least {lo} frames")
    by_type: dict[str, list[CatalogEntry]] = defaultdict(list)
    for e in needles:
        if e.question_type is not None:
            by_type[e.question_type].append(e)
    type_cycle = sorted(by_type)

    rng = SplitMix64(seed)
    cases = []
    for length in cfg.lengths:
        eligible = [h for h in haystacks if h.length >= length]
        if not eligible:
            raise CatalogTooSmall(f"no haystack source of at least {length} frames")
        if length < lo:
            raise CatalogTooSmall(f"haystack length {length} is shorter than the minimum needle {lo}")
        for c in range(cfg.cases_per_length):
            hay = eligible[rng.randint(0, len(eligible) - 1)]
            pool = by_type[type_cycle[c % len(type_cycle)]] if type_cycle else needles
            needle = pool[rng.randint(0, len(pool) - 1)]
            needle_len = rng.randint(lo, min(hi, needle.length, length))
            insert = rng.randint(0, length - needle_len)
            cases.append(NiahCase(
                case_id=f"L{length}-{c:05d}",
                haystack_source=hay.video_id,
                needle_source=needle.video_id,
                haystack_len=length,
                needle_len=needle_len,
                insert_index=insert,
                depth=depth_of(insert, length, needle_len),
                query_id=needle.query_id,
                answer_key=needle.answer_key,
                question_type=needle.question_type,
            ))
    config = {"lengths": list(cfg.lengths), "cases_per_length": cfg.cases_per_length,
              "needle_range": list(cfg.needle_range)}
    return NiahManifest(tuple(cases), seed, GENERATOR_VERSION, config)


# -- splicing ---------------------------------------------------------------------

def splice_index_map(case: NiahCase) -> list[tuple[str, int]]:
    """For each output frame, ``("haystack" | "needle", source frame index)``."""
    ins, nl, L = case.insert_index, case.needle_len, case.haystack_len
    return ([("haystack", i) for i in range(ins)]
            + [("needle", i) for i in range(nl)]
            + [("haystack", i) for i in range(ins, L - nl)])


class SplicedPatchSource:
    def __init__(self, haystack, needle, case: NiahCase):
        self.haystack, self.needle, self.case = haystack, needle, case
        self.n_frames, self.m, self.dim = case.haystack_len, haystack.m, haystack.dim

    def iter_grids(self) -> Iterator[PatchGrid]:
        hay_it = self.haystack.iter_grids()
        needle_it = self.needle.iter_grids()
        out = 0
        for source, _ in splice_index_map(self.case):
            it = hay_it if source == "haystack" else needle_it
            yield PatchGrid(next(it).patches, out)
            out += 1


def splice_embeddings(haystack: VideoEmbeddingSet, needle: VideoEmbeddingSet,
                      case: NiahCase) -> VideoEmbeddingSet:
    """Embedding-level splice; ``metadata["needle_span"]`` records the needle frames."""
    L, nl, ins = case.haystack_len, case.needle_len, case.insert_index
    if nl > L:
        raise SourceTooShort(f"needle of {nl} frames does not fit a {L}-frame haystack")
    if haystack.n_frames < L:
        raise SourceTooShort(f"haystack {haystack.video_id!r} has {haystack.n_frames} frames, need {L}")
    if needle.n_frames < nl:
        raise SourceTooShort(f"needle {needle.video_id!r} has {needle.n_frames} frames, need {nl}")
    if not 0 <= ins <= L - nl:
        raise SourceTooShort(f"insert index {ins} outside [0, {L - nl}]")
    if haystack.frame_dim != needle.frame_dim:
        raise DimensionMismatch(f"frame dims differ: {haystack.frame_dim} vs {needle.frame_dim}")
    hv, nv = haystack.frame_vectors, needle.frame_vectors
    frames = np.concatenate([hv[:ins], nv[:nl], hv[ins:L - nl]])
    source = None
    hp, np_ = haystack.patch_source, needle.patch_source
    if hp is not None and np_ is not None:
        if (hp.m, hp.dim) != (np_.m, np_.dim):
            raise DimensionMismatch(f"patch grids differ: {(hp.m, hp.dim)} vs {(np_.m, np_.dim)}")
        source = SplicedPatchSource(hp, np_, case)
    return VideoEmbeddingSet(
        video_id=case.case_id,
        frame_vectors=frames,
        patch_source=source,
        fps=haystack.fps,
        metadata={"needle_span": [ins, ins + nl], "haystack_source": haystack.video_id,
                  "needle_source": needle.video_id, "case_id": case.case_id},
    )


# -- scoring ----------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreCell:
    correct: int
    total: int

    @property
    def empty(self) -> bool:
        return self.total == 0

    @property
    def accuracy(self) -> float | None:
        return None if self.total == 0 else self.correct / self.total


@dataclass(frozen=True)
class ScoreGrid:
    lengths: tuple[int, ...]
    buckets: int
    cells: dict  # (length, bucket) -> ScoreCell
    missing: tuple[str, ...] = ()

    def cell(self, length: int, bucket: int) -> ScoreCell:
        return self.cells[(length, bucket)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["length", "bucket_lo", "bucket_hi", "correct", "total", "accuracy"])
        for length in self.lengths:
            for b in range(self.buckets):
                c = self.cells[(length, b)]
                writer.writerow([length, repr(b / self.buckets), repr((b + 1) / self.buckets),
                                 c.correct, c.total, "" if c.empty else repr(c.accuracy)])
        return buf.getvalue()


def depth_bucket(depth: float, buckets: int) -> int:
    """Bucket b covers [b/B, (b+1)/B); the last bucket also takes depth 1."""
    return min(int(depth * buckets), buckets - 1)


def _normalize_answer(answer) -> str:
    return str(answer).strip()


def score(manifest: NiahManifest, predictions: Mapping[str, object], buckets: int = 10,
          *, strict: bool = False) -> ScoreGrid:
    """Accuracy per (haystack length, depth bucket).

    Cases without a prediction count as wrong under ``strict``; otherwise they
    are left out and listed in ``ScoreGrid.missing``.
    """
    known = {c.case_id for c in manifest.cases}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise UnknownCaseId(f"predictions reference unknown case ids: {unknown[:5]}")
    lengths = tuple(sorted({c.haystack_len for c in manifest.cases}))
    tally = {(L, b): [0, 0] for L in lengths for b in range(buckets)}
    missing = []
    for c in manifest.cases:
        key = (c.haystack_len, depth_bucket(c.depth, buckets))
        if c.case_id not in predictions:
            missing.append(c.case_id)
            if not strict:
                continue
            tally[key][1] += 1
            continue
        tally[key][1] += 1
        if _normalize_answer(predictions[c.case_id]) == _normalize_answer(c.answer_key):
            tally[key][0] += 1
    cells = {k: ScoreCell(v[0], v[1]) for k, v in tally.items()}
    return ScoreGrid(lengths, buckets, cells, tuple(missing))


def read_predictions(text: str) -> dict[str, object]:
    """Parse JSON lines of ``{case_id, answer}``."""
    out = {}
    for line in text.splitlines():
        if line.strip():
            rec = json.loads(line)
            out[str(rec["case_id"])] = rec["answer"]
    return out
