"""Binary tensor files and per-video JSON sidecars.

Layout (all integers and floats little-endian)::

    offset  size  field
    0       4     magic  b"VLMP"
    4       4     version (u32, currently 1)
    8       1     kind (u8: 1 FRAME_SET, 2 PATCH_SET, 3 QUERY, 4 ATTENTION, 5 TOKENS)
    9       3     zero padding
    12      4     n (u32)
    16      4     m (u32; 1 for FRAME_SET / QUERY / TOKENS)
    20      4     d (u32; 1 for ATTENTION)
    24      ...   n*m*d float32, row-major (frame, then patch, then dimension)

QUERY files hold two rows (frame-space vector, then patch-space vector) when
both encoders share a dimension, or a single row used for both spaces.  When
the dimensions differ, write the two spaces as two one-row QUERY files and
load them with :func:`load_query`.

TOKENS files hold unnormalised rows (distilled token sequences) and are the
only kind exempt from the unit-norm check.
"""

from __future__ import annotations

import enum
import json
import os
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .embeddings import (
    DEFAULT_MASS_TOLERANCE,
    NORM_TOLERANCE,
    ArrayPatchSource,
    AttentionDump,
    PatchGrid,
    PatchSource,
    QueryEmbedding,
    VideoEmbeddingSet,
    l2_normalize,
    raise_first,
    validate,
)
from .errors import (
    BadMagic,
    DimensionMismatch,
    IoFailure,
    NormViolation,
    SizeMismatch,
    VersionUnsupported,
)

MAGIC = b"VLMP"
VERSION = 1
HEADER = struct.Struct("<4sIB3xIII")
_F32 = np.dtype("<f4")


class Kind(enum.IntEnum):
    FRAME_SET = 1
    PATCH_SET = 2
    QUERY = 3
    ATTENTION = 4
    TOKENS = 5


class TensorFileHeader:
    __slots__ = ("magic", "version", "kind", "n", "m", "d")

    def __init__(self, kind: Kind, n: int, m: int, d: int, version: int = VERSION,
                 magic: bytes = MAGIC):
        self.magic, self.version, self.kind = magic, version, kind
        self.n, self.m, self.d = n, m, d

    @property
    def payload_bytes(self) -> int:
        return self.n * self.m * self.d * 4

    def pack(self) -> bytes:
        return HEADER.pack(self.magic, self.version, int(self.kind), self.n, self.m, self.d)

    def __repr__(self) -> str:
        return (f"TensorFileHeader(kind={self.kind.name}, n={self.n}, m={self.m}, d={self.d}, "
                f"version={self.version})")


def read_header(path: str | os.PathLike) -> TensorFileHeader:
    """Parse and check the header; verifies the payload size against the file size."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read(HEADER.size)
        size = path.stat().st_size
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        if raw[:4] != MAGIC[: len(raw)] or len(raw) < 4:
            raise BadMagic(f"{path}: truncated or missing header")
        raise SizeMismatch(f"{path}: header truncated ({len(raw)} of {HEADER.size} bytes)")
    magic, version, kind, n, m, d = HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} (supported: {VERSION})")
    try:
        kind = Kind(kind)
    except ValueError:
        raise VersionUnsupported(f"{path}: unknown kind code {kind}") from None
    header = TensorFileHeader(kind, n, m, d, version, magic)
    actual = size - HEADER.size
    if actual != header.payload_bytes:
        raise SizeMismatch(
            f"{path}: header declares n={n}, m={m}, d={d} ({header.payload_bytes} payload bytes) "
            f"but file holds {actual}")
    return header


def _read_payload(path: Path, header: TensorFileHeader) -> np.ndarray:
    try:
        data = np.fromfile(path, dtype=_F32, offset=HEADER.size)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return data.astype(np.float32).reshape(header.n, header.m, header.d)


def _maybe_renormalize(rows: np.ndarray, renormalize: bool) -> np.ndarray:
    if not renormalize:
        return rows
    return l2_normalize(rows).astype(np.float32)


def load_tensor_file(path: str | os.PathLike, *, renormalize: bool = False,
                     mass_tolerance: float = DEFAULT_MASS_TOLERANCE, check: bool = True):
    """Load and fully validate a tensor file.

    With ``check=False`` the container is returned without the invariant
    check (header and size are always checked); pass it to
    :func:`~diffdistill.embeddings.validate` for the full violation list.

    Returns a :class:`VideoEmbeddingSet` (FRAME_SET, no patch grids attached),
    an :class:`ArrayPatchSource` (PATCH_SET), a :class:`QueryEmbedding`
    (QUERY), an :class:`AttentionDump` (ATTENTION) or a float32 array
    (TOKENS).
    """
    path = Path(path)
    header = read_header(path)
    data = _read_payload(path, header)
    kind = header.kind
    if kind is Kind.FRAME_SET:
        rows = _maybe_renormalize(data[:, 0, :], renormalize)
        container = VideoEmbeddingSet(video_id=path.stem, frame_vectors=rows)
    elif kind is Kind.PATCH_SET:
        container = ArrayPatchSource(_maybe_renormalize(data, renormalize))
    elif kind is Kind.QUERY:
        rows = _maybe_renormalize(data[:, 0, :], renormalize)
        if header.n == 1:
            container = QueryEmbedding.shared(rows[0])
        elif header.n == 2:
            container = QueryEmbedding(rows[0], rows[1])
        else:
            raise SizeMismatch(f"{path}: QUERY file must hold 1 or 2 rows, found {header.n}")
    elif kind is Kind.ATTENTION:
        container = AttentionDump(data[:, :, 0], video_id=path.stem)
    else:
        return data[:, 0, :]
    if check:
        raise_first(validate(container, mass_tolerance=mass_tolerance))
    return container


def load_query(frame_path: str | os.PathLike, patch_path: str | os.PathLike | None = None,
               *, renormalize: bool = False) -> QueryEmbedding:
    """Query from one QUERY file, or from two one-row files (frame space, patch space)."""
    first = load_tensor_file(frame_path, renormalize=renormalize)
    if not isinstance(first, QueryEmbedding):
        raise DimensionMismatch(f"{frame_path} is not a QUERY file")
    if patch_path is None:
        return first
    second = load_tensor_file(patch_path, renormalize=renormalize)
    if not isinstance(second, QueryEmbedding):
        raise DimensionMismatch(f"{patch_path} is not a QUERY file")
    return QueryEmbedding(first.frame_space, second.patch_space)


def _write(path: Path, header: TensorFileHeader, blocks) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(header.pack())
            for block in blocks:
                fh.write(np.ascontiguousarray(block, dtype=_F32).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_tensor_file(container, path: str | os.PathLike) -> None:
    """Serialise a container.  ``load_tensor_file(write_tensor_file(x))`` reproduces x bit-exactly."""
    path = Path(path)
    if isinstance(container, np.ndarray):
        arr = np.asarray(container)
        if arr.ndim != 2:
            raise DimensionMismatch(f"TOKENS payload must be 2-D, got shape {arr.shape}")
        _write(path, TensorFileHeader(Kind.TOKENS, arr.shape[0], 1, arr.shape[1]), [arr])
        return
    if isinstance(container, (QueryEmbedding, AttentionDump, VideoEmbeddingSet)):
        raise_first(validate(container))
    if isinstance(container, VideoEmbeddingSet):
        fv = container.frame_vectors
        _write(path, TensorFileHeader(Kind.FRAME_SET, fv.shape[0], 1, fv.shape[1]), [fv])
    elif isinstance(container, QueryEmbedding):
        f, p = container.frame_space, container.patch_space
        if f.shape != p.shape:
            raise DimensionMismatch(
                "frame and patch query spaces differ in dimension; write them as two "
                "one-row QUERY files with write_query_pair")
        _write(path, TensorFileHeader(Kind.QUERY, 2, 1, f.shape[0]), [f, p])
    elif isinstance(container, AttentionDump):
        w = container.weights
        _write(path, TensorFileHeader(Kind.ATTENTION, w.shape[0], w.shape[1], 1), [w])
    elif isinstance(container, PatchSource):
        header = TensorFileHeader(Kind.PATCH_SET, container.n_frames, container.m, container.dim)
        _write(path, header, (g.patches for g in container.iter_grids()))
    else:
        raise TypeError(f"cannot serialise {type(container).__name__}")


def write_query_pair(query: QueryEmbedding, frame_path, patch_path) -> None:
    """Write a query as two one-row QUERY files (needed when d_f != d_p)."""
    raise_first(validate(query))
    for vec, p in ((query.frame_space, frame_path), (query.patch_space, patch_path)):
        _write(Path(p), TensorFileHeader(Kind.QUERY, 1, 1, vec.shape[0]), [vec])


class FilePatchSource:
    """Lazily reads a PATCH_SET file one grid at a time.

    Header and size are checked up front; patch norms are checked as each
    grid is read.  Every ``iter_grids`` call opens its own file handle.
    """

    def __init__(self, path: str | os.PathLike, *, renormalize: bool = False,
                 tol: float = NORM_TOLERANCE):
        self.path = Path(path)
        header = read_header(self.path)
        if header.kind is not Kind.PATCH_SET:
            raise DimensionMismatch(f"{self.path}: expected PATCH_SET, found {header.kind.name}")
        self.n_frames, self.m, self.dim = header.n, header.m, header.d
        self.renormalize = renormalize
        self.tol = tol

    def iter_grids(self) -> Iterator[PatchGrid]:
        grid_bytes = self.m * self.dim * 4
        try:
            fh = open(self.path, "rb")
        except OSError as exc:
            raise IoFailure(f"cannot read {self.path}: {exc}") from exc
        with fh:
            fh.seek(HEADER.size)
            for i in range(self.n_frames):
                raw = fh.read(grid_bytes)
                if len(raw) != grid_bytes:
                    raise SizeMismatch(f"{self.path}: grid {i} truncated")
                yield self._grid(raw, i)

    def _grid(self, raw: bytes, index: int) -> PatchGrid:
        patches = np.frombuffer(raw, dtype=_F32).astype(np.float32).reshape(self.m, self.dim)
        if self.renormalize:
            patches = l2_normalize(patches).astype(np.float32)
        norms = np.linalg.norm(patches.astype(np.float64), axis=1)
        bad = np.flatnonzero(~(np.abs(norms - 1.0) <= self.tol))
        if bad.size:
            raise NormViolation(
                f"{self.path}: patch ({index}, {int(bad[0])}) has norm {norms[bad[0]]:.6g}",
                index=(index, int(bad[0])))
        return PatchGrid(patches, index)


# -- sidecar manifests --------------------------------------------------------

def load_video(manifest_path: str | os.PathLike, *, renormalize: bool = False) -> VideoEmbeddingSet:
    """Open a video from its JSON sidecar ``{video_id, fps, frame_file, patch_file, n_frames}``.

    Frame embeddings are read eagerly; patch grids stay on disk behind a
    :class:`FilePatchSource`.
    """
    manifest_path = Path(manifest_path)
    try:
        meta = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    frames = load_tensor_file(base / meta["frame_file"], renormalize=renormalize)
    if not isinstance(frames, VideoEmbeddingSet):
        raise DimensionMismatch(f"{meta['frame_file']} is not a FRAME_SET file")
    n_frames = int(meta.get("n_frames", frames.n_frames))
    if n_frames != frames.n_frames:
        raise SizeMismatch(f"{manifest_path}: n_frames={n_frames} but frame file holds "
                           f"{frames.n_frames}")
    source = None
    if meta.get("patch_file"):
        source = FilePatchSource(base / meta["patch_file"], renormalize=renormalize)
        if source.n_frames != n_frames:
            raise SizeMismatch(f"{manifest_path}: patch file holds {source.n_frames} grids, "
                               f"expected {n_frames}")
    extra = {k: v for k, v in meta.items()
             if k not in {"video_id", "fps", "frame_file", "patch_file", "n_frames"}}
    return VideoEmbeddingSet(video_id=str(meta["video_id"]), frame_vectors=frames.frame_vectors,
                             patch_source=source, fps=float(meta.get("fps", 1.0)),
                             metadata={"manifest": str(manifest_path), **extra})


def write_video(video: VideoEmbeddingSet, directory: str | os.PathLike,
                stem: str | None = None) -> Path:
    """Write frame file, patch file (if any) and sidecar into ``directory``; returns the sidecar path."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc
    stem = stem or video.video_id
    frame_file = f"{stem}.frames.vlmp"
    write_tensor_file(video, directory / frame_file)
    meta = {"video_id": video.video_id, "fps": video.fps, "frame_file": frame_file,
            "patch_file": None, "n_frames": video.n_frames}
    if video.patch_source is not None:
        meta["patch_file"] = f"{stem}.patches.vlmp"
        write_tensor_file(video.patch_source, directory / meta["patch_file"])
    manifest = directory / f"{stem}.json"
    try:
        manifest.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {manifest}: {exc}") from exc
    return manifest
