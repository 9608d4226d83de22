import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffdistill.embeddings import (
    ArrayPatchSource,
    AttentionDump,
    FrameEmbedding,
    QueryEmbedding,
    VideoEmbeddingSet,
    cosine,
    l2_normalize,
    validate,
)
from diffdistill.errors import (
    BadMagic,
    IoFailure,
    NormViolation,
    SizeMismatch,
    VersionUnsupported,
)
from diffdistill.tensorfile import (
    HEADER,
    FilePatchSource,
    Kind,
    TensorFileHeader,
    load_query,
    load_tensor_file,
    load_video,
    read_header,
    write_query_pair,
    write_tensor_file,
    write_video,
)

from conftest import make_video, random_units, unit

GOLDEN = Path(__file__).parent / "data" / "two_frames.vlmp"


def raw_file(path, kind, rows, *, magic=b"VLMP", version=1, n=None, m=1):
    rows = np.asarray(rows, dtype="<f4")
    n = rows.shape[0] if n is None else n
    path.write_bytes(HEADER.pack(magic, version, int(kind), n, m, rows.shape[-1]) + rows.tobytes())
    return path


def test_golden_file_decodes_to_identity_basis():
    video = load_tensor_file(GOLDEN)
    assert isinstance(video, VideoEmbeddingSet)
    assert (video.n_frames, video.frame_dim) == (2, 3)
    np.testing.assert_array_equal(video.frame_vectors, [[1, 0, 0], [0, 1, 0]])
    h = read_header(GOLDEN)
    assert (h.kind, h.n, h.m, h.d) == (Kind.FRAME_SET, 2, 1, 3)


def test_writer_reproduces_golden_bytes(tmp_path):
    out = tmp_path / "two_frames.vlmp"
    write_tensor_file(load_tensor_file(GOLDEN), out)
    assert out.read_bytes() == GOLDEN.read_bytes()


def test_header_layout_is_24_little_endian_bytes():
    packed = TensorFileHeader(Kind.PATCH_SET, 5, 9, 4).pack()
    assert len(packed) == 24
    assert packed[:4] == b"VLMP"
    assert struct.unpack("<I", packed[4:8]) == (1,)
    assert packed[8] == 2 and packed[9:12] == b"\0\0\0"
    assert struct.unpack("<III", packed[12:]) == (5, 9, 4)


def test_zero_vector_reports_its_index(tmp_path):
    path = raw_file(tmp_path / "z.vlmp", Kind.FRAME_SET, [[1, 0], [0, 0], [0, 1]])
    with pytest.raises(NormViolation) as info:
        load_tensor_file(path)
    assert info.value.index == 1


def test_truncated_payload_is_size_mismatch(tmp_path):
    path = raw_file(tmp_path / "short.vlmp", Kind.FRAME_SET, [[1, 0], [0, 1], [1, 0]], n=4)
    with pytest.raises(SizeMismatch):
        load_tensor_file(path)


def test_bad_magic_and_version(tmp_path):
    with pytest.raises(BadMagic):
        load_tensor_file(raw_file(tmp_path / "a", Kind.FRAME_SET, [[1, 0]], magic=b"NOPE"))
    with pytest.raises(VersionUnsupported):
        load_tensor_file(raw_file(tmp_path / "b", Kind.FRAME_SET, [[1, 0]], version=2))


def test_missing_file_and_unwritable_path(tmp_path):
    with pytest.raises(IoFailure):
        load_tensor_file(tmp_path / "absent.vlmp")
    video = make_video(unit([1, 0])[None])
    with pytest.raises(IoFailure):
        write_tensor_file(video, tmp_path / "no" / "such" / "dir" / "f.vlmp")


def test_renormalize_flag_rescues_off_norm_rows(tmp_path):
    path = raw_file(tmp_path / "half.vlmp", Kind.FRAME_SET, [[0.5, 0.0], [0.0, 1.0]])
    with pytest.raises(NormViolation):
        load_tensor_file(path)
    video = load_tensor_file(path, renormalize=True)
    np.testing.assert_allclose(np.linalg.norm(video.frame_vectors, axis=1), 1.0, atol=1e-6)


def test_query_round_trip_shared_and_split(tmp_path):
    q = QueryEmbedding(unit([1, 1]), unit([0, 1]))
    write_tensor_file(q, tmp_path / "q.vlmp")
    back = load_tensor_file(tmp_path / "q.vlmp")
    np.testing.assert_array_equal(back.frame_space, q.frame_space)
    np.testing.assert_array_equal(back.patch_space, q.patch_space)
    wide = QueryEmbedding(unit([1, 2, 3]), unit([0, 1]))
    write_query_pair(wide, tmp_path / "f.vlmp", tmp_path / "p.vlmp")
    back = load_query(tmp_path / "f.vlmp", tmp_path / "p.vlmp")
    np.testing.assert_array_equal(back.frame_space, wide.frame_space)
    np.testing.assert_array_equal(back.patch_space, wide.patch_space)


def test_attention_and_token_files(tmp_path):
    dump = AttentionDump(np.full((2, 2), 0.25), video_id="a")
    write_tensor_file(dump, tmp_path / "a.vlmp")
    np.testing.assert_array_equal(load_tensor_file(tmp_path / "a.vlmp").weights, dump.weights)
    tokens = np.array([[3.0, -1.0], [0.5, 0.5]])
    write_tensor_file(tokens, tmp_path / "t.vlmp")
    np.testing.assert_array_equal(load_tensor_file(tmp_path / "t.vlmp"), tokens)


def test_video_sidecar_round_trip_is_lazy_and_exact(tmp_path):
    rng = np.random.default_rng(0)
    video = make_video(random_units(rng, (5, 4)), random_units(rng, (5, 3, 2)), video_id="clip")
    sidecar = write_video(video, tmp_path)
    back = load_video(sidecar)
    assert back.video_id == "clip"
    assert isinstance(back.patch_source, FilePatchSource)
    np.testing.assert_array_equal(back.frame_vectors, video.frame_vectors)
    np.testing.assert_array_equal(back.patch_array(), video.patch_array())


def test_bad_patch_reported_with_frame_and_patch_index(tmp_path):
    patches = np.tile(unit([1, 0]), (3, 2, 1))
    patches[2, 1] = 0.0
    raw_file(tmp_path / "p.vlmp", Kind.PATCH_SET, patches.reshape(-1, 2), n=3, m=2)
    source = FilePatchSource(tmp_path / "p.vlmp")
    with pytest.raises(NormViolation) as info:
        list(source.iter_grids())
    assert info.value.index == (2, 1)


def test_validate_examples():
    assert validate(make_video(unit([1, 0], [0, 1]))) == []
    half = VideoEmbeddingSet("v", np.array([[0.5, 0.0], [0.0, 1.0]], dtype=np.float32))
    (v,) = validate(half)
    assert v.kind == "NormViolation" and v.index == 0
    gap = VideoEmbeddingSet("v", unit([1, 0], [0, 1]), frame_indices=np.array([0, 2]))
    assert [v.kind for v in validate(gap)] == ["IndexGap"]
    bad_dump = AttentionDump(np.full((2, 2), 0.3))
    assert [v.kind for v in validate(bad_dump)] == ["NormalizationViolation"]


def test_validate_patch_grids():
    patches = np.tile(unit([1, 0]), (2, 2, 1))
    patches[1, 0] = [2.0, 0.0]
    kinds = [(v.kind, v.index) for v in validate(ArrayPatchSource(patches))]
    assert kinds == [("NormViolation", 0)]


def test_containers_are_frozen():
    video = make_video(unit([1, 0])[None])
    with pytest.raises(ValueError):
        video.frame_vectors[0, 0] = 3.0
    f = FrameEmbedding(unit([1, 0]), 0)
    with pytest.raises(Exception):
        f.frame_index = 2


def test_cosine_identity_and_clipping():
    v = unit([0.3, 0.4, 0.5])
    assert cosine(v, v) == 1.0
    assert cosine(v, -v) == pytest.approx(-1.0)
    assert cosine(unit([1, 0]), unit([0, 1])) == 0.0


def test_l2_normalize_rejects_zero_rows():
    with pytest.raises(NormViolation):
        l2_normalize(np.zeros((1, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_round_trip_preserves_every_bit(tmp_path_factory, n, m, d, seed):
    rng = np.random.default_rng(seed)
    video = make_video(random_units(rng, (n, d)), random_units(rng, (n, m, d)))
    directory = tmp_path_factory.mktemp("rt")
    back = load_video(write_video(video, directory))
    assert back.frame_vectors.tobytes() == video.frame_vectors.tobytes()
    assert back.patch_array().tobytes() == video.patch_array().tobytes()
