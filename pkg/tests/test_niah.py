import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffdistill.errors import CatalogTooSmall, SourceTooShort, UnknownCaseId
from diffdistill.niah import (
    DEFAULT_LENGTHS,
    CatalogEntry,
    NiahCase,
    NiahConfig,
    NiahManifest,
    build_manifest,
    depth_of,
    read_predictions,
    score,
    splice_embeddings,
    splice_index_map,
)
from diffdistill.synth import SynthSpec, gen_embeddings

CATALOG = [
    {"video_id": "long-a", "length": 12000},
    {"video_id": "long-b", "length": 10000},
    {"video_id": "mid", "length": 4500},
    {"video_id": "n1", "length": 150, "role": "needle", "question_type": "count",
     "query_id": "q1", "answer_key": "A"},
    {"video_id": "n2", "length": 90, "role": "needle", "question_type": "order",
     "query_id": "q2", "answer_key": "B"},
    {"video_id": "n3", "length": 200, "role": "needle", "question_type": "count",
     "query_id": "q3", "answer_key": "C"},
]


def case(L, nl, ins, answer="A", cid="c"):
    return NiahCase(cid, "h", "n", L, nl, ins, depth_of(ins, L, nl), "q", answer)


def test_default_configuration_yields_3000_valid_cases():
    manifest = build_manifest(CATALOG, NiahConfig(), seed=11)
    assert len(manifest.cases) == 3000
    assert len({c.case_id for c in manifest.cases}) == 3000
    for c in manifest.cases:
        assert c.haystack_len in DEFAULT_LENGTHS
        assert 30 <= c.needle_len <= 120
        assert 0 <= c.insert_index <= c.haystack_len - c.needle_len
    assert {c.question_type for c in manifest.cases} == {"count", "order"}


def test_same_seed_same_bytes():
    cfg = NiahConfig((2000, 4000), 50)
    assert build_manifest(CATALOG, cfg, 3).to_json() == build_manifest(CATALOG, cfg, 3).to_json()
    assert build_manifest(CATALOG, cfg, 3).to_json() != build_manifest(CATALOG, cfg, 4).to_json()


def test_manifest_round_trip():
    m = build_manifest(CATALOG, NiahConfig((2000,), 10), 0)
    assert NiahManifest.from_json(m.to_json()) == m
    with pytest.raises(UnknownCaseId):
        m.case("L1-99999")


def test_catalog_errors():
    with pytest.raises(CatalogTooSmall):
        build_manifest(CATALOG[:3], NiahConfig((2000,), 1))
    with pytest.raises(CatalogTooSmall):
        build_manifest(CATALOG, NiahConfig((20000,), 1))


def test_depth_boundaries():
    assert depth_of(0, 100, 30) == 0.0
    assert depth_of(70, 100, 30) == 1.0


def test_splice_examples():
    hay, _ = gen_embeddings(SynthSpec(100, 2, d_f=4, d_p=3, seed=1))
    needle, _ = gen_embeddings(SynthSpec(40, 2, d_f=4, d_p=3, seed=2))
    out = splice_embeddings(hay, needle, case(100, 30, 35))
    assert out.n_frames == 100 and out.metadata["needle_span"] == [35, 65]
    fv = out.frame_vectors
    np.testing.assert_array_equal(fv[:35], hay.frame_vectors[:35])
    np.testing.assert_array_equal(fv[35:65], needle.frame_vectors[:30])
    np.testing.assert_array_equal(fv[65:], hay.frame_vectors[35:70])
    patches = out.patch_array()
    np.testing.assert_array_equal(patches[35:65], needle.patch_array()[:30])
    sources = splice_index_map(case(100, 30, 35))
    assert sum(s == "haystack" for s, _ in sources) == 70
    front = splice_embeddings(hay, needle, case(100, 30, 0))
    assert front.metadata["needle_span"] == [0, 30]
    with pytest.raises(SourceTooShort):
        splice_embeddings(hay, needle, case(20, 30, 0))


def scripted_manifest():
    cases = [case(2000, 40, 0, "A", "a"), case(2000, 40, 1960, "B", "b"),
             case(4000, 40, 1980, "C", "c"), case(4000, 40, 1990, "D", "d")]
    return NiahManifest(tuple(cases), 0)


def test_score_hand_counted():
    grid = score(scripted_manifest(), {"a": "A", "b": "x", "c": "C", "d": " D "})
    assert grid.cell(2000, 0).accuracy == 1.0
    assert grid.cell(2000, 9).accuracy == 0.0
    assert grid.cell(4000, 5).correct == 2 and grid.cell(4000, 5).total == 2
    assert grid.cell(4000, 0).accuracy is None


def test_score_length_rows():
    grid = score(scripted_manifest(), {"a": "A", "b": "B", "c": "x", "d": "x"})
    assert all(c.accuracy == 1.0 for (L, _), c in grid.cells.items() if L == 2000 and c.total)
    assert all(c.accuracy == 0.0 for (L, _), c in grid.cells.items() if L == 4000 and c.total)


def test_missing_and_unknown_predictions():
    relaxed = score(scripted_manifest(), {"a": "A"})
    assert relaxed.missing == ("b", "c", "d") and relaxed.cell(2000, 9).total == 0
    strict = score(scripted_manifest(), {"a": "A"}, strict=True)
    assert strict.cell(2000, 9).total == 1 and strict.cell(2000, 9).correct == 0
    with pytest.raises(UnknownCaseId):
        score(scripted_manifest(), {"zzz": "A"})


def test_predictions_parser_and_csv():
    preds = read_predictions('{"case_id": "a", "answer": "A"}\n\n{"case_id": "b", "answer": 3}\n')
    assert preds == {"a": "A", "b": 3}
    lines = score(scripted_manifest(), preds).to_csv().splitlines()
    assert lines[0] == "length,bucket_lo,bucket_hi,correct,total,accuracy"
    assert len(lines) == 1 + 2 * 10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63), st.integers(31, 400), st.integers(1, 30))
def test_manifest_cases_always_fit(seed, length, lo):
    catalog = [CatalogEntry("h", length), CatalogEntry("n", 60, "needle")]
    m = build_manifest(catalog, NiahConfig((length,), 20, (lo, 50)), seed)
    for c in m.cases:
        assert lo <= c.needle_len <= min(50, 60, length)
        assert 0 <= c.insert_index <= length - c.needle_len
        assert 0.0 <= c.depth <= 1.0
