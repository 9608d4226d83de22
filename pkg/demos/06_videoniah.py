"""A needle-in-a-haystack benchmark for long videos.

A manifest fixes, per case, which haystack and needle clip to use, how long
the needle is and where it goes.  Splicing then happens at the embedding
level, and a score grid breaks accuracy down by length and needle depth.
"""

from diffdistill import NiahConfig, SynthSpec, build_manifest, gen_embeddings, score, splice_embeddings

catalog = [
    {"video_id": "city-walk", "length": 12_000},
    {"video_id": "lecture", "length": 10_500},
    {"video_id": "clip-cat", "length": 140, "role": "needle", "question_type": "count",
     "query_id": "q-cat", "answer_key": "2"},
    {"video_id": "clip-sign", "length": 90, "role": "needle", "question_type": "ocr",
     "query_id": "q-sign", "answer_key": "EXIT"},
]
manifest = build_manifest(catalog, NiahConfig(), seed=7)
print(len(manifest.cases), "cases; first:", manifest.cases[0])

# Splice a small stand-in haystack to show the index arithmetic.
small = build_manifest([{"video_id": "h", "length": 100},
                        {"video_id": "n", "length": 40, "role": "needle", "answer_key": "A"}],
                       NiahConfig(lengths=(100,), cases_per_length=3, needle_range=(30, 40)), seed=1)
case = small.cases[0]
hay, _ = gen_embeddings(SynthSpec(100, 2, seed=10))
needle, _ = gen_embeddings(SynthSpec(40, 2, seed=11))
spliced = splice_embeddings(hay, needle, case)
print(f"needle of {case.needle_len} frames placed at {spliced.metadata['needle_span']} "
      f"(depth {case.depth:.2f}) in {spliced.n_frames} frames")

# Score a scripted model that only answers when the needle is in the first half.
predictions = {c.case_id: (c.answer_key if c.depth < 0.5 else "?") for c in manifest.cases}
grid = score(manifest, predictions)
for length in grid.lengths[:2]:
    row = [grid.cell(length, b).accuracy for b in range(10)]
    print(length, " ".join("  - " if a is None else f"{a:4.2f}" for a in row))
