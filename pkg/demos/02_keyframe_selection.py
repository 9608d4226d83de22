"""Picking keyframes that are relevant to the query and distinct from each other.

A synthetic video of 120 frames is built from 6 scenes, so neighbouring
frames are near-duplicates.  Ranking by relevance alone keeps many frames
from the same scene; the redundancy threshold tau forces diversity.
"""

import numpy as np

from diffdistill import DksConfig, SynthSpec, gen_embeddings, select_keyframes
from diffdistill.dks import select_top_relevance, select_uniform
from diffdistill.oracles import pairwise_max_cosine

video, query = gen_embeddings(SynthSpec(n_frames=120, cluster_centers=6, blend=0.9, seed=3))
scene = lambda i: i * 6 // 120

top = select_top_relevance(video, query, 8)
print("query-only :", top.keyframe_indices, "scenes", sorted({scene(i) for i in top.keyframe_indices}))

dks = select_keyframes(video, query, DksConfig(tau=0.85, k_max=8))
print("dks        :", dks.keyframe_indices, "scenes", sorted({scene(i) for i in dks.keyframe_indices}))
print("  max cosine between kept frames:",
      round(pairwise_max_cosine(video.frame_vectors[list(dks.keyframe_indices)]), 3), "< 0.85")

uni = select_uniform(video.n_frames, 8)
print("uniform    :", uni.keyframe_indices)

# Lower tau is stricter: fewer frames clear the redundancy bar.
for tau in (1.0, 0.85, 0.5, 0.35):
    sel = select_keyframes(video, query, DksConfig(tau, 32))
    print(f"tau={tau:<4} -> {len(sel):2d} keyframes, relevance of first pick "
          f"{sel.relevance[sel.selection_order[0]]:+.3f}")

# Exact duplicates collapse to a single keyframe at any tau.
same, q = gen_embeddings(SynthSpec(50, blend=1.0))
print("all-identical video ->", select_keyframes(same, q).keyframe_indices)
print("distinct frame vectors in that video:", len(np.unique(same.frame_vectors, axis=0)))
