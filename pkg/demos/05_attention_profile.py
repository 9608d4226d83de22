"""Where does attention go?  Concentration curves from attention dumps.

The synthetic dump below gives 5% of frames 90% of the mass.  The
cumulative curve reads that back, and the neighbour-similarity columns show
how alike frames of similar attention rank are.
"""

from diffdistill import SynthSpec, gen_attention_dump, gen_embeddings, frame_profile, patch_profile
from diffdistill.synth import gen_patch_attention_dump

video, _ = gen_embeddings(SynthSpec(n_frames=400, m_patches=16, cluster_centers=20, blend=0.85))
dump = gen_attention_dump(400, 16, top_frac=0.05, mass_frac=0.90, seed=2)

profile = frame_profile(dump, video, window=3, n_pairs=2000, seed=0)
for p in (1, 5, 10, 50, 100):
    print(f"top {p:3d}% of frames hold {profile.cumulative.at(p):.3f} of the attention")
print(f"random-pair cosine baseline {profile.baseline:.3f}; "
      f"neighbours in rank bucket 0: {profile.neighbor_similarity[0]:.3f}")

pdump = gen_patch_attention_dump(400, 16, k_top=32, top_frac=0.5, mass_frac=0.8, seed=2)
patches = patch_profile(pdump, video, k_top=32)
print(f"non-keyframe patches: top 50% hold {patches.cumulative.at(50):.3f} of their mass")
print("first CSV rows:")
print("\n".join(patches.to_csv().splitlines()[:4]))
