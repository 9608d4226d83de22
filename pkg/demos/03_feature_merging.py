"""Collapsing a non-keyframe into one token.

Each patch gets a saliency: relevance to the query minus lambda times its
similarity to the same patch in the previous keyframe.  A softmax at
temperature alpha turns saliency into pooling weights.
"""

import numpy as np

from diffdistill import DfmConfig, PatchGrid, QueryEmbedding, merge_frame, merge_gradient, patch_saliency
from diffdistill.dfm import pool

rng = np.random.default_rng(0)


def unit(rows):
    return (rows / np.linalg.norm(rows, axis=-1, keepdims=True)).astype(np.float32)


patches = unit(rng.standard_normal((6, 4)))
keyframe = patches.copy()
keyframe[3:] = unit(rng.standard_normal((3, 4)))  # first three patches unchanged since the keyframe
frame, key = PatchGrid(patches, 5), PatchGrid(keyframe, 2)
query = QueryEmbedding.shared(unit(rng.standard_normal(4)))

s = patch_saliency(frame, key, query, lam=1.0)
print("saliency        ", np.round(s, 3))
print("  (patches 0-2 are copies of the keyframe, so they lose 1.0 each)")

for alpha in (1.0, 0.1, 0.01, 0.001):
    token = merge_frame(frame, key, query, DfmConfig(lam=1.0, alpha=alpha))
    print(f"alpha={alpha:<6} weights {np.round(token.weights, 3)}")

# Large alpha approaches mean pooling; small alpha approaches the most salient patch.
mean = patches.astype(np.float64).mean(axis=0)
print("alpha=1e6 gap to mean pooling  ", f"{np.abs(pool(frame, s, 1e6) - mean).max():.2e}")
print("alpha=1e-6 gap to argmax patch ", f"{np.abs(pool(frame, s, 1e-6) - patches[np.argmax(s)]).max():.2e}")

# The pooled vector is differentiable in the saliency scores.
J = merge_gradient(frame, s, 0.1)
h = 1e-5
fd = np.stack([(pool(frame, s + h * e, 0.1) - pool(frame, s - h * e, 0.1)) / (2 * h)
               for e in np.eye(len(s))], axis=1)
print("Jacobian shape", J.shape, "max finite-difference gap", f"{np.abs(J - fd).max():.1e}")
