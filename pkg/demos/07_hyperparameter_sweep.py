"""Sweeping tau and alpha.

Budget columns come from keyframe selection alone; plugging in a score hook
(here, a toy one) runs full distillation per cell.
"""

from diffdistill import SynthSpec, gen_embeddings, run_sweep
from diffdistill.pipeline import sweep_csv

videos, queries = zip(*(gen_embeddings(SynthSpec(96, 4, cluster_centers=8, blend=b, seed=s),
                                        video_id=f"v{s}")
                        for s, b in enumerate((1.0, 0.95, 0.8))))


def mean_token_hook(tau, alpha, seqs):
    # stand-in for a downstream accuracy: share of output tokens that are merged
    merged = sum(seq.token_count() - len(seq.selection) * 4 for seq in seqs)
    return merged / sum(seq.token_count() for seq in seqs)


rows = run_sweep(list(videos), list(queries), score_hook=mean_token_hook)
print(sweep_csv(rows))
