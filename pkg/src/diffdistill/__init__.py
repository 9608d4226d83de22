"""Query-aware keyframe selection and saliency-weighted merging for video token sequences."""

__version__ = "0.1.0"

from .dfm import DfmConfig, MergedToken, merge_frame, merge_gradient, merge_weights, patch_saliency
from .dks import DksConfig, KeyframeSelection, select_keyframes, select_top_relevance, select_uniform
from .embeddings import (
    ArrayPatchSource,
    AttentionDump,
    FrameEmbedding,
    PatchGrid,
    PatchSource,
    QueryEmbedding,
    VideoEmbeddingSet,
    validate,
)
from .errors import DistillError
from .niah import NiahConfig, build_manifest, score, splice_embeddings
from .pipeline import (
    DistillConfig,
    DistilledSequence,
    SamplingMode,
    budget,
    distill,
    run_sweep,
    stream_distill,
)
from .profiler import cumulative_curve, frame_profile, patch_profile
from .synth import SynthSpec, gen_attention_dump, gen_embeddings
from .tensorfile import load_tensor_file, load_video, write_tensor_file, write_video

__all__ = [name for name in dir() if not name.startswith("_")]
