import numpy as np
import pytest

from diffdistill.embeddings import QueryEmbedding, VideoEmbeddingSet


def unit(*rows):
    a = np.asarray(rows, dtype=np.float64)
    a = (a / np.linalg.norm(a, axis=-1, keepdims=True)).astype(np.float32)
    return a[0] if len(rows) == 1 else a


def random_units(rng: np.random.Generator, shape):
    a = rng.standard_normal(shape)
    return (a / np.linalg.norm(a, axis=-1, keepdims=True)).astype(np.float32)


def make_video(frames, patches=None, video_id="v"):
    return VideoEmbeddingSet.from_arrays(np.asarray(frames, dtype=np.float32),
                                         None if patches is None else np.asarray(patches, dtype=np.float32),
                                         video_id=video_id)


@pytest.fixture
def query2d():
    return QueryEmbedding.shared(np.array([1.0, 0.0], dtype=np.float32))
