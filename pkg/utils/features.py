"""
Appearance similarity between ingested feature vectors.

Extractors run upstream; this module only compares the vectors they emit.
"""

from typing import Optional, Sequence, Union

import numpy as np

FeatureVector = np.ndarray
VectorLike = Union[np.ndarray, Sequence[float]]


def as_feature(values: Optional[VectorLike]) -> Optional[FeatureVector]:
    """Validate and convert to a read-only float vector (None passes through)"""
    if values is None:
        return None
    vec = np.asarray(values, dtype=float).reshape(-1)
    if vec.size < 1:
        raise ValueError("Feature vector must have at least one component")
    if not np.all(np.isfinite(vec)):
        raise ValueError("Feature vector has non-finite components")
    vec.setflags(write=False)
    return vec


def cosine_similarity(u: VectorLike, v: VectorLike) -> float:
    a = np.asarray(u, dtype=float).reshape(-1)
    b = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"Feature dimension mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("Cosine similarity is undefined for a zero vector")
    sim = float(np.dot(a, b) / (na * nb))
    # rounding can push |sim| a hair past 1
    return max(-1.0, min(1.0, sim))
