#!/usr/bin/env python3
"""
Test script to verify appearance similarity
"""

import numpy as np
import pytest

from utils.features import as_feature, cosine_similarity


def test_cosine_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [1, 1]) == pytest.approx(0.7071067811865476)
    assert cosine_similarity([1, 0], [-1, 0]) == pytest.approx(-1.0)


def test_cosine_errors():
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 0])


def test_cosine_symmetric_scale_invariant_bounded():
    rng = np.random.default_rng(11)
    for _ in range(200):
        u = rng.normal(size=16)
        v = rng.normal(size=16)
        sim = cosine_similarity(u, v)
        assert -1.0 <= sim <= 1.0
        assert sim == pytest.approx(cosine_similarity(v, u))
        assert sim == pytest.approx(cosine_similarity(3.5 * u, 0.25 * v))


def test_as_feature():
    assert as_feature(None) is None
    vec = as_feature([1, 2, 3])
    assert vec.dtype == float
    assert not vec.flags.writeable
    with pytest.raises(ValueError):
        as_feature([])
    with pytest.raises(ValueError):
        as_feature([1.0, float("nan")])
