from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrxai.weights import (CCMap, binarize_map, cross_correlation_map,
                             uniform_marginal, weights_to_marginal)


def test_cc_map_all_aligned():
    g = np.array([1.0, 2.0, 3.0])
    patches = np.tile(g, (4, 1))
    cc = cross_correlation_map(patches, g)
    assert cc.values == pytest.approx(np.ones(4), abs=1e-12)


def test_cc_map_orthogonal_patch():
    patches = np.array([[1.0, 0.0], [0.0, 1.0]])
    cc = cross_correlation_map(patches, np.array([1.0, 0.0]))
    assert cc.values[0] == pytest.approx(1.0, abs=1e-12)
    assert cc.values[1] == pytest.approx(0.0, abs=1e-12)


def test_cc_map_matches_scalar_loop_oracle(rng):
    patches = rng.normal(size=(49, 8))
    other = rng.normal(size=8)
    cc = cross_correlation_map(patches, other)
    for i in range(49):
        expected = float(np.dot(patches[i], other)
                         / (np.linalg.norm(patches[i]) * np.linalg.norm(other)))
        assert cc.values[i] == pytest.approx(expected, abs=1e-6)


def test_cc_map_errors():
    with pytest.raises(ValueError, match="dimension"):
        cross_correlation_map(np.ones((3, 4)), np.ones(5))
    with pytest.raises(ValueError, match="zero-norm"):
        cross_correlation_map(np.zeros((3, 4)), np.ones(4))


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 2.0, 4.0]))
@settings(max_examples=25, deadline=None)
def test_cc_map_scale_invariant(seed, scale):
    r = np.random.default_rng(seed)
    patches = r.normal(size=(6, 5))
    other = r.normal(size=5)
    base = cross_correlation_map(patches, other).values
    assert cross_correlation_map(patches * scale, other).values == pytest.approx(base, abs=1e-12)
    assert cross_correlation_map(patches, other * scale).values == pytest.approx(base, abs=1e-12)


def test_binarize_inclusive_boundary():
    mask = binarize_map(CCMap(values=np.array([0.6, 0.5, 0.55])), threshold=0.55)
    assert mask.selected.tolist() == [True, False, True]


def test_binarize_fallback_selects_argmax():
    mask = binarize_map(CCMap(values=np.array([0.1, 0.1, 0.1, 0.1])), threshold=0.55)
    assert mask.selected.tolist() == [True, False, False, False]
    mask = binarize_map(CCMap(values=np.array([0.1, 0.3, 0.2])), threshold=0.55)
    assert mask.selected.tolist() == [False, True, False]


def test_binarize_all_selected():
    mask = binarize_map(CCMap(values=np.full(5, 0.9)), threshold=0.55)
    assert mask.selected.all()


@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=49))
@settings(max_examples=100, deadline=None)
def test_binarize_never_empty(values):
    mask = binarize_map(CCMap(values=np.array(values)))
    assert mask.selected.any()


def test_marginal_uniform_values():
    out = weights_to_marginal(CCMap(values=np.array([0.5, 0.5, 0.5, 0.5])))
    assert out == pytest.approx([0.25, 0.25, 0.25, 0.25], abs=1e-12)


def test_marginal_floor_rule():
    out = weights_to_marginal(CCMap(values=np.array([1.0, 0.0])))
    assert out == pytest.approx([1 / (1 + 1e-6), 1e-6 / (1 + 1e-6)], abs=1e-15)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_marginal_is_probability_and_order_preserving(seed):
    r = np.random.default_rng(seed)
    values = r.uniform(-1, 1, size=12)
    out = weights_to_marginal(CCMap(values=values))
    assert (out >= 0).all()
    assert abs(out.sum() - 1.0) <= 1e-12
    above = np.flatnonzero(values > 1e-6)
    for i in above:
        for j in above:
            if values[i] < values[j]:
                assert out[i] < out[j]


def test_uniform_marginal():
    assert uniform_marginal(4) == pytest.approx([0.25] * 4)
