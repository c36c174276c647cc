import math

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st

from stca.position import (geometric_relation, pairwise_relations, sinusoid_embed, spatial_embed,
                           temporal_embed)
from stca.proposals import BoundingBox

finite = st.floats(-1e3, 1e3, allow_nan=False)
extent = st.floats(0.1, 1e3, allow_nan=False)
boxes = st.builds(BoundingBox, finite, finite, extent, extent)


def test_zero_embeds_to_sin_cos_pattern():
    np.testing.assert_array_equal(sinusoid_embed(0.0, 8), [0, 1, 0, 1, 0, 1, 0, 1])


def test_unit_embedding_leading_pair():
    np.testing.assert_allclose(sinusoid_embed(1.0, 8)[:2], [0.841471, 0.540302], atol=1e-6)


def test_second_frequency_hits_pi():
    r = math.pi * 1000 ** (2 / 8)
    assert abs(sinusoid_embed(r, 8)[2]) < 1e-9


def test_embedding_matches_formula_for_arrays():
    r = np.array([[0.3, -2.0], [7.5, 100.0]])
    out = sinusoid_embed(r, 6, base=1000.0)
    assert out.shape == (2, 2, 6)
    for z in range(3):
        np.testing.assert_allclose(out[..., 2 * z], np.sin(r / 1000 ** (2 * z / 6)), rtol=0, atol=1e-13)
        np.testing.assert_allclose(out[..., 2 * z + 1], np.cos(r / 1000 ** (2 * z / 6)), rtol=0, atol=1e-13)


def test_odd_dimension_rejected():
    import pytest
    with pytest.raises(ValueError):
        sinusoid_embed(1.0, 5)


def test_identical_boxes_clamp_offsets():
    b = BoundingBox(3.0, 4.0, 5.0, 6.0)
    np.testing.assert_allclose(geometric_relation(b, b), [math.log(1e-3), math.log(1e-3), 0, 0])


def test_relation_worked_example():
    r = geometric_relation(BoundingBox(10, 10, 4, 4), BoundingBox(12, 13, 8, 2))
    np.testing.assert_allclose(r, [math.log(0.25), math.log(1.5), math.log(0.5), math.log(2)], rtol=0, atol=1e-15)


def test_relation_scaled_and_translated_example():
    a, b = BoundingBox(10, 10, 4, 4), BoundingBox(12, 13, 8, 2)
    r = geometric_relation(a.scaled(3, 5, 7), b.scaled(3, 5, 7))
    np.testing.assert_allclose(r, geometric_relation(a, b), rtol=0, atol=1e-12)


def test_pairwise_matches_single_pair():
    rng = np.random.default_rng(0)
    tb = np.column_stack([rng.uniform(0, 9, 3), rng.uniform(0, 9, 3), rng.uniform(1, 4, 3), rng.uniform(1, 4, 3)])
    cb = np.column_stack([rng.uniform(0, 9, 5), rng.uniform(0, 9, 5), rng.uniform(1, 4, 5), rng.uniform(1, 4, 5)])
    rel = pairwise_relations(tb, cb)
    for i in range(3):
        for j in range(5):
            expect = geometric_relation(BoundingBox(*tb[i]), BoundingBox(*cb[j]))
            np.testing.assert_allclose([r[i, j] for r in rel], expect, rtol=0, atol=1e-14)


def test_spatial_embedding_layout():
    np.testing.assert_array_equal(spatial_embed([0, 0, 0, 0], 4), [0, 1, 0, 1] * 4)
    assert spatial_embed(np.zeros(4), 16).shape == (64,)
    out = spatial_embed([1.0, 0, 0, 0], 8)
    np.testing.assert_array_equal(out[:8], sinusoid_embed(1.0, 8))
    np.testing.assert_array_equal(out[8:], [0, 1] * 12)


def test_temporal_embedding_examples():
    np.testing.assert_array_equal(temporal_embed(0, 6), [0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(temporal_embed(3, 8)[:2], [0.141120, -0.989992], atol=1e-6)
    plus, minus = temporal_embed(1, 8), temporal_embed(-1, 8)
    np.testing.assert_array_equal(plus[0::2], -minus[0::2])
    np.testing.assert_array_equal(plus[1::2], minus[1::2])


coord = st.floats(-50, 50)
size = st.floats(0.5, 50)
moderate_boxes = st.builds(BoundingBox, coord, coord, size, size)


@given(moderate_boxes, moderate_boxes, st.floats(0.5, 4), st.floats(-10, 10), st.floats(-10, 10))
def test_relation_is_scale_translation_invariant(a, b, s, dx, dy):
    # nearly coincident centres lose their offset to cancellation after the shift
    assume(abs(a.cx - b.cx) > 0.5 and abs(a.cy - b.cy) > 0.5)
    r0 = geometric_relation(a, b)
    r1 = geometric_relation(a.scaled(s, dx, dy), b.scaled(s, dx, dy))
    np.testing.assert_allclose(r1, r0, rtol=0, atol=1e-12)


@given(boxes, boxes)
def test_swapping_boxes_negates_size_ratios(a, b):
    r_ab, r_ba = geometric_relation(a, b), geometric_relation(b, a)
    assert r_ab[2] == -r_ba[2] or abs(r_ab[2] + r_ba[2]) < 1e-12
    assert abs(r_ab[3] + r_ba[3]) < 1e-12


@given(st.floats(-1e6, 1e6), st.sampled_from([2, 4, 8, 16, 64]))
def test_embedding_entries_bounded(r, dim):
    out = sinusoid_embed(r, dim)
    assert np.all(out >= -1) and np.all(out <= 1)


@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4))
def test_spatial_embedding_bounded(rel):
    out = spatial_embed(rel, 8)
    assert out.shape == (32,) and np.all(np.abs(out) <= 1)


@given(st.integers(-1000, 1000), st.sampled_from([4, 8, 16]))
def test_temporal_sign_symmetry(tau, dim):
    plus, minus = temporal_embed(tau, dim), temporal_embed(-tau, dim)
    np.testing.assert_allclose(plus[0::2], -minus[0::2], rtol=0, atol=1e-12)
    np.testing.assert_allclose(plus[1::2], minus[1::2], rtol=0, atol=1e-12)
    assert np.all(np.abs(plus) <= 1)


@given(st.floats(-100, 100), st.integers(-3, 3))
def test_leading_pair_is_two_pi_periodic(r, k):
    a, b = sinusoid_embed(r, 8)[:2], sinusoid_embed(r + 2 * math.pi * k, 8)[:2]
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
