import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adahash.pseudolabel import (batch_centroids, confident_fraction,
                                 pseudo_label)


class TestPseudoLabel:
    def test_clear_winner(self):
        pl = pseudo_label(np.array([[0.95, 0.05]]), 0.9)
        assert pl.labels[0] == 0
        assert pl.confidences[0] == 0.95

    def test_below_threshold(self):
        pl = pseudo_label(np.array([[0.5, 0.5]]), 0.9)
        assert pl.labels[0] == -1

    def test_exactly_at_threshold_is_rejected(self):
        pl = pseudo_label(np.array([[0.9, 0.1]]), 0.9)
        assert pl.labels[0] == -1

    def test_argmax_tie_breaks_low(self):
        pl = pseudo_label(np.array([[0.4, 0.4, 0.2]]), 0.35)
        assert pl.labels[0] == 0

    def test_threshold_range_enforced(self):
        with pytest.raises(ValueError):
            pseudo_label(np.array([[0.5, 0.5]]), 0.4)
        with pytest.raises(ValueError):
            pseudo_label(np.array([[0.5, 0.5]]), 1.0)

    def test_idempotent_and_order_equivariant(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.full(3, 0.3), size=20)
        first = pseudo_label(probs, 0.6)
        again = pseudo_label(probs, 0.6)
        np.testing.assert_array_equal(first.labels, again.labels)
        perm = rng.permutation(20)
        permuted = pseudo_label(probs[perm], 0.6)
        np.testing.assert_array_equal(permuted.labels, first.labels[perm])

    @given(st.integers(0, 2**32 - 1),
           st.floats(0.51, 0.7), st.floats(0.71, 0.99))
    @settings(max_examples=30, deadline=None)
    def test_raising_threshold_shrinks_confident_set(self, seed, low, high):
        probs = np.random.default_rng(seed).dirichlet(np.full(2, 0.4), size=30)
        loose = pseudo_label(probs, low).labels >= 0
        tight = pseudo_label(probs, high).labels >= 0
        assert np.all(loose | ~tight)  # tight set is a subset of the loose set


class TestBatchCentroids:
    def test_single_row(self):
        table = batch_centroids(np.array([[0.2, 0.4]]), np.array([1]), 3)
        np.testing.assert_array_equal(table.counts, [0, 1, 0])
        np.testing.assert_array_equal(table.means[1], [0.2, 0.4])

    def test_absent_class(self):
        table = batch_centroids(np.array([[1.0, 1.0]]), np.array([0]), 2)
        assert table.counts[1] == 0
        assert table.means[1] is None

    def test_arithmetic_mean(self):
        emb = np.array([[0.0, 0.0], [2.0, 2.0]])
        table = batch_centroids(emb, np.array([0, 0]), 1)
        np.testing.assert_array_equal(table.means[0], [1.0, 1.0])

    def test_unassigned_rows_ignored(self):
        emb = np.array([[5.0], [1.0], [3.0]])
        table = batch_centroids(emb, np.array([-1, 0, 0]), 1)
        assert table.counts[0] == 2
        np.testing.assert_array_equal(table.means[0], [2.0])

    def test_duplicated_batch_same_centroids(self):
        rng = np.random.default_rng(1)
        emb = rng.normal(size=(10, 4))
        labels = rng.integers(-1, 3, 10)
        base = batch_centroids(emb, labels, 3)
        doubled = batch_centroids(np.vstack([emb, emb]),
                                  np.concatenate([labels, labels]), 3)
        np.testing.assert_array_equal(doubled.counts, 2 * base.counts)
        for a, b in zip(base.means, doubled.means):
            if a is None:
                assert b is None
            else:
                np.testing.assert_allclose(a, b, atol=1e-15)


class TestConfidentFraction:
    def test_all_unassigned(self):
        pl = pseudo_label(np.full((5, 2), 0.5), 0.9)
        assert confident_fraction(pl) == 0.0

    def test_all_confident(self):
        probs = np.array([[0.99, 0.01]] * 4)
        assert confident_fraction(pseudo_label(probs, 0.9)) == 1.0

    def test_three_of_four(self):
        probs = np.array([[0.99, 0.01], [0.95, 0.05], [0.5, 0.5], [0.02, 0.98]])
        assert confident_fraction(pseudo_label(probs, 0.9)) == 0.75
