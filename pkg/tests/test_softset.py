import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from east import autodiff as ad
from east.softset import (binary_cardinalities, confusion, confusion_from_indices, confusion_op, phi,
                          predict_hard, predict_soft, predict_soft_op, scale)

from oracle import counts, hard_membership, soft_membership

LADDER = (0.2, 0.1, 0.05, 0.01, 1e-3, 1e-4)


def simplex(d):
    return st.lists(st.floats(0.001, 1.0), min_size=d, max_size=d).map(lambda v: np.array(v) / sum(v))


class TestHard:
    @pytest.mark.parametrize("p, expected", [
        ([0.1, 0.7, 0.2], [0, 1, 0]),
        ([0.5, 0.5], [1, 0]),
        ([1, 0, 0], [1, 0, 0]),
    ])
    def test_argmax(self, p, expected):
        assert predict_hard(p).tolist() == expected

    def test_rejects_off_simplex(self):
        with pytest.raises(ValueError):
            predict_hard([0.5, 0.6])


class TestSoft:
    def test_example(self):
        np.testing.assert_allclose(predict_soft([0.7, 0.2, 0.1], 0.2),
                                   [0.7535545023696683, 0.1642969984202212, 0.0821484992101106], atol=1e-15)

    @pytest.mark.parametrize("T", [0.4, 0.2, 1e-3])
    def test_one_hot_input(self, T):
        assert predict_soft([1.0, 0.0], T).tolist() == [1.0, 0.0]

    def test_near_hard_at_tiny_temperature(self):
        np.testing.assert_allclose(predict_soft([0.6, 0.4], 1e-6), [1.0, 0.0], atol=1e-3)
        np.testing.assert_allclose(predict_soft([0.6, 0.4], 1e-6), [0.999999199998, 8.000020000050001e-07],
                                   rtol=1e-9)

    @given(p=st.integers(2, 8).flatmap(simplex), T=st.floats(1e-4, 0.4))
    def test_matches_oracle(self, p, T):
        np.testing.assert_allclose(predict_soft(p, T), soft_membership(p, T), atol=1e-12)

    @given(p=st.integers(2, 8).flatmap(simplex), T=st.floats(1e-4, 0.4))
    def test_sums_to_one_and_keeps_argmax(self, p, T):
        top = np.sort(p)
        assume(top[-1] - top[-2] > 1e-9)
        g = predict_soft(p, T)
        assert abs(g.sum() - 1) < 1e-9 and np.all(g >= 0) and np.argmax(g) == np.argmax(p)

    @given(p=st.integers(2, 10).flatmap(simplex))
    def test_converges_monotonically_with_a_clear_winner(self, p):
        top = np.sort(p)
        assume(top[-1] - top[-2] >= 0.05)
        dev = [np.abs(predict_soft(p, T) - np.array(hard_membership(p))).max() for T in LADDER]
        assert all(b <= a + 1e-12 for a, b in zip(dev, dev[1:]))
        assert dev[-1] < 1e-2

    def test_graph_version_agrees(self, rng):
        p = rng.dirichlet(np.ones(3), size=4)
        np.testing.assert_allclose(predict_soft_op(ad.tensor(p), 0.05).data, predict_soft(p, 0.05), atol=1e-15)


class TestPhi:
    def test_soft_row(self):
        assert phi(2, [0.3, 0.7], 2).tolist() == [[0, 0], [0.3, 0.7]]

    def test_one_hot_hit_and_miss(self):
        assert phi(1, [1, 0, 0], 3)[0, 0] == 1 and phi(1, [1, 0, 0], 3).sum() == 1
        assert phi(1, [0, 0, 1], 3)[0, 2] == 1 and phi(1, [0, 0, 1], 3).sum() == 1

    @pytest.mark.parametrize("y", [0, 3])
    def test_rejects_class(self, y):
        with pytest.raises(ValueError):
            phi(y, [0.5, 0.5], 2)


class TestConfusion:
    def test_soft_sum(self):
        C = confusion([1, 2, 2], [(0.9, 0.1), (0.6, 0.4), (0.2, 0.8)], 2)
        np.testing.assert_allclose(C, [[0.9, 0.1], [0.8, 1.2]], atol=1e-15)

    def test_perfect(self):
        assert confusion([1, 2], [(1, 0), (0, 1)], 2).tolist() == [[1, 0], [0, 1]]

    def test_single_example(self):
        assert confusion([1], [(0.5, 0.5)], 2).tolist() == [[0.5, 0.5], [0, 0]]

    def test_empty_and_mismatch(self):
        with pytest.raises(ValueError, match="empty"):
            confusion([], np.zeros((0, 2)), 2)
        with pytest.raises(ValueError, match="labels"):
            confusion([1, 2], [(1.0, 0.0)], 2)

    def test_equals_sum_of_phi(self, rng):
        labels = rng.integers(1, 4, 20)
        preds = rng.dirichlet(np.ones(3), size=20)
        expected = sum(phi(int(y), g, 3) for y, g in zip(labels, preds))
        np.testing.assert_allclose(confusion(labels, preds, 3), expected, atol=1e-12)

    def test_one_hot_gives_integer_counts(self, rng):
        labels = rng.integers(1, 5, 50)
        guesses = rng.integers(0, 4, 50)
        onehot = np.eye(4)[guesses]
        assert np.array_equal(confusion(labels, onehot, 4), confusion_from_indices(labels - 1, guesses, 4))

    @given(n=st.integers(1, 40), d=st.integers(2, 6), seed=st.integers(0, 10**6), T=st.floats(1e-4, 0.4))
    def test_mass_conservation(self, n, d, seed, T):
        r = np.random.default_rng(seed)
        labels = r.integers(1, d + 1, n)
        C = confusion(labels, predict_soft(r.dirichlet(np.ones(d), size=n), T), d)
        assert abs(C.sum() - n) < 1e-6
        np.testing.assert_allclose(C.sum(axis=1), np.bincount(labels - 1, minlength=d), atol=1e-6)
        assert np.all(C >= 0)

    def test_graph_version_agrees(self, rng):
        labels = rng.integers(1, 4, 10)
        p = rng.dirichlet(np.ones(3), size=10)
        np.testing.assert_allclose(confusion_op(labels, ad.tensor(p), 3).data, confusion(labels, p, 3))


class TestCardinalities:
    def test_class_one(self, C3):
        assert binary_cardinalities(C3, 1) == (5, 1, 2, 12)

    def test_class_three(self, C3):
        assert binary_cardinalities(C3, 3) == (8, 0, 1, 11)

    def test_scaled_identity(self):
        assert binary_cardinalities(7 * np.eye(4), 2) == (7, 0, 0, 21)

    def test_rejects_class(self, C3):
        with pytest.raises(ValueError):
            binary_cardinalities(C3, 4)

    @given(d=st.integers(2, 6), seed=st.integers(0, 10**6))
    def test_complete_and_match_oracle(self, d, seed):
        C = np.random.default_rng(seed).random((d, d)) * 10
        for k in range(1, d + 1):
            card = binary_cardinalities(C, k)
            assert sum(card) == pytest.approx(C.sum(), abs=1e-6)
            np.testing.assert_allclose(card, counts(C.tolist(), k - 1), atol=1e-9)


class TestScale:
    def test_quarter(self):
        assert scale([[2, 0], [0, 2]], 0.25).tolist() == [[0.5, 0], [0, 0.5]]

    def test_identity(self, C3):
        assert np.array_equal(scale(C3, 1.0), C3)

    def test_thirds(self):
        np.testing.assert_allclose(scale([[0.9, 0.1], [0.8, 1.2]], 1 / 3),
                                   [[0.3, 0.03333333333333333], [0.26666666666666666, 0.4]], atol=1e-15)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scale(np.eye(2), 0.0)
