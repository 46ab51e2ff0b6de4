import numpy as np
import pytest

from conceptalign import accuracies, mpe, nis, ois, r2_diagonal


class TestMpe:
    def test_equal_permutations(self):
        assert mpe((0, 1, 2), (0, 1, 2)) == 0.0

    def test_two_cycle(self):
        assert mpe((1, 0), (0, 1)) == 1.0

    def test_half_mismatch(self):
        assert mpe((1, 0, 2, 3), (0, 1, 2, 3)) == 0.5

    def test_symmetric(self, rng):
        a = tuple(rng.permutation(6))
        b = tuple(rng.permutation(6))
        assert mpe(a, b) == mpe(b, a)
        assert (mpe(a, b) == 0.0) == (a == b)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mpe((0, 1), (0, 1, 2))

    def test_values_on_grid(self, rng):
        d = 5
        value = mpe(tuple(rng.permutation(d)), tuple(rng.permutation(d)))
        assert value in {k / d for k in range(d + 1)}


class TestR2Diagonal:
    def test_perfect(self, rng):
        C = rng.normal(size=(30, 3))
        assert r2_diagonal(C, C) == 1.0

    def test_mean_prediction_scores_zero(self, rng):
        C = rng.normal(size=(30, 3))
        pred = np.tile(C.mean(axis=0), (30, 1))
        assert r2_diagonal(C, pred) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed(self):
        truth = np.array([[0.0], [1.0], [2.0]])
        pred = np.array([[0.0], [1.0], [1.0]])
        assert r2_diagonal(truth, pred) == pytest.approx(0.5)

    def test_constant_column_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            r2_diagonal(np.ones((5, 1)), np.zeros((5, 1)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            r2_diagonal(np.zeros((5, 2)), np.zeros((5, 3)))


class TestAccuracies:
    def test_perfect(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        y = np.array([1.0, 0.0])
        assert accuracies(C, C, y, y) == (1.0, 1.0)

    def test_all_flipped(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        y = np.array([1.0, 0.0])
        assert accuracies(C, 1 - C, y, 1 - y) == (0.0, 0.0)

    def test_half_right(self):
        truth = np.array([[0.0], [0.0], [1.0], [1.0]])
        pred = np.array([[0.0], [1.0], [0.0], [1.0]])
        concept_acc, _ = accuracies(truth, pred, np.zeros(4), np.zeros(4))
        assert concept_acc == 0.5


def _correlated_binary_concepts(rng, n=400, d=3):
    base = rng.standard_normal(n)
    cols = [base + 0.6 * rng.standard_normal(n) for _ in range(d)]
    return (np.column_stack(cols) > 0).astype(float)


class TestOis:
    def test_zero_on_exact_predictions(self, rng):
        C = _correlated_binary_concepts(rng)
        assert ois(C, C, split_seed=0) == pytest.approx(0.0, abs=1e-12)

    def test_positive_for_noise_predictions(self, rng):
        C = _correlated_binary_concepts(rng)
        junk = (rng.uniform(size=C.shape) < 0.5).astype(float)
        score = ois(junk, C, split_seed=0)
        assert score > 0.05

    def test_relabeling_invariance(self, rng):
        C = _correlated_binary_concepts(rng)
        pred = np.clip(C + 0.1 * rng.standard_normal(C.shape), 0, 1)
        order = [2, 0, 1]
        assert ois(pred[:, order], C[:, order], split_seed=3) == pytest.approx(
            ois(pred, C, split_seed=3), abs=1e-9)

    def test_needs_enough_samples(self, rng):
        C = _correlated_binary_concepts(rng, n=20)
        with pytest.raises(ValueError, match="n >= 40"):
            ois(C, C, split_seed=0)


class TestNis:
    def test_zero_on_exact_predictions(self, rng):
        C = _correlated_binary_concepts(rng)
        assert nis(C, C, split_seed=1) == 0.0

    def test_detects_duplicated_concept(self, rng):
        n = 400
        C = (rng.standard_normal((n, 3)) > 0).astype(float)  # independent concepts
        leaky = C.copy()
        leaky[:, 2] = C[:, 0]  # concept 0 leaks into slot 2
        score = nis(leaky, C, split_seed=2)
        assert score > 0.2

    def test_small_for_faithful_independent_predictions(self, rng):
        n = 400
        C = (rng.standard_normal((n, 4)) > 0).astype(float)
        noisy = np.clip(C + 0.05 * rng.standard_normal(C.shape), 0, 1)
        assert nis(noisy, C, split_seed=3) <= 0.05

    def test_needs_two_concepts(self, rng):
        C = (rng.standard_normal((100, 1)) > 0).astype(float)
        with pytest.raises(ValueError, match="two concepts"):
            nis(C, C, split_seed=0)

    def test_continuous_targets_supported(self, rng):
        C = rng.standard_normal((200, 3))
        C[:, 1] = C[:, 0] * 0.9 + 0.1 * rng.standard_normal(200)
        pred = C + 0.01 * rng.standard_normal(C.shape)
        assert nis(pred, C, split_seed=4) <= 0.05
        assert ois(pred, C, split_seed=4) <= 0.2
