import numpy as np
import pytest

from foodcurate.sclcore import (
    cross_entropy,
    cross_entropy_logits_grad,
    normalize_rows,
    normalize_rows_backward,
    one_hot,
    positive_sets,
    scl_loss,
    scl_loss_grad,
    softmax,
)
from foodcurate.sclcore.gradcheck import (
    check_cross_entropy_grad,
    check_scl_grad,
    finite_difference,
    max_relative_error,
    run_gradcheck,
)
from foodcurate.sclcore.ops import SclError

# hand-derived closed form for the 4-view example: two identical pairs on
# orthogonal axes at T=1 give l_i = ln(1 + 2/e) per view
HAND_EXAMPLE_TOTAL = 4 * np.log(1.0 + 2.0 / np.e)


def naive_scl_loss(s, labels, temperature):
    """Direct double-loop transcription of the per-anchor definition."""
    n = len(s)
    total = 0.0
    for i in range(n):
        positives = [p for p in range(n) if labels[p] == labels[i] and p != i]
        acc = 0.0
        for p in positives:
            num = np.exp(s[i] @ s[p] / temperature)
            den = sum(np.exp(s[i] @ s[k] / temperature) for k in range(n) if k != i)
            acc += np.log(num / den)
        total += -acc / len(positives)
    return total


def unit_rows(rng, rows, cols):
    return normalize_rows(rng.normal(size=(rows, cols)))


def paired_labels(rng, n_views, n_classes=3):
    return np.repeat(rng.integers(0, n_classes, size=n_views // 2), 2)


class TestNormalizeRows:
    def test_three_four_five(self):
        out = normalize_rows(np.array([[3.0, 4.0]]))
        assert np.allclose(out, [[0.6, 0.8]], atol=1e-15)

    def test_idempotent_on_unit_rows(self):
        rng = np.random.default_rng(0)
        m = unit_rows(rng, 6, 5)
        assert np.abs(normalize_rows(m) - m).max() < 1e-12

    def test_zero_row_rejected(self):
        with pytest.raises(SclError, match="row 1"):
            normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_norms_are_one(self):
        rng = np.random.default_rng(1)
        out = normalize_rows(rng.normal(size=(20, 7)) * 100)
        assert np.abs(np.linalg.norm(out, axis=1) - 1.0).max() < 1e-9

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        raw = rng.normal(size=(5, 4))
        dy = rng.normal(size=(5, 4))
        analytic = normalize_rows_backward(raw, dy)
        numeric = finite_difference(lambda m: float((normalize_rows(m) * dy).sum()), raw.copy())
        assert max_relative_error(analytic, numeric) < 1e-6


class TestSoftmax:
    def test_uniform_on_zeros(self):
        assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)

    def test_shift_invariant(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(4, 6))
        assert np.allclose(softmax(q), softmax(q + 123.45), atol=1e-12)

    def test_huge_logits_do_not_overflow(self):
        out = softmax(np.array([1000.0, 0.0]))
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        out = softmax(rng.normal(size=(8, 5)) * 50)
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-9
        assert (out > 0).all()

    def test_non_finite_rejected(self):
        with pytest.raises(SclError):
            softmax(np.array([np.nan, 1.0]))


class TestPositiveSets:
    def test_excludes_self_includes_class(self):
        sets = positive_sets(np.array([0, 0, 1, 0]))
        assert sets[0].tolist() == [1, 3]
        assert sets[2].tolist() == []

    def test_sibling_always_positive_for_paired_labels(self):
        rng = np.random.default_rng(5)
        labels = paired_labels(rng, 12)
        for i, pos in enumerate(positive_sets(labels)):
            sibling = i + 1 if i % 2 == 0 else i - 1
            assert sibling in pos.tolist()


class TestSclLoss:
    @pytest.mark.parametrize("n_views", [2, 4, 8, 64])
    @pytest.mark.parametrize("temperature", [0.05, 0.1, 1.0])
    def test_identical_rows_closed_form(self, n_views, temperature):
        s = np.tile(np.array([[0.6, 0.8]]), (n_views, 1))
        labels = np.repeat(np.arange(n_views // 2), 2)
        per_view = scl_loss(s, labels, temperature) / n_views
        assert per_view == pytest.approx(np.log(n_views - 1), abs=1e-9)

    def test_hand_example_value(self):
        s = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        labels = np.array([0, 0, 1, 1])
        assert scl_loss(s, labels, 1.0) == pytest.approx(HAND_EXAMPLE_TOTAL, abs=1e-9)
        assert scl_loss(s, labels, 1.0) == pytest.approx(2.2057788557, abs=1e-6)

    def test_matches_naive_oracle_on_random_instances(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            s = unit_rows(rng, 8, 4)
            labels = paired_labels(rng, 8)
            for t in (0.05, 0.1, 1.0):
                mine = scl_loss(s, labels, t)
                ref = naive_scl_loss(s, labels, t)
                assert mine == pytest.approx(ref, rel=1e-10)

    def test_invariant_under_simultaneous_permutation(self):
        rng = np.random.default_rng(7)
        s = unit_rows(rng, 10, 4)
        labels = paired_labels(rng, 10)
        perm = rng.permutation(10)
        assert scl_loss(s, labels, 0.1) == pytest.approx(
            scl_loss(s[perm], labels[perm], 0.1), rel=1e-12
        )

    def test_each_anchor_term_nonnegative(self):
        # each softmax ratio is <= 1, so per-anchor losses are >= 0
        rng = np.random.default_rng(8)
        for _ in range(20):
            s = unit_rows(rng, 6, 3)
            labels = paired_labels(rng, 6)
            assert scl_loss(s, labels, 0.1) >= 0.0

    def test_empty_positive_set_rejected(self):
        s = unit_rows(np.random.default_rng(9), 4, 3)
        with pytest.raises(SclError, match="anchor"):
            scl_loss(s, np.array([0, 1, 2, 3]), 0.1)

    def test_non_finite_rejected(self):
        s = np.array([[1.0, 0.0], [np.inf, 0.0]])
        with pytest.raises(SclError):
            scl_loss(s, np.array([0, 0]), 0.1)

    def test_nonpositive_temperature_rejected(self):
        s = unit_rows(np.random.default_rng(10), 4, 3)
        with pytest.raises(SclError):
            scl_loss(s, np.array([0, 0, 1, 1]), 0.0)

    def test_tiny_temperature_stays_finite(self):
        rng = np.random.default_rng(11)
        s = unit_rows(rng, 8, 4)
        labels = paired_labels(rng, 8)
        assert np.isfinite(scl_loss(s, labels, 1e-3))


class TestSclGrad:
    def test_finite_differences_on_random_instances(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            seed = int(rng.integers(1 << 31))
            assert check_scl_grad(temperature=0.1, seed=seed) < 1e-4

    def test_uniform_rows_gradient_symmetric_and_finite(self):
        s = np.tile(np.array([[0.6, 0.8]]), (6, 1))
        labels = np.repeat(np.arange(3), 2)
        g = scl_loss_grad(s, labels, 0.1)
        assert np.isfinite(g).all()
        for i in range(0, 6, 2):
            assert np.allclose(g[i], g[i + 1], atol=1e-12)

    def test_temperature_changes_gradient(self):
        rng = np.random.default_rng(13)
        s = unit_rows(rng, 8, 4)
        labels = paired_labels(rng, 8)
        g1 = scl_loss_grad(s, labels, 0.1)
        g2 = scl_loss_grad(s, labels, 0.2)
        assert not np.allclose(g1, g2)

    def test_gradient_shape_and_error_paths(self):
        s = unit_rows(np.random.default_rng(14), 4, 3)
        assert scl_loss_grad(s, np.array([0, 0, 1, 1]), 0.1).shape == s.shape
        with pytest.raises(SclError):
            scl_loss_grad(s, np.array([0, 1, 2, 3]), 0.1)


class TestCrossEntropy:
    def test_perfect_one_hot_prediction_zero(self):
        y = one_hot(np.array([0, 2, 1]), 3)
        assert cross_entropy(y, y) == pytest.approx(0.0, abs=1e-10)

    def test_uniform_gives_log_class_count(self):
        for n_classes in (3, 10, 233):
            y_hat = np.full((4, n_classes), 1.0 / n_classes)
            y = one_hot(np.arange(4) % n_classes, n_classes)
            assert cross_entropy(y_hat, y) == pytest.approx(np.log(n_classes), rel=1e-12)
        assert np.log(233) == pytest.approx(5.4510, abs=5e-5)

    def test_confidently_wrong_is_clamped_finite(self):
        y_hat = np.array([[1.0, 0.0]])
        y = np.array([[0.0, 1.0]])
        assert np.isfinite(cross_entropy(y_hat, y))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(SclError):
            cross_entropy(np.ones((2, 3)) / 3, np.ones((3, 2)))

    def test_softmax_composite_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            seed = int(rng.integers(1 << 31))
            assert check_cross_entropy_grad(seed=seed) < 1e-6

    def test_composite_gradient_closed_form(self):
        rng = np.random.default_rng(16)
        logits = rng.normal(size=(5, 4))
        y = one_hot(rng.integers(0, 4, 5), 4)
        g = cross_entropy_logits_grad(logits, y)
        assert np.allclose(g, (softmax(logits) - y) / 5, atol=1e-15)


class TestOneHot:
    def test_basic(self):
        out = one_hot(np.array([1, 0]), 3)
        assert out.tolist() == [[0, 1, 0], [1, 0, 0]]

    def test_out_of_range_rejected(self):
        with pytest.raises(SclError):
            one_hot(np.array([3]), 3)


def test_full_gradcheck_entry_point():
    assert run_gradcheck(n_instances=5, seed=7)
