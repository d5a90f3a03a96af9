import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nclab.geometry import make_etf
from nclab.losses import (
    LossSpec,
    batch_loss,
    cl_loss_sample,
    psi,
    psi_gradient_rows,
    psi_rows,
)
from nclab.util import ConfigurationError

MEAN = LossSpec("infonce_mean", 1.0)
SUM = LossSpec("infonce_sum", 1.0)
TRIPLET = LossSpec("triplet", 1.0)

finite_vec = st.lists(st.floats(-30, 30), min_size=1, max_size=8)


class TestSpec:
    def test_rejects_unknown_variant(self):
        with pytest.raises(ValueError, match="variant"):
            LossSpec("nce", 1.0)

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError, match="alpha"):
            LossSpec("infonce_mean", 0.0)


class TestPsi:
    def test_mean_form_at_collapse_matches_scalar_oracle(self):
        # mean form with equal arguments is k-free: log(1 + e^t)
        oracle = np.log(1.0 + np.exp(-1.5))
        value = psi(MEAN, np.full(256, -1.5))
        assert value == pytest.approx(oracle, abs=1e-15)
        assert value == pytest.approx(0.201413, abs=5e-7)

    def test_single_zero_argument(self):
        assert psi(MEAN, [0.0]) == pytest.approx(np.log(2.0), abs=1e-15)

    def test_triplet_hinge(self):
        assert psi(TRIPLET, [0.5, -2.0]) == pytest.approx(1.5, abs=1e-15)

    def test_sum_form_counts_every_exponential(self):
        assert psi(SUM, [0.0, 0.0]) == pytest.approx(np.log(3.0), abs=1e-15)
        assert psi(MEAN, [0.0, 0.0]) == pytest.approx(np.log(2.0), abs=1e-15)

    def test_overflow_safe(self):
        assert np.isfinite(psi(MEAN, np.full(4, 700.0)))
        assert psi(MEAN, np.full(4, 700.0)) == pytest.approx(700.0, rel=1e-12)
        assert np.isfinite(psi(SUM, np.full(4, 700.0)))

    def test_deep_negative_underflow(self):
        assert psi(MEAN, np.full(3, -900.0)) >= 0.0

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            psi(MEAN, [])
        with pytest.raises(ValueError):
            psi(MEAN, [np.inf])

    @settings(deadline=None, max_examples=60)
    @given(finite_vec, st.sampled_from([MEAN, SUM, TRIPLET]))
    def test_argument_wise_non_decreasing(self, values, spec):
        t = np.asarray(values)
        base = psi(spec, t)
        for i in range(t.size):
            bumped = t.copy()
            bumped[i] += 0.1
            assert psi(spec, bumped) >= base - 1e-12

    @settings(deadline=None, max_examples=60)
    @given(finite_vec, st.randoms(use_true_random=False), st.sampled_from([MEAN, SUM, TRIPLET]))
    def test_convex_along_segments(self, values, rnd, spec):
        a = np.asarray(values)
        b = a + np.asarray([rnd.uniform(-5, 5) for _ in a])
        mid = psi(spec, 0.5 * a + 0.5 * b)
        assert mid <= 0.5 * psi(spec, a) + 0.5 * psi(spec, b) + 1e-12

    @settings(deadline=None, max_examples=30)
    @given(st.floats(-5, 5), st.integers(1, 300), st.floats(0.1, 4.0))
    def test_mean_form_k_free_at_equal_arguments(self, t, k, alpha):
        spec = LossSpec("infonce_mean", alpha)
        assert psi(spec, np.full(k, t)) == pytest.approx(np.log(alpha + np.exp(t)), rel=1e-12)

    def test_gradient_rows_match_finite_differences(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(-3, 3, size=(4, 5))
        h = 1e-6
        for spec in (MEAN, SUM, TRIPLET):
            grad = psi_gradient_rows(spec, t)
            for r in range(4):
                for c in range(5):
                    tp, tm = t[r].copy(), t[r].copy()
                    tp[c] += h
                    tm[c] -= h
                    fd = (psi(spec, tp) - psi(spec, tm)) / (2 * h)
                    assert grad[r, c] == pytest.approx(fd, abs=1e-8)

    def test_rows_matches_scalar(self):
        rng = np.random.default_rng(1)
        t = rng.uniform(-4, 4, size=(6, 3))
        for spec in (MEAN, SUM, TRIPLET):
            rows = psi_rows(spec, t)
            for r in range(6):
                assert rows[r] == pytest.approx(psi(spec, t[r]), abs=1e-15)


class TestClLossSample:
    def test_identical_embeddings_give_zero_arguments(self):
        z = np.array([0.4, -0.3])
        value = cl_loss_sample(z, z, np.tile(z, (5, 1)), MEAN)
        assert value == pytest.approx(psi(MEAN, np.zeros(5)), abs=1e-15)

    def test_collapsed_frame_configuration(self):
        means = make_etf(3, 2)
        anchor = means[:, 0]
        negs = np.tile(means[:, 1], (7, 1))
        value = cl_loss_sample(anchor, anchor, negs, MEAN)
        assert value == pytest.approx(psi(MEAN, np.full(7, -1.5)), abs=1e-12)

    def test_orthogonal_everything_single_negative(self):
        value = cl_loss_sample([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [[0.0, 0.0, 1.0]], MEAN)
        assert value == pytest.approx(np.log(2.0), abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            cl_loss_sample([1.0, 0.0], [1.0, 0.0, 0.0], [[1.0, 0.0]], MEAN)


class TestBatchLoss:
    def test_collapsed_batch_reaches_supervised_floor(self):
        means = make_etf(3, 2)
        labels = np.repeat([1, 2, 3], 4)
        z = means[:, labels - 1].T
        rng = np.random.default_rng(0)

        def negatives_for(i, _j):
            pool = np.nonzero(labels != labels[i])[0]
            return pool[rng.integers(pool.size, size=6)]

        value = batch_loss(z, labels, MEAN, negatives_for, 6)
        assert value.value == pytest.approx(np.log(1 + np.exp(-1.5)), abs=1e-12)
        assert value.per_anchor_count == 12

    def test_single_class_negatives_forced_to_anchor(self):
        z = np.tile([0.5, 0.5], (4, 1))
        value = batch_loss(z, [1, 1, 1, 1], MEAN, lambda i, j: [i] * 3, 3)
        assert value.value == pytest.approx(np.log(2.0), abs=1e-15)

    def test_two_element_batch_matches_hand_computation(self):
        z = np.array([[0.6, 0.0], [0.0, 0.8]])
        labels = [1, 2]
        # distinct labels: only the self pairs (0,0) and (1,1) contribute
        negatives = {0: [1], 1: [0]}
        value = batch_loss(z, labels, MEAN, lambda i, j: negatives[i], 1)
        expected = 0.5 * (
            cl_loss_sample(z[0], z[0], z[[1]], MEAN) + cl_loss_sample(z[1], z[1], z[[0]], MEAN)
        )
        assert value.value == pytest.approx(expected, abs=1e-15)

    def test_configuration_error_names_anchor(self):
        def negatives_for(i, _j):
            raise ConfigurationError("no eligible negatives")

        with pytest.raises(ConfigurationError, match="anchor 0"):
            batch_loss(np.eye(2), [1, 1], MEAN, negatives_for, 1)

    def test_iteration_order_is_ascending(self):
        calls = []

        def negatives_for(i, j):
            calls.append((i, j))
            return [0]

        batch_loss(np.eye(3), [1, 1, 1], MEAN, negatives_for, 1)
        assert calls == sorted(calls)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            batch_loss(np.empty((0, 2)), [], MEAN, lambda i, j: [0], 1)
