import numpy as np
import pytest

from nclab.bounds import scl_lower_bound, ucl_lower_bound
from nclab.geometry import make_etf
from nclab.losses import LossSpec, batch_loss, psi
from nclab.sampling import HardeningSpec, draw_negatives
from nclab.util import ConfigurationError
from nclab.verify import (
    check_batched_equality,
    check_harris,
    check_nc_optimality,
    check_theorem1,
    exact_expected_loss,
    importance_weighted_loss,
)

MEAN = LossSpec("infonce_mean", 1.0)
TRIPLET = LossSpec("triplet", 1.0)


def random_unit_ball_table(n, dim, classes, seed):
    rng = np.random.default_rng(seed)
    table = rng.standard_normal((n, dim))
    table /= np.maximum(1.0, np.linalg.norm(table, axis=1))[:, None]
    labels = (np.arange(n) % classes) + 1
    return table, labels


class TestCheckTheorem1:
    def test_zero_tilt_reproduces_plain_sampler_exactly(self):
        table, labels = random_unit_ball_table(18, 2, 3, seed=0)
        report = check_theorem1(
            table, labels, "SCL_vs_HSCL", HardeningSpec("exponential", beta=0.0),
            MEAN, k=4, n_mc=2000, seed=3,
        )
        assert report.lhs_estimate == report.rhs_estimate
        assert report.lhs_stderr == report.rhs_stderr
        assert report.holds_within_3se

    def test_collapsed_table_ties_exactly(self):
        means = make_etf(3, 2)
        labels = np.repeat([1, 2, 3], 5)
        table = means[:, labels - 1].T
        for beta in (1.0, 7.0):
            report = check_theorem1(
                table, labels, "SCL_vs_HSCL", HardeningSpec("exponential", beta=beta),
                MEAN, k=6, n_mc=1500, seed=1,
            )
            floor = psi(MEAN, np.full(6, -1.5))
            assert report.lhs_estimate == pytest.approx(floor, abs=1e-12)
            assert report.rhs_estimate == pytest.approx(floor, abs=1e-12)

    def test_collapsed_table_hardened_unsupervised_gap_is_measured(self):
        # with latent-class collisions the hardened unsupervised loss at
        # collapse need not equal the plain one; the gap is measured and only
        # the dominance direction is asserted
        means = make_etf(3, 2)
        labels = np.repeat([1, 2, 3], 4)
        table = means[:, labels - 1].T
        report = check_theorem1(
            table, labels, "UCL_vs_HUCL", HardeningSpec("exponential", beta=5.0),
            MEAN, k=2, method="exact",
        )
        assert report.holds_within_3se
        assert report.lhs_estimate - report.rhs_estimate > 0.01  # collisions get upweighted

    def test_exact_enumeration_dominates_plain(self):
        table, labels = random_unit_ball_table(15, 2, 3, seed=5)
        for setting in ("SCL_vs_HSCL", "UCL_vs_HUCL"):
            report = check_theorem1(
                table, labels, setting, HardeningSpec("exponential", beta=2.0),
                MEAN, k=2, method="exact",
            )
            assert report.lhs_stderr == 0.0
            assert report.lhs_estimate >= report.rhs_estimate
            assert report.holds_within_3se

    def test_polynomial_hardening_also_dominates(self):
        table, labels = random_unit_ball_table(12, 2, 3, seed=9)
        report = check_theorem1(
            table, labels, "UCL_vs_HUCL", HardeningSpec("polynomial", epsilon=4.0),
            MEAN, k=2, method="exact",
        )
        assert report.lhs_estimate >= report.rhs_estimate

    def test_mc_matches_exact_within_3se(self):
        table, labels = random_unit_ball_table(15, 2, 3, seed=6)
        hardening = HardeningSpec("exponential", beta=3.0)
        exact = check_theorem1(table, labels, "SCL_vs_HSCL", hardening, MEAN, k=2, method="exact")
        mc = check_theorem1(table, labels, "SCL_vs_HSCL", hardening, MEAN, k=2,
                            n_mc=20_000, seed=2)
        assert abs(mc.lhs_estimate - exact.lhs_estimate) <= 3 * mc.lhs_stderr
        assert abs(mc.rhs_estimate - exact.rhs_estimate) <= 3 * mc.rhs_stderr

    def test_importance_weighted_route_agrees(self):
        table, labels = random_unit_ball_table(15, 2, 3, seed=8)
        hardening = HardeningSpec("exponential", beta=2.0)
        exact = exact_expected_loss(table, labels, "supervised_exclude", MEAN, 2, hardening)
        est, se = importance_weighted_loss(
            table, labels, "supervised_exclude", hardening, MEAN, 2, 40_000, seed=4
        )
        assert abs(est - exact) <= 3 * se

    def test_preconditions(self):
        table, labels = random_unit_ball_table(9, 2, 3, seed=1)
        with pytest.raises(ValueError, match="hardening"):
            check_theorem1(table, labels, "SCL_vs_HSCL", HardeningSpec(), MEAN, k=2)
        with pytest.raises(ValueError, match="setting"):
            check_theorem1(table, labels, "scl", HardeningSpec("exponential", beta=1.0), MEAN, k=2)
        with pytest.raises(ValueError, match="1000"):
            check_theorem1(table, labels, "SCL_vs_HSCL",
                           HardeningSpec("exponential", beta=1.0), MEAN, k=2, n_mc=10)


class TestCheckHarris:
    def test_constant_payoff_ties(self):
        report = check_harris(
            lambda u: np.exp(u.sum(axis=1)), lambda u: np.full(u.shape[0], 2.5),
            [-1.0, 0.0, 2.0], [0.25, 0.5, 0.25], k=2,
        )
        assert report.lhs_estimate == pytest.approx(report.rhs_estimate, abs=1e-12)
        assert report.holds_within_3se

    def test_exponential_tilt_of_sign_variable(self):
        report = check_harris(
            lambda u: np.exp(u.sum(axis=1)), lambda u: u.sum(axis=1),
            [-1.0, 1.0], [0.5, 0.5], k=1,
        )
        assert report.lhs_estimate == pytest.approx(np.tanh(1.0), abs=1e-12)
        assert report.lhs_estimate == pytest.approx(0.761594, abs=5e-7)
        assert report.rhs_estimate == pytest.approx(0.0, abs=1e-12)
        assert report.n_draws == 2

    def test_random_monotone_pairs_never_violate(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            support = np.sort(rng.uniform(-1, 1, size=5))
            probs = rng.dirichlet(np.ones(5))
            w_heights = np.sort(rng.uniform(0.0, 2.0, size=5))
            g_heights = np.sort(rng.uniform(-1.0, 1.0, size=5))

            def weight_fn(u, s=support, h=w_heights):
                return np.prod(np.interp(u, s, h), axis=1)

            def payoff_fn(u, s=support, h=g_heights):
                return np.interp(u, s, h).sum(axis=1)

            report = check_harris(weight_fn, payoff_fn, support, probs, k=2)
            assert report.holds_within_3se

    def test_decreasing_payoff_is_detected(self):
        report = check_harris(
            lambda u: np.exp(u.sum(axis=1)), lambda u: -u[:, 0],
            [-1.0, 1.0], [0.5, 0.5], k=2,
        )
        assert not report.holds_within_3se

    def test_support_guard_and_validation(self):
        with pytest.raises(ValueError, match="exceeds"):
            check_harris(lambda u: u.sum(axis=1), lambda u: u.sum(axis=1),
                         np.arange(11.0), np.full(11, 1 / 11), k=7)
        with pytest.raises(ValueError, match="sum to 1"):
            check_harris(lambda u: u[:, 0], lambda u: u[:, 0], [0.0, 1.0], [0.3, 0.3], k=1)
        with pytest.raises(ValueError, match="nonnegative"):
            check_harris(lambda u: u.sum(axis=1), lambda u: u.sum(axis=1),
                         [-2.0, 1.0], [0.5, 0.5], k=1)


class TestNcOptimality:
    @pytest.mark.parametrize("setting", ["SCL", "UCL"])
    def test_gap_vanishes_small(self, setting):
        report = check_nc_optimality(4, 3, MEAN, setting)
        assert abs(report.gap) <= 1e-12
        assert report.passed

    def test_triplet_bound_is_zero(self):
        report = check_nc_optimality(2, 1, TRIPLET, "SCL")
        assert report.achieved_loss == pytest.approx(0.0, abs=1e-12)
        assert report.bound == 0.0

    def test_achieved_matches_supervised_floor(self):
        report = check_nc_optimality(3, 256, MEAN, "SCL")
        assert report.achieved_loss == pytest.approx(0.201413, abs=5e-7)

    def test_bound_is_true_lower_bound_on_random_encoders(self):
        # 100 non-collapsed tables: the exact empirical loss never dips
        # below the closed-form floor, in either setting
        rng = np.random.default_rng(123)
        for trial in range(100):
            n = int(rng.integers(6, 13))
            classes = int(rng.integers(2, 4))
            table = rng.standard_normal((n, 2))
            table /= np.maximum(1.0, np.linalg.norm(table, axis=1))[:, None]
            labels = (np.arange(n) % classes) + 1
            k = int(rng.integers(1, 3))
            scl = exact_expected_loss(table, labels, "supervised_exclude", MEAN, k)
            assert scl >= scl_lower_bound(classes, k, MEAN).value - 1e-12
            ucl = exact_expected_loss(table, labels, "unsupervised_all", MEAN, k)
            assert ucl >= ucl_lower_bound(classes, k, MEAN).value - 1e-12

    def test_unknown_setting(self):
        with pytest.raises(ValueError, match="setting"):
            check_nc_optimality(3, 2, MEAN, "HSCL")


class TestBatchedEquality:
    def test_unequal_three_batch_partition(self):
        report = check_batched_equality(3, 100, (137, 93, 70), 8, MEAN)
        assert report.batched_loss == pytest.approx(np.log(1 + np.exp(-1.5)), abs=1e-12)
        assert abs(report.gap) <= 1e-12
        assert report.passed

    def test_single_batch_equals_direct_batch_loss(self):
        report = check_batched_equality(3, 4, (12,), 3, MEAN)
        means = make_etf(3, 2)
        labels = (np.arange(12) % 3) + 1
        z = means[:, labels - 1].T
        rng = np.random.default_rng(0)

        def negatives_for(i, _j):
            return draw_negatives(z[i], z, labels, labels[i], 3, "supervised_exclude",
                                  HardeningSpec(), rng)

        direct = batch_loss(z, labels, MEAN, negatives_for, 3).value
        assert report.batched_loss == pytest.approx(direct, abs=1e-12)

    def test_singleton_batch_rejected(self):
        with pytest.raises(ConfigurationError, match="anchor"):
            check_batched_equality(2, 2, (3, 1), 2, MEAN)

    def test_invalid_partition_rejected(self):
        with pytest.raises(ConfigurationError, match="partition"):
            check_batched_equality(3, 10, (10, 10), 2, MEAN)

    def test_triplet_variant_also_ties(self):
        report = check_batched_equality(2, 6, (7, 5), 4, TRIPLET)
        assert abs(report.gap) <= 1e-12


class TestExactExpectedLoss:
    def test_enumeration_guard(self):
        table, labels = np.eye(30), (np.arange(30) % 3) + 1
        with pytest.raises(ValueError, match="exceeds"):
            exact_expected_loss(table, labels, "unsupervised_all", MEAN, 5)

    def test_empty_pool(self):
        with pytest.raises(ConfigurationError):
            exact_expected_loss(np.eye(2), [1, 1], "supervised_exclude", MEAN, 1)

    def test_collapsed_table_hits_floor_exactly(self):
        means = make_etf(3, 2)
        labels = (np.arange(9) % 3) + 1
        table = means[:, labels - 1].T
        value = exact_expected_loss(table, labels, "supervised_exclude", MEAN, 2)
        assert value == pytest.approx(scl_lower_bound(3, 2, MEAN).value, abs=1e-12)
