"""
Information bounds on small discrete channels: Monte Carlo estimates of
I(Z'; X_f), the closed-form relaxations and the randomised certification.
"""
import numpy as np
import pytest

from repunlearn.bounds_lab import (
    MAX_SUPPORT,
    REPORT_COLUMNS,
    BoundReport,
    DiscreteGaussianChannel,
    certify_instance,
    certify_instances,
    conditional_mi_retain,
    forget_bound_chain,
    forget_prototype_bound,
    forget_reference_bound,
    mi_z_prime_x_estimate,
    retain_bound_rhs,
    retain_bound_reports,
    zs_retain_bound_rhs,
)
from repunlearn.errors import BoundsError
from repunlearn.numerics import seeded_rng
from repunlearn.unlearning import Transformation, init_transformation

IDENTITY = init_transformation(1, 0)


def _two_point_channel(separation, transformation=None, forget=(True, True)):
    """Two equiprobable points on a line, both in the forget subset by default"""
    z = np.array([[0.0], [separation]])
    return DiscreteGaussianChannel(
        support_z=z,
        probs=np.array([0.5, 0.5]),
        labels=np.array([0, 1]),
        transformation=transformation or IDENTITY,
        forget_mask=np.array(forget),
        prototypes=z.copy(),
    )


def _zero_map(dim):
    return Transformation(dim, [np.zeros((dim, dim))], [np.zeros(dim)])


# ═══════════════════════════════════════════════════════════════════
# Channel validation
# ═══════════════════════════════════════════════════════════════════


class TestChannel:
    def test_means_are_transformed_support(self):
        ch = _two_point_channel(3.0, _zero_map(1))
        np.testing.assert_array_equal(ch.means, np.zeros((2, 1)))

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(BoundsError):
            DiscreteGaussianChannel(np.zeros((2, 1)), np.array([0.5, 0.6]), np.array([0, 1]), IDENTITY, np.array([True, False]))

    def test_support_size_limited(self):
        K = MAX_SUPPORT + 1
        with pytest.raises(BoundsError):
            DiscreteGaussianChannel(np.zeros((K, 1)), np.full(K, 1.0 / K), np.zeros(K, dtype=int), IDENTITY, np.ones(K, dtype=bool))

    def test_dimension_limited(self):
        f = init_transformation(5, 0)
        with pytest.raises(BoundsError):
            DiscreteGaussianChannel(np.zeros((2, 5)), np.array([0.5, 0.5]), np.array([0, 1]), f, np.array([True, False]))

    def test_empty_forget_subset(self):
        ch = _two_point_channel(1.0, forget=(False, False))
        with pytest.raises(BoundsError):
            ch.forget_probs
        with pytest.raises(BoundsError):
            mi_z_prime_x_estimate(ch, 100, seeded_rng(0))

    def test_empty_retain_subset(self):
        ch = _two_point_channel(1.0)
        with pytest.raises(BoundsError):
            retain_bound_rhs(ch)
        with pytest.raises(BoundsError):
            conditional_mi_retain(ch)

    def test_too_few_samples(self):
        with pytest.raises(BoundsError):
            mi_z_prime_x_estimate(_two_point_channel(1.0), 1, seeded_rng(0))


# ═══════════════════════════════════════════════════════════════════
# Mutual information estimate
# ═══════════════════════════════════════════════════════════════════


class TestMutualInformation:
    def test_collapsing_map_carries_no_information(self):
        ch = _two_point_channel(3.0, _zero_map(1))
        estimate, stderr = mi_z_prime_x_estimate(ch, 2000, seeded_rng(0))
        assert abs(estimate) <= 3 * stderr + 1e-12

    def test_grows_with_separation(self):
        estimates = [mi_z_prime_x_estimate(_two_point_channel(m), 4000, seeded_rng(1))[0] for m in (0.0, 1.0, 4.0)]
        assert estimates[0] < estimates[1] < estimates[2]
        assert estimates[2] <= np.log(2.0)

    def test_nonnegative_within_noise(self):
        rng = seeded_rng(2)
        for _ in range(20):
            ch = _two_point_channel(float(rng.uniform(0, 3)))
            estimate, stderr = mi_z_prime_x_estimate(ch, 500, rng)
            assert estimate >= -4 * stderr

    def test_stderr_shrinks_like_inverse_sqrt(self):
        ch = _two_point_channel(1.5)
        _, small = mi_z_prime_x_estimate(ch, 400, seeded_rng(3))
        _, large = mi_z_prime_x_estimate(ch, 1600, seeded_rng(3))
        assert 1.6 <= small / large <= 2.5

    def test_deterministic(self):
        ch = _two_point_channel(2.0)
        assert mi_z_prime_x_estimate(ch, 300, seeded_rng(4)) == mi_z_prime_x_estimate(ch, 300, seeded_rng(4))


# ═══════════════════════════════════════════════════════════════════
# Closed-form bounds
# ═══════════════════════════════════════════════════════════════════


class TestClosedFormBounds:
    def test_identity_has_zero_retain_rhs(self):
        assert retain_bound_rhs(_two_point_channel(2.0, forget=(True, False))) == 0.0

    def test_zero_map_retain_rhs(self):
        """E_{x_r} 0.5 ||z||^2 with z_k = k on the retain points"""
        z = np.arange(4.0)[:, None]
        ch = DiscreteGaussianChannel(
            z, np.full(4, 0.25), np.array([0, 1, 1, 0]), _zero_map(1), np.array([True, False, False, False])
        )
        assert retain_bound_rhs(ch) == pytest.approx((0.5 * 1 + 0.5 * 4 + 0.5 * 9) / 3, rel=1e-12)

    def test_zero_shot_retain_rhs_vanishes_when_prototypes_are_the_support(self):
        assert zs_retain_bound_rhs(_two_point_channel(2.0, forget=(True, False))) == 0.0

    def test_reference_bound_example(self):
        """Forget point at 0, references {0, 2}: 0.5 * (0 + 0.5 * 4)"""
        ch = _two_point_channel(2.0, forget=(True, False))
        assert forget_reference_bound(ch) == pytest.approx(1.0, rel=1e-12)
        assert forget_prototype_bound(ch) == pytest.approx(1.0, rel=1e-12)

    def test_conditional_information_vanishes(self):
        assert conditional_mi_retain(_two_point_channel(1.0, forget=(True, False))) == 0.0

    def test_retain_reports_pass(self):
        ch = _two_point_channel(1.0, _zero_map(1), forget=(True, False))
        reports = retain_bound_reports(ch, instance_seed=5)
        assert [r.quantity for r in reports] == ["retain", "retain_zero_shot"]
        assert all(r.verdict == "pass" and r.instance_seed == 5 for r in reports)


# ═══════════════════════════════════════════════════════════════════
# Certification
# ═══════════════════════════════════════════════════════════════════


class TestBoundReport:
    def test_verdict_allows_three_stderrs(self):
        assert BoundReport(0, "q", estimate=1.25, stderr=0.1, bound=1.0, n_samples=10).verdict == "pass"
        assert BoundReport(0, "q", estimate=1.35, stderr=0.1, bound=1.0, n_samples=10).verdict == "fail"

    def test_row_columns(self):
        row = BoundReport(3, "q", 0.5, 0.1, 1.0, 10).as_row()
        assert list(row) == REPORT_COLUMNS
        assert row["margin"] == pytest.approx(0.5)


class TestCertification:
    def test_chain_rows(self):
        ch = _two_point_channel(2.0, forget=(True, False))
        reports = forget_bound_chain(ch, 500, seeded_rng(0))
        assert [r.quantity for r in reports] == [
            "forget_marginal_kl", "forget_jensen", "forget_reference", "forget_prototype",
        ]
        assert all(r.n_samples == 500 for r in reports)

    def test_random_instances_pass(self):
        reports = certify_instances(100, base_seed=0, n_samples=1000)
        instances = {r.instance_seed for r in reports}
        failed = {r.instance_seed for r in reports if r.verdict != "pass"}
        assert len(instances) == 100
        assert len(failed) <= 1

    def test_jensen_row_always_passes(self):
        reports = certify_instances(30, base_seed=11, n_samples=200)
        jensen = [r for r in reports if r.quantity == "forget_jensen"]
        assert len(jensen) == 30
        assert all(r.margin >= 0 for r in jensen)

    def test_closed_form_bounds_hold_with_margin(self):
        reports = certify_instances(30, base_seed=12, n_samples=1000)
        for r in reports:
            if r.quantity in ("forget_reference", "forget_prototype"):
                assert r.estimate - 3 * r.stderr <= r.bound

    def test_same_seed_same_reports(self):
        assert certify_instance(42, 300) == certify_instance(42, 300)

    def test_zero_instances(self):
        assert certify_instances(0) == []

    def test_negative_instances(self):
        with pytest.raises(BoundsError):
            certify_instances(-1)
