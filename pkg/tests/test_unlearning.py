"""
Representation unlearning: the transformation, the four losses and their
gradients, and the standard and zero-shot optimisation loops.
"""
import numpy as np
import pytest

from repunlearn.datasets import AccessLog, AuditedRows
from repunlearn.encoder import encode
from repunlearn.errors import UnlearningError
from repunlearn.numerics import check_gradient, gaussian_kl_identity_cov, seeded_rng
from repunlearn.schemas import UnlearnConfig
from repunlearn.unlearning import (
    Transformation,
    ZeroShotMetadata,
    forget_loss,
    forget_loss_and_grad,
    init_transformation,
    retain_loss,
    retain_loss_and_grad,
    total_loss,
    unlearn_standard,
    unlearn_zero_shot,
    zs_forget_loss,
    zs_forget_loss_and_grad,
    zs_retain_loss,
    zs_retain_loss_and_grad,
)

TOL = 1e-12
GRAD_TOL = 1e-4
TEST_WIDTHS = {0: None, 1: [5], 2: [5, 4]}


def _zero_map(dim):
    return Transformation(dim, [np.zeros((dim, dim))], [np.zeros(dim)])


def _constant_map(c):
    c = np.asarray(c, dtype=np.float64)
    return Transformation(c.size, [np.zeros((c.size, c.size))], [c.copy()])


def _random_transformation(rng, dim, depth, scale=0.5):
    """Identity initialisation, then every parameter perturbed"""
    f = init_transformation(dim, depth, TEST_WIDTHS[depth], rng)
    return f.with_flat(f.flat + rng.normal(0.0, scale, size=f.flat.size))


def _clear_of_kinks(f, *batches, margin=1e-3):
    """True when no ReLU pre-activation lies within `margin` of zero"""
    for z in batches:
        _, cache = f.forward(z)
        if any(name == "relu" and np.min(np.abs(pre)) < margin for _, pre, _, name in cache):
            return False
    return True


def _random_meta(rng, n_classes, dim):
    counts = rng.integers(2, 9, size=n_classes)
    forget = np.array([rng.integers(0, c) for c in counts])
    return ZeroShotMetadata(rng.normal(size=(n_classes, dim)), counts, forget)


def _full_objective(net, data, split, f, beta):
    z = encode(net, data.features)
    return total_loss(
        retain_loss(z[split.retain_indices], f),
        forget_loss(z[split.forget_indices], z, f),
        beta,
    )


def _full_zs_objective(net, data, split, meta, f, beta):
    z_f = encode(net, data.features[split.forget_indices])
    return total_loss(zs_retain_loss(meta, f), zs_forget_loss(z_f, meta, f), beta)


# ═══════════════════════════════════════════════════════════════════
# Transformation
# ═══════════════════════════════════════════════════════════════════


class TestTransformation:
    @pytest.mark.parametrize("depth", [0, 1, 2])
    def test_initialised_at_identity(self, depth):
        f = init_transformation(3, depth, TEST_WIDTHS[depth], seeded_rng(depth))
        z = seeded_rng(10).normal(size=(20, 3))
        np.testing.assert_array_equal(f(z), z)
        assert f.depth == depth

    def test_default_hidden_width(self):
        f = init_transformation(2, 2, rng=seeded_rng(0))
        assert f.widths == [32, 32]
        assert f.residual

    def test_depth_one_hidden_layer_is_random(self):
        f = init_transformation(2, 1, [6], seeded_rng(0))
        assert np.any(f.weights[0] != 0)
        assert np.all(f.weights[-1] == 0) and np.all(f.biases[-1] == 0)

    def test_flat_round_trip(self):
        f = _random_transformation(seeded_rng(2), 3, 2)
        g = f.with_flat(f.flat)
        z = seeded_rng(3).normal(size=(5, 3))
        np.testing.assert_array_equal(f(z), g(z))

    def test_unsupported_depth(self):
        with pytest.raises(UnlearningError):
            init_transformation(2, 3)
        weights = [np.zeros((2, 2))] * 4
        with pytest.raises(UnlearningError):
            Transformation(2, weights, [np.zeros(2)] * 4)

    def test_dimension_checked(self):
        with pytest.raises(UnlearningError):
            Transformation(2, [np.zeros((3, 2))], [np.zeros(3)])


# ═══════════════════════════════════════════════════════════════════
# Losses
# ═══════════════════════════════════════════════════════════════════


class TestLossExamples:
    def test_retain_loss_of_zero_map(self):
        assert retain_loss(np.array([[1.0, 2.0]]), _zero_map(2)) == pytest.approx(2.5, rel=TOL)

    def test_forget_loss_between_two_references(self):
        z_f = np.array([[1.0, 0.0]])
        z_ref = np.array([[0.0, 0.0], [2.0, 0.0]])
        assert forget_loss(z_f, z_ref, init_transformation(2, 0)) == pytest.approx(0.5, rel=TOL)

    def test_zero_shot_retain_loss_of_zero_map(self):
        meta = ZeroShotMetadata(np.array([[1.0, 1.0], [-1.0, 1.0]]), [1, 1], [0, 0])
        assert zs_retain_loss(meta, _zero_map(2)) == pytest.approx(1.0, rel=TOL)

    def test_zero_shot_forget_loss_at_origin(self):
        meta = ZeroShotMetadata(np.array([[1.0, 1.0], [-1.0, -1.0]]), [1, 1], [1, 0])
        z_f = np.zeros((1, 2))
        assert zs_forget_loss(z_f, meta, init_transformation(2, 0)) == pytest.approx(1.0, rel=TOL)

    def test_identity_has_zero_retain_losses(self):
        rng = seeded_rng(0)
        for depth in (0, 1, 2):
            f = init_transformation(3, depth, TEST_WIDTHS[depth], rng)
            assert retain_loss(rng.normal(size=(6, 3)), f) == 0.0
            assert zs_retain_loss(_random_meta(rng, 4, 3), f) == 0.0


class TestLossOracles:
    """Vectorised losses against plain double loops on random instances"""

    def test_retain_loss(self):
        rng = seeded_rng(21)
        for _ in range(100):
            f = _random_transformation(rng, 3, int(rng.integers(0, 3)))
            z = rng.normal(size=(int(rng.integers(1, 8)), 3))
            u = f(z)
            expected = sum(np.sum((z[i] - u[i]) ** 2) for i in range(len(z))) / (2 * len(z))
            assert retain_loss(z, f) == pytest.approx(expected, rel=TOL)

    def test_forget_loss(self):
        rng = seeded_rng(22)
        for _ in range(100):
            f = _random_transformation(rng, 2, int(rng.integers(0, 3)))
            z_f = rng.normal(size=(int(rng.integers(1, 6)), 2))
            z_ref = rng.normal(size=(int(rng.integers(1, 9)), 2))
            u = f(z_f)
            total = sum(np.sum((z_ref[j] - u[i]) ** 2) for i in range(len(z_f)) for j in range(len(z_ref)))
            assert forget_loss(z_f, z_ref, f) == pytest.approx(total / (2 * len(z_f) * len(z_ref)), rel=TOL)

    def test_zero_shot_retain_loss(self):
        rng = seeded_rng(23)
        for _ in range(100):
            f = _random_transformation(rng, 2, int(rng.integers(0, 3)))
            meta = _random_meta(rng, int(rng.integers(2, 6)), 2)
            u = f(meta.prototypes)
            total = sum(
                meta.retain_counts[c] * np.sum((meta.prototypes[c] - u[c]) ** 2)
                for c in range(meta.prototypes.shape[0])
            )
            assert zs_retain_loss(meta, f) == pytest.approx(total / (2 * meta.n_retain), rel=TOL)

    def test_zero_shot_forget_loss(self):
        rng = seeded_rng(24)
        for _ in range(100):
            f = _random_transformation(rng, 2, int(rng.integers(0, 3)))
            meta = _random_meta(rng, int(rng.integers(2, 6)), 2)
            z_f = rng.normal(size=(int(rng.integers(1, 6)), 2))
            u = f(z_f)
            total = sum(
                meta.class_counts[c] * np.sum((meta.prototypes[c] - u[i]) ** 2)
                for i in range(len(z_f)) for c in range(meta.prototypes.shape[0])
            )
            assert zs_forget_loss(z_f, meta, f) == pytest.approx(total / (2 * len(z_f) * meta.n_total), rel=TOL)


class TestLossProperties:
    def test_retain_loss_is_mean_gaussian_kl(self):
        rng = seeded_rng(30)
        f = _random_transformation(rng, 3, 1)
        z = rng.normal(size=(12, 3))
        assert retain_loss(z, f) == pytest.approx(float(np.mean(gaussian_kl_identity_cov(f(z), z))), rel=TOL)

    def test_forget_loss_minimised_by_reference_mean(self):
        rng = seeded_rng(31)
        z_f, z_ref = rng.normal(size=(4, 2)), rng.normal(size=(9, 2))
        center = z_ref.mean(axis=0)
        best = forget_loss(z_f, z_ref, _constant_map(center))
        for _ in range(20):
            assert forget_loss(z_f, z_ref, _constant_map(center + rng.normal(0, 0.3, size=2))) > best
        _, grad = forget_loss_and_grad(z_f, z_ref, _constant_map(center))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_zero_shot_forget_loss_minimised_by_weighted_centroid(self):
        rng = seeded_rng(32)
        meta = _random_meta(rng, 4, 2)
        z_f = rng.normal(size=(3, 2))
        _, grad = zs_forget_loss_and_grad(z_f, meta, _constant_map(meta.global_centroid))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_duplicating_references_changes_nothing(self):
        rng = seeded_rng(33)
        f = _random_transformation(rng, 2, 0)
        z_f, z_ref = rng.normal(size=(3, 2)), rng.normal(size=(5, 2))
        doubled = np.concatenate([z_ref, z_ref])
        assert forget_loss(z_f, doubled, f) == pytest.approx(forget_loss(z_f, z_ref, f), rel=TOL)

    def test_scaling_class_counts_changes_nothing(self):
        rng = seeded_rng(34)
        f = _random_transformation(rng, 2, 1)
        meta = _random_meta(rng, 3, 2)
        scaled = ZeroShotMetadata(meta.prototypes, 3 * meta.class_counts, 3 * meta.forget_counts)
        z_f = rng.normal(size=(4, 2))
        assert zs_forget_loss(z_f, scaled, f) == pytest.approx(zs_forget_loss(z_f, meta, f), rel=TOL)
        assert zs_retain_loss(scaled, f) == pytest.approx(zs_retain_loss(meta, f), rel=TOL)

    def test_class_order_changes_nothing(self):
        rng = seeded_rng(35)
        f = _random_transformation(rng, 2, 2)
        meta = _random_meta(rng, 4, 2)
        perm = np.array([2, 0, 3, 1])
        permuted = ZeroShotMetadata(meta.prototypes[perm], meta.class_counts[perm], meta.forget_counts[perm])
        z_f = rng.normal(size=(4, 2))
        assert zs_forget_loss(z_f, permuted, f) == pytest.approx(zs_forget_loss(z_f, meta, f), rel=TOL)
        assert zs_retain_loss(permuted, f) == pytest.approx(zs_retain_loss(meta, f), rel=TOL)

    def test_total_loss(self):
        assert total_loss(1.5, 2.0, 0.0) == 1.5
        assert total_loss(1.5, 2.0, 0.25) == pytest.approx(2.0)
        with pytest.raises(UnlearningError):
            total_loss(1.0, 1.0, -1e-3)

    def test_empty_batches_rejected(self):
        f = init_transformation(2, 0)
        meta = ZeroShotMetadata(np.eye(2), [2, 2], [1, 0])
        with pytest.raises(UnlearningError):
            retain_loss(np.zeros((0, 2)), f)
        with pytest.raises(UnlearningError):
            forget_loss(np.ones((1, 2)), np.zeros((0, 2)), f)
        with pytest.raises(UnlearningError):
            zs_forget_loss(np.zeros((0, 2)), meta, f)


class TestGradients:
    """Analytic gradients against central differences at random parameters"""

    @pytest.mark.parametrize("depth", [0, 1, 2])
    def test_all_losses(self, depth):
        rng = seeded_rng(100 + depth)
        checked = 0
        while checked < 50:
            f = _random_transformation(rng, 2, depth)
            z_r, z_f, z_ref = rng.normal(size=(6, 2)), rng.normal(size=(4, 2)), rng.normal(size=(7, 2))
            meta = _random_meta(rng, 3, 2)
            if not _clear_of_kinks(f, z_r, z_f, meta.prototypes):
                continue
            checked += 1
            cases = [
                (retain_loss_and_grad(z_r, f)[1], lambda w: retain_loss(z_r, f.with_flat(w))),
                (forget_loss_and_grad(z_f, z_ref, f)[1], lambda w: forget_loss(z_f, z_ref, f.with_flat(w))),
                (zs_retain_loss_and_grad(meta, f)[1], lambda w: zs_retain_loss(meta, f.with_flat(w))),
                (zs_forget_loss_and_grad(z_f, meta, f)[1], lambda w: zs_forget_loss(z_f, meta, f.with_flat(w))),
            ]
            for analytic, func in cases:
                assert check_gradient(func, analytic, f.flat) <= GRAD_TOL


# ═══════════════════════════════════════════════════════════════════
# Zero-shot metadata
# ═══════════════════════════════════════════════════════════════════


class TestZeroShotMetadata:
    def test_from_split(self, small_model, small_class_split):
        meta = ZeroShotMetadata.from_split(small_model, small_class_split)
        np.testing.assert_array_equal(meta.prototypes, small_model.weights[-1])
        assert meta.n_total == 120 and meta.n_forget == 40 and meta.n_retain == 80

    def test_forget_count_above_class_count(self):
        with pytest.raises(UnlearningError):
            ZeroShotMetadata(np.eye(2), [1, 1], [2, 0])

    def test_nothing_retained(self):
        with pytest.raises(UnlearningError):
            ZeroShotMetadata(np.eye(2), [1, 1], [1, 1])

    def test_global_centroid(self):
        meta = ZeroShotMetadata(np.array([[0.0, 0.0], [4.0, 0.0]]), [3, 1], [0, 0])
        np.testing.assert_allclose(meta.global_centroid, [1.0, 0.0])

    def test_retain_prior_comes_from_counts(self):
        meta = ZeroShotMetadata(np.eye(2), [4, 2], [1, 0])
        np.testing.assert_array_equal(meta.retain_prior, [3 / 5, 2 / 5])

    def test_retain_loss_is_prior_weighted(self):
        meta = ZeroShotMetadata(np.array([[1.0, 0.0], [0.0, 2.0]]), [4, 2], [1, 0])
        # the zero map moves w_0 by 1 and w_1 by 2
        assert zs_retain_loss(meta, _zero_map(2)) == pytest.approx((3 / 5 * 1.0 + 2 / 5 * 4.0) / 2, rel=TOL)


# ═══════════════════════════════════════════════════════════════════
# Optimisation loops
# ═══════════════════════════════════════════════════════════════════


class TestStandardUnlearning:
    def test_zero_beta_stays_at_identity(self, small_model, small_data, small_class_split):
        for depth in (0, 1):
            cfg = UnlearnConfig(beta=0.0, depth=depth, hidden_widths=TEST_WIDTHS[depth], max_epochs=3)
            f = unlearn_standard(small_model, small_data[0], small_class_split, cfg, seeded_rng(0))
            z = encode(small_model, small_data[1].features)
            np.testing.assert_array_equal(f(z), z)

    def test_encoder_is_frozen(self, small_model, small_data, small_class_split):
        before = [W.copy() for W in small_model.weights] + [b.copy() for b in small_model.biases]
        unlearn_standard(small_model, small_data[0], small_class_split, UnlearnConfig(depth=0, beta=1.0, max_epochs=3), seeded_rng(0))
        after = small_model.weights + small_model.biases
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_same_transformation(self, small_model, small_data, small_class_split):
        cfg = UnlearnConfig(beta=0.1, depth=1, hidden_widths=[6], max_epochs=4)
        a = unlearn_standard(small_model, small_data[0], small_class_split, cfg, seeded_rng(9))
        b = unlearn_standard(small_model, small_data[0], small_class_split, cfg, seeded_rng(9))
        np.testing.assert_array_equal(a.flat, b.flat)

    def test_objective_decreases(self, small_model, small_data, small_class_split):
        cfg = UnlearnConfig(depth=0, beta=1.0, lr=1e-2, max_epochs=30, tolerance=0.0, forget_batch=16, retain_batch=16, reference_batch=32)
        f = unlearn_standard(small_model, small_data[0], small_class_split, cfg, seeded_rng(0))
        identity = init_transformation(2, 0)
        train = small_data[0]
        assert _full_objective(small_model, train, small_class_split, f, 1.0) < _full_objective(
            small_model, train, small_class_split, identity, 1.0
        )

    def test_reads_are_logged(self, small_model, small_data, small_class_split):
        log = AccessLog()
        unlearn_standard(small_model, small_data[0], small_class_split, UnlearnConfig(depth=0, max_epochs=2), seeded_rng(0), log)
        assert np.intersect1d(log.indices(), small_class_split.forget_indices).size > 0

    def test_split_must_match_data(self, small_model, small_data, toy_class_split):
        with pytest.raises(UnlearningError):
            unlearn_standard(small_model, small_data[0], toy_class_split, UnlearnConfig(depth=0, max_epochs=1))


class TestZeroShotUnlearning:
    def test_reads_only_forget_rows(self, small_model, small_data, small_class_split):
        train = small_data[0]
        log = AccessLog()
        rows = AuditedRows(train.features, small_class_split.forget_indices, log)
        meta = ZeroShotMetadata.from_split(small_model, small_class_split)
        unlearn_zero_shot(small_model, rows, meta, UnlearnConfig(depth=0, beta=0.1, max_epochs=3), seeded_rng(0))
        assert log.indices().size > 0
        assert log.count_outside(small_class_split.forget_indices) == 0

    def test_objective_decreases(self, small_model, small_data, small_class_split):
        train = small_data[0]
        meta = ZeroShotMetadata.from_split(small_model, small_class_split)
        cfg = UnlearnConfig(depth=0, beta=1.0, lr=1e-2, max_epochs=30, tolerance=0.0, forget_batch=16)
        f = unlearn_zero_shot(small_model, train.features[small_class_split.forget_indices], meta, cfg, seeded_rng(0))
        identity = init_transformation(2, 0)
        assert _full_zs_objective(small_model, train, small_class_split, meta, f, 1.0) < _full_zs_objective(
            small_model, train, small_class_split, meta, identity, 1.0
        )

    def test_zero_beta_stays_at_identity(self, small_model, small_data, small_class_split):
        meta = ZeroShotMetadata.from_split(small_model, small_class_split)
        features = small_data[0].features[small_class_split.forget_indices]
        f = unlearn_zero_shot(small_model, features, meta, UnlearnConfig(depth=0, beta=0.0, max_epochs=3), seeded_rng(0))
        np.testing.assert_array_equal(f.weights[0], np.eye(2))
        np.testing.assert_array_equal(f.biases[0], np.zeros(2))

    def test_prototype_shape_must_match_head(self, small_model, small_data, small_class_split):
        meta = ZeroShotMetadata(np.eye(2), [40, 80], [40, 0])
        features = small_data[0].features[small_class_split.forget_indices]
        with pytest.raises(UnlearningError):
            unlearn_zero_shot(small_model, features, meta, UnlearnConfig(depth=0, max_epochs=1))

    def test_non_finite_loss_is_reported(self, small_model, small_class_split):
        meta = ZeroShotMetadata.from_split(small_model, small_class_split)
        features = np.full((4, 4), np.inf)
        with pytest.raises(UnlearningError):
            unlearn_zero_shot(small_model, features, meta, UnlearnConfig(depth=0, max_epochs=1))

    def test_empty_forget_set(self, small_model, small_class_split):
        meta = ZeroShotMetadata.from_split(small_model, small_class_split)
        with pytest.raises(UnlearningError):
            unlearn_zero_shot(small_model, np.zeros((0, 4)), meta, UnlearnConfig(depth=0, max_epochs=1))
