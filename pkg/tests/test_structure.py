import math

import numpy as np
import pytest

from alignlite.errors import ShapeMismatch, UnknownKind
from alignlite.structure import (
    SimilarityDistribution,
    StructureRegConfig,
    js_divergence,
    matrix_power,
    normalize_center,
    reg_structure,
    row_softmax,
    similarity_logits,
    sum_sq_distance_variants,
)
from oracles import oracle_js, oracle_reg_structure, oracle_similarity_distribution


def _random_orthonormal(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


class TestNormalizeCenter:
    def test_hand_example(self):
        out = normalize_center(np.array([[3.0, 0.0], [0.0, 4.0]]))
        np.testing.assert_allclose(out, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)

    def test_single_row_centers_to_origin(self):
        out = normalize_center(np.array([[2.0, 1.0, 2.0]]))
        np.testing.assert_allclose(out, np.zeros((1, 3)), atol=1e-15)

    def test_column_means_vanish(self):
        rng = np.random.default_rng(0)
        out = normalize_center(rng.normal(size=(8, 4)))
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)

    def test_zero_row_warns_not_raises(self):
        x = np.array([[0.0, 0.0], [1.0, 2.0]])
        with pytest.warns(RuntimeWarning):
            out = normalize_center(x)
        assert np.all(np.isfinite(out))

    def test_offset_after_normalization_is_removed(self):
        # column-centering erases any constant shift injected between the
        # normalize and center stages, so only the row directions matter
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 3))
        xhat = x / np.linalg.norm(x, axis=1, keepdims=True)
        a = xhat - xhat.mean(axis=0, keepdims=True)
        b = (xhat + np.array([5.0, -2.0, 0.5]))
        b = b - b.mean(axis=0, keepdims=True)
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestSimilarityLogits:
    def test_identity_example(self):
        s = similarity_logits(np.eye(2), tau=1.0)
        np.testing.assert_allclose(s, np.eye(2), atol=1e-15)

    def test_tau_scales_inversely(self):
        rng = np.random.default_rng(2)
        xt = rng.normal(size=(5, 3))
        np.testing.assert_allclose(similarity_logits(xt, 0.05),
                                   20.0 * similarity_logits(xt, 1.0), rtol=1e-13)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        s = similarity_logits(rng.normal(size=(9, 4)), 0.05)
        np.testing.assert_allclose(s, s.T, atol=1e-12)

    def test_tau_positive_required(self):
        with pytest.raises(ValueError):
            similarity_logits(np.eye(2), 0.0)


class TestRowSoftmax:
    def test_uniform_on_zero_logits(self):
        p = row_softmax(np.zeros((2, 2))).P
        np.testing.assert_allclose(p, 0.5 * np.ones((2, 2)), atol=1e-15)

    def test_large_logits_no_overflow(self):
        p = row_softmax(np.array([[1000.0, 0.0]])).P
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        p = row_softmax(rng.normal(size=(7, 7)) * 3).P
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0) and np.all(p < 1)

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(5)
        s = rng.normal(size=(6, 6))
        np.testing.assert_allclose(row_softmax(s).P, row_softmax(s + 3.7).P, atol=1e-14)


class TestMatrixPower:
    def test_level_one_unchanged(self):
        rng = np.random.default_rng(6)
        p = row_softmax(rng.normal(size=(4, 4))).P
        np.testing.assert_array_equal(matrix_power(p, 1), p)

    def test_rank_one_idempotent(self):
        p = np.full((2, 2), 0.5)
        np.testing.assert_allclose(matrix_power(p, 3), p, atol=1e-15)

    def test_stochasticity_preserved(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            p = row_softmax(rng.normal(size=(8, 8)) * 10).P
            for l in (2, 3):
                np.testing.assert_allclose(matrix_power(p, l).sum(axis=1), 1.0, atol=1e-9)

    def test_accepts_distribution_wrapper(self):
        p = row_softmax(np.zeros((3, 3)))
        assert isinstance(p, SimilarityDistribution)
        np.testing.assert_allclose(matrix_power(p, 2), p.P, atol=1e-15)

    def test_power_must_be_positive(self):
        with pytest.raises(ValueError):
            matrix_power(np.eye(2), 0)


class TestJsDivergence:
    def test_identical_inputs_vanish(self):
        rng = np.random.default_rng(8)
        p = row_softmax(rng.normal(size=(5, 5))).P
        eps = 1e-8
        assert abs(js_divergence(p, p, eps)) <= 4 * eps * p.size

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        p = row_softmax(rng.normal(size=(6, 6))).P
        q = row_softmax(rng.normal(size=(6, 6))).P
        assert js_divergence(p, q, 1e-8) == pytest.approx(js_divergence(q, p, 1e-8), abs=1e-14)

    def test_disjoint_rows_reach_two_ln_two(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        q = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert js_divergence(p, q, 1e-12) == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            p = row_softmax(rng.normal(size=(6, 6)) * 5).P
            q = row_softmax(rng.normal(size=(6, 6)) * 5).P
            ours = js_divergence(p, q, 1e-8)
            ref = oracle_js(p.tolist(), q.tolist(), 1e-8)
            assert ours == pytest.approx(ref, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            js_divergence(np.eye(2), np.eye(3), 1e-8)


class TestRegStructure:
    def test_frozen_example_level_one(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        a = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        got = reg_structure(x, a, StructureRegConfig(levels=1))
        assert got > 0
        assert got == pytest.approx(0.158646515577621, abs=1e-10)

    def test_frozen_example_deeper_levels(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        a = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        assert reg_structure(x, a, StructureRegConfig(levels=2)) == pytest.approx(
            0.15221727901586307, abs=1e-10)
        assert reg_structure(x, a, StructureRegConfig(levels=3)) == pytest.approx(
            0.14576957137977906, abs=1e-10)

    def test_self_penalty_vanishes(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(16, 4))
        assert reg_structure(x, x) <= 1e-6

    def test_rotation_invariance(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(16, 4))
        q = _random_orthonormal(4, rng)
        assert reg_structure(x, x @ q) <= 1e-6

    def test_scale_and_rotation_leave_value(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            x = rng.normal(size=(12, 5))
            a = rng.normal(size=(12, 3))
            c = float(rng.uniform(0.1, 10.0))
            q = _random_orthonormal(3, rng)
            base = reg_structure(x, a)
            assert abs(base - reg_structure(x, c * (a @ q))) <= 1e-9

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(14)
        for _ in range(6):
            n = int(rng.choice([4, 8]))
            x = rng.normal(size=(n, 4))
            a = rng.normal(size=(n, 4))
            for levels in (1, 2, 3):
                ours = reg_structure(x, a, StructureRegConfig(levels=levels))
                ref = oracle_reg_structure(x.tolist(), a.tolist(), levels=levels)
                assert ours == pytest.approx(ref, abs=1e-10)

    def test_nonnegative(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            x = rng.normal(size=(6, 3))
            a = rng.normal(size=(6, 3))
            assert reg_structure(x, a) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            reg_structure(np.ones((4, 2)), np.ones((5, 2)))

    def test_too_few_rows(self):
        with pytest.raises(ShapeMismatch):
            reg_structure(np.ones((1, 2)), np.ones((1, 2)))

    def test_width_may_differ(self):
        rng = np.random.default_rng(16)
        val = reg_structure(rng.normal(size=(8, 3)), rng.normal(size=(8, 7)))
        assert np.isfinite(val) and val >= 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StructureRegConfig(levels=0)
        with pytest.raises(ValueError):
            StructureRegConfig(tau=-1.0)
        with pytest.raises(ValueError):
            StructureRegConfig(eps=0.0)

    def test_distribution_matches_oracle(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(6, 3))
        ours = row_softmax(similarity_logits(normalize_center(x), 0.05)).P
        ref = np.array(oracle_similarity_distribution(x.tolist(), tau=0.05, eps=1e-8))
        np.testing.assert_allclose(ours, ref, atol=1e-12)


class TestSimilarityVariants:
    def test_cosine_gram_is_default_path(self):
        rng = np.random.default_rng(18)
        xt = normalize_center(rng.normal(size=(7, 4)))
        at = normalize_center(rng.normal(size=(7, 4)))
        px, pa = sum_sq_distance_variants(xt, at, "cosine-gram", tau=0.05)
        np.testing.assert_array_equal(px.P, row_softmax(similarity_logits(xt, 0.05)).P)
        np.testing.assert_array_equal(pa.P, row_softmax(similarity_logits(at, 0.05)).P)

    def test_rbf_duplicate_rows_maximal(self):
        rng = np.random.default_rng(19)
        xt = rng.normal(size=(5, 3))
        xt[1] = xt[0]  # zero distance pair
        px, _ = sum_sq_distance_variants(xt, xt, "rbf")
        row = px.P[0]
        assert row[1] == pytest.approx(row[0], rel=1e-12)
        assert np.all(row[1] >= row - 1e-15)

    def test_spearman_rank_invariance(self):
        rng = np.random.default_rng(20)
        xt = rng.normal(size=(6, 5))
        p1, _ = sum_sq_distance_variants(xt, xt, "spearman")
        p2, _ = sum_sq_distance_variants(2.5 * xt, xt, "spearman")
        np.testing.assert_array_equal(p1.P, p2.P)

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            sum_sq_distance_variants(np.eye(3), np.eye(3), "euclid")
