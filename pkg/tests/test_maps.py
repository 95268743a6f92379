import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condpoly import maps as F
from condpoly import matrices as MX
from condpoly import simplex as S

EXAMPLE_Q = np.array([
    [1 / 2, 0, 1 / 2, 0, 0],
    [0, 1 / 3, 0, 2 / 3, 0],
    [0, 0, 0, 0, 1],
])
EXAMPLE_RBAR = np.array([
    [1, 0, 1, 0, 0],
    [0, 1, 0, 1, 0],
    [0, 0, 0, 0, 1],
])


def _conditional_loop(Rbar, Qs, K):
    # f(K)_ij = sum_a Rbar_ai sum_b K_ab Q[a]_bj
    k, l = Rbar.shape
    m, n = Qs[0].shape
    out = np.zeros((l, n))
    for i in range(l):
        for j in range(n):
            out[i, j] = sum(Rbar[a, i] * K[a, b] * Qs[a][b, j]
                            for a in range(k) for b in range(m))
    return out


class TestRowPartitionMatrix:
    def test_example_blocks_inferred(self):
        Q = F.RowPartitionMatrix(EXAMPLE_Q)
        assert Q.blocks == ((0, 2), (1, 3), (4,))
        np.testing.assert_array_equal(Q.indicator().matrix, EXAMPLE_RBAR)

    def test_explicit_blocks_allow_zero_weight(self):
        Q = F.RowPartitionMatrix([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], [[0, 1], [2]])
        assert Q.blocks == ((0, 1), (2,))

    @pytest.mark.parametrize("Q, blocks", [
        ([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]], None),
        ([[1.0, 0.0], [0.0, 0.9]], None),
        ([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [[0], [1]]),
        ([[1.0, 0.0], [0.0, 1.0]], [[0, 1], [1]]),
    ])
    def test_rejects_invalid(self, Q, blocks):
        with pytest.raises(ValueError):
            F.RowPartitionMatrix(Q, blocks)

    def test_example_indicator_is_not_homogeneous(self):
        assert not F.PartitionIndicatorMatrix(EXAMPLE_RBAR).homogeneous


class TestApply:
    def test_example_markov(self):
        f = F.MarkovMap(EXAMPLE_Q)
        np.testing.assert_allclose(f.apply([1 / 2, 1 / 4, 1 / 4]),
                                   [1 / 4, 1 / 12, 1 / 4, 1 / 6, 1 / 4], rtol=1e-15)

    def test_identity_markov(self):
        p = S.sample_probability_vector(4, 0)
        np.testing.assert_array_equal(F.MarkovMap(F.RowPartitionMatrix.identity(4)).apply(p), p)

    def test_conditional_row_copying(self):
        f = F.ConditionalEmbedding([[1, 1]], [F.RowPartitionMatrix.identity(2)])
        np.testing.assert_allclose(f.apply([[0.3, 0.7]]), [[0.3, 0.7], [0.3, 0.7]])

    def test_conditional_matches_loop(self):
        f = F.sample_conditional_embedding(2, 3, 5, 4, homogeneous=False, seed=3)
        K = MX.sample_stochastic_matrix(2, 3, 4)
        expected = _conditional_loop(f.Rbar.matrix, [Q.matrix for Q in f.Qs], K)
        np.testing.assert_allclose(f.apply(K), expected, rtol=1e-14)

    def test_dual_is_transposed_lebanon(self):
        f = F.sample_dual_lebanon_map(2, 3, 4, 5, seed=1)
        primal = F.LebanonMap(f.R, f.Qs)
        P = MX.sample_joint_matrix(2, 3, 2)
        np.testing.assert_allclose(f.apply(P), primal.apply(P.T).T, rtol=1e-14)

    def test_rejects_shape(self):
        with pytest.raises(ValueError):
            F.MarkovMap(EXAMPLE_Q).apply([0.5, 0.5])


class TestRowProduct:
    def test_identity(self):
        M = MX.sample_positive_matrix(2, 3, 0)
        eye = F.RowPartitionMatrix.identity(3)
        np.testing.assert_array_equal(F.row_product(M, [eye, eye]), M)

    def test_single_row_is_markov(self):
        Q = F.RowPartitionMatrix(EXAMPLE_Q)
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(F.row_product(p[None], [Q])[0], F.MarkovMap(Q).apply(p))

    def test_hand_value(self):
        Q1 = F.RowPartitionMatrix([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        Q2 = F.RowPartitionMatrix([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]])
        got = F.row_product(np.eye(2), [Q1, Q2])
        np.testing.assert_allclose(got, [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])

    def test_rejects_count(self):
        with pytest.raises(ValueError):
            F.row_product(np.eye(2), [F.RowPartitionMatrix.identity(2)])


class TestPushforward:
    def test_identity(self):
        f = F.ConditionalEmbedding(np.eye(2), [F.RowPartitionMatrix.identity(3)] * 2)
        u = MX.sample_matrix_tangent(2, 3, "conditional", 0)
        np.testing.assert_array_equal(f.pushforward(u), u)

    def test_basis_vector_copied(self):
        f = F.ConditionalEmbedding([[1, 1]], [F.RowPartitionMatrix.identity(2)])
        got = f.pushforward(np.array([[1.0, 0.0]]))
        np.testing.assert_array_equal(got, [[1.0, 0.0], [1.0, 0.0]])

    @pytest.mark.parametrize("sampler", [
        lambda r: F.sample_markov_map(3, 5, r),
        lambda r: F.sample_lebanon_map(2, 3, 3, 4, r),
        lambda r: F.sample_dual_lebanon_map(2, 3, 4, 5, r),
        lambda r: F.sample_conditional_embedding(2, 2, 5, 3, False, r),
    ], ids=["markov", "lebanon", "dual", "conditional"])
    def test_matches_finite_differences(self, sampler):
        rng = np.random.default_rng(5)
        f = sampler(rng)
        shape = f.domain_shape
        x = np.abs(rng.standard_normal(shape)) + 0.5
        u = rng.standard_normal(shape)
        h = 1e-6
        fd = (f.apply(x + h * u) - f.apply(x - h * u)) / (2 * h)
        np.testing.assert_allclose(f.pushforward(u), fd, rtol=0, atol=1e-8)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear(self, seed, alpha, beta):
        f = F.sample_conditional_embedding(2, 3, 4, 5, True, seed)
        u = MX.sample_matrix_tangent(2, 3, "cone", seed + 1)
        v = MX.sample_matrix_tangent(2, 3, "cone", seed + 2)
        np.testing.assert_allclose(f.pushforward(alpha * u + beta * v),
                                   alpha * f.pushforward(u) + beta * f.pushforward(v),
                                   rtol=1e-12, atol=1e-12)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_conditional_tangents_preserved(self, seed):
        f = F.sample_conditional_embedding(3, 2, 4, 4, False, seed)
        u = MX.sample_matrix_tangent(3, 2, "conditional", seed)
        assert np.abs(f.pushforward(u).sum(axis=1)).max() <= 1e-14


class TestNormPreservation:
    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_markov_total(self, seed):
        f = F.sample_markov_map(3, 6, seed)
        x = S.sample_positive_vector(3, seed)
        assert f.apply(x).sum() == pytest.approx(x.sum(), rel=1e-14)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_lebanon_total(self, seed):
        f = F.sample_lebanon_map(2, 3, 3, 4, seed)
        M = MX.sample_positive_matrix(2, 3, seed)
        assert f.apply(M).sum() == pytest.approx(M.sum(), rel=1e-14)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_conditional_rows(self, seed, homogeneous):
        f = F.sample_conditional_embedding(2, 3, 4, 5, homogeneous, seed)
        K = MX.sample_stochastic_matrix(2, 3, seed)
        np.testing.assert_allclose(f.apply(K).sum(axis=1), 1.0, atol=1e-14)


class TestPullback:
    def test_identity(self):
        f = F.MarkovMap(F.RowPartitionMatrix.identity(3))
        p = S.sample_probability_vector(3, 0)
        u, v = S.sample_tangent(3, 1), S.sample_tangent(3, 2)
        assert F.pullback_metric(f, S.Fisher(), p, u, v) == S.fisher_metric(p, u, v)

    def test_chentsov(self):
        f = F.sample_markov_map(3, 5, 1)
        p = S.sample_probability_vector(3, 2)
        u, v = S.sample_tangent(3, 3), S.sample_tangent(3, 4)
        assert F.pullback_metric(f, S.Fisher(), p, u, v) == pytest.approx(
            S.fisher_metric(p, u, v), rel=1e-12)

    def test_invariant_metric_homogeneous(self):
        f = F.sample_conditional_embedding(2, 2, 6, 3, True, 5)
        K = MX.sample_stochastic_matrix(2, 2, 6)
        u = MX.sample_matrix_tangent(2, 2, "conditional", 7)
        spec = MX.Invariant(0, 0, 1)
        assert F.pullback_metric(f, spec, K, u, u) == pytest.approx(spec(K, u, u), rel=1e-12)


class TestCheckIsometry:
    def test_invariant_homogeneous_passes(self):
        report = F.check_isometry(
            lambda r: F.sample_conditional_embedding(2, 2, 4, 4, True, r),
            MX.Invariant(0, 0, 1), trials=30, seed=7, domain="conditional")
        assert report.passed and report.witness is None

    def test_nonhomogeneous_witness(self):
        Rbar = F.PartitionIndicatorMatrix.from_blocks([[0], [1, 2]], 3)
        sampler = lambda r: F.ConditionalEmbedding(Rbar, [F.sample_row_partition(2, 3, r)] * 2)
        report = F.check_isometry(sampler, MX.Invariant(0, 0, 1), trials=10, seed=0,
                                  domain="conditional")
        assert not report.passed
        w = report.witness
        assert np.isfinite(w["rel_err"]) and w["rel_err"] == report.max_rel_err
        # the witness reproduces from its serialized form
        f = F.map_from_dict(json.loads(json.dumps(w["map"])))
        K, u, v = (np.array(w[key]) for key in ("basepoint", "u", "v"))
        assert F.pullback_metric(f, MX.Invariant(0, 0, 1), K, u, v) == w["pullback_value"]

    def test_dual_joint_metric(self):
        sampler = lambda r: F.sample_dual_lebanon_map(2, 3, 3, 4, r)
        assert not F.check_isometry(sampler, MX.JointABC(1, 1), trials=10).passed
        assert F.check_isometry(sampler, MX.JointABC(0, 1), trials=10).passed

    def test_fixed_map(self):
        f = F.sample_lebanon_map(2, 2, 3, 3, 0)
        assert F.check_isometry(f, MX.Lebanon(1, 1, 1), trials=10).passed

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            F.check_isometry(F.sample_markov_map(2, 3, 0), S.Fisher(), trials=0)


class TestCheckCovariance:
    def test_uniform_rho_homogeneous(self):
        f = F.sample_conditional_embedding(2, 2, 4, 3, True, 1)
        R = F.RowPartitionMatrix(f.Rbar.matrix * 2 / 4, f.Rbar.blocks)
        report = F.check_covariance(f, [0.5, 0.5], R, trials=20)
        assert report.passed
        np.testing.assert_allclose(report.rho_prime, [0.25] * 4)

    def test_single_row(self):
        report = F.check_covariance(lambda r: F.sample_conditional_embedding(1, 2, 1, 4, True, r),
                                    [1.0], trials=10)
        assert report.passed

    def test_hand_rho_prime(self):
        Rbar = F.PartitionIndicatorMatrix.from_blocks([[0, 1], [2]], 3)
        f = F.ConditionalEmbedding(Rbar, [F.sample_row_partition(2, 3, 0),
                                          F.sample_row_partition(2, 3, 1)])
        R = F.stochastic_partition_from_indicator(Rbar)
        report = F.check_covariance(f, [0.3, 0.7], R, trials=20)
        assert report.passed
        np.testing.assert_allclose(report.rho_prime, [0.15, 0.15, 0.7])

    def test_rejects_mismatched_R(self):
        Rbar = F.PartitionIndicatorMatrix.from_blocks([[0, 1], [2, 3]], 4)
        f = F.ConditionalEmbedding(Rbar, [F.RowPartitionMatrix.identity(2)] * 2)
        other = F.PartitionIndicatorMatrix.from_blocks([[0, 2], [1, 3]], 4)
        with pytest.raises(ValueError):
            F.check_covariance(f, [0.5, 0.5], F.stochastic_partition_from_indicator(other),
                               trials=1)

    def test_random_rho_and_R(self):
        sampler = lambda r: F.sample_conditional_embedding(3, 2, 5, 4, False, r)
        assert F.check_covariance(sampler, trials=30, seed=3).passed


class TestGenerators:
    @given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**32 - 1))
    def test_row_partition_valid(self, m, extra, seed):
        Q = F.sample_row_partition(m, m + extra, seed)
        nonzero = Q.matrix[Q.matrix > 0]
        assert nonzero.min() >= 1e-3 * (1 - 1e-12)
        np.testing.assert_allclose(Q.matrix.sum(axis=1), 1.0, atol=1e-14)

    def test_row_partition_infeasible(self):
        with pytest.raises(ValueError):
            F.sample_row_partition(3, 2, 0)

    def test_homogeneous_indicator(self):
        R = F.sample_indicator(2, 4, homogeneous=True, seed=0)
        assert [len(b) for b in R.blocks] == [2, 2] and R.homogeneous

    def test_homogeneous_needs_divisibility(self):
        with pytest.raises(ValueError):
            F.sample_indicator(2, 5, homogeneous=True, seed=0)

    def test_indicator_can_hit_example(self):
        target = F.PartitionIndicatorMatrix(EXAMPLE_RBAR).blocks
        hits = [F.sample_indicator(3, 5, False, s).blocks == target for s in range(2000)]
        assert any(hits)

    def test_stochastic_partition_uniform(self):
        R = F.stochastic_partition_from_indicator(EXAMPLE_RBAR)
        np.testing.assert_allclose(R.matrix, EXAMPLE_RBAR / EXAMPLE_RBAR.sum(axis=1,
                                                                            keepdims=True))

    def test_deterministic(self):
        a = F.sample_conditional_embedding(2, 3, 4, 5, True, 12)
        b = F.sample_conditional_embedding(2, 3, 4, 5, True, 12)
        assert a.to_dict() == b.to_dict()


class TestProofMaps:
    def test_permutation_embedding_relabels(self):
        f = F.permutation_embedding([[2, 0, 1], [1, 2, 0]], [1, 0])
        u = np.zeros((2, 3))
        u[0, 1] = 1.0
        expected = np.zeros((2, 3))
        expected[1, 0] = 1.0
        np.testing.assert_array_equal(f.pushforward(u), expected)

    def test_refinement_is_homogeneous_isometry(self):
        f = F.refinement_embedding(2, 3, 2, 3, seed=0)
        assert f.homogeneous and f.codomain_shape == (4, 9)
        assert F.check_isometry(f, MX.Invariant(0.5, 0.5, 1), trials=10,
                                domain="conditional").passed

    def test_constant_embedding_flattens(self):
        counts = np.array([[1, 3], [2, 2]])
        f = F.constant_embedding(counts, z=2, seed=0)
        image = f.apply(counts / 4)
        np.testing.assert_allclose(image, np.full((4, 4), 0.25))

    def test_constant_embedding_rejects_unequal_rows(self):
        with pytest.raises(ValueError):
            F.constant_embedding([[1, 2], [1, 1]])
