import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condpoly import expfam as E
from condpoly import matrices as MX
from condpoly import simplex as S

LINE = E.WeightedPointConfiguration([[0.0, 1.0]])
MERGE_SOURCE = E.WeightedPointConfiguration([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]], [1, 1, 2])
MERGE_TARGET = E.WeightedPointConfiguration([[0.0, 1.0]], [1, 1])


def _fd_hessian(f, x, h=1e-4):
    d = x.size
    H = np.zeros((d, d))
    eye = np.eye(d)
    for i in range(d):
        for j in range(d):
            a, b = h * eye[i], h * eye[j]
            H[i, j] = (f(x + a + b) - f(x + a - b) - f(x - a + b) + f(x - a - b)) / (4 * h * h)
    return H


class TestDensity:
    def test_uniform_at_zero(self):
        cfg = E.square_configuration()
        np.testing.assert_allclose(E.density(cfg, [0, 0]), [0.25] * 4)

    def test_simplex_softmax(self):
        cfg = E.WeightedPointConfiguration(np.eye(3), [1.0, 2.0, 0.5])
        theta = np.array([0.3, -1.2, 2.0])
        s = np.exp(theta + np.log([1.0, 2.0, 0.5]))
        np.testing.assert_allclose(E.density(cfg, theta), s / s.sum(), rtol=1e-14)

    def test_weights_at_zero(self):
        cfg = E.WeightedPointConfiguration([[0.0, 1.0, 2.0]], [1, 2, 1])
        np.testing.assert_allclose(E.density(cfg, [0.0]), [0.25, 0.5, 0.25])

    def test_large_parameters_do_not_overflow(self):
        p = E.density(LINE, [1e4])
        assert np.all(np.isfinite(p)) and p[1] == pytest.approx(1.0)
        assert np.isfinite(E.log_partition(LINE, [1e4]))


class TestMomentMap:
    def test_vertex_limit(self):
        cfg = E.square_configuration()
        q = E.moment_map(cfg, [1 - 3e-9, 1e-9, 1e-9, 1e-9])
        np.testing.assert_allclose(q, [0, 0], atol=1e-8)

    def test_uniform_segment(self):
        assert E.moment_map(LINE, [0.5, 0.5])[0] == pytest.approx(0.5)

    def test_weighted_average(self):
        cfg = E.WeightedPointConfiguration([[0.0, 1.0, 3.0]])
        assert E.moment_map(cfg, [0.25, 0.5, 0.25])[0] == pytest.approx(1.25)

    def test_rejects_dimension(self):
        with pytest.raises(ValueError):
            E.moment_map(LINE, [0.2, 0.3, 0.5])


class TestFisherInfo:
    def test_bernoulli(self):
        assert E.fisher_info(LINE, [0.0])[0, 0] == pytest.approx(0.25)

    def test_duplicated_row_singular(self):
        cfg = E.WeightedPointConfiguration([[0.0, 1.0, 2.0], [0.0, 1.0, 2.0]])
        I = E.fisher_info(cfg, [0.1, 0.2])
        assert abs(np.linalg.det(I)) < 1e-14
        assert np.linalg.matrix_rank(I, tol=1e-10) == cfg.dimension == 1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_hessian_of_log_partition(self, seed):
        cfg = E.independence_configuration([2, 3], reduced=True)
        theta = np.random.default_rng(seed).normal(size=cfg.d)
        H = _fd_hessian(lambda t: E.log_partition(cfg, t), theta)
        np.testing.assert_allclose(E.fisher_info(cfg, theta), H, atol=1e-6)


class TestInverseMomentMap:
    def test_simplex_identity(self):
        _, p = E.inverse_moment_map(E.simplex_configuration(2), [0.3, 0.7])
        np.testing.assert_allclose(p, [0.3, 0.7], atol=1e-12)

    def test_independence_product(self):
        cfg = E.independence_configuration([2, 2], reduced=True)
        _, p = E.inverse_moment_map(cfg, [0.3, 0.6])
        np.testing.assert_allclose(p, [0.18, 0.12, 0.42, 0.28], atol=1e-12)

    def test_vertex_rejected(self):
        with pytest.raises(E.MaxIterExceeded):
            E.inverse_moment_map(E.square_configuration(), [1.0, 1.0])

    def test_near_boundary_rejected(self):
        with pytest.raises(E.MaxIterExceeded):
            E.inverse_moment_map(E.square_configuration(), [0.5, 1e-9])

    def test_outside_rejected(self):
        with pytest.raises(E.MaxIterExceeded):
            E.inverse_moment_map(E.square_configuration(), [1.5, 0.5])

    def test_outside_span(self):
        with pytest.raises(E.SingularDirection):
            E.inverse_moment_map(E.simplex_configuration(3), [0.3, 0.3, 0.3])

    def test_max_iter(self):
        with pytest.raises(E.MaxIterExceeded):
            E.inverse_moment_map(E.square_configuration(), [0.9, 0.1], max_iter=1)

    def test_returns_matching_density(self):
        cfg = E.independence_configuration([2, 3])
        q = E.sample_interior_point(cfg, 4)
        theta, p = E.inverse_moment_map(cfg, q)
        np.testing.assert_allclose(E.density(cfg, theta), p, rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(["simplex", "square", "independence", "conditional-polytope"]),
           st.integers(0, 2**32 - 1))
    def test_roundtrip(self, name, seed):
        cfg = E.builtin_configuration(name)
        q = E.sample_interior_point(cfg, seed)
        _, p = E.inverse_moment_map(cfg, q)
        assert np.linalg.norm(E.moment_map(cfg, p) - q) <= 1e-10


class TestPolytopeMetric:
    def test_simplex_is_fisher(self):
        cfg = E.simplex_configuration(4)
        p = S.sample_probability_vector(4, 1)
        u, v = S.sample_tangent(4, 2), S.sample_tangent(4, 3)
        assert E.polytope_fisher_metric(cfg, p, u, v) == pytest.approx(
            S.fisher_metric(p, u, v), rel=1e-9)

    def test_conditional_polytope_is_product_fisher(self):
        cfg = E.conditional_polytope_configuration(3, 2)
        K = MX.sample_stochastic_matrix(3, 2, 5)
        u = MX.sample_matrix_tangent(3, 2, "conditional", 6)
        v = MX.sample_matrix_tangent(3, 2, "conditional", 7)
        assert E.polytope_fisher_metric(cfg, K.ravel(), u.ravel(), v.ravel()) == pytest.approx(
            MX.product_fisher_metric(K, u, v), rel=1e-8)

    def test_matches_finite_difference_pullback(self):
        cfg = E.WeightedPointConfiguration([[0.0, 1.0, 0.0, 2.0, 1.0], [0.0, 0.0, 1.0, 1.0, 2.0]],
                                           [1.0, 2.0, 0.5, 1.0, 1.5])
        q = E.sample_interior_point(cfg, 9)
        u, v = E.sample_direction(cfg, 10), E.sample_direction(cfg, 11)
        h = 1e-5

        def dp(w):
            plus = E.inverse_moment_map(cfg, q + h * w, tol=1e-13)[1]
            minus = E.inverse_moment_map(cfg, q - h * w, tol=1e-13)[1]
            return (plus - minus) / (2 * h)

        _, p = E.inverse_moment_map(cfg, q)
        expected = S.fisher_metric(p, dp(u), dp(v))
        assert E.polytope_fisher_metric(cfg, q, u, v) == pytest.approx(expected, rel=1e-6)

    def test_differential_matches_finite_differences(self):
        cfg = E.independence_configuration([2, 3])
        q = E.sample_interior_point(cfg, 2)
        u = E.sample_direction(cfg, 3)
        h = 1e-6
        fd = (E.inverse_moment_map(cfg, q + h * u, tol=1e-13)[1]
              - E.inverse_moment_map(cfg, q - h * u, tol=1e-13)[1]) / (2 * h)
        np.testing.assert_allclose(E.inverse_moment_differential(cfg, q, u), fd, atol=1e-6)

    def test_rejects_off_span_tangent(self):
        cfg = E.simplex_configuration(3)
        with pytest.raises(E.SingularDirection):
            E.polytope_fisher_metric(cfg, [0.2, 0.3, 0.5], [1, 0, 0], [1, -1, 0])

    @settings(max_examples=15, deadline=None)
    @given(st.integers(2, 3), st.integers(2, 3), st.integers(0, 2**32 - 1))
    def test_product_structure(self, n1, n2, seed):
        first, second = E.simplex_configuration(n1), E.square_configuration()
        if n2 == 3:
            second = E.independence_configuration([2, 2], reduced=True)
        cfg = E.product_configuration(first, second)
        rng = np.random.default_rng(seed)
        q1, q2 = E.sample_interior_point(first, rng), E.sample_interior_point(second, rng)
        u1, v1 = E.sample_direction(first, rng), E.sample_direction(first, rng)
        u2, v2 = E.sample_direction(second, rng), E.sample_direction(second, rng)
        whole = E.polytope_fisher_metric(cfg, np.concatenate([q1, q2]), np.concatenate([u1, u2]),
                                         np.concatenate([v1, v2]))
        parts = (E.polytope_fisher_metric(first, q1, u1, v1)
                 + E.polytope_fisher_metric(second, q2, u2, v2))
        assert whole == pytest.approx(parts, rel=1e-8)


class TestMorphisms:
    def test_identity(self):
        cfg = E.independence_configuration([2, 2])
        ok, alpha = E.validate_morphism(cfg, cfg, (np.eye(cfg.d), np.zeros(cfg.d)),
                                        range(cfg.n))
        assert ok and alpha == 1.0
        Q = E.induced_markov(cfg, cfg, E.identity_morphism(cfg))
        np.testing.assert_array_equal(Q.matrix, np.eye(cfg.n))

    def test_merge_example(self):
        m = E.make_morphism(MERGE_SOURCE, MERGE_TARGET, [[1.0, 0.0]], [0.0], [0, 0, 1])
        assert m.alpha == pytest.approx(0.5)
        Q = E.induced_markov(MERGE_SOURCE, MERGE_TARGET, m)
        np.testing.assert_allclose(Q.matrix, [[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])

    def test_wrong_phi_not_ok(self):
        ok, _ = E.validate_morphism(MERGE_SOURCE, MERGE_TARGET, ([[0.0, 1.0]], [0.0]), [0, 0, 1])
        assert not ok

    def test_incompatible_weights(self):
        target = E.WeightedPointConfiguration([[0.0, 1.0]], [1, 3])
        with pytest.raises(ValueError):
            E.validate_morphism(MERGE_SOURCE, target, ([[1.0, 0.0]], [0.0]), [0, 0, 1])

    def test_non_surjective(self):
        with pytest.raises(ValueError):
            E.validate_morphism(MERGE_SOURCE, MERGE_TARGET, ([[1.0, 0.0]], [0.0]), [0, 0, 0])

    def test_identity_diagram(self):
        cfg = E.square_configuration()
        assert E.verify_commuting_diagram(cfg, cfg, E.identity_morphism(cfg), samples=5)["passed"]

    def test_merge_diagram(self):
        m = E.make_morphism(MERGE_SOURCE, MERGE_TARGET, [[1.0, 0.0]], [0.0], [0, 0, 1])
        report = E.verify_commuting_diagram(MERGE_SOURCE, MERGE_TARGET, m, samples=10, tol=1e-8)
        assert report["passed"], report

    def test_simplex_morphism_is_markov(self):
        # a morphism between simplices lifts p' to p' Q
        target = E.WeightedPointConfiguration(np.eye(2), [2, 1])
        source = E.simplex_configuration(3)
        m = E.make_morphism(source, target, [[1, 1, 0], [0, 0, 1]], [0, 0], [0, 0, 1])
        Q = E.induced_markov(source, target, m)
        q_t = np.array([0.4, 0.6])
        np.testing.assert_allclose(E.phi_inverse(source, target, m, q_t), q_t @ Q.matrix,
                                   atol=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sampled_morphisms_are_isometric(self, seed):
        source, target, m = E.sample_morphism(2, 3, 5, extra=1, seed=seed)
        report = E.verify_commuting_diagram(source, target, m, samples=3, tol=1e-8, seed=seed)
        assert report["passed"], report


class TestPsiRho:
    def test_uniform(self):
        np.testing.assert_allclose(E.psi_rho_embed(np.full((2, 3), 1 / 3), [0.5, 0.5]),
                                   np.full(6, 1 / 6))

    def test_hand_value(self):
        got = E.psi_rho_embed([[0.5, 0.5], [0.25, 0.75]], [0.3, 0.7])
        np.testing.assert_allclose(got, [0.15, 0.15, 0.175, 0.525])

    def test_rejects_dimension(self):
        with pytest.raises(ValueError):
            E.psi_rho_embed([[0.5, 0.5]], [0.5, 0.5])

    @settings(max_examples=30)
    @given(st.integers(1, 4), st.integers(2, 4), st.integers(0, 2**32 - 1))
    def test_pullback_is_weighted_metric(self, k, m, seed):
        rng = np.random.default_rng(seed)
        rho = S._floored_dirichlet(rng, k, 1e-3) if k > 1 else np.ones(1)
        K = MX.sample_stochastic_matrix(k, m, rng)
        u = MX.sample_matrix_tangent(k, m, "conditional", rng)
        v = MX.sample_matrix_tangent(k, m, "conditional", rng)
        assert E.psi_rho_pullback(K, rho, u, v) == pytest.approx(
            MX.weighted_product_metric(K, u, v, rho), rel=1e-12, abs=1e-12)
