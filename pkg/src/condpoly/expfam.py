"""Discrete exponential families, their convex supports and the Fisher metric on polytopes.

A weighted point configuration is a d x n matrix of observables ``A`` (one
column per state) and positive reference weights ``nu``. It defines the
family ``p(x; theta) ~ nu(x) exp(theta . a_x)`` whose moment map
``p -> A p`` identifies the family with the relative interior of
``conv A``.

Tangent vectors of the polytope are d-vectors in the direction space of the
affine span of the points. Natural parameters are only identified modulo
the orthogonal complement of that space, so the Newton solver works in an
orthonormal basis of it.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from . import _validation as V
from . import simplex as S
from .maps import RowPartitionMatrix

SPAN_TOL = 1e-10
BOUNDARY_TOL = 1e-8


class MaxIterExceeded(RuntimeError):
    """Newton did not converge; the target is on or near the boundary, or outside."""


class SingularDirection(ValueError):
    """A point or tangent lies outside the affine span of the configuration."""


@dataclass(frozen=True, eq=False)
class WeightedPointConfiguration:
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        A = V.as_matrix(self.points, "points")
        if A.shape[1] < 2:
            raise ValueError(f"need at least 2 points, got {A.shape[1]}")
        nu = np.ones(A.shape[1]) if self.weights is None else self.weights
        nu = V.positive_vector(nu, "weights")
        if nu.size != A.shape[1]:
            raise ValueError(f"{nu.size} weights for {A.shape[1]} points")
        object.__setattr__(self, "points", A)
        object.__setattr__(self, "weights", nu)
        object.__setattr__(self, "_basis", _span_basis(A))

    @property
    def d(self):
        return self.points.shape[0]

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def basis(self):
        """Orthonormal basis (d x r) of the direction space of the affine span."""
        return self._basis

    @property
    def dimension(self):
        return self._basis.shape[1]

    def to_dict(self):
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}


def _span_basis(A):
    centered = A - A.mean(axis=1, keepdims=True)
    U, s, _ = np.linalg.svd(centered, full_matrices=False)
    scale = max(1.0, s[0]) if s.size else 1.0
    return U[:, s > SPAN_TOL * scale]


def span_residual(config, u):
    """Distance of ``u`` from the direction space of the affine span."""
    u = V.same_length(u, config.d, "u")
    B = config.basis
    return float(np.linalg.norm(u - B @ (B.T @ u)))


def _direction(config, u, name):
    u = V.same_length(u, config.d, name)
    if span_residual(config, u) > SPAN_TOL * max(1.0, np.linalg.norm(u)):
        raise SingularDirection(f"{name} is not parallel to the affine span of the points")
    return u


# Builtin configurations


def simplex_configuration(n):
    """Vertices of the standard simplex: the moment map is the identity."""
    return WeightedPointConfiguration(np.eye(n))


def square_configuration():
    return WeightedPointConfiguration(np.array([[0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0]]))


def independence_configuration(sizes, reduced=False):
    """Independence model of variables with the given numbers of states.

    States are listed lexicographically. Each variable contributes the
    indicators of its states; with ``reduced=True`` the indicator of its last
    state is dropped, so ``q`` holds the marginal probabilities of the other
    states.
    """
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 2:
        raise ValueError(f"every variable needs at least 2 states, got {sizes}")
    rows = []
    for x in itertools.product(*[range(s) for s in sizes]):
        col = []
        for xi, s in zip(x, sizes):
            onehot = np.zeros(s)
            onehot[xi] = 1.0
            col.append(onehot[:-1] if reduced else onehot)
        rows.append(np.concatenate(col))
    return WeightedPointConfiguration(np.array(rows).T)


def conditional_polytope_configuration(k, m):
    """Independence model of k variables with m states.

    Its convex support is the set of k x m stochastic matrices.

    The moment map of a joint distribution is the row-major flattening of
    the matrix of its k marginals.
    """
    return independence_configuration([m] * k)


def product_configuration(first, second):
    """Configuration whose convex support is the Cartesian product of the two supports."""
    n1, n2 = first.n, second.n
    points = np.vstack([np.repeat(first.points, n2, axis=1), np.tile(second.points, (1, n1))])
    weights = np.outer(first.weights, second.weights).ravel()
    return WeightedPointConfiguration(points, weights)


BUILTINS = ("simplex", "square", "independence", "conditional-polytope")


def builtin_configuration(name, n=3, sizes=(2, 2), k=2, m=3):
    if name == "simplex":
        return simplex_configuration(n)
    if name == "square":
        return square_configuration()
    if name == "independence":
        return independence_configuration(sizes)
    if name == "conditional-polytope":
        return conditional_polytope_configuration(k, m)
    raise ValueError(f"unknown builtin configuration {name!r}; choose from {BUILTINS}")


# The family


def _theta(config, theta):
    return V.same_length(theta, config.d, "theta")


def _log_unnormalized(config, theta):
    return _theta(config, theta) @ config.points + np.log(config.weights)


def log_partition(config, theta):
    return float(logsumexp(_log_unnormalized(config, theta)))


def density(config, theta):
    s = _log_unnormalized(config, theta)
    return np.exp(s - logsumexp(s))


def moment_map(config, p):
    p = V.same_length(p, config.n, "p")
    return config.points @ p


def _covariance(A, p):
    centered = A - (A @ p)[:, None]
    return (centered * p) @ centered.T


def fisher_info(config, theta):
    """Covariance matrix of the observables under ``p(.; theta)``."""
    return _covariance(config.points, density(config, theta))


def interior_margin(config, q):
    """Largest ``t`` such that ``q = A p`` for a distribution ``p`` with every entry >= t.

    Negative or ``-inf`` when ``q`` is outside the convex support.
    """
    q = V.same_length(q, config.d, "q")
    n = config.n
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    A_eq = np.vstack([np.hstack([config.points, np.zeros((config.d, 1))]),
                      np.append(np.ones(n), 0.0)])
    b_eq = np.append(q, 1.0)
    bounds = [(0, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    return float(res.x[-1]) if res.status == 0 else -np.inf


def inverse_moment_map(config, q, tol=1e-10, max_iter=200):
    """Natural parameters and distribution whose moment is ``q``.

    Damped Newton ascent on ``theta . q - log Z(theta)`` in the direction
    space of the affine span, starting from ``theta = 0``. Returns
    ``(theta, p)`` with ``|A p - q| <= tol``.
    """
    q = V.same_length(q, config.d, "q")
    B = config.basis
    center = config.points.mean(axis=1)
    offset = q - center
    if np.linalg.norm(offset - B @ (B.T @ offset)) > SPAN_TOL * max(1.0, np.linalg.norm(q)):
        raise SingularDirection("q lies outside the affine span of the points")
    margin = interior_margin(config, q)
    if margin < BOUNDARY_TOL:
        raise MaxIterExceeded(f"q is on, near or outside the boundary (margin {margin:.3g})")

    A = config.points
    eta = np.zeros(B.shape[1])

    def objective(eta):
        s = (B @ eta) @ A + np.log(config.weights)
        lz = logsumexp(s)
        return float((B @ eta) @ q - lz), np.exp(s - lz)

    f, p = objective(eta)
    for _ in range(max_iter):
        residual = q - A @ p
        if np.linalg.norm(residual) <= tol:
            return _polish(B, A, q, eta, p, objective)
        grad = B.T @ residual
        hess = B.T @ _covariance(A, p) @ B
        step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        s = 1.0
        if slope > 1e-13 * (1.0 + abs(f)):
            for _ in range(60):
                f_new, p_new = objective(eta + s * step)
                if f_new >= f + 1e-4 * s * slope:
                    break
                s *= 0.5
            else:
                break
        else:
            # the predicted gain is below rounding: plain Newton step
            f_new, p_new = objective(eta + step)
        eta = eta + s * step
        f, p = f_new, p_new
    if np.linalg.norm(q - A @ p) <= tol:
        return B @ eta, p
    raise MaxIterExceeded(f"Newton did not reach tol={tol} in {max_iter} iterations")


def _polish(B, A, q, eta, p, objective):
    # one extra Newton step, kept only if it shrinks the residual
    residual = q - A @ p
    step = np.linalg.lstsq(B.T @ _covariance(A, p) @ B, B.T @ residual, rcond=None)[0]
    _, p_new = objective(eta + step)
    if np.linalg.norm(q - A @ p_new) < np.linalg.norm(residual):
        return B @ (eta + step), p_new
    return B @ eta, p


def inverse_moment_differential(config, q, u, p=None):
    """Pushforward of a polytope tangent ``u`` at ``q`` to a tangent of the family (an n-vector)."""
    u = _direction(config, u, "u")
    if p is None:
        _, p = inverse_moment_map(config, q)
    B = config.basis
    A = config.points
    dtheta = B @ np.linalg.solve(B.T @ _covariance(A, p) @ B, B.T @ u)
    return p * ((A - (A @ p)[:, None]).T @ dtheta)


def polytope_fisher_metric(config, q, u, v, p=None):
    """Pullback of the Fisher metric to the interior of ``conv A`` through the inverse moment map.

    Equals ``u . I^+ v`` with ``I`` the Fisher information at ``theta(q)``,
    restricted to the direction space of the affine span.
    """
    u = _direction(config, u, "u")
    v = _direction(config, v, "v")
    if p is None:
        _, p = inverse_moment_map(config, q)
    B = config.basis
    reduced = B.T @ _covariance(config.points, p) @ B
    return float((B.T @ u) @ np.linalg.solve(reduced, B.T @ v))


def sample_interior_point(config, seed=None, floor=1e-3):
    """``A p`` for a Dirichlet-like ``p`` with every entry at least ``floor``."""
    rng = np.random.default_rng(seed)
    return config.points @ S._floored_dirichlet(rng, config.n, floor)


def sample_direction(config, seed=None):
    """Standard normal vector in the direction space of the affine span."""
    rng = np.random.default_rng(seed)
    B = config.basis
    return B @ rng.standard_normal(B.shape[1])


# Morphisms


@dataclass(frozen=True, eq=False)
class ConfigMorphism:
    """Affine map ``x -> matrix x + offset`` with point surjection ``sigma``, weight ratio ``alpha``."""

    matrix: np.ndarray
    offset: np.ndarray
    sigma: tuple
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "matrix", V.as_matrix(self.matrix, "phi"))
        object.__setattr__(self, "offset", V.as_vector(self.offset, "offset"))
        object.__setattr__(self, "sigma", tuple(int(s) for s in self.sigma))
        if self.offset.size != self.matrix.shape[0]:
            raise ValueError("offset length must match the rows of the affine matrix")

    def phi(self, x):
        return self.matrix @ np.asarray(x, dtype=float) + self.offset

    def to_dict(self):
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist(),
                "sigma": list(self.sigma), "alpha": self.alpha}


def _check_sigma(sigma, n, n_target):
    sigma = np.asarray(sigma)
    if sigma.shape != (n,):
        raise ValueError(f"sigma must assign each of the {n} points a target")
    if np.any(sigma < 0) or np.any(sigma >= n_target):
        raise ValueError(f"sigma values must lie in range({n_target})")
    if len(set(sigma.tolist())) != n_target:
        raise ValueError("sigma is not surjective")
    return sigma.astype(int)


def validate_morphism(config, target, phi, sigma, tol=1e-10):
    """Check that ``(phi, sigma)`` is a morphism from ``config`` to ``target``.

    ``phi`` is a pair ``(matrix, offset)``. Returns ``(ok, alpha)`` where
    ``ok`` says whether ``phi`` sends every point onto its image under
    ``sigma``. Raises ``ValueError`` for a non-surjective ``sigma`` or weights
    that admit no common ratio ``alpha``.
    """
    matrix, offset = (np.asarray(x, dtype=float) for x in phi)
    sigma = _check_sigma(sigma, config.n, target.n)
    images = matrix @ config.points + offset[:, None]
    ok = bool(np.max(np.abs(images - target.points[:, sigma])) <= tol)
    merged = np.bincount(sigma, weights=config.weights, minlength=target.n)
    ratios = target.weights / merged
    alpha = float(ratios[0])
    if np.max(np.abs(ratios - alpha)) > tol * alpha:
        raise ValueError(f"weights admit no common ratio alpha: {ratios.tolist()}")
    return ok, alpha


def make_morphism(config, target, matrix, offset, sigma, tol=1e-10):
    ok, alpha = validate_morphism(config, target, (matrix, offset), sigma, tol)
    if not ok:
        raise ValueError("phi does not map the points onto their sigma-images")
    return ConfigMorphism(matrix, offset, sigma, alpha)


def induced_markov(config, target, morphism):
    """Row-partition matrix ``Q`` with ``Q[j, i] = nu(i) / sum_{sigma(i') = j} nu(i')``."""
    sigma = _check_sigma(morphism.sigma, config.n, target.n)
    merged = np.bincount(sigma, weights=config.weights, minlength=target.n)
    Q = np.zeros((target.n, config.n))
    Q[sigma, np.arange(config.n)] = config.weights / merged[sigma]
    blocks = [np.flatnonzero(sigma == j) for j in range(target.n)]
    return RowPartitionMatrix(Q, blocks)


def identity_morphism(config):
    return ConfigMorphism(np.eye(config.d), np.zeros(config.d), tuple(range(config.n)), 1.0)


def sample_morphism(d, n_target, n, extra=1, seed=None):
    """Random morphism onto a d-dimensional configuration with ``n_target`` points.

    The source has ``n`` points lifting their targets with ``extra`` random
    coordinates; ``phi`` projects the extra coordinates away. Returns
    ``(source, target, morphism)``.
    """
    if n < n_target:
        raise ValueError("the source needs at least as many points as the target")
    rng = np.random.default_rng(seed)
    target_points = rng.standard_normal((d, n_target))
    sigma = np.concatenate([np.arange(n_target), rng.integers(0, n_target, n - n_target)])
    sigma = rng.permutation(sigma)
    lifted = np.vstack([target_points[:, sigma], rng.standard_normal((extra, n))])
    weights = rng.uniform(0.5, 2.0, n)
    alpha = float(rng.uniform(0.5, 2.0))
    source = WeightedPointConfiguration(lifted, weights)
    target = WeightedPointConfiguration(
        target_points, alpha * np.bincount(sigma, weights=weights, minlength=n_target)
    )
    matrix = np.hstack([np.eye(d), np.zeros((d, extra))])
    return source, target, make_morphism(source, target, matrix, np.zeros(d), sigma)


def phi_inverse(config, target, morphism, q_target, p_target=None):
    """Image of ``q_target`` in ``conv A`` along the diagram: the moment of ``mu'^-1(q') Q``."""
    if p_target is None:
        _, p_target = inverse_moment_map(target, q_target)
    Q = induced_markov(config, target, morphism)
    return moment_map(config, p_target @ Q.matrix)


def verify_commuting_diagram(config, target, morphism, samples=20, tol=1e-8, seed=0):
    """Chase the morphism diagram at sampled interior points of the target polytope.

    For each ``q'`` the distribution ``mu'^-1(q') Q`` must be the one the
    source family assigns to ``q = A mu'^-1(q') Q``, ``phi(q)`` must return
    ``q'``, and the polytope Fisher metric at ``q'`` must equal its pullback
    through ``q' -> q``.
    """
    Q = induced_markov(config, target, morphism).matrix
    dist_res = proj_res = metric_err = 0.0
    for t in range(samples):
        rng = np.random.default_rng(seed + t)
        q_t = sample_interior_point(target, rng)
        u_t = sample_direction(target, rng)
        v_t = sample_direction(target, rng)
        _, p_t = inverse_moment_map(target, q_t)
        lifted = p_t @ Q
        q = moment_map(config, lifted)
        _, p = inverse_moment_map(config, q)
        dist_res = max(dist_res, float(np.max(np.abs(p - lifted))))
        proj_res = max(proj_res, float(np.max(np.abs(morphism.phi(q) - q_t))))
        u = config.points @ (inverse_moment_differential(target, q_t, u_t, p_t) @ Q)
        v = config.points @ (inverse_moment_differential(target, q_t, v_t, p_t) @ Q)
        ref = polytope_fisher_metric(target, q_t, u_t, v_t, p_t)
        pulled = polytope_fisher_metric(config, q, u, v, p)
        metric_err = max(metric_err, V.rel_err(pulled, ref))
    passed = max(dist_res, proj_res, metric_err) <= tol
    return {
        "passed": passed,
        "samples": samples,
        "tol": tol,
        "max_distribution_residual": dist_res,
        "max_projection_residual": proj_res,
        "max_metric_rel_err": metric_err,
    }


# Joint embedding of the conditional polytope


def psi_rho_embed(K, rho):
    """Joint distribution ``rho(x) K[x, y]``, flattened row-major."""
    K = V.stochastic_matrix(K)
    rho = V.probability_vector(rho, "rho", min_len=1)
    if rho.size != K.shape[0]:
        raise ValueError(f"rho has {rho.size} entries, K has {K.shape[0]} rows")
    return (rho[:, None] * K).ravel()


def psi_rho_pullback(K, rho, u, v):
    """Fisher metric at ``psi_rho(K)`` on the images of the conditional tangents ``u, v``."""
    P = psi_rho_embed(K, rho)
    rho = np.asarray(rho, dtype=float)
    u = V.matrix_tangent(u, np.shape(K), "conditional", "u")
    v = V.matrix_tangent(v, np.shape(K), "conditional", "v")
    return S.fisher_metric(P, (rho[:, None] * u).ravel(), (rho[:, None] * v).ravel(),
                           simplex=True)
