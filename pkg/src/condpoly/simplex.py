"""Fisher-type metrics on the open simplex and on the positive cone.

Points are 1-d arrays. Tangent vectors are given in ambient coordinates; a
tangent at a simplex point must sum to zero, a tangent at a cone point is
unconstrained.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _validation as V

SAMPLE_FLOOR = 1e-6


@dataclass(frozen=True)
class Coefficient:
    """Polynomial coefficient function ``c0 + c1*x + c2*x**2 + ...``.

    Used for the size-dependent coefficients A, B, C of the cone and matrix
    metrics, evaluated at the total mass of the basepoint. A constant is the
    degree-zero case.
    """

    coeffs: tuple = (0.0,)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.atleast_1d(self.coeffs))
        if not coeffs or not all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be a non-empty finite sequence")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def constant(cls, c):
        return cls((c,))

    def __call__(self, x):
        return float(np.polynomial.polynomial.polyval(x, self.coeffs))

    @property
    def is_constant(self):
        return all(c == 0.0 for c in self.coeffs[1:])

    def to_dict(self):
        return {"coeffs": list(self.coeffs)}


def as_coefficient(c):
    """Accept a number, a coefficient sequence or a :class:`Coefficient`."""
    if isinstance(c, Coefficient):
        return c
    if np.ndim(c) == 0:
        return Coefficient.constant(c)
    return Coefficient(tuple(c))


def _basepoint(p, simplex):
    return V.probability_vector(p) if simplex else V.positive_vector(p)


def _tangent(u, n, simplex, name):
    return V.simplex_tangent(u, n, name) if simplex else V.same_length(u, n, name)


def fisher_metric(p, u, v, simplex=False):
    """Fisher metric ``sum_i u_i v_i / p_i``.

    With ``simplex=True`` the basepoint must lie in the open simplex and the
    tangents must sum to zero; otherwise ``p`` is any point of the positive
    cone.
    """
    p = _basepoint(p, simplex)
    u = _tangent(u, p.size, simplex, "u")
    v = _tangent(v, p.size, simplex, "v")
    return float(np.sum(u * v / p))


def chentsov_metric(p, u, v, C, simplex=False):
    if not C > 0:
        raise ValueError(f"Chentsov constant must be positive, got {C!r}")
    return C * fisher_metric(p, u, v, simplex)


def campbell_metric(p, u, v, A, C):
    """Campbell's Markov-invariant metric on the positive cone.

    ``g(u, v) = A(|p|) (sum u)(sum v) + C(|p|) sum_i |p| u_i v_i / p_i``
    """
    p = V.positive_vector(p)
    u = V.same_length(u, p.size, "u")
    v = V.same_length(v, p.size, "v")
    A, C = as_coefficient(A), as_coefficient(C)
    total = p.sum()
    a, c = A(total), C(total)
    if not (c > 0 and a + c > 0):
        raise ValueError(
            f"Campbell coefficients give no metric at |p|={total}: C={c}, A+C={a + c}"
        )
    return float(a * u.sum() * v.sum() + c * total * np.sum(u * v / p))


def decompose_cone_tangent(x, u):
    """Split a cone tangent into a part tangent to the scaled simplex and a radial part.

    Returns ``(u_p, u_r)`` with ``u_r = sum(u)`` and ``u = u_p + u_r * x / |x|``.
    """
    x = V.positive_vector(x, "x")
    u = V.same_length(u, x.size, "u")
    u_r = float(u.sum())
    u_p = u - u_r * (x / x.sum())
    return u_p, u_r


def extended_cone_metric(x, u, v, g=None):
    """Extend a simplex metric ``g(p, u, v)`` to the positive cone.

    The tangential parts are evaluated by ``g`` at ``x / |x|`` without
    rescaling; the radial parts contribute ``u_r * v_r``. ``g`` defaults to
    the Fisher metric.
    """
    g = g or fisher_metric
    x = V.positive_vector(x, "x")
    u_p, u_r = decompose_cone_tangent(x, u)
    v_p, v_r = decompose_cone_tangent(x, v)
    return float(g(x / x.sum(), u_p, v_p)) + u_r * v_r


# Metric objects: callable like the functions above and able to produce
# their Gram matrix in the coordinate basis.


@dataclass(frozen=True)
class Fisher:
    """``C`` times the Fisher metric (Chentsov family)."""

    C: float = 1.0
    default_domain = "simplex"

    def __call__(self, p, u, v):
        return chentsov_metric(p, u, v, self.C)

    def gram(self, p):
        p = V.positive_vector(p)
        return np.diag(self.C / p)

    def to_dict(self):
        return {"family": "Fisher", "C": self.C}


@dataclass(frozen=True)
class Campbell:
    A: Coefficient = field(default_factory=lambda: Coefficient.constant(0.0))
    C: Coefficient = field(default_factory=lambda: Coefficient.constant(1.0))
    default_domain = "cone"

    def __post_init__(self):
        object.__setattr__(self, "A", as_coefficient(self.A))
        object.__setattr__(self, "C", as_coefficient(self.C))

    def __call__(self, p, u, v):
        return campbell_metric(p, u, v, self.A, self.C)

    def gram(self, p):
        p = V.positive_vector(p)
        total = p.sum()
        n = p.size
        return self.A(total) * np.ones((n, n)) + np.diag(self.C(total) * total / p)

    def to_dict(self):
        return {"family": "Campbell", "A": self.A.to_dict(), "C": self.C.to_dict()}


@dataclass(frozen=True)
class ExtendedCone:
    """Cone extension of a simplex metric (tangential part plus radial square)."""

    base: Fisher = field(default_factory=Fisher)
    default_domain = "cone"

    def __call__(self, x, u, v):
        return extended_cone_metric(x, u, v, self.base)

    def gram(self, x):
        x = V.positive_vector(x, "x")
        xhat = x / x.sum()
        proj = np.eye(x.size) - np.outer(xhat, np.ones(x.size))
        ones = np.ones((x.size, x.size))
        return proj.T @ self.base.gram(xhat) @ proj + ones

    def to_dict(self):
        return {"family": "ExtendedCone", "base": self.base.to_dict()}


# Samplers


def _rng(seed):
    return np.random.default_rng(seed)


def sample_probability_vector(n, seed=None, floor=SAMPLE_FLOOR):
    """Dirichlet(1, ..., 1) draw with every entry at least ``floor``."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    return _floored_dirichlet(_rng(seed), n, floor)


def _floored_dirichlet(rng, n, floor=SAMPLE_FLOOR):
    x = rng.standard_exponential(n)
    x /= x.sum()
    # mixing with the uniform point keeps the sum at 1 and every entry >= floor
    x = floor + (1.0 - n * floor) * x
    return x / x.sum()


def sample_tangent(n, seed=None):
    """Standard normal vector projected onto the sum-zero hyperplane."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    u = _rng(seed).standard_normal(n)
    return u - u.mean()


def sample_positive_vector(n, seed=None, floor=SAMPLE_FLOOR):
    """A simplex sample scaled by a log-uniform mass in [0.2, 5]."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    rng = _rng(seed)
    scale = np.exp(rng.uniform(np.log(0.2), np.log(5.0)))
    return scale * _floored_dirichlet(rng, n, floor)


def sample_cone_tangent(n, seed=None):
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    return _rng(seed).standard_normal(n)
