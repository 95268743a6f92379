"""Metrics on positive matrices and on conditional polytopes.

A k x m matrix ``M`` is a point of the positive cone; a stochastic matrix is
a point of the open conditional polytope (a product of k open simplices).
Tangent vectors are k x m arrays. Gram matrices use the row-major flattening
``(a, b) -> a*m + b``, the same identification used for joint distributions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _validation as V
from .simplex import Coefficient, as_coefficient, _floored_dirichlet, SAMPLE_FLOOR


def _tangents(M, u, v, kind="cone"):
    return V.matrix_tangent(u, M.shape, kind, "u"), V.matrix_tangent(v, M.shape, kind, "v")


def _check_abc(A, B, C, where=""):
    if not (C > 0 and B + C > 0 and A + B + C > 0):
        raise ValueError(
            f"coefficients (A, B, C) = ({A}, {B}, {C}) give no metric{where}: "
            "need C > 0, B + C > 0, A + B + C > 0"
        )


def lebanon_metric(M, u, v, A, B, C):
    """Lebanon's metric on the cone of positive k x m matrices.

    ``g(d_ab, d_cd) = A(|M|) + [a=c] (B(|M|)/|M_a| + [b=d] C(|M|)/M_ab)``
    with A, B, C numbers or :class:`Coefficient` functions of the total mass.
    """
    M = V.positive_matrix(M)
    u, v = _tangents(M, u, v)
    total = M.sum()
    a, b, c = (as_coefficient(x)(total) for x in (A, B, C))
    _check_abc(a, b, c, f" at |M|={total}")
    rows = M.sum(axis=1)
    return float(
        a * u.sum() * v.sum()
        + b * np.sum(u.sum(axis=1) * v.sum(axis=1) / rows)
        + c * np.sum(u * v / M)
    )


def invariant_metric(M, u, v, A, B, C):
    """Metric invariant under homogeneous conditional embeddings.

    ``g(d_ab, d_cd) = A/k^2 + [a=c] (B/k + [b=d] |M|/M_ab * C/k^2)``
    """
    M = V.positive_matrix(M)
    u, v = _tangents(M, u, v)
    _check_abc(A, B, C)
    k = M.shape[0]
    return float(
        A / k**2 * u.sum() * v.sum()
        + B / k * np.sum(u.sum(axis=1) * v.sum(axis=1))
        + C / k**2 * M.sum() * np.sum(u * v / M)
    )


def product_fisher_metric(M, u, v):
    """Sum of the Fisher metrics of the rows: ``sum_ab u_ab v_ab / M_ab``."""
    M = V.positive_matrix(M)
    u, v = _tangents(M, u, v)
    return float(np.sum(u * v / M))


def _scale_at(C, k):
    c = float(C(k)) if callable(C) else float(C)
    if not c > 0:
        raise ValueError(f"scale C(k) must be positive, got {c} at k={k}")
    return c


def scaled_product_fisher_metric(M, u, v, C):
    """``C(k)`` times the product Fisher metric; ``C`` is a number or a callable of k."""
    M = V.positive_matrix(M)
    return _scale_at(C, M.shape[0]) * product_fisher_metric(M, u, v)


def joint_metric(P, u, v, B, C):
    """Lebanon-invariant metric on the open simplex of k x m joint distributions.

    ``B * sum_a (sum_b u_ab)(sum_c v_ac) / |P_a| + C * sum_ab u_ab v_ab / P_ab``
    """
    P = V.joint_matrix(P, "P")
    u, v = _tangents(P, u, v, "joint")
    if not (C > 0 and B + C > 0):
        raise ValueError(f"joint metric needs C > 0 and B + C > 0, got B={B}, C={C}")
    rows = P.sum(axis=1)
    return float(B * np.sum(u.sum(axis=1) * v.sum(axis=1) / rows) + C * np.sum(u * v / P))


def weighted_product_metric(K, u, v, rho):
    """Product of row Fisher metrics weighted by a distribution ``rho`` over rows."""
    K = V.stochastic_matrix(K)
    u, v = _tangents(K, u, v, "conditional")
    rho = V.probability_vector(rho, "rho", min_len=1)
    if rho.size != K.shape[0]:
        raise ValueError(f"rho has {rho.size} entries, K has {K.shape[0]} rows")
    return float(np.sum(rho[:, None] * u * v / K))


def campbell_matrix_metric(M, u, v, A, C):
    """Campbell's metric on the flattened cone: ``A(|M|) + [ab=cd] C(|M|)/M_ab``."""
    M = V.positive_matrix(M)
    u, v = _tangents(M, u, v)
    total = M.sum()
    a, c = as_coefficient(A)(total), as_coefficient(C)(total)
    if not (c > 0 and a + c > 0):
        raise ValueError(f"need C > 0 and A + C > 0 at |M|={total}, got A={a}, C={c}")
    return float(a * u.sum() * v.sum() + c * np.sum(u * v / M))


# Metric families. Each instance evaluates the closed form via __call__ and
# builds its Gram matrix entrywise from the coordinate formula in gram().
# gram() performs no positivity check so that degenerate coefficient choices
# can be examined numerically.


def _row_blocks(M):
    k, m = M.shape
    return np.kron(np.eye(k), np.ones((m, m)))


@dataclass(frozen=True)
class ProductFisher:
    default_domain = "conditional"

    def __call__(self, M, u, v):
        return product_fisher_metric(M, u, v)

    def gram(self, M):
        M = V.positive_matrix(M)
        return np.diag(1.0 / M.ravel())

    def to_dict(self):
        return {"family": "ProductFisher"}


@dataclass(frozen=True)
class ScaledProductFisher:
    """Product Fisher metric times ``C(k)``; ``C`` is a number or a callable of k."""

    C: object = 1.0
    default_domain = "conditional"

    def __call__(self, M, u, v):
        return scaled_product_fisher_metric(M, u, v, self.C)

    def gram(self, M):
        M = V.positive_matrix(M)
        return _scale_at(self.C, M.shape[0]) * np.diag(1.0 / M.ravel())

    def to_dict(self):
        c = self.C if not callable(self.C) else getattr(self.C, "__name__", "callable")
        return {"family": "ScaledProductFisher", "C": c}


@dataclass(frozen=True)
class Invariant:
    A: float = 0.0
    B: float = 0.0
    C: float = 1.0
    default_domain = "cone"

    def __call__(self, M, u, v):
        return invariant_metric(M, u, v, self.A, self.B, self.C)

    def gram(self, M):
        M = V.positive_matrix(M)
        k = M.shape[0]
        n = M.size
        return (
            self.A / k**2 * np.ones((n, n))
            + self.B / k * _row_blocks(M)
            + np.diag(M.sum() / M.ravel() * self.C / k**2)
        )

    def to_dict(self):
        return {"family": "Invariant", "A": self.A, "B": self.B, "C": self.C}


@dataclass(frozen=True)
class Lebanon:
    A: Coefficient = field(default_factory=lambda: Coefficient.constant(0.0))
    B: Coefficient = field(default_factory=lambda: Coefficient.constant(0.0))
    C: Coefficient = field(default_factory=lambda: Coefficient.constant(1.0))
    default_domain = "cone"

    def __post_init__(self):
        for name in ("A", "B", "C"):
            object.__setattr__(self, name, as_coefficient(getattr(self, name)))

    def __call__(self, M, u, v):
        return lebanon_metric(M, u, v, self.A, self.B, self.C)

    def gram(self, M):
        M = V.positive_matrix(M)
        total = M.sum()
        k, m = M.shape
        rows = np.repeat(M.sum(axis=1), m)
        return (
            self.A(total) * np.ones((M.size, M.size))
            + self.B(total) * _row_blocks(M) / rows[:, None]
            + np.diag(self.C(total) / M.ravel())
        )

    def to_dict(self):
        return {
            "family": "Lebanon",
            "A": self.A.to_dict(),
            "B": self.B.to_dict(),
            "C": self.C.to_dict(),
        }


@dataclass(frozen=True)
class JointABC:
    B: float = 0.0
    C: float = 1.0
    default_domain = "joint"

    def __call__(self, P, u, v):
        return joint_metric(P, u, v, self.B, self.C)

    def gram(self, P):
        P = V.positive_matrix(P, "P")
        rows = np.repeat(P.sum(axis=1), P.shape[1])
        return self.B * _row_blocks(P) / rows[:, None] + np.diag(self.C / P.ravel())

    def to_dict(self):
        return {"family": "JointABC", "B": self.B, "C": self.C}


@dataclass(frozen=True)
class Weighted:
    rho: tuple = (1.0,)
    default_domain = "conditional"

    def __post_init__(self):
        rho = V.probability_vector(self.rho, "rho", min_len=1)
        object.__setattr__(self, "rho", tuple(rho.tolist()))

    def __call__(self, K, u, v):
        return weighted_product_metric(K, u, v, self.rho)

    def gram(self, K):
        K = V.positive_matrix(K, "K")
        if len(self.rho) != K.shape[0]:
            raise ValueError(f"rho has {len(self.rho)} entries, K has {K.shape[0]} rows")
        weights = np.repeat(self.rho, K.shape[1])
        return np.diag(weights / K.ravel())

    def to_dict(self):
        return {"family": "Weighted", "rho": list(self.rho)}


@dataclass(frozen=True)
class CampbellMatrix:
    A: Coefficient = field(default_factory=lambda: Coefficient.constant(0.0))
    C: Coefficient = field(default_factory=lambda: Coefficient.constant(1.0))
    default_domain = "cone"

    def __post_init__(self):
        object.__setattr__(self, "A", as_coefficient(self.A))
        object.__setattr__(self, "C", as_coefficient(self.C))

    def __call__(self, M, u, v):
        return campbell_matrix_metric(M, u, v, self.A, self.C)

    def gram(self, M):
        M = V.positive_matrix(M)
        total = M.sum()
        return self.A(total) * np.ones((M.size, M.size)) + np.diag(self.C(total) / M.ravel())

    def to_dict(self):
        return {"family": "CampbellMatrix", "A": self.A.to_dict(), "C": self.C.to_dict()}


def gram_matrix(spec, M):
    """Coordinates of the bilinear form ``spec`` at ``M`` in the flattened basis."""
    G = spec.gram(M)
    return 0.5 * (G + G.T)


def quadratic_form(G, u, v):
    return float(np.ravel(u) @ G @ np.ravel(v))


def is_positive_definite_analytic(A, B, C, k=None):
    """Positivity conditions for the constant-coefficient Lebanon family.

    Without ``k`` this is the condition for a metric at every size:
    ``C > 0``, ``B + C > 0`` and ``A + B + C > 0``. A single row (``k=1``)
    only needs ``C > 0`` and ``A + B + C > 0`` because A and B then act on
    the same rank-one direction.
    """
    if k == 1:
        return bool(C > 0 and A + B + C > 0)
    return bool(C > 0 and B + C > 0 and A + B + C > 0)


def is_positive_definite_numeric(G, rel_tol=1e-12):
    """Smallest eigenvalue exceeds ``rel_tol * ||G||_2``."""
    G = V.as_matrix(G, "G")
    if G.shape[0] != G.shape[1]:
        raise ValueError(f"G must be square, got {G.shape}")
    if not np.allclose(G, G.T, rtol=1e-12, atol=1e-14 * np.abs(G).max()):
        raise ValueError("G is not symmetric")
    eig = np.linalg.eigvalsh(G)
    return bool(eig[0] > rel_tol * np.abs(eig).max())


def positive_definite_margin(A, B, C):
    """Distance of (A, B, C) to the nearest of the three boundary planes."""
    return min(abs(C), abs(B + C) / np.sqrt(2), abs(A + B + C) / np.sqrt(3))


# Samplers


def sample_stochastic_matrix(k, m, seed=None, floor=SAMPLE_FLOOR):
    if k < 1 or m < 2:
        raise ValueError(f"need k >= 1, m >= 2; got k={k}, m={m}")
    rng = np.random.default_rng(seed)
    return np.array([_floored_dirichlet(rng, m, floor) for _ in range(k)])


def sample_joint_matrix(k, m, seed=None, floor=SAMPLE_FLOOR):
    if k < 1 or m < 2:
        raise ValueError(f"need k >= 1, m >= 2; got k={k}, m={m}")
    rng = np.random.default_rng(seed)
    return _floored_dirichlet(rng, k * m, floor).reshape(k, m)


def sample_positive_matrix(k, m, seed=None, floor=SAMPLE_FLOOR):
    """Joint sample scaled by a log-uniform total mass in [0.2, 5k]."""
    rng = np.random.default_rng(seed)
    scale = np.exp(rng.uniform(np.log(0.2), np.log(5.0 * k)))
    return scale * sample_joint_matrix(k, m, rng, floor)


def sample_matrix_tangent(k, m, kind="cone", seed=None):
    u = np.random.default_rng(seed).standard_normal((k, m))
    if kind == "conditional":
        return u - u.mean(axis=1, keepdims=True)
    if kind == "joint":
        return u - u.mean()
    if kind == "cone":
        return u
    raise ValueError(f"unknown tangent kind {kind!r}")
