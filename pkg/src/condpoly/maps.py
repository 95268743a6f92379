"""Stochastic embeddings between simplices, cones and conditional polytopes.

Four map families are provided, all linear:

* :class:`MarkovMap` ``p -> p Q`` with a row-partition matrix ``Q``;
* :class:`LebanonMap` ``M -> R^T (M (x) Q)`` on positive matrices;
* :class:`DualLebanonMap` ``P -> (P^T (x) Q)^T R``;
* :class:`ConditionalEmbedding` ``K -> Rbar^T (K (x) Q)``, which maps
  stochastic matrices to stochastic matrices.

``(M (x) Q)`` is the row product: row ``a`` of ``M`` times its own ``Q[a]``.

Every map exposes ``apply`` (computed with matrix products) and
``pushforward`` (computed from the entrywise Jacobian
``d f_ij / d M_ab``), so the two can be checked against each other.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _validation as V
from . import simplex as S
from . import matrices as MX


def _blocks_tuple(blocks):
    return tuple(tuple(sorted(int(j) for j in b)) for b in blocks)


def _check_partition(blocks, n, what):
    flat = [j for b in blocks for j in b]
    if any(len(b) == 0 for b in blocks):
        raise ValueError(f"{what}: empty block")
    if sorted(flat) != list(range(n)):
        raise ValueError(f"{what}: blocks do not partition range({n})")


def _infer_blocks(matrix):
    blocks = [tuple(np.flatnonzero(row > 0)) for row in matrix]
    if any(len(b) == 0 for b in blocks):
        raise ValueError("cannot infer blocks: a row has no positive entry")
    return blocks


@dataclass(frozen=True)
class RowPartitionMatrix:
    """Non-negative m x n matrix whose row ``i`` is a distribution on block ``blocks[i]``.

    ``blocks`` partitions ``range(n)``. It is inferred from the sparsity
    pattern when omitted, which requires strictly positive block entries.
    """

    matrix: np.ndarray
    blocks: tuple = None

    def __post_init__(self):
        Q = V.as_matrix(self.matrix, "Q")
        blocks = _infer_blocks(Q) if self.blocks is None else self.blocks
        blocks = _blocks_tuple(blocks)
        m, n = Q.shape
        if len(blocks) != m:
            raise ValueError(f"Q has {m} rows but {len(blocks)} blocks")
        _check_partition(blocks, n, "row-partition matrix")
        if np.any(Q < 0):
            raise ValueError("row-partition matrix must be non-negative")
        for i, b in enumerate(blocks):
            outside = np.delete(Q[i], b)
            if np.any(outside != 0):
                raise ValueError(f"row {i} has mass outside its block")
            if abs(Q[i, list(b)].sum() - 1.0) > 1e-12:
                raise ValueError(f"row {i} does not sum to 1 on its block")
        object.__setattr__(self, "matrix", Q)
        object.__setattr__(self, "blocks", blocks)

    @property
    def shape(self):
        return self.matrix.shape

    def indicator(self):
        return PartitionIndicatorMatrix.from_blocks(self.blocks, self.shape[1])

    def to_dict(self):
        return {"matrix": self.matrix.tolist(), "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["matrix"], dtype=float), d.get("blocks"))

    @classmethod
    def identity(cls, m):
        return cls(np.eye(m), [(i,) for i in range(m)])


@dataclass(frozen=True)
class PartitionIndicatorMatrix:
    """0/1 k x l matrix with ``matrix[i, j] == 1`` iff ``j`` is in block ``i``."""

    matrix: np.ndarray
    blocks: tuple = None

    def __post_init__(self):
        R = V.as_matrix(self.matrix, "Rbar")
        if not np.all((R == 0) | (R == 1)):
            raise ValueError("indicator matrix entries must be 0 or 1")
        blocks = _infer_blocks(R) if self.blocks is None else self.blocks
        blocks = _blocks_tuple(blocks)
        k, l = R.shape
        if len(blocks) != k:
            raise ValueError(f"Rbar has {k} rows but {len(blocks)} blocks")
        _check_partition(blocks, l, "partition indicator matrix")
        expected = np.zeros_like(R)
        for i, b in enumerate(blocks):
            expected[i, list(b)] = 1.0
        if not np.array_equal(expected, R):
            raise ValueError("indicator matrix does not match its blocks")
        object.__setattr__(self, "matrix", R)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_blocks(cls, blocks, l):
        R = np.zeros((len(blocks), l))
        for i, b in enumerate(blocks):
            R[i, list(b)] = 1.0
        return cls(R, blocks)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def homogeneous(self):
        sizes = {len(b) for b in self.blocks}
        return len(sizes) == 1

    def to_dict(self):
        return {"matrix": self.matrix.tolist(), "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["matrix"], dtype=float), d.get("blocks"))


def _as_row_partition(Q):
    return Q if isinstance(Q, RowPartitionMatrix) else RowPartitionMatrix(Q)


def _as_indicator(R):
    return R if isinstance(R, PartitionIndicatorMatrix) else PartitionIndicatorMatrix(R)


def row_product(M, Qs):
    """Row product: row ``a`` of ``M`` multiplied by ``Qs[a]``."""
    M = V.as_matrix(M)
    mats = [Q.matrix if isinstance(Q, RowPartitionMatrix) else V.as_matrix(Q, "Q") for Q in Qs]
    if len(mats) != M.shape[0]:
        raise ValueError(f"need one Q per row: {M.shape[0]} rows, {len(mats)} matrices")
    shapes = {Q.shape for Q in mats}
    if len(shapes) != 1 or next(iter(shapes))[0] != M.shape[1]:
        raise ValueError(f"every Q must be {M.shape[1]} x n with a common n, got {shapes}")
    return np.stack([M[a] @ Q for a, Q in enumerate(mats)])


class _LinearMap:
    """Shared pushforward machinery; subclasses define apply() and jacobian()."""

    domain_shape = ()
    codomain_shape = ()

    def pushforward(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != self.domain_shape:
            raise ValueError(f"tangent has shape {u.shape}, expected {self.domain_shape}")
        return (u.ravel() @ self.jacobian()).reshape(self.codomain_shape)

    def _check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != self.domain_shape:
            raise ValueError(f"point has shape {x.shape}, expected {self.domain_shape}")
        return x


@dataclass(frozen=True, eq=False)
class MarkovMap(_LinearMap):
    Q: RowPartitionMatrix
    kind = "markov"

    def __post_init__(self):
        object.__setattr__(self, "Q", _as_row_partition(self.Q))

    @property
    def domain_shape(self):
        return (self.Q.shape[0],)

    @property
    def codomain_shape(self):
        return (self.Q.shape[1],)

    def apply(self, p):
        return self._check_point(p) @ self.Q.matrix

    def jacobian(self):
        return self.Q.matrix

    def to_dict(self):
        return {"kind": self.kind, "Q": self.Q.to_dict()}


@dataclass(frozen=True, eq=False)
class LebanonMap(_LinearMap):
    """``M -> R^T (M (x) Q)`` for a k x l row-partition ``R`` and k matrices ``Q[a]`` (m x n)."""

    R: RowPartitionMatrix
    Qs: tuple
    kind = "lebanon"

    def __post_init__(self):
        object.__setattr__(self, "R", _as_row_partition(self.R))
        object.__setattr__(self, "Qs", tuple(_as_row_partition(Q) for Q in self.Qs))
        _check_family(self.R.shape[0], self.Qs)

    @property
    def domain_shape(self):
        return (self.R.shape[0], self.Qs[0].shape[0])

    @property
    def codomain_shape(self):
        return (self.R.shape[1], self.Qs[0].shape[1])

    def apply(self, M):
        return self.R.matrix.T @ row_product(self._check_point(M), self.Qs)

    def jacobian(self):
        return _row_jacobian(self.R.matrix, self.Qs)

    def to_dict(self):
        return {"kind": self.kind, "R": self.R.to_dict(), "Qs": [Q.to_dict() for Q in self.Qs]}


@dataclass(frozen=True, eq=False)
class DualLebanonMap(_LinearMap):
    """``P -> (P^T (x) Q)^T R``: the Lebanon map with the roles of rows and columns swapped.

    For a k x m input, ``R`` is m x l and each of the m matrices ``Q[b]`` is
    k x n; the image is n x l.
    """

    R: RowPartitionMatrix
    Qs: tuple
    kind = "dual_lebanon"

    def __post_init__(self):
        object.__setattr__(self, "R", _as_row_partition(self.R))
        object.__setattr__(self, "Qs", tuple(_as_row_partition(Q) for Q in self.Qs))
        _check_family(self.R.shape[0], self.Qs)

    @property
    def domain_shape(self):
        return (self.Qs[0].shape[0], self.R.shape[0])

    @property
    def codomain_shape(self):
        return (self.Qs[0].shape[1], self.R.shape[1])

    def apply(self, P):
        P = self._check_point(P)
        return row_product(P.T, self.Qs).T @ self.R.matrix

    def jacobian(self):
        # transpose-conjugate of the primal Jacobian: entry ((a, b), (j, i)) = Q[b]_aj R_bi
        k, m = self.domain_shape
        n, l = self.codomain_shape
        primal = _row_jacobian(self.R.matrix, self.Qs).reshape(m, k, l, n)
        return primal.transpose(1, 0, 3, 2).reshape(k * m, n * l)

    def to_dict(self):
        return {"kind": self.kind, "R": self.R.to_dict(), "Qs": [Q.to_dict() for Q in self.Qs]}


@dataclass(frozen=True, eq=False)
class ConditionalEmbedding(_LinearMap):
    """``K -> Rbar^T (K (x) Q)``.

    Row ``a`` is split by ``Q[a]`` and copied into every row of block ``a``.
    """

    Rbar: PartitionIndicatorMatrix
    Qs: tuple
    kind = "conditional"

    def __post_init__(self):
        object.__setattr__(self, "Rbar", _as_indicator(self.Rbar))
        object.__setattr__(self, "Qs", tuple(_as_row_partition(Q) for Q in self.Qs))
        _check_family(self.Rbar.shape[0], self.Qs)

    @property
    def homogeneous(self):
        return self.Rbar.homogeneous

    @property
    def domain_shape(self):
        return (self.Rbar.shape[0], self.Qs[0].shape[0])

    @property
    def codomain_shape(self):
        return (self.Rbar.shape[1], self.Qs[0].shape[1])

    def apply(self, K):
        return self.Rbar.matrix.T @ row_product(self._check_point(K), self.Qs)

    def jacobian(self):
        return _row_jacobian(self.Rbar.matrix, self.Qs)

    def to_dict(self):
        return {"kind": self.kind, "Rbar": self.Rbar.to_dict(),
                "Qs": [Q.to_dict() for Q in self.Qs]}


def _check_family(k, Qs):
    if len(Qs) != k:
        raise ValueError(f"need {k} Q matrices, got {len(Qs)}")
    if len({Q.shape for Q in Qs}) != 1:
        raise ValueError("all Q matrices must have the same shape")


def _row_jacobian(R, Qs):
    # d f_ij / d M_ab = R_ai Q[a]_bj, flattened to ((a, b), (i, j))
    k, l = R.shape
    m, n = Qs[0].shape
    Qstack = np.stack([Q.matrix for Q in Qs])
    J = np.einsum("ai,abj->abij", R, Qstack)
    return J.reshape(k * m, l * n)


def map_from_dict(d):
    kind = d["kind"]
    if kind == "markov":
        return MarkovMap(RowPartitionMatrix.from_dict(d["Q"]))
    Qs = [RowPartitionMatrix.from_dict(q) for q in d["Qs"]]
    if kind == "lebanon":
        return LebanonMap(RowPartitionMatrix.from_dict(d["R"]), Qs)
    if kind == "dual_lebanon":
        return DualLebanonMap(RowPartitionMatrix.from_dict(d["R"]), Qs)
    if kind == "conditional":
        return ConditionalEmbedding(PartitionIndicatorMatrix.from_dict(d["Rbar"]), Qs)
    raise ValueError(f"unknown map kind {kind!r}")


def apply(fmap, x):
    return fmap.apply(x)


def pushforward(fmap, u):
    return fmap.pushforward(u)


def pullback_metric(fmap, target_spec, M, u, v):
    """Target metric at ``f(M)`` evaluated on the pushforwards of ``u`` and ``v``."""
    return target_spec(fmap.apply(M), fmap.pushforward(u), fmap.pushforward(v))


# Generators


def _random_partition(n_items, n_blocks, rng, equal=False):
    if n_blocks < 1 or n_items < n_blocks:
        raise ValueError(f"cannot split {n_items} items into {n_blocks} non-empty blocks")
    perm = rng.permutation(n_items)
    if equal:
        if n_items % n_blocks:
            raise ValueError(f"{n_items} items do not split into {n_blocks} equal blocks")
        return [sorted(chunk.tolist()) for chunk in np.split(perm, n_blocks)]
    labels = np.concatenate([np.arange(n_blocks), rng.integers(0, n_blocks, n_items - n_blocks)])
    return [sorted(perm[labels == i].tolist()) for i in range(n_blocks)]


def _block_weights(rng, size, min_weight):
    w = rng.standard_exponential(size)
    w /= w.sum()
    w = min_weight + (1.0 - size * min_weight) * w
    return w / w.sum()


def sample_row_partition(m, n, seed=None, min_weight=1e-3):
    """Random m x n row-partition matrix with block weights bounded below by ``min_weight``."""
    if m < 1 or n < m:
        raise ValueError(f"row-partition matrix needs 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    blocks = _random_partition(n, m, rng)
    Q = np.zeros((m, n))
    for i, b in enumerate(blocks):
        Q[i, b] = _block_weights(rng, len(b), min_weight)
    return RowPartitionMatrix(Q, blocks)


def sample_indicator(k, l, homogeneous=False, seed=None):
    rng = np.random.default_rng(seed)
    blocks = _random_partition(l, k, rng, equal=homogeneous)
    return PartitionIndicatorMatrix.from_blocks(blocks, l)


def stochastic_partition_from_indicator(Rbar, weights=None):
    """Row-partition matrix with the block structure of ``Rbar``.

    ``weights`` (length l, positive) are normalised within each block;
    uniform weights by default.
    """
    Rbar = _as_indicator(Rbar)
    k, l = Rbar.shape
    w = np.ones(l) if weights is None else V.positive_vector(weights, "weights", min_len=1)
    if w.size != l:
        raise ValueError(f"weights have length {w.size}, expected {l}")
    R = np.zeros((k, l))
    for i, b in enumerate(Rbar.blocks):
        R[i, list(b)] = w[list(b)] / w[list(b)].sum()
    return RowPartitionMatrix(R, Rbar.blocks)


def sample_markov_map(m, n, seed=None):
    return MarkovMap(sample_row_partition(m, n, seed))


def sample_lebanon_map(k, m, l, n, seed=None):
    rng = np.random.default_rng(seed)
    R = sample_row_partition(k, l, rng)
    return LebanonMap(R, [sample_row_partition(m, n, rng) for _ in range(k)])


def sample_dual_lebanon_map(k, m, n, l, seed=None):
    """Random dual Lebanon map from k x m to n x l matrices."""
    rng = np.random.default_rng(seed)
    R = sample_row_partition(m, l, rng)
    return DualLebanonMap(R, [sample_row_partition(k, n, rng) for _ in range(m)])


def sample_conditional_embedding(k, m, l, n, homogeneous=True, seed=None):
    rng = np.random.default_rng(seed)
    Rbar = sample_indicator(k, l, homogeneous, rng)
    return ConditionalEmbedding(Rbar, [sample_row_partition(m, n, rng) for _ in range(k)])


def _permutation_matrix(perm):
    perm = list(perm)
    P = np.zeros((len(perm), len(perm)))
    P[np.arange(len(perm)), perm] = 1.0
    return P


def permutation_embedding(pis, sigma):
    """Relabel rows by ``sigma`` and the columns of row ``a`` by ``pis[a]``.

    ``d_ab`` is pushed to ``d'_{sigma(a), pis[a](b)}``.
    """
    Rbar = PartitionIndicatorMatrix(_permutation_matrix(sigma))
    Qs = [RowPartitionMatrix(_permutation_matrix(pi)) for pi in pis]
    return ConditionalEmbedding(Rbar, Qs)


def refinement_embedding(k, m, z, w, seed=None):
    """Homogeneous embedding: every row copied z times, every column split evenly into w."""
    rng = np.random.default_rng(seed)
    Rbar = sample_indicator(k, k * z, homogeneous=True, seed=rng)
    blocks = _random_partition(m * w, m, rng, equal=True)
    Q = np.zeros((m, m * w))
    for b, cols in enumerate(blocks):
        Q[b, cols] = 1.0 / w
    Q = RowPartitionMatrix(Q, blocks)
    return ConditionalEmbedding(Rbar, [Q] * k)


def constant_embedding(counts, z=1, seed=None):
    """Homogeneous embedding sending ``counts / Z`` to a constant matrix.

    ``counts`` is a positive integer k x m matrix with equal row sums N.
    Column ``b`` of row ``a`` is split uniformly into ``counts[a, b]`` of the N
    target columns.
    """
    counts = np.asarray(counts)
    if counts.ndim != 2 or np.any(counts < 1) or not np.all(counts == np.round(counts)):
        raise ValueError("counts must be a positive integer matrix")
    counts = counts.astype(int)
    N = counts.sum(axis=1)
    if np.any(N != N[0]):
        raise ValueError("counts must have equal row sums")
    rng = np.random.default_rng(seed)
    k, m = counts.shape
    Qs = []
    for a in range(k):
        perm = rng.permutation(N[0])
        bounds = np.concatenate([[0], np.cumsum(counts[a])])
        blocks = [sorted(perm[bounds[b]:bounds[b + 1]].tolist()) for b in range(m)]
        Q = np.zeros((m, N[0]))
        for b, cols in enumerate(blocks):
            Q[b, cols] = 1.0 / counts[a, b]
        Qs.append(RowPartitionMatrix(Q, blocks))
    Rbar = sample_indicator(k, k * z, homogeneous=True, seed=rng)
    return ConditionalEmbedding(Rbar, Qs)


# Verifiers


def sample_point(shape, domain, rng):
    """Basepoint and two tangents for one trial on ``domain``.

    Vector domains: ``simplex`` or ``cone``. Matrix domains: ``cone``,
    ``conditional`` or ``joint``.
    """
    if len(shape) == 1:
        (n,) = shape
        if domain == "simplex":
            return (S.sample_probability_vector(n, rng), S.sample_tangent(n, rng),
                    S.sample_tangent(n, rng))
        if domain == "cone":
            return (S.sample_positive_vector(n, rng), S.sample_cone_tangent(n, rng),
                    S.sample_cone_tangent(n, rng))
    else:
        k, m = shape
        tangent_kind = domain
        if domain == "cone":
            x = MX.sample_positive_matrix(k, m, rng)
        elif domain == "conditional":
            x = MX.sample_stochastic_matrix(k, m, rng)
        elif domain == "joint":
            x = MX.sample_joint_matrix(k, m, rng)
        else:
            raise ValueError(f"unknown matrix domain {domain!r}")
        return (x, MX.sample_matrix_tangent(k, m, tangent_kind, rng),
                MX.sample_matrix_tangent(k, m, tangent_kind, rng))
    raise ValueError(f"unknown vector domain {domain!r}")


@dataclass
class IsometryReport:
    passed: bool
    max_rel_err: float
    trials: int
    tol: float
    witness: dict = None
    errors: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "passed": self.passed,
            "max_rel_err": self.max_rel_err,
            "trials": self.trials,
            "tol": self.tol,
            "witness": self.witness,
        }


def _listify(x):
    return np.asarray(x).tolist()


def check_isometry(fmap, source_spec, target_spec=None, trials=100, seed=0, tol=1e-9,
                   domain=None, floor=V.ABS_FLOOR):
    """Compare a metric with its pullback through an embedding on random samples.

    ``fmap`` is a map or a callable ``rng -> map`` drawing a fresh map per
    trial. Trial ``t`` uses the generator seeded with ``seed + t``. The check
    passes when every relative error is at most ``tol``; otherwise the
    worst sample is returned as the witness.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    target_spec = source_spec if target_spec is None else target_spec
    domain = domain or source_spec.default_domain
    errors = []
    worst = None
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        f = fmap(rng) if callable(fmap) and not isinstance(fmap, _LinearMap) else fmap
        x, u, v = sample_point(f.domain_shape, domain, rng)
        src = source_spec(x, u, v)
        pb = pullback_metric(f, target_spec, x, u, v)
        err = V.rel_err(pb, src, floor)
        errors.append(err)
        if worst is None or err > worst["rel_err"]:
            worst = {
                "trial": t,
                "map": f.to_dict(),
                "basepoint": _listify(x),
                "u": _listify(u),
                "v": _listify(v),
                "source_value": src,
                "pullback_value": pb,
                "rel_err": err,
            }
    max_err = max(errors)
    passed = max_err <= tol
    return IsometryReport(passed, max_err, trials, tol, None if passed else worst, errors)


def check_covariance(fmap, rho=None, R=None, trials=100, seed=0, tol=1e-9):
    """Check that the rho-weighted product metric pulls back from the rho R-weighted one.

    ``fmap`` is a :class:`ConditionalEmbedding` or a sampler ``rng -> map``.
    ``rho`` defaults to a fresh sample per trial and ``R`` to a random
    row-partition matrix with the block structure of the map's ``Rbar``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    errors = []
    worst = None
    rho_prime = None
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        f = fmap(rng) if callable(fmap) and not isinstance(fmap, _LinearMap) else fmap
        if not isinstance(f, ConditionalEmbedding):
            raise TypeError("covariance is defined for conditional embeddings")
        k, m = f.domain_shape
        l = f.codomain_shape[0]
        r = _compatible_R(f.Rbar, R, rng)
        w = _rho(rho, k, rng)
        rho_prime = w @ r.matrix
        K = MX.sample_stochastic_matrix(k, m, rng)
        u = MX.sample_matrix_tangent(k, m, "conditional", rng)
        v = MX.sample_matrix_tangent(k, m, "conditional", rng)
        src = MX.weighted_product_metric(K, u, v, w)
        pb = pullback_metric(f, MX.Weighted(tuple(rho_prime / rho_prime.sum())), K, u, v)
        err = V.rel_err(pb, src)
        errors.append(err)
        if worst is None or err > worst["rel_err"]:
            worst = {
                "trial": t,
                "map": f.to_dict(),
                "R": r.to_dict(),
                "rho": w.tolist(),
                "rho_prime": rho_prime.tolist(),
                "basepoint": K.tolist(),
                "u": u.tolist(),
                "v": v.tolist(),
                "source_value": src,
                "pullback_value": pb,
                "rel_err": err,
            }
        assert rho_prime.size == l
    max_err = max(errors)
    passed = max_err <= tol
    report = IsometryReport(passed, max_err, trials, tol, None if passed else worst, errors)
    report.rho_prime = rho_prime
    return report


def _compatible_R(Rbar, R, rng):
    if R is None:
        return stochastic_partition_from_indicator(Rbar, rng.uniform(0.2, 1.0, Rbar.shape[1]))
    R = _as_row_partition(R)
    if R.blocks != Rbar.blocks:
        raise ValueError("R does not have the block structure of the map's Rbar")
    return R


def _rho(rho, k, rng):
    if rho is None:
        return S._floored_dirichlet(rng, k, 1e-3) if k > 1 else np.ones(1)
    rho = V.probability_vector(rho, "rho", min_len=1)
    if rho.size != k:
        raise ValueError(f"rho has {rho.size} entries, expected {k}")
    return rho
