"""Natural-gradient flows of mean fitness on the simplex and on stochastic matrices.

For fitness values ``F`` (k x m) and an input distribution ``p`` over rows,
the mean fitness of a stochastic matrix is
``Fbar(K) = sum_i p_i sum_j K_ij F_ij``. Its natural gradient for the
``rho``-weighted product Fisher metric is the replicator field
``(p_i / rho_i) K_ij (F_ij - sum_j' K_ij' F_ij')``; the simplex case is
``k = 1``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.special import logsumexp

from . import _validation as V

TIE_DECIMALS = 12
BOUNDARY_FLOOR = 1e-12


class BoundaryReached(RuntimeError):
    """Integration stopped because an entry left the open polytope."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True, eq=False)
class FitnessSpec:
    """Fitness values ``F`` (k x m) and input distribution ``p`` over the k rows."""

    values: np.ndarray
    p: np.ndarray = None

    def __post_init__(self):
        F = np.asarray(self.values, dtype=float)
        if F.ndim == 1:
            F = F[None, :]
        F = V.as_matrix(F, "F")
        p = np.ones(F.shape[0]) / F.shape[0] if self.p is None else self.p
        p = V.probability_vector(p, "p", min_len=1)
        if p.size != F.shape[0]:
            raise ValueError(f"p has {p.size} entries, F has {F.shape[0]} rows")
        object.__setattr__(self, "values", F)
        object.__setattr__(self, "p", p)

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_simplex(self):
        return self.values.shape[0] == 1

    def rounded(self):
        return np.round(self.values, TIE_DECIMALS)

    def row_max(self):
        """``G_i``: largest fitness in each row."""
        return self.rounded().max(axis=1)

    def row_second(self):
        """``g_i``: largest fitness strictly below ``G_i`` (NaN for constant rows)."""
        R = self.rounded()
        G = R.max(axis=1, keepdims=True)
        below = np.where(R < G, R, -np.inf).max(axis=1)
        return np.where(np.isfinite(below), below, np.nan)

    def mean(self, K):
        K = np.asarray(K, dtype=float).reshape(self.shape)
        return float(self.p @ np.sum(K * self.values, axis=1))

    def to_dict(self):
        return {"F": self.values.tolist(), "p": self.p.tolist()}


def as_fitness(F, p=None):
    if isinstance(F, FitnessSpec):
        return F
    return FitnessSpec(F, p)


def _rate_factor(F, rho):
    if rho is None:
        return np.ones(F.shape[0])
    rho = V.probability_vector(rho, "rho", min_len=1)
    if rho.size != F.shape[0]:
        raise ValueError(f"rho has {rho.size} entries, F has {F.shape[0]} rows")
    return F.p / rho


# Fields


def natural_gradient(partials, spec, x):
    """Riemannian gradient of a function with differential ``partials`` at ``x``.

    ``partials`` is an array shaped like ``x`` or a callable returning one.
    The tangent space is the sum-zero hyperplane for a vector ``x`` and the
    zero-row-sum matrices for a matrix ``x``. ``spec`` provides ``gram(x)``.
    """
    x = np.asarray(x, dtype=float)
    dF = np.asarray(partials(x) if callable(partials) else partials, dtype=float)
    if dF.shape != x.shape:
        raise ValueError(f"partials have shape {dF.shape}, expected {x.shape}")
    k, m = (1, x.size) if x.ndim == 1 else x.shape
    constraints = np.kron(np.eye(k), np.ones((1, m)))
    T = null_space(constraints)
    G = spec.gram(x)
    reduced = T.T @ G @ T
    if np.linalg.cond(reduced) > 1e12:
        raise np.linalg.LinAlgError("restricted Gram matrix is singular")
    grad = T @ np.linalg.solve(reduced, T.T @ dF.ravel())
    return grad.reshape(x.shape)


def replicator_field_simplex(p, F):
    """``p_i (F_i - Fbar(p))``."""
    p = V.probability_vector(p)
    F = as_fitness(F)
    if not F.is_simplex or F.shape[1] != p.size:
        raise ValueError(f"need {p.size} fitness values in a single row, got shape {F.shape}")
    f = F.values[0]
    return p * (f - p @ f)


def replicator_field_matrix(K, F, rho=None, check=True):
    """``(p_i / rho_i) K_ij (F_ij - sum_j' K_ij' F_ij')``; ``rho`` defaults to ``p``.

    ``check=False`` skips validating ``K``, for use inside integrators where
    intermediate stages drift off the polytope by rounding.
    """
    K = V.stochastic_matrix(K) if check else np.asarray(K, dtype=float)
    F = as_fitness(F)
    if F.shape != K.shape:
        raise ValueError(f"F has shape {F.shape}, K has shape {K.shape}")
    c = _rate_factor(F, rho)
    row_mean = np.sum(K * F.values, axis=1, keepdims=True)
    return c[:, None] * K * (F.values - row_mean)


def replicator_field(F, rho=None):
    """Unchecked replicator field ``x -> x'`` for integrators; vectors for the simplex case."""
    F = as_fitness(F)
    c = _rate_factor(F, rho)[:, None]
    values = F.values

    def field_fn(x):
        X = np.reshape(x, values.shape)
        dX = c * X * (values - np.sum(X * values, axis=1, keepdims=True))
        return dX.reshape(np.shape(x))

    return field_fn


# Closed forms


def closed_form_simplex(p0, F, t):
    """Exact simplex flow from ``p0``; an array of times gives one row per time."""
    p0 = V.probability_vector(p0, "p0")
    F = as_fitness(F)
    return _closed_form(p0[None, :], F.values, np.ones(1), t)[..., 0, :]


def closed_form_matrix(K0, F, rho, t):
    """Rowwise closed form with exponents ``t (p_i / rho_i) F_ij``.

    An array of times gives a stack of matrices, one per time.
    """
    K0 = V.stochastic_matrix(K0, "K0")
    F = as_fitness(F)
    return _closed_form(K0, F.values, _rate_factor(F, rho), t)


def _closed_form(X0, values, c, t):
    t = np.asarray(t, dtype=float)
    S = np.log(X0) + t[..., None, None] * (c[:, None] * values)
    return np.exp(S - logsumexp(S, axis=-1, keepdims=True))


def limit_points(x0, F, direction="+inf"):
    """Limit of the closed form as ``t -> +inf`` or ``-inf``.

    The mass of each row of ``x0`` is renormalised on that row's argmax
    (or argmin) set, compared after rounding to 12 decimals.
    """
    x0 = np.asarray(x0, dtype=float)
    X = np.atleast_2d(x0)
    if np.any(X <= 0):
        raise ValueError("x0 must be strictly positive")
    F = as_fitness(F)
    if F.shape != X.shape:
        raise ValueError(f"F has shape {F.shape}, state has shape {X.shape}")
    if direction in ("+inf", "+", 1, np.inf):
        R = F.rounded()
    elif direction in ("-inf", "-", -1, -np.inf):
        R = -F.rounded()
    else:
        raise ValueError(f"direction must be '+inf' or '-inf', got {direction!r}")
    mask = R == R.max(axis=1, keepdims=True)
    L = np.where(mask, X, 0.0)
    L = L / L.sum(axis=1, keepdims=True)
    return L.reshape(x0.shape)


# Integration


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    metadata: dict = field(default_factory=dict)

    def rows(self):
        """One row per sample: time followed by the row-major state."""
        flat = self.states.reshape(len(self.times), -1)
        return np.column_stack([self.times, flat])


def integrate(field_fn, x0, dt, T, renormalize=True, floor=BOUNDARY_FLOOR, metadata=None):
    """Fixed-step classical Runge-Kutta integration of ``x' = field_fn(x)``.

    With ``renormalize`` every row is divided by its sum after each step.
    Raises :class:`BoundaryReached` (carrying the partial trajectory) when
    an entry drops below ``floor`` or the state becomes non-finite; pass
    ``floor=0`` to require only strict positivity.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not T >= 0:
        raise ValueError(f"T must be non-negative, got {T}")
    x = np.array(x0, dtype=float)
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    meta = {"dt": dt, "T": T, "renormalize": renormalize}
    meta.update(metadata or {})
    times = dt * np.arange(steps + 1)
    states = np.empty((steps + 1,) + x.shape)
    states[0] = x
    for s in range(1, steps + 1):
        k1 = field_fn(x)
        k2 = field_fn(x + 0.5 * dt * k1)
        k3 = field_fn(x + 0.5 * dt * k2)
        k4 = field_fn(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if renormalize:
            x = x / x.sum(axis=-1, keepdims=True)
        if not np.all(np.isfinite(x)) or np.any(x < floor) or np.any(x <= 0):
            partial = Trajectory(times[:s], states[:s], meta)
            raise BoundaryReached(f"state left the interior at t={times[s]:.6g}", partial)
        states[s] = x
    return Trajectory(times, states, meta)


# Rates


def asymptotic_rate(F, rho=None):
    """``inf_i (p_i / rho_i)(G_i - g_i)`` over rows with at least two distinct values."""
    F = as_fitness(F)
    c = _rate_factor(F, rho)
    gaps = F.row_max() - F.row_second()
    ok = np.isfinite(gaps)
    if not np.any(ok):
        raise ValueError("every row of F is constant: no convergence rate")
    return float(np.min(c[ok] * gaps[ok]))


def optimality_gap(K, F):
    """``Fbar* - Fbar(K)`` as ``sum_i p_i sum_j K_ij (G_i - F_ij)``, free of cancellation."""
    F = as_fitness(F)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    G = F.values.max(axis=1, keepdims=True)
    return float(F.p @ np.sum(K * (G - F.values), axis=1))


def measured_rate(traj, F, min_r2=0.99):
    """Decay rate of the optimality gap over the trailing half of ``traj``.

    The gap is measured against the mean fitness of the ``+inf`` limit of
    the initial state. Raises ``ValueError`` when the log-linear fit has
    ``R^2 < min_r2``.
    """
    F = as_fitness(F)
    limit = limit_points(np.atleast_2d(traj.states[0]), F, "+inf")
    best = np.sum(limit * F.values, axis=1, keepdims=True)
    half = len(traj.times) // 2
    t = np.asarray(traj.times[half:])
    # Fbar* - Fbar(K) summed termwise to avoid cancellation
    gaps = np.array([F.p @ np.sum(np.atleast_2d(K) * (best - F.values), axis=1)
                     for K in traj.states[half:]])
    keep = gaps > 0
    if keep.sum() < 3:
        raise ValueError("too few positive gap samples to fit a rate")
    t, y = t[keep], np.log(gaps[keep])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / total if total > 0 else 0.0
    if r2 < min_r2:
        raise ValueError(f"gap tail is not log-linear (R^2 = {r2:.4f})")
    return float(-slope)


def variance_identity_check(p, F, h=1e-5):
    """Compare ``d/dt Fbar`` along the exact flow with ``var_p(F)``.

    Returns ``(lhs, rhs, gap)`` with ``lhs`` a central difference of step
    ``h`` on the closed form.
    """
    p = V.probability_vector(p)
    F = as_fitness(F)
    f = F.values[0]
    ahead = closed_form_simplex(p, F, h) @ f
    behind = closed_form_simplex(p, F, -h) @ f
    lhs = (ahead - behind) / (2 * h)
    rhs = float(p @ (f - p @ f) ** 2)
    return float(lhs), rhs, float(abs(lhs - rhs))


def rate_integration_grid(rate, horizon=20.0, steps=4000):
    """``(dt, T)`` covering ``horizon / rate`` time units in about ``steps`` steps."""
    T = horizon / rate
    dt = T / steps
    return dt, steps * dt


def measure_rate(F, rho=None, K0=None, horizon=20.0, steps=4000):
    """Integrate the replicator flow to ``horizon / asymptotic_rate`` and measure its rate.

    Integration only requires strict positivity: over this horizon the
    slowest entries decay by ``exp(-horizon)`` and faster ones far below
    the default boundary floor.
    """
    F = as_fitness(F)
    rate = asymptotic_rate(F, rho)
    if K0 is None:
        K0 = np.full(F.shape, 1.0 / F.shape[1])
    K0 = np.asarray(K0, dtype=float).reshape(F.shape)
    dt, T = rate_integration_grid(rate, horizon, steps)
    rho_eff = F.p if rho is None else rho
    traj = integrate(replicator_field(F, rho_eff), K0, dt, T, floor=0.0)
    return rate, measured_rate(traj, F)


# Samplers


def sample_fitness(k, m, seed=None, p=None):
    """Fitness values uniform in [0, 1) with ``p`` uniform unless given."""
    rng = np.random.default_rng(seed)
    return FitnessSpec(rng.uniform(0.0, 1.0, (k, m)), p)


def sample_rate_instance(k, m, seed=None, rho=None, separation=1.5):
    """Fitness and input distribution with unique row maxima and a separated slowest rate.

    Draws are rejected until the second-slowest decay exponent
    ``(p_i / rho_i)(G_i - F_ij)`` exceeds the slowest by the factor
    ``separation``, so the trailing half of a ``20 / rate`` trajectory is
    dominated by a single exponential. ``rho`` defaults to ``p``.
    """
    rng = np.random.default_rng(seed)
    while True:
        F = rng.uniform(0.0, 2.0, (k, m))
        p = rng.uniform(0.5, 1.5, k)
        spec = FitnessSpec(F, p / p.sum())
        R = spec.rounded()
        top = R.max(axis=1, keepdims=True)
        if np.any(np.sum(R == top, axis=1) != 1):
            continue
        c = _rate_factor(spec, spec.p if rho is None else rho)
        exps = np.sort((c[:, None] * (top - R))[R < top])
        if exps[0] < 0.05:
            continue
        if exps.size == 1 or exps[1] >= separation * exps[0]:
            return spec
