"""Input checks shared by every module.

All checkers return a fresh read-only float64 array so callers can rely on
shape and dtype without copying again.
"""

import numpy as np

SUM_TOL = 1e-12
REL_TOL = 1e-9
ABS_FLOOR = 1e-12


def _frozen(x):
    x = np.array(x, dtype=np.float64)
    x.setflags(write=False)
    return x


def as_vector(x, name="x", min_len=1):
    x = _frozen(x)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if x.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} entries, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def positive_vector(x, name="p", min_len=2):
    x = as_vector(x, name, min_len)
    if np.any(x <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return x


def probability_vector(x, name="p", min_len=2):
    x = positive_vector(x, name, min_len)
    if abs(x.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"{name} must sum to 1 (sum = {x.sum()!r})")
    return x


def simplex_tangent(u, n, name="u"):
    u = as_vector(u, name)
    if u.size != n:
        raise ValueError(f"{name} has length {u.size}, expected {n}")
    if abs(u.sum()) > SUM_TOL * max(1.0, np.abs(u).sum()):
        raise ValueError(f"{name} is not tangent to the simplex (sum = {u.sum()!r})")
    return u


def same_length(u, n, name="u"):
    u = as_vector(u, name)
    if u.size != n:
        raise ValueError(f"{name} has length {u.size}, expected {n}")
    return u


def as_matrix(M, name="M"):
    M = _frozen(M)
    if M.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def positive_matrix(M, name="M"):
    M = as_matrix(M, name)
    if M.shape[0] < 1 or M.shape[1] < 2:
        raise ValueError(f"{name} must be k x m with k >= 1, m >= 2; got {M.shape}")
    if np.any(M <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return M


def stochastic_matrix(K, name="K"):
    K = positive_matrix(K, name)
    if np.any(np.abs(K.sum(axis=1) - 1.0) > SUM_TOL):
        raise ValueError(f"rows of {name} must sum to 1")
    return K


def joint_matrix(P, name="P"):
    P = positive_matrix(P, name)
    if abs(P.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"{name} must sum to 1 (sum = {P.sum()!r})")
    return P


def matrix_tangent(u, shape, kind="cone", name="u"):
    """Check a tangent at a k x m basepoint.

    kind is ``"cone"`` (no constraint), ``"conditional"`` (zero row sums) or
    ``"joint"`` (zero total sum).
    """
    u = as_matrix(u, name)
    if u.shape != tuple(shape):
        raise ValueError(f"{name} has shape {u.shape}, expected {tuple(shape)}")
    scale = max(1.0, np.abs(u).sum())
    if kind == "conditional":
        if np.any(np.abs(u.sum(axis=1)) > SUM_TOL * scale):
            raise ValueError(f"rows of {name} must sum to 0 for a conditional tangent")
    elif kind == "joint":
        if abs(u.sum()) > SUM_TOL * scale:
            raise ValueError(f"{name} must sum to 0 for a joint tangent")
    elif kind != "cone":
        raise ValueError(f"unknown tangent kind {kind!r}")
    return u


def rel_err(value, reference, floor=ABS_FLOOR):
    """Relative deviation with an absolute floor on the denominator."""
    return abs(value - reference) / max(abs(reference), floor)


def isclose(value, reference, rtol=REL_TOL, floor=ABS_FLOOR):
    return rel_err(value, reference, floor) <= rtol
