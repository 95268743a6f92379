"""Command-line experiment runner.

Every subcommand reads one JSON config, writes ``report.json`` (sorted keys,
no timing information) plus an optional CSV into ``--out``, and exits with
0 when the expected outcome holds, 1 when it does not and 2 on a config
error. Wall time goes to stderr.
"""

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import dynamics as D
from . import expfam as E
from . import maps as F
from . import matrices as MX
from . import simplex as S
from . import _validation as V

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# Config handling


def _resolve(raw, defaults, command):
    unknown = set(raw) - set(defaults) - {"seed"}
    if unknown:
        raise ConfigError(f"{command}: unknown config keys {sorted(unknown)}")
    cfg = dict(defaults)
    cfg.update(raw)
    if "seed" not in raw:
        raise ConfigError("config must set 'seed'")
    cfg["seed"] = _int(cfg["seed"], "seed", minimum=0)
    return cfg


def _int(x, name, minimum=None):
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{name} must be an integer, got {x!r}")
    if minimum is not None and x < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {x}")
    return x


def _num(x, name):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{name} must be a finite number, got {x!r}")
    return float(x)


def _positive(x, name):
    x = _num(x, name)
    if x <= 0:
        raise ConfigError(f"{name} must be positive, got {x}")
    return x


def _array(x, name, ndim=None):
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not a numeric array: {exc}") from None
    if ndim is not None and a.ndim not in np.atleast_1d(ndim):
        raise ConfigError(f"{name} must have {ndim} dimension(s), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} has non-finite entries")
    return a


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def _write_report(out, report):
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2, allow_nan=False)
    (out / "report.json").write_text(text + "\n", encoding="utf-8")


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating, int, np.integer)):
        return "%.17g" % x
    return "" if x is None else str(x)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])


# isometry

SUITES = ("chentsov", "campbell", "lebanon", "joint", "invariant", "nonhomogeneous", "dual",
          "kakade")

ISOMETRY_DEFAULTS = {
    "suite": None,
    "trials": 100,
    "tol": 1e-9,
    "k": 2, "m": 3, "l": 4, "n": 5,
    "A": None, "B": None, "C": None,
    "identity": False,
    "domain": None,
    "blocks": None,
    "homogeneous": None,
    "rho": None,
    "violation_threshold": 1e-3,
}

_COEFFS = {
    "chentsov": {"C": 1.0},
    "campbell": {"A": 1.0, "C": 1.0},
    "lebanon": {"A": 1.0, "B": 1.0, "C": 1.0},
    "joint": {"B": 1.0, "C": 1.0},
    "invariant": {"A": 0.0, "B": 0.0, "C": 1.0},
    "nonhomogeneous": {"A": 0.0, "B": 0.0, "C": 1.0},
    "dual": {"B": 1.0, "C": 1.0},
    "kakade": {},
}


def resolve_isometry(raw):
    cfg = _resolve(raw, ISOMETRY_DEFAULTS, "isometry")
    suite = cfg["suite"]
    if suite not in SUITES:
        raise ConfigError(f"suite must be one of {SUITES}, got {suite!r}")
    cfg["trials"] = _int(cfg["trials"], "trials", 1)
    cfg["tol"] = _positive(cfg["tol"], "tol")
    cfg["violation_threshold"] = _positive(cfg["violation_threshold"], "violation_threshold")
    for key in "kmln":
        cfg[key] = _int(cfg[key], key, 1)
    for key, value in _COEFFS[suite].items():
        cfg[key] = value if cfg[key] is None else _num(cfg[key], key)
    if suite == "nonhomogeneous":
        if cfg["blocks"] is None:
            cfg["blocks"] = [[0], [1, 2]]
        cfg["k"] = len(cfg["blocks"])
        cfg["l"] = sum(len(b) for b in cfg["blocks"])
    if cfg["homogeneous"] is None:
        cfg["homogeneous"] = suite == "invariant"
    if cfg["domain"] is None:
        cfg["domain"] = {"chentsov": "simplex", "campbell": "cone", "lebanon": "cone",
                         "joint": "joint", "invariant": "conditional",
                         "nonhomogeneous": "conditional", "dual": "joint",
                         "kakade": "conditional"}[suite]
    k, m, l, n = cfg["k"], cfg["m"], cfg["l"], cfg["n"]
    if suite in ("chentsov", "campbell"):
        if m < 2 or n < m:
            raise ConfigError(f"need 2 <= m <= n, got m={m}, n={n}")
    elif min(m, n) < 2 or n < m or l < k:
        raise ConfigError(f"need 2 <= m <= n and k <= l, got k={k}, m={m}, l={l}, n={n}")
    if suite == "invariant" and cfg["homogeneous"] and l % k:
        raise ConfigError(f"a homogeneous embedding needs k | l, got k={k}, l={l}")
    if suite == "dual" and (m > l or k > n):
        raise ConfigError(f"dual maps need m <= l and k <= n, got k={k}, m={m}, l={l}, n={n}")
    try:
        _isometry_plan(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _isometry_plan(cfg):
    """``(sampler, metric, domain, expect_violation)`` for the configured suite."""
    suite = cfg["suite"]
    k, m, l, n = cfg["k"], cfg["m"], cfg["l"], cfg["n"]
    A, B, C = cfg["A"], cfg["B"], cfg["C"]
    if suite == "chentsov":
        if cfg["identity"]:
            fixed = F.MarkovMap(F.RowPartitionMatrix.identity(m))
            sampler = lambda rng: fixed
        else:
            sampler = lambda rng: F.sample_markov_map(m, n, rng)
        return sampler, S.Fisher(C), cfg["domain"], False
    if suite == "campbell":
        return lambda rng: F.sample_markov_map(m, n, rng), S.Campbell(A, C), cfg["domain"], False
    if suite == "lebanon":
        return (lambda rng: F.sample_lebanon_map(k, m, l, n, rng), MX.Lebanon(A, B, C),
                cfg["domain"], False)
    if suite == "joint":
        return (lambda rng: F.sample_lebanon_map(k, m, l, n, rng), MX.JointABC(B, C),
                cfg["domain"], False)
    if suite == "invariant":
        homogeneous = cfg["homogeneous"]
        return (lambda rng: F.sample_conditional_embedding(k, m, l, n, homogeneous, rng),
                MX.Invariant(A, B, C), cfg["domain"], False)
    if suite == "nonhomogeneous":
        Rbar = F.PartitionIndicatorMatrix.from_blocks(cfg["blocks"], l)
        sampler = lambda rng: F.ConditionalEmbedding(
            Rbar, [F.sample_row_partition(m, n, rng) for _ in range(k)])
        return sampler, MX.Invariant(A, B, C), cfg["domain"], True
    if suite == "dual":
        return (lambda rng: F.sample_dual_lebanon_map(k, m, n, l, rng), MX.JointABC(B, C),
                cfg["domain"], B != 0)
    if suite == "kakade":
        homogeneous = cfg["homogeneous"]
        if cfg["rho"] is not None:
            rho = V.probability_vector(_array(cfg["rho"], "rho", 1), "rho", min_len=1)
            if rho.size != k:
                raise ValueError(f"rho has {rho.size} entries, expected k={k}")
        return (lambda rng: F.sample_conditional_embedding(k, m, l, n, homogeneous, rng),
                None, cfg["domain"], False)
    raise ConfigError(f"unknown suite {suite!r}")


def cmd_isometry(cfg):
    sampler, spec, domain, expect_violation = _isometry_plan(cfg)
    if cfg["suite"] == "kakade":
        report = F.check_covariance(sampler, cfg["rho"], trials=cfg["trials"], seed=cfg["seed"],
                                    tol=cfg["tol"])
    else:
        report = F.check_isometry(sampler, spec, trials=cfg["trials"], seed=cfg["seed"],
                                  tol=cfg["tol"], domain=domain)
    if expect_violation:
        ok = (not report.passed) and report.max_rel_err >= cfg["violation_threshold"]
    else:
        ok = report.passed
    check = report.to_dict()
    check.update({"name": cfg["suite"], "expected": "violation" if expect_violation else "pass",
                  "outcome_as_expected": ok})
    return {"command": "isometry", "config": cfg, "checks": [check], "ok": ok}, None


# posdef

POSDEF_DEFAULTS = {
    "A": [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
    "B": [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
    "C": [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
    "samples": 20,
    "shapes": [[1, 2], [1, 3], [2, 2], [2, 3], [3, 2], [3, 3]],
    "boundary_eps": 1e-6,
}


def resolve_posdef(raw):
    cfg = _resolve(raw, POSDEF_DEFAULTS, "posdef")
    for key in "ABC":
        values = _array(cfg[key], key, 1)
        if values.size == 0:
            raise ConfigError(f"{key} grid is empty")
        cfg[key] = values.tolist()
    cfg["samples"] = _int(cfg["samples"], "samples", 1)
    cfg["boundary_eps"] = _num(cfg["boundary_eps"], "boundary_eps")
    shapes = cfg["shapes"]
    if not shapes or any(len(s) != 2 or s[0] < 1 or s[1] < 2 for s in shapes):
        raise ConfigError("shapes must be a non-empty list of [k, m] with k >= 1, m >= 2")
    cfg["shapes"] = [[_int(k, "k", 1), _int(m, "m", 2)] for k, m in shapes]
    return cfg


def posdef_grid(cfg):
    """Rows ``(A, B, C, analytic, numeric, agree, boundary)`` over the coefficient grid.

    The numeric verdict requires a positive definite Gram matrix at every
    sampled basepoint of every shape; basepoints are joint distributions.
    """
    rng = np.random.default_rng(cfg["seed"])
    points = [(k, m, MX.sample_joint_matrix(k, m, rng))
              for k, m in cfg["shapes"] for _ in range(cfg["samples"])]
    rows = []
    for A in cfg["A"]:
        for B in cfg["B"]:
            for C in cfg["C"]:
                analytic = all(MX.is_positive_definite_analytic(A, B, C, k)
                               for k, _ in cfg["shapes"])
                spec = MX.Lebanon(A, B, C)
                numeric = all(MX.is_positive_definite_numeric(MX.gram_matrix(spec, M))
                              for _, _, M in points)
                boundary = MX.positive_definite_margin(A, B, C) <= cfg["boundary_eps"]
                rows.append((A, B, C, analytic, numeric, analytic == numeric, boundary))
    return rows


def cmd_posdef(cfg):
    rows = posdef_grid(cfg)
    off = [r for r in rows if not r[6]]
    disagreements = [list(r[:3]) for r in off if not r[5]]
    report = {
        "command": "posdef",
        "config": cfg,
        "grid_points": len(rows),
        "boundary_points": len(rows) - len(off),
        "off_boundary_disagreements": len(disagreements),
        "disagreement_coefficients": disagreements,
        "positive_definite_points": sum(1 for r in off if r[3] and r[4]),
        "ok": not disagreements,
    }
    header = ["A", "B", "C", "analytic", "numeric", "agree", "boundary"]
    return report, ("grid.csv", header, rows)


# flow

FLOW_DEFAULTS = {
    "F": None,
    "p": None,
    "rho": None,
    "x0": None,
    "dt": 1e-3,
    "T": 5.0,
    "tol": 1e-6,
    "renormalize": True,
    "rate": True,
    "rate_horizon": 20.0,
    "rate_steps": 4000,
}


def _fitness(cfg):
    if cfg["F"] is None:
        raise ConfigError("config must set 'F'")
    values = _array(cfg["F"], "F", (1, 2))
    try:
        spec = D.FitnessSpec(values, None if cfg["p"] is None else _array(cfg["p"], "p", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec, values.ndim == 1


def resolve_flow(raw):
    cfg = _resolve(raw, FLOW_DEFAULTS, "flow")
    spec, simplex = _fitness(cfg)
    k, m = spec.shape
    cfg["p"] = spec.p.tolist()
    cfg["rho"] = cfg["p"] if cfg["rho"] is None else _array(cfg["rho"], "rho", 1).tolist()
    if len(cfg["rho"]) != k:
        raise ConfigError(f"rho has {len(cfg['rho'])} entries, F has {k} rows")
    if cfg["x0"] is None:
        x0 = np.full((k, m), 1.0 / m)
        cfg["x0"] = (x0[0] if simplex else x0).tolist()
    x0 = _array(cfg["x0"], "x0", 1 if simplex else 2)
    try:
        D.closed_form_matrix(x0.reshape(k, m), spec, cfg["rho"], 0.0)
    except ValueError as exc:
        raise ConfigError(f"x0: {exc}") from None
    cfg["dt"] = _positive(cfg["dt"], "dt")
    cfg["T"] = _num(cfg["T"], "T")
    if cfg["T"] < 0:
        raise ConfigError("T must be non-negative")
    steps = round(cfg["T"] / cfg["dt"])
    if abs(steps * cfg["dt"] - cfg["T"]) > 1e-9 * max(1.0, cfg["T"]):
        raise ConfigError(f"T={cfg['T']} is not a multiple of dt={cfg['dt']}")
    cfg["tol"] = _positive(cfg["tol"], "tol")
    cfg["rate_horizon"] = _positive(cfg["rate_horizon"], "rate_horizon")
    cfg["rate_steps"] = _int(cfg["rate_steps"], "rate_steps", 10)
    for key in ("renormalize", "rate"):
        if not isinstance(cfg[key], bool):
            raise ConfigError(f"{key} must be true or false")
    return cfg


def _closed_form(x0, spec, rho, t, simplex):
    if simplex:
        return D.closed_form_simplex(x0, spec, t)
    return D.closed_form_matrix(x0, spec, rho, t)


def cmd_flow(cfg):
    spec, simplex = _fitness(cfg)
    x0 = np.asarray(cfg["x0"], dtype=float)
    rho = np.asarray(cfg["rho"])
    field_fn = D.replicator_field(spec, None if simplex else rho)
    boundary = None
    try:
        traj = D.integrate(field_fn, x0, cfg["dt"], cfg["T"], cfg["renormalize"])
    except D.BoundaryReached as exc:
        traj, boundary = exc.trajectory, str(exc)
    sup_gap = float(np.max(np.abs(traj.states - _closed_form(x0, spec, rho, traj.times,
                                                             simplex))))
    report = {
        "command": "flow",
        "config": cfg,
        "samples": len(traj.times),
        "sup_gap": sup_gap,
        "boundary_reached": boundary,
        "final_mean_fitness": spec.mean(traj.states[-1]),
        "limit_mean_fitness": spec.mean(D.limit_points(x0, spec, "+inf")),
    }
    if cfg["rate"]:
        report["rate"] = _rate_entry(spec, None if simplex else rho, x0, cfg)
    report["ok"] = boundary is None and sup_gap <= cfg["tol"]
    k, m = spec.shape
    names = [f"x_{j}" for j in range(m)] if simplex else [
        f"x_{i}_{j}" for i in range(k) for j in range(m)]
    return report, ("trajectory.csv", ["t"] + names, traj.rows().tolist())


def _rate_entry(spec, rho, x0, cfg):
    try:
        analytic = D.asymptotic_rate(spec, rho)
    except ValueError as exc:
        return {"analytic": None, "measured": None, "relative_gap": None, "note": str(exc)}
    try:
        _, measured = D.measure_rate(spec, rho, x0, cfg["rate_horizon"], cfg["rate_steps"])
    except (ValueError, D.BoundaryReached) as exc:
        return {"analytic": analytic, "measured": None, "relative_gap": None, "note": str(exc)}
    return {"analytic": analytic, "measured": measured,
            "relative_gap": abs(measured - analytic) / analytic, "note": None}


# rates

RATES_DEFAULTS = {
    "F": None,
    "p": None,
    "rhos": ["uniform", "p", "random", "random", "random"],
    "measure": True,
    "tol": 0.05,
    "rate_horizon": 20.0,
    "rate_steps": 4000,
}


def resolve_rates(raw):
    cfg = _resolve(raw, RATES_DEFAULTS, "rates")
    spec, _ = _fitness(cfg)
    cfg["F"] = spec.values.tolist()
    cfg["p"] = spec.p.tolist()
    labels = [r for r in cfg["rhos"] if isinstance(r, str)]
    if "uniform" not in labels or "p" not in labels:
        raise ConfigError("rhos must include 'uniform' and 'p'")
    for r in cfg["rhos"]:
        if isinstance(r, str):
            if r not in ("uniform", "p", "random"):
                raise ConfigError(f"unknown rho label {r!r}")
        else:
            rho = _array(r, "rho", 1)
            if rho.size != spec.shape[0]:
                raise ConfigError(f"rho {r} has {rho.size} entries, F has {spec.shape[0]} rows")
    try:
        D.asymptotic_rate(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not isinstance(cfg["measure"], bool):
        raise ConfigError("measure must be true or false")
    cfg["tol"] = _positive(cfg["tol"], "tol")
    cfg["rate_horizon"] = _positive(cfg["rate_horizon"], "rate_horizon")
    cfg["rate_steps"] = _int(cfg["rate_steps"], "rate_steps", 10)
    return cfg


def rate_candidates(cfg, spec):
    rng = np.random.default_rng(cfg["seed"])
    k = spec.shape[0]
    out = []
    for r in cfg["rhos"]:
        if r == "uniform":
            out.append(("uniform", np.full(k, 1.0 / k)))
        elif r == "p":
            out.append(("p", spec.p.copy()))
        elif r == "random":
            out.append(("random", S._floored_dirichlet(rng, k, 1e-3) if k > 1 else np.ones(1)))
        else:
            rho = np.asarray(r, dtype=float)
            out.append(("given", rho / rho.sum()))
    return out


def cmd_rates(cfg):
    spec, _ = _fitness(cfg)
    k = spec.shape[0]
    rows = []
    entries = []
    for label, rho in rate_candidates(cfg, spec):
        analytic = D.asymptotic_rate(spec, rho)
        measured = gap = None
        if cfg["measure"]:
            try:
                _, measured = D.measure_rate(spec, rho, None, cfg["rate_horizon"],
                                             cfg["rate_steps"])
                gap = abs(measured - analytic) / analytic
            except (ValueError, D.BoundaryReached):
                pass
        entries.append({"label": label, "rho": rho.tolist(), "analytic": analytic,
                        "measured": measured, "relative_gap": gap,
                        "within_tol": gap is not None and gap <= cfg["tol"]})
    best = max(e["analytic"] for e in entries)
    for e in entries:
        e["optimal"] = e["analytic"] >= best * (1 - 1e-12)
        rows.append([e["label"]] + e["rho"] + [e["analytic"], e["measured"],
                                               e["relative_gap"], e["optimal"]])
    gaps = [e["relative_gap"] for e in entries if e["relative_gap"] is not None]
    report = {
        "command": "rates",
        "config": cfg,
        "candidates": entries,
        "optimal_labels": [e["label"] for e in entries if e["optimal"]],
        "max_relative_gap": max(gaps) if gaps else None,
        "ok": True,
    }
    header = (["rho_label"] + [f"rho_{i}" for i in range(k)]
              + ["analytic_rate", "measured_rate", "relative_gap", "optimal"])
    return report, ("rates.csv", header, rows)


# embed

EMBED_DEFAULTS = {
    "builtin": None,
    "points": None,
    "weights": None,
    "n": 3,
    "sizes": [2, 2],
    "k": 2,
    "m": 3,
    "rho": None,
    "samples": 100,
    "tol": 1e-10,
    "metric_tol": 1e-8,
    "psi_tol": 1e-12,
    "diagram_samples": 10,
}


def resolve_embed(raw):
    cfg = _resolve(raw, EMBED_DEFAULTS, "embed")
    if (cfg["builtin"] is None) == (cfg["points"] is None):
        raise ConfigError("set exactly one of 'builtin' and 'points'")
    if cfg["builtin"] is not None and cfg["builtin"] not in E.BUILTINS:
        raise ConfigError(f"builtin must be one of {E.BUILTINS}, got {cfg['builtin']!r}")
    cfg["n"] = _int(cfg["n"], "n", 2)
    cfg["k"] = _int(cfg["k"], "k", 1)
    cfg["m"] = _int(cfg["m"], "m", 2)
    cfg["sizes"] = [_int(s, "sizes", 2) for s in cfg["sizes"]]
    cfg["samples"] = _int(cfg["samples"], "samples", 1)
    cfg["diagram_samples"] = _int(cfg["diagram_samples"], "diagram_samples", 1)
    for key in ("tol", "metric_tol", "psi_tol"):
        cfg[key] = _positive(cfg[key], key)
    try:
        _configuration(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["rho"] is not None:
        rho = _array(cfg["rho"], "rho", 1)
        if rho.size != cfg["k"]:
            raise ConfigError(f"rho has {rho.size} entries, expected k={cfg['k']}")
    return cfg


def _configuration(cfg):
    if cfg["points"] is not None:
        points = _array(cfg["points"], "points", 2).T
        weights = None if cfg["weights"] is None else _array(cfg["weights"], "weights", 1)
        return E.WeightedPointConfiguration(points, weights)
    return E.builtin_configuration(cfg["builtin"], n=cfg["n"], sizes=cfg["sizes"],
                                   k=cfg["k"], m=cfg["m"])


def _factor_sizes(cfg):
    """Variable sizes when the configuration is an independence model, else None."""
    name = cfg["builtin"]
    if name == "independence":
        return cfg["sizes"]
    if name == "conditional-polytope":
        return [cfg["m"]] * cfg["k"]
    if name == "simplex":
        return [cfg["n"]]
    return None


def reference_metric(cfg, q, u, v):
    """Closed-form polytope Fisher metric for builtins (sum of factor Fisher metrics)."""
    if cfg["builtin"] == "square":
        return float(np.sum(u * v / (q * (1 - q))))
    sizes = _factor_sizes(cfg)
    if sizes is None:
        return None
    bounds = np.cumsum([0] + sizes)
    return sum(S.fisher_metric(q[a:b], u[a:b], v[a:b]) for a, b in zip(bounds, bounds[1:]))


def _first_factor_morphism(cfg, config):
    """Morphism onto the first factor of a product configuration, or None."""
    if cfg["builtin"] == "square":
        target = E.WeightedPointConfiguration(np.array([[0.0, 1.0]]))
        sigma = config.points[0].astype(int)
        return target, E.make_morphism(config, target, [[1.0, 0.0]], [0.0], sigma)
    sizes = _factor_sizes(cfg)
    if sizes is None or len(sizes) < 2:
        return None
    s = sizes[0]
    target = E.simplex_configuration(s)
    matrix = np.hstack([np.eye(s), np.zeros((s, config.d - s))])
    sigma = np.argmax(config.points[:s], axis=0)
    return target, E.make_morphism(config, target, matrix, np.zeros(s), sigma)


def cmd_embed(cfg):
    config = _configuration(cfg)
    seed = cfg["seed"]
    roundtrip = 0.0
    metric = 0.0 if cfg["builtin"] is not None else None
    for t in range(cfg["samples"]):
        rng = np.random.default_rng(seed + t)
        q = E.sample_interior_point(config, rng)
        _, p = E.inverse_moment_map(config, q)
        roundtrip = max(roundtrip, float(np.linalg.norm(E.moment_map(config, p) - q)))
        if metric is not None:
            u, v = E.sample_direction(config, rng), E.sample_direction(config, rng)
            ref = reference_metric(cfg, q, u, v)
            metric = max(metric, V.rel_err(E.polytope_fisher_metric(config, q, u, v, p), ref))

    diagrams = {"identity": E.verify_commuting_diagram(
        config, config, E.identity_morphism(config), cfg["diagram_samples"], cfg["metric_tol"],
        seed)}
    factor = _first_factor_morphism(cfg, config)
    if factor is not None:
        target, morphism = factor
        diagrams["first_factor"] = E.verify_commuting_diagram(
            config, target, morphism, cfg["diagram_samples"], cfg["metric_tol"], seed)

    k, m = cfg["k"], cfg["m"]
    psi = 0.0
    for t in range(cfg["samples"]):
        rng = np.random.default_rng(seed + t)
        rho = (np.asarray(cfg["rho"], dtype=float) if cfg["rho"] is not None
               else S._floored_dirichlet(rng, k, 1e-3) if k > 1 else np.ones(1))
        K = MX.sample_stochastic_matrix(k, m, rng)
        u = MX.sample_matrix_tangent(k, m, "conditional", rng)
        v = MX.sample_matrix_tangent(k, m, "conditional", rng)
        psi = max(psi, V.rel_err(E.psi_rho_pullback(K, rho, u, v),
                                   MX.weighted_product_metric(K, u, v, rho)))

    checks = {
        "roundtrip": {"max_residual": roundtrip, "tol": cfg["tol"],
                      "passed": roundtrip <= cfg["tol"]},
        "metric": {"max_rel_err": metric, "tol": cfg["metric_tol"],
                   "passed": metric is None or metric <= cfg["metric_tol"]},
        "diagrams": diagrams,
        "psi_rho": {"max_rel_err": psi, "tol": cfg["psi_tol"], "passed": psi <= cfg["psi_tol"]},
    }
    ok = (checks["roundtrip"]["passed"] and checks["metric"]["passed"]
          and checks["psi_rho"]["passed"] and all(d["passed"] for d in diagrams.values()))
    return {"command": "embed", "config": cfg, "checks": checks, "ok": ok}, None


COMMANDS = {
    "isometry": (resolve_isometry, cmd_isometry),
    "posdef": (resolve_posdef, cmd_posdef),
    "flow": (resolve_flow, cmd_flow),
    "rates": (resolve_rates, cmd_rates),
    "embed": (resolve_embed, cmd_embed),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="condpoly", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--tol", type=float, help="override the config tolerance")
    return parser


# --tol targets the command's main tolerance
TOL_KEYS = {"posdef": "boundary_eps"}


def load_config(args):
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.tol is not None:
        raw[TOL_KEYS.get(args.command, "tol")] = args.tol
    return raw


def run(argv=None):
    """Parse arguments, run one command and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    resolve, command = COMMANDS[args.command]
    try:
        raw = load_config(args)
        cfg = resolve(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report, table = command(cfg)
    _write_report(out, report)
    if table is not None:
        name, header, rows = table
        _write_csv(out / name, header, rows)
    print(f"{args.command}: {'ok' if report['ok'] else 'UNEXPECTED'} "
          f"({time.perf_counter() - start:.2f}s)", file=sys.stderr)
    return EXIT_OK if report["ok"] else EXIT_UNEXPECTED


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
