"""
Experiment Batches
Seeded trial fan-out and the per-command experiments. Each run_* function
returns a dict with a `trials` DataFrame, extra `tables`, an optional `plot`
and a `summary` dict whose `passed` flag decides the exit code.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

import config
from core import (
    PreconditionError,
    check_dimension,
    coordinate_complex_subspace,
    omega_power_alternating,
    omega_power_eval,
    wirtinger_check,
)
from dist import (
    constant_plane_membership,
    frobenius_residual,
    frontier_diagnostic,
    generating_shear_fields,
    lie_bracket,
    map_gradient_fields,
    membership_W,
    rigid_case_check,
)
from linear import (
    complex_span,
    linear_nonsqueezing_verify,
    projected_ball_volume,
    random_complex_subspace,
    random_symplectic,
    random_unitary_symplectic,
    unit_ball_volume,
)
from maps import (
    LinearMap,
    bump_profile,
    disjointness_bounds_verify,
    first_crossing,
    gaussian_rho,
    generating_shear,
    guth_shear,
    hamiltonian_flow,
    identity,
    map_from_name,
    middle_jacobian,
    rho_jacobian_closed_form,
    rho_taylor,
    rho_twist,
    symplectic_residual,
)
from volume import calibrate, estimate_projected_volume, scaling_consistency

logger = logging.getLogger(__name__)

WITNESS_LIMIT = 10
CALIBRATION_MAPS = 20


def derive_seeds(seed, count):
    """Independent per-trial integer seeds spawned from one root seed."""
    if count <= 0:
        return []
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)]


def run_trials(trial_fn, seeds, workers=None):
    """
    Runs trial_fn(index, seed) for every seed, in order.

    Failed trials are logged and kept as rows carrying an `error` field.
    """
    workers = workers or config.worker_count()

    def guarded(item):
        index, seed = item
        try:
            return trial_fn(index, seed)
        except Exception as exc:
            logger.error(f"❌ Trial {index} (seed {seed}) failed: {exc}")
            return {"trial": index, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, enumerate(seeds)))


def _frame(rows, columns):
    if not rows:
        return pd.DataFrame(columns=columns)
    frame = pd.DataFrame(rows)
    ordered = [c for c in columns if c in frame.columns]
    return frame[ordered + [c for c in frame.columns if c not in ordered]]


def _error_count(rows):
    return sum(1 for row in rows if "error" in row)


def _check_k(dim, k):
    n = check_dimension(dim)
    if dim < 4:
        raise PreconditionError("experiments run in dimension 4 or more")
    if not 1 <= k <= n:
        raise PreconditionError(f"k must lie in [1, {n}] for dim {dim}, got {k}")


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

LINEAR_COLUMNS = ["trial", "seed", "volume_ratio", "pullback_complexity_residual", "equality_flag",
                  "inequality_holds", "iff_consistent", "chain_holds", "passed"]


def linear_trial(dim, k, scale, tol, unitary):
    def trial(index, seed):
        phi_seed, plane_seed = np.random.SeedSequence(seed).spawn(2)
        if unitary:
            phi = random_unitary_symplectic(dim, seed=phi_seed)
        else:
            phi = random_symplectic(dim, scale=scale, seed=phi_seed)
        V = random_complex_subspace(dim, k, seed=plane_seed)
        report = linear_nonsqueezing_verify(phi, V, tol=tol)
        row = {"trial": index, "seed": seed}
        row.update(report.to_dict())
        row["passed"] = report.passed
        if unitary:
            row["passed"] = report.passed and report.equality_flag
        return row

    return trial


def run_linear(cfg):
    """Batches of the linear nonsqueezing check for random (Phi, V) pairs."""
    _check_k(cfg.dim, cfg.k)
    seeds = derive_seeds(cfg.seed, cfg.trials)
    rows = run_trials(linear_trial(cfg.dim, cfg.k, cfg.scale, cfg.tol, cfg.unitary), seeds)
    good = [r for r in rows if "error" not in r]
    failures = [r for r in good if not r["passed"]]
    ratios = [r["volume_ratio"] for r in good]
    strict = [r["volume_ratio"] for r in good if r["pullback_complexity_residual"] > 0.1]
    summary = {
        "command": "linear",
        "dim": cfg.dim,
        "k": cfg.k,
        "unitary": cfg.unitary,
        "trials": len(rows),
        "violations": len(failures),
        "errors": _error_count(rows),
        "witness_seeds": [r["seed"] for r in failures[:WITNESS_LIMIT]],
        "min_ratio": min(ratios) if ratios else None,
        "max_ratio": max(ratios) if ratios else None,
        "equality_cases": sum(1 for r in good if r["equality_flag"]),
        "min_ratio_noncomplex_pullback": min(strict) if strict else None,
        "passed": not failures,
    }
    return {"trials": _frame(rows, LINEAR_COLUMNS), "tables": {}, "summary": summary}


# ---------------------------------------------------------------------------
# wirtinger
# ---------------------------------------------------------------------------

WIRTINGER_COLUMNS = ["trial", "seed", "kind", "lhs", "rhs", "gap", "span_complexity_residual",
                     "oracle_gap", "passed"]
WIRTINGER_SLACK = 1e-10
ORACLE_TOL = 1e-12


def wirtinger_trial(dim, k):
    def trial(index, seed):
        rng = np.random.default_rng(seed)
        random_tuple = rng.standard_normal((2 * k, dim))
        random_tuple /= np.linalg.norm(random_tuple, axis=1, keepdims=True)
        V = complex_span(rng.standard_normal((k, dim)))
        mixed = (V.basis @ rng.standard_normal((2 * k, 2 * k))).T
        mixed /= np.linalg.norm(mixed, axis=1, keepdims=True)

        rows = []
        for kind, vectors in (("random", random_tuple), ("complex", mixed)):
            check = wirtinger_check(vectors)
            slack = WIRTINGER_SLACK * max(check["rhs"], 1e-300)
            passed = check["gap"] >= -slack
            if kind == "complex" or check["span_complexity_residual"] <= WIRTINGER_SLACK:
                passed = passed and check["gap"] <= slack
            oracle_gap = None
            if 2 * k <= 6:
                oracle_gap = abs(omega_power_eval(vectors) - omega_power_alternating(vectors))
                passed = passed and oracle_gap <= ORACLE_TOL
            rows.append({
                "trial": index,
                "seed": seed,
                "kind": kind,
                "lhs": check["lhs"],
                "rhs": check["rhs"],
                "gap": check["gap"],
                "span_complexity_residual": check["span_complexity_residual"],
                "oracle_gap": oracle_gap,
                "passed": passed,
            })
        return rows

    return trial


def run_wirtinger(cfg):
    """Random and complex-span tuples against |Omega^k| <= k! |wedge|."""
    _check_k(cfg.dim, cfg.k)
    seeds = derive_seeds(cfg.seed, cfg.trials)
    results = run_trials(wirtinger_trial(cfg.dim, cfg.k), seeds)
    rows = []
    for result in results:
        rows.extend(result if isinstance(result, list) else [result])
    good = [r for r in rows if "error" not in r]
    failures = [r for r in good if not r["passed"]]
    summary = {
        "command": "wirtinger",
        "dim": cfg.dim,
        "k": cfg.k,
        "tuples": len(good),
        "violations": len(failures),
        "errors": _error_count(rows),
        "witness_seeds": sorted({r["seed"] for r in failures})[:WITNESS_LIMIT],
        "min_relative_gap": min((r["gap"] / r["rhs"] for r in good if r["rhs"] > 0), default=None),
        "max_complex_gap": max((abs(r["gap"]) for r in good if r["kind"] == "complex"), default=None),
        "passed": not failures,
    }
    return {"trials": _frame(rows, WIRTINGER_COLUMNS), "tables": {}, "summary": summary}


# ---------------------------------------------------------------------------
# squeeze
# ---------------------------------------------------------------------------

CHECK_COLUMNS = ["check", "value", "threshold", "passed"]


def _check(name, value, threshold, passed):
    return {"check": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def run_squeeze(cfg):
    """Bump profile, shear, disjointness bounds, flow and scaling checks."""
    R, eps = cfg.radius, cfg.eps
    profile = bump_profile(R, eps, cfg.shoulder)
    shear = guth_shear(profile)
    rng = np.random.default_rng(cfg.seed)
    rows = []

    grid = np.linspace(-3.0 * R, 3.0 * R, 100_001)
    chi, chi_p, _ = profile.evaluate(grid)
    outside = np.abs(grid) >= 2.0 * R - eps
    plateau = np.abs(grid) <= eps
    rows.append(_check("chi_outside_support", float(np.abs(chi[outside]).max()), 1e-14,
                       np.abs(chi[outside]).max() <= 1e-14))
    rows.append(_check("chi_plateau_defect", float(np.abs(chi[plateau] - 2.0 * R).max()), 0.0,
                       np.all(chi[plateau] == 2.0 * R)))
    rows.append(_check("sup_chi_prime_grid", float(np.abs(chi_p).max()), 1.5, np.abs(chi_p).max() <= 1.5))
    left_ramp = (grid >= -2.0 * R) & (grid <= 0.0)
    ramp_integral = float(trapezoid(chi_p[left_ramp], grid[left_ramp]))
    rows.append(_check("left_ramp_integral_error", abs(ramp_integral - 2.0 * R), 1e-6,
                       abs(ramp_integral - 2.0 * R) <= 1e-6))

    points = rng.uniform(-2.0 * R, 2.0 * R, size=(max(cfg.trials, 1) * 10, 4))
    residual = float(symplectic_residual(shear, points).max())
    rows.append(_check("symplectic_residual_max", residual, 1e-9, residual <= 1e-9))

    away = points.copy()
    away[:, 2] = np.where(away[:, 2] >= 0, 1.0, -1.0) * rng.uniform(2.0 * R - eps, 3.0 * R, len(away))
    drift = float(np.abs(shear(away) - away).max())
    rows.append(_check("identity_region_drift", drift, 0.0, drift == 0.0))

    bounds = disjointness_bounds_verify(profile, samples=cfg.samples // 10, seed=cfg.seed)
    rows.append(_check("disjointness_margin_a", bounds["worst_margin_a"], 0.0, bounds["worst_margin_a"] > 0))
    rows.append(_check("disjointness_margin_b", bounds["worst_margin_b"], 0.0,
                       bounds["worst_margin_b"] is None or bounds["worst_margin_b"] >= 0))

    starts = rng.uniform(-2.0 * R, 2.0 * R, size=(100, 4))
    flow_gap = float(np.abs(hamiltonian_flow(profile, starts) - shear(starts)).max())
    rows.append(_check("hamiltonian_flow_gap", flow_gap, 1e-5, flow_gap <= 1e-5))

    plane = coordinate_complex_subspace(4, 1)
    scaling_rows = []
    for scale_radius in (1.0, 2.0):
        report = scaling_consistency(shear, scale_radius, plane, cfg.cells, cfg.samples, cfg.seed)
        scaling_rows.append(report)
        rows.append(_check(f"scaling_gap_R{scale_radius:g}", report["relative_gap"], 0.05, report["passed"]))

    failures = [r for r in rows if not r["passed"]]
    summary = {
        "command": "squeeze",
        "radius": R,
        "eps": eps,
        "shoulder": profile.shoulder,
        "sup_chi_prime": profile.sup_chi_prime,
        "disjointness": {k: v for k, v in bounds.items() if k != "passed"},
        "failed_checks": [r["check"] for r in failures],
        "passed": not failures,
    }
    return {
        "trials": _frame(rows, CHECK_COLUMNS),
        "tables": {"scaling": _frame(scaling_rows, ["radius", "rescaled_unit", "direct_scaled", "relative_gap"])},
        "summary": summary,
    }


# ---------------------------------------------------------------------------
# rho
# ---------------------------------------------------------------------------

RHO_COLUMNS = ["r", "closed_form", "singular_values", "taylor", "agreement"]


def run_rho(cfg):
    """2-Jacobian formula, the J >= 1 region and the projected-area bound."""
    spec = gaussian_rho()
    twist = rho_twist(spec)
    rng = np.random.default_rng(cfg.seed)

    rows = []
    for r in np.linspace(0.0, 2.0, 100):
        theta, t = rng.uniform(0.0, 2.0 * np.pi), rng.uniform(-1.0, 1.0)
        x = np.array([r * np.cos(theta), r * np.sin(theta), t])
        closed = float(rho_jacobian_closed_form(spec, r))
        numeric = middle_jacobian(twist, x)
        rows.append({
            "r": float(r),
            "closed_form": closed,
            "singular_values": numeric,
            "taylor": float(rho_taylor(spec, r)),
            "agreement": abs(closed - numeric),
        })
    worst_agreement = max(row["agreement"] for row in rows)

    dense = np.linspace(0.0, 0.5, 5001)
    min_small = float(rho_jacobian_closed_form(spec, dense).min())
    crossing = first_crossing(spec)

    R = cfg.radius
    inputs = rng.standard_normal((1000, 3))
    inputs[:, :2] *= (R * np.sqrt(rng.random(1000)) / np.linalg.norm(inputs[:, :2], axis=1))[:, None]
    inputs[:, 2] *= 10.0
    moduli = np.linalg.norm(twist(inputs), axis=1)
    radii = np.linalg.norm(inputs[:, :2], axis=1)
    modulus_gap = float(np.abs(moduli - spec.rho(radii) * radii).max())
    containment = float(moduli.max() - spec.rho(R) * R)

    plane = coordinate_complex_subspace(2, 1)
    estimate = estimate_projected_volume(twist, 1.0, plane, cfg.cells, cfg.samples, cfg.seed)
    bound = math.pi * float(spec.rho(1.0)) ** 2

    checks = {
        "formula_agreement": worst_agreement <= 1e-8,
        "jacobian_at_least_one_small_r": min_small >= 1.0 - 1e-12,
        "modulus_identity": modulus_gap <= 1e-12,
        "disk_containment": containment <= 1e-12,
        "area_below_bound": estimate.value <= 1.03 * bound,
        "area_below_pi": estimate.value < math.pi,
    }
    summary = {
        "command": "rho",
        "rho": spec.label,
        "rho_second_at_zero": float(spec.rho_second(0.0)),
        "worst_formula_agreement": worst_agreement,
        "min_jacobian_r_le_half": min_small,
        "first_crossing": crossing,
        "modulus_gap": modulus_gap,
        "containment_excess": containment,
        "estimated_area": estimate.value,
        "area_lower": estimate.lower,
        "area_upper": estimate.upper,
        "area_bound": bound,
        "checks": checks,
        "passed": all(checks.values()),
    }
    frame = _frame(rows, RHO_COLUMNS)
    return {
        "trials": frame,
        "tables": {"rho_jacobian": frame[["r", "closed_form", "singular_values", "taylor"]]},
        "plot": {"name": "rho_jacobian", "frame": frame, "x": "r", "y": "closed_form",
                 "title": "2-Jacobian of the rho-twist", "reference": 1.0},
        "summary": summary,
    }


# ---------------------------------------------------------------------------
# frobenius
# ---------------------------------------------------------------------------

FROBENIUS_COLUMNS = ["point", "q1", "p1", "q2", "p2", "bracket_error_exact", "bracket_error_fd",
                     "antisymmetry", "residual", "residual_map_fields", "membership"]
BRACKET = np.array([0.0, 0.0, 0.0, -1.0])


def run_frobenius(cfg):
    """Brackets, residuals, membership and rigidity for the generating shear."""
    grad_Q1, grad_P1 = generating_shear_fields()
    shear = generating_shear()
    plane = coordinate_complex_subspace(4, 1)
    map_fields = map_gradient_fields(shear, plane)
    rng = np.random.default_rng(cfg.seed)
    points = rng.uniform(-1.0, 1.0, size=(max(cfg.trials, 1), 4))

    rows = []
    for i, x in enumerate(points):
        exact = lie_bracket(grad_Q1, grad_P1, x, mode="exact")
        fd = lie_bracket(grad_Q1, grad_P1, x, mode="fd")
        rows.append({
            "point": i,
            "q1": x[0], "p1": x[1], "q2": x[2], "p2": x[3],
            "bracket_error_exact": float(np.abs(exact - BRACKET).max()),
            "bracket_error_fd": float(np.abs(fd - BRACKET).max()),
            "antisymmetry": float(np.abs(exact + lie_bracket(grad_P1, grad_Q1, x, mode="exact")).max()),
            "residual": frobenius_residual([grad_Q1, grad_P1], x),
            "residual_map_fields": frobenius_residual(map_fields, x, mode="fd"),
            "membership": membership_W(shear, plane, x, plane)[1],
        })

    axis = np.linspace(-1.0, 1.0, 5)
    lattice = np.array(np.meshgrid(axis, axis, axis, axis, indexing="ij")).reshape(4, -1).T
    lattice_residuals = np.array([frobenius_residual([grad_Q1, grad_P1], x) for x in lattice])

    heat = np.linspace(-1.0, 1.0, 21)
    heatmap = [{"q1": q1, "p2": p2,
                "residual": frobenius_residual([grad_Q1, grad_P1], np.array([q1, 0.0, 0.0, p2]))}
               for q1 in heat for p2 in heat]

    membership = constant_plane_membership(shear, plane, points)
    rigid_shear = rigid_case_check(shear, plane, points[:50])
    unitary = LinearMap(random_unitary_symplectic(4, seed=cfg.seed))
    rigid_unitary = rigid_case_check(unitary, plane, points[:50])
    rigid_identity = rigid_case_check(identity(4), plane, points[:10])
    frontier = frontier_diagnostic(shear, plane, radius=0.5, samples=500, seed=cfg.seed)

    frame = _frame(rows, FROBENIUS_COLUMNS)
    checks = {
        "exact_bracket": bool((frame["bracket_error_exact"] == 0.0).all()) if rows else True,
        "fd_bracket": bool((frame["bracket_error_fd"] <= 1e-5).all()) if rows else True,
        "antisymmetry": bool((frame["antisymmetry"] <= 1e-10).all()) if rows else True,
        "residual_positive_sampled": bool((frame["residual"] > 0.0).all()) if rows else True,
        "residual_positive_lattice": bool((lattice_residuals > 0.0).all()),
        "constant_plane_membership": membership["passed"],
        "rigid_unitary_everywhere": rigid_unitary["passed"] and rigid_unitary["rigid_points"] == len(points[:50]),
        "rigid_identity_everywhere": rigid_identity["passed"] and rigid_identity["rigid_points"] == len(points[:10]),
        "rigid_shear": rigid_shear["passed"],
    }
    summary = {
        "command": "frobenius",
        "points": len(rows),
        "min_residual_lattice": float(lattice_residuals.min()),
        "min_constant_plane_membership": membership["minimum"],
        "rigid_points_shear": rigid_shear["rigid_points"],
        "frontier": frontier,
        "checks": checks,
        "passed": all(checks.values()),
    }
    return {
        "trials": frame,
        "tables": {"frobenius_heatmap": _frame(heatmap, ["q1", "p2", "residual"])},
        "summary": summary,
    }


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

ESTIMATE_COLUMNS = ["trial", "dim", "k", "exact", "estimate", "lower", "upper", "relative_error", "passed"]


def run_estimate(cfg):
    """A single projected-volume estimate, or the linear calibration set."""
    if cfg.calibrate:
        count = min(cfg.trials, CALIBRATION_MAPS)
        rows = calibrate(count=count, seed=cfg.seed, cells_per_axis=cfg.cells, samples=cfg.samples)
        failures = [r for r in rows if not r["passed"]]
        summary = {
            "command": "estimate",
            "mode": "calibrate",
            "maps": len(rows),
            "worst_relative_error": max((r["relative_error"] for r in rows), default=None),
            "failures": len(failures),
            "passed": not failures,
        }
        return {"trials": _frame(rows, ESTIMATE_COLUMNS), "tables": {}, "summary": summary}

    smooth_map = map_from_name(cfg.map, dim=cfg.dim, R=cfg.radius, eps=cfg.eps,
                               shoulder=cfg.shoulder, scale=cfg.scale, seed=cfg.seed)
    k = 1 if cfg.map == "rho" else cfg.k
    if 2 * k > smooth_map.codomain_dim:
        raise PreconditionError(f"k={k} does not fit the codomain R^{smooth_map.codomain_dim}")
    plane = coordinate_complex_subspace(smooth_map.codomain_dim, k)
    estimate = estimate_projected_volume(smooth_map, cfg.radius, plane, cfg.cells, cfg.samples, cfg.seed)

    exact = None
    if isinstance(smooth_map, LinearMap):
        exact = projected_ball_volume(plane.basis.T @ smooth_map.matrix, radius=cfg.radius)
    row = {"trial": 0, "dim": smooth_map.domain_dim, "k": k, "exact": exact}
    row.update(estimate.to_dict())
    row["estimate"] = row.pop("value")
    if exact is not None:
        row["relative_error"] = abs(estimate.value - exact) / exact
        passed = row["relative_error"] <= 0.03
    elif cfg.map == "rho":
        passed = estimate.value <= 1.03 * math.pi * float(gaussian_rho().rho(cfg.radius) * cfg.radius) ** 2
    else:
        passed = estimate.converged
        if not passed:
            logger.warning(f"⚠️ No oracle for {cfg.map} and the estimate did not converge")
    row["passed"] = passed
    summary = {
        "command": "estimate",
        "mode": "single",
        "map": cfg.map,
        "radius": cfg.radius,
        "k": k,
        "estimate": estimate.value,
        "lower": estimate.lower,
        "upper": estimate.upper,
        "converged": estimate.converged,
        "exact": exact,
        "ball_volume": unit_ball_volume(2 * k) * cfg.radius ** (2 * k),
        "passed": bool(passed),
    }
    return {"trials": _frame([row], ESTIMATE_COLUMNS), "tables": {}, "summary": summary}


EXPERIMENTS = {
    "linear": run_linear,
    "wirtinger": run_wirtinger,
    "squeeze": run_squeeze,
    "rho": run_rho,
    "frobenius": run_frobenius,
    "estimate": run_estimate,
}
