"""
Expanding Distributions
The maximal expanding plane field W_hat(x) = D phi(x)^T V, membership in the
multi-valued field of planes with |det D psi(x)|_W| >= 1, Lie brackets and
Frobenius residuals.
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Optional

import numpy as np

from core import (
    DegenerateError,
    DimensionError,
    NumericalFailure,
    PreconditionError,
    Subspace,
    complexity_residual,
    is_complex_subspace,
    subspace_distance,
    wedge_norm,
)
from maps import middle_jacobian, projected
from volume import sample_ball

logger = logging.getLogger(__name__)

BRACKET_STEP = 1e-5
RIGID_TOL = 1e-8
EQUALITY_ANGLE = 1e-6


@dataclass(frozen=True)
class DistributionSample:
    """W_hat(x) together with the 2k-Jacobian it realises."""

    x: np.ndarray
    W_hat: Subspace
    jacobian_on_W_hat: float
    complexity_residual: float


def _check_target(smooth_map, V):
    if V.ambient_dim != smooth_map.codomain_dim:
        raise DimensionError(f"V lives in R^{V.ambient_dim}, map lands in R^{smooth_map.codomain_dim}")
    complex_ok, residual = is_complex_subspace(V, tol=1e-8)
    if not complex_ok:
        raise PreconditionError(f"target plane is not complex (residual {residual:.3e})")


def maximal_distribution(smooth_map, V, x):
    """
    Evaluates the maximal expanding plane W_hat(x) = D phi(x)^T V.

    Args:
        smooth_map (SmoothMap): a symplectic map
        V (Subspace): complex target plane of dimension 2k
        x: base point

    Returns:
        DistributionSample
    """
    if not smooth_map.symplectic:
        raise PreconditionError(f"{smooth_map!r} is not symplectic")
    _check_target(smooth_map, V)
    x = np.asarray(x, dtype=float)
    D = smooth_map.jacobian(x)
    try:
        W_hat = Subspace.from_columns(D.T @ V.basis, expected_dim=V.dim)
    except DegenerateError as exc:
        raise NumericalFailure(f"D phi^T V collapsed at {x}; the Jacobian is not invertible") from exc
    jacobian = middle_jacobian(projected(smooth_map, V), x)
    return DistributionSample(
        x=x,
        W_hat=W_hat,
        jacobian_on_W_hat=jacobian,
        complexity_residual=complexity_residual(W_hat),
    )


def membership_value(smooth_map, V, x, W):
    """|det(B^T D phi(x)|_W)| through the wedge of the image vectors."""
    if W.dim != V.dim or W.ambient_dim != smooth_map.domain_dim:
        raise DimensionError(f"W must be a {V.dim}-plane of R^{smooth_map.domain_dim}")
    D = smooth_map.jacobian(np.asarray(x, dtype=float))
    return wedge_norm((V.basis.T @ D @ W.basis).T)


def membership_W(smooth_map, V, x, W, tol=1e-9):
    """
    Decides whether W belongs to the field of planes expanded by P phi at x.

    Returns:
        (bool, value) with value = |det D psi(x)|_W|
    """
    value = membership_value(smooth_map, V, x, W)
    return value >= 1.0 - tol, value


@dataclass(frozen=True)
class VectorField:
    """A vector field on R^d, optionally with its exact derivative."""

    field: Callable
    derivative: Optional[Callable] = None
    label: str = "X"

    def __call__(self, x):
        return np.asarray(self.field(np.asarray(x, dtype=float)), dtype=float)


def constant_field(vector, label="const"):
    vector = np.asarray(vector, dtype=float)
    return VectorField(lambda x: vector, lambda x: np.zeros((vector.size, vector.size)), label)


def generating_shear_fields():
    """
    Gradients of Q1 = q1 and P1 = p1 - p2 q1, with exact derivatives.

    Their bracket is the constant field -d/dp2.
    """
    grad_Q1 = constant_field([1.0, 0.0, 0.0, 0.0], label="grad Q1")

    def grad_P1(x):
        q1, _, _, p2 = x
        return np.array([-p2, 1.0, 0.0, -q1])

    def grad_P1_derivative(x):
        D = np.zeros((4, 4))
        D[0, 3] = -1.0
        D[3, 0] = -1.0
        return D

    return grad_Q1, VectorField(grad_P1, grad_P1_derivative, label="grad P1")


def map_gradient_fields(smooth_map, V):
    """
    The columns of D phi(x)^T B as vector fields, one per basis vector of V.

    They span W_hat(x); no exact derivative is attached.
    """
    fields = []
    for j in range(V.dim):
        column = V.basis[:, j]

        def field(x, column=column):
            return smooth_map.jacobian(x).T @ column

        fields.append(VectorField(field, None, label=f"D^T b{j + 1}"))
    return fields


def _directional_derivative(Y, x, direction):
    h = BRACKET_STEP * (1.0 + np.linalg.norm(x))
    return (Y(x + h * direction) - Y(x - h * direction)) / (2.0 * h)


def lie_bracket(X, Y, x, mode="exact"):
    """
    [X, Y](x) = DY(x) X(x) - DX(x) Y(x).

    Args:
        X, Y (VectorField): the fields
        x: base point
        mode (str): "exact" uses attached derivatives, "fd" central differences

    Returns:
        np.ndarray
    """
    x = np.asarray(x, dtype=float)
    if mode == "exact":
        if X.derivative is None or Y.derivative is None:
            raise PreconditionError(f"exact bracket needs derivatives of {X.label} and {Y.label}")
        return Y.derivative(x) @ X(x) - X.derivative(x) @ Y(x)
    if mode == "fd":
        return _directional_derivative(Y, x, X(x)) - _directional_derivative(X, x, Y(x))
    raise PreconditionError(f"unknown bracket mode {mode!r}")


def frobenius_residual(fields, x, mode="auto"):
    """
    Largest component of a pairwise bracket orthogonal to span{fields(x)}.

    Zero exactly when the fields are involutive at x. mode "auto" uses exact
    derivatives when every field has one.
    """
    x = np.asarray(x, dtype=float)
    if mode == "auto":
        mode = "exact" if all(f.derivative is not None for f in fields) else "fd"
    frame = np.column_stack([f(x) for f in fields])
    try:
        span = Subspace.from_columns(frame, expected_dim=len(fields))
    except DegenerateError as exc:
        raise PreconditionError(f"fields are dependent at {x}") from exc
    worst = 0.0
    for X, Y in combinations(fields, 2):
        bracket = lie_bracket(X, Y, x, mode=mode)
        outside = bracket - span.projector @ bracket
        worst = max(worst, float(np.linalg.norm(outside)))
    return worst


def rigid_case_check(smooth_map, V, points, tol=RIGID_TOL):
    """
    Where W_hat(x) is complex it must coincide with D phi(x)^{-1} V.

    Returns:
        dict with per-point rows, the rigid count and the pass flag
    """
    rows = []
    for i, x in enumerate(np.atleast_2d(np.asarray(points, dtype=float))):
        sample = maximal_distribution(smooth_map, V, x)
        rigid = sample.complexity_residual <= tol
        distance = None
        if rigid:
            D = smooth_map.jacobian(x)
            pulled = Subspace.from_columns(np.linalg.solve(D, V.basis), expected_dim=V.dim)
            distance = subspace_distance(sample.W_hat, pulled)
        rows.append({
            "point": i,
            "complexity_residual": sample.complexity_residual,
            "rigid": rigid,
            "distance": distance,
            "equal": (distance <= EQUALITY_ANGLE) if rigid else None,
        })
    rigid_rows = [r for r in rows if r["rigid"]]
    passed = all(r["equal"] for r in rigid_rows)
    if not passed:
        mismatched = sum(not r["equal"] for r in rigid_rows)
        logger.warning(f"⚠️ Rigid case check failed at {mismatched} of {len(rigid_rows)} rigid points")
    return {"rows": rows, "rigid_points": len(rigid_rows), "passed": passed}


def constant_plane_membership(smooth_map, V, points, plane=None, tol=1e-9):
    """
    Membership of a fixed plane (V itself by default) at each point.

    Returns:
        dict with the per-point values, their minimum and the pass flag
    """
    plane = V if plane is None else plane
    values = [membership_W(smooth_map, V, x, plane, tol)[1]
              for x in np.atleast_2d(np.asarray(points, dtype=float))]
    minimum = min(values) if values else float("nan")
    return {"values": values, "minimum": minimum, "passed": all(v >= 1.0 - tol for v in values)}


def frontier_diagnostic(smooth_map, V, radius=0.5, samples=1000, seed=0):
    """
    J_{2k} of P phi at the origin against its values on a small ball.

    Describes the local picture where the Jacobian touches 1 at the centre
    and exceeds it nearby.
    """
    psi = projected(smooth_map, V)
    rng = np.random.default_rng(seed)
    centre = middle_jacobian(psi, np.zeros(smooth_map.domain_dim))
    points = sample_ball(rng, samples, smooth_map.domain_dim, radius)
    values = np.array([middle_jacobian(psi, x) for x in points])
    return {
        "centre": centre,
        "sampled_min": float(values.min()),
        "sampled_max": float(values.max()),
        "fraction_above_one": float(np.mean(values > 1.0 + 1e-12)),
        "radius": radius,
        "samples": samples,
    }
