"""
Map Zoo
Explicit nonlinear maps with exact Jacobians: the bump-function shear, the
generating-function shear, the rho-twist, rescalings, compositions and
products. Every map is vectorised: a single point (d,) or a batch (N, d).
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.optimize

from core import (
    DimensionError,
    NumericalFailure,
    PreconditionError,
    RANK_TOL,
    Subspace,
    standard_J,
)
from linear import DEFAULT_SCALE, SymplecticMatrix, random_symplectic

logger = logging.getLogger(__name__)

SLOPE_BOUND = 1.5
FD_STEP = 1e-6
GENERATING_DEFECT_TOL = 1e-12


# ---------------------------------------------------------------------------
# Smooth maps
# ---------------------------------------------------------------------------

class SmoothMap:
    """
    Base class of the map family.

    Subclasses implement _evaluate(X) -> (N, m) and _jacobian(X) -> (N, m, d)
    for a batch X of shape (N, d).
    """

    name = "map"

    def __init__(self, domain_dim, codomain_dim, symplectic=False):
        self.domain_dim = int(domain_dim)
        self.codomain_dim = int(codomain_dim)
        self.symplectic = bool(symplectic)

    def _batch(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.ndim != 2 or X.shape[1] != self.domain_dim:
            raise DimensionError(f"{self.name} expects points of R^{self.domain_dim}, got shape {np.shape(x)}")
        return X, single

    def __call__(self, x):
        X, single = self._batch(x)
        Y = self._evaluate(X)
        return Y[0] if single else Y

    def jacobian(self, x):
        X, single = self._batch(x)
        D = self._jacobian(X)
        return D[0] if single else D

    def _evaluate(self, X):
        raise NotImplementedError

    def _jacobian(self, X):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(R^{self.domain_dim} -> R^{self.codomain_dim})"


class LinearMap(SmoothMap):
    name = "linear"

    def __init__(self, matrix):
        entries = matrix.entries if isinstance(matrix, SymplecticMatrix) else np.asarray(matrix, dtype=float)
        if entries.ndim != 2:
            raise DimensionError(f"a linear map needs a matrix, got shape {entries.shape}")
        m, d = entries.shape
        symplectic = False
        if m == d and d % 2 == 0:
            J = standard_J(d // 2)
            symplectic = bool(np.linalg.norm(entries.T @ J @ entries - J) <= 1e-9)
        super().__init__(d, m, symplectic)
        self.matrix = entries

    def _evaluate(self, X):
        return X @ self.matrix.T

    def _jacobian(self, X):
        return np.broadcast_to(self.matrix, (X.shape[0],) + self.matrix.shape).copy()


def identity(dim):
    return LinearMap(np.eye(dim))


# ---------------------------------------------------------------------------
# Bump profile and the shear it generates
# ---------------------------------------------------------------------------

def _smoothstep(u):
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


def _smoothstep_prime(u):
    return 30.0 * u ** 2 * (1.0 - u) ** 2


def _smoothstep_integral(u):
    return u ** 4 * (2.5 - 3.0 * u + u ** 2)


@dataclass(frozen=True)
class BumpProfile:
    """
    Even function chi with chi = 2R on [-eps, eps] and support in
    [-2R + eps, 2R - eps].

    On the left ramp [a, b] = [-2R + eps, -eps] chi' is a trapezoid: smoothstep
    shoulders of width `shoulder` and a flat core of height h = 2R / (L - shoulder),
    L = b - a. chi is the closed-form integral of that trapezoid.
    """

    R: float
    eps: float
    shoulder: float

    @property
    def left(self):
        return -2.0 * self.R + self.eps

    @property
    def right(self):
        return -self.eps

    @property
    def ramp_length(self):
        return 2.0 * self.R - 2.0 * self.eps

    @property
    def sup_chi_prime(self):
        """Height of the flat core; chi' never exceeds it."""
        return 2.0 * self.R / (self.ramp_length - self.shoulder)

    def _ramp(self, t):
        a, b, s, h = self.left, self.right, self.shoulder, self.sup_chi_prime
        value = np.zeros_like(t)
        slope = np.zeros_like(t)
        curvature = np.zeros_like(t)

        rising = (t > a) & (t <= a + s)
        u = (t[rising] - a) / s
        value[rising] = h * s * _smoothstep_integral(u)
        slope[rising] = h * _smoothstep(u)
        curvature[rising] = (h / s) * _smoothstep_prime(u)

        core = (t > a + s) & (t <= b - s)
        value[core] = 0.5 * h * s + h * (t[core] - a - s)
        slope[core] = h

        falling = (t > b - s) & (t <= b)
        u = (b - t[falling]) / s
        value[falling] = 2.0 * self.R - h * s * _smoothstep_integral(u)
        slope[falling] = h * _smoothstep(u)
        curvature[falling] = -(h / s) * _smoothstep_prime(u)

        value[t > b] = 2.0 * self.R
        return value, slope, curvature

    def evaluate(self, t):
        """Returns (chi, chi', chi'') at t (scalar or array)."""
        t = np.asarray(t, dtype=float)
        value, slope, curvature = self._ramp(-np.abs(np.atleast_1d(t)))
        slope = -np.sign(np.atleast_1d(t)) * slope
        if t.ndim == 0:
            return float(value[0]), float(slope[0]), float(curvature[0])
        return value.reshape(t.shape), slope.reshape(t.shape), curvature.reshape(t.shape)

    def chi(self, t):
        return self.evaluate(t)[0]

    def chi_prime(self, t):
        return self.evaluate(t)[1]

    def chi_second(self, t):
        return self.evaluate(t)[2]


def max_shoulder(R, eps):
    """Open upper bound on the shoulder width keeping chi' <= 3/2 with slack."""
    return (2.0 * R - 2.0 * eps - 4.0 * R / 3.0) / 2.0


def bump_profile(R=1.0, eps=0.3, shoulder=None):
    """
    Builds the bump profile chi.

    Args:
        R (float): radius
        eps (float): plateau half-width, 0 < eps < R/3
        shoulder (float): smoothing width; defaults to half its upper bound

    Returns:
        BumpProfile
    """
    if R <= 0:
        raise PreconditionError(f"R must be positive, got {R}")
    if not 0 < eps < R / 3.0:
        raise PreconditionError(f"eps must lie in (0, R/3) = (0, {R / 3.0:.6g}), got {eps}")
    bound = max_shoulder(R, eps)
    if shoulder is None:
        shoulder = 0.5 * bound
    if not 0 < shoulder < bound:
        raise PreconditionError(
            f"shoulder must lie in (0, {bound:.6g}) for sup|chi'| <= {SLOPE_BOUND}, got {shoulder}"
        )
    profile = BumpProfile(float(R), float(eps), float(shoulder))
    if profile.sup_chi_prime > SLOPE_BOUND:
        raise PreconditionError(f"sup|chi'| = {profile.sup_chi_prime:.6g} exceeds {SLOPE_BOUND}")
    return profile


class GuthShear(SmoothMap):
    """
    (q1, p1, q2, p2) -> (q1, p1 + chi(q2), q2, p2 + chi'(q2) q1).

    Time-one map of the Hamiltonian H = -chi(q2) q1.
    """

    name = "guth"

    def __init__(self, profile):
        super().__init__(4, 4, symplectic=True)
        self.profile = profile

    def _evaluate(self, X):
        chi, chi_p, _ = self.profile.evaluate(X[:, 2])
        Y = X.copy()
        Y[:, 1] += chi
        Y[:, 3] += chi_p * X[:, 0]
        return Y

    def _jacobian(self, X):
        _, chi_p, chi_pp = self.profile.evaluate(X[:, 2])
        D = np.tile(np.eye(4), (X.shape[0], 1, 1))
        D[:, 1, 2] = chi_p
        D[:, 3, 0] = chi_p
        D[:, 3, 2] = chi_pp * X[:, 0]
        return D


def guth_shear(profile):
    return GuthShear(profile)


def disjointness_bounds_verify(profile, samples=100_000, seed=0):
    """
    Samples (q1, p1) in B^2(R) and (q2, p2) in [-2R, 2R] x (-eps, eps) and
    checks the two bounds that keep the shear's image off the ball:
    (a) |p2 + chi'(q2) q1| < 2R everywhere;
    (b) p1 + chi(q2) >= R wherever |q2| < eps.

    Returns:
        dict with the worst margins, the violation count and a witness point
    """
    if samples < 1:
        raise PreconditionError(f"samples must be positive, got {samples}")
    R, eps = profile.R, profile.eps
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0.0, 2.0 * np.pi, samples)
    radius = R * np.sqrt(rng.random(samples))
    X = np.column_stack([
        radius * np.cos(angle),
        radius * np.sin(angle),
        rng.uniform(-2.0 * R, 2.0 * R, samples),
        rng.uniform(-eps, eps, samples),
    ])
    Y = GuthShear(profile)(X)

    margin_a = 2.0 * R - np.abs(Y[:, 3])
    plateau = np.abs(X[:, 2]) < eps
    margin_b = Y[plateau, 1] - R

    bad = margin_a <= 0.0
    bad[plateau] |= margin_b < 0.0
    violations = int(bad.sum())
    witness = X[np.argmax(bad)].tolist() if violations else None
    if violations:
        logger.warning(f"⚠️ Disjointness bounds violated at {violations} samples, e.g. {witness}")
    return {
        "samples": samples,
        "worst_margin_a": float(margin_a.min()),
        "worst_margin_b": float(margin_b.min()) if margin_b.size else None,
        "plateau_samples": int(plateau.sum()),
        "violations": violations,
        "witness": witness,
        "passed": violations == 0,
    }


def leapfrog(x, force, velocity, t=1.0, step=1e-3):
    """
    Stormer-Verlet for a split Hamiltonian H = T(p) + U(q).

    Args:
        x: (N, 2n) interleaved points
        force: callable q -> -dU/dq, shape (N, n)
        velocity: callable p -> dT/dp, shape (N, n)
        t (float): final time
        step (float): maximal step size

    Returns:
        np.ndarray of the flowed points
    """
    X = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    steps = max(1, int(math.ceil(abs(t) / step)))
    dt = t / steps
    q, p = X[:, 0::2], X[:, 1::2]
    for _ in range(steps):
        p += 0.5 * dt * force(q)
        q += dt * velocity(p)
        p += 0.5 * dt * force(q)
    return X


def hamiltonian_flow(profile, x, t=1.0, step=1e-3):
    """Flows x for time t under H(q1, p1, q2, p2) = -chi(q2) q1."""

    def force(q):
        chi, chi_p, _ = profile.evaluate(q[:, 1])
        return np.column_stack([chi, chi_p * q[:, 0]])

    def velocity(p):
        return np.zeros_like(p)

    X = np.asarray(x, dtype=float)
    flowed = leapfrog(X, force, velocity, t=t, step=step)
    return flowed[0] if X.ndim == 1 else flowed


# ---------------------------------------------------------------------------
# Generating-function shear
# ---------------------------------------------------------------------------

class GeneratingShear(SmoothMap):
    """
    Map generated by S(Q, p) = p2 Q1^2 / 2:
    (q1, p1, q2, p2) -> (q1, p1 - p2 q1, q2 + q1^2 / 2, p2).
    """

    name = "generating"

    def __init__(self):
        super().__init__(4, 4, symplectic=True)

    def _evaluate(self, X):
        q1, p1, q2, p2 = X.T
        return np.column_stack([q1, p1 - p2 * q1, q2 + 0.5 * q1 ** 2, p2])

    def _jacobian(self, X):
        q1, _, _, p2 = X.T
        D = np.tile(np.eye(4), (X.shape[0], 1, 1))
        D[:, 1, 0] = -p2
        D[:, 1, 3] = -q1
        D[:, 2, 0] = q1
        return D


def generating_shear():
    return GeneratingShear()


def solve_generating_function(x, tol=1e-13):
    """
    Evaluates the generating-function map by solving its defining equations
    Q = q + dS/dp(Q, p), P = p - dS/dQ(Q, p) numerically.
    """
    q1, p1, q2, p2 = np.asarray(x, dtype=float)

    def defect(Q):
        return np.array([Q[0] - q1, Q[1] - q2 - 0.5 * Q[0] ** 2])

    def defect_jacobian(Q):
        return np.array([[1.0, 0.0], [-Q[0], 1.0]])

    solution = scipy.optimize.root(defect, x0=[q1, q2], jac=defect_jacobian, tol=tol)
    # hybr reports "not making good progress" once it sits at machine
    # precision, so the defect decides.
    residual = float(np.abs(defect(solution.x)).max())
    if not residual <= GENERATING_DEFECT_TOL * (1.0 + abs(q1) + abs(q2)):
        raise NumericalFailure(f"generating-function solve failed at {x}: defect {residual:.3e} ({solution.message})")
    Q1, Q2 = solution.x
    return np.array([Q1, p1 - p2 * Q1, Q2, p2])


# ---------------------------------------------------------------------------
# rho-twist
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RhoSpec:
    """
    Radial profile rho with its derivatives; rho_prime_over_r is the even
    extension of rho'(r)/r, finite at r = 0.
    """

    rho: Callable
    rho_prime: Callable
    rho_second: Callable
    rho_prime_over_r: Callable
    label: str = "custom"

    def __post_init__(self):
        if abs(self.rho(0.0) - 1.0) > 1e-12 or abs(self.rho_prime(0.0)) > 1e-12:
            raise PreconditionError("rho must satisfy rho(0) = 1 and rho'(0) = 0")
        if not self.rho_second(0.0) > -0.25:
            raise PreconditionError(f"rho''(0) = {self.rho_second(0.0)} must exceed -1/4")
        grid = np.linspace(1e-3, 4.0, 400)
        if np.any(self.rho(grid) >= 1.0) or np.any(self.rho(grid) <= 0.0):
            raise PreconditionError("rho must stay in (0, 1) for r > 0")


def gaussian_rho(width=16.0):
    """rho(r) = exp(-r^2 / width); rho''(0) = -2/width."""
    c = 1.0 / width

    def rho(r):
        return np.exp(-c * np.asarray(r) ** 2)

    def rho_prime(r):
        return -2.0 * c * np.asarray(r) * rho(r)

    def rho_second(r):
        r = np.asarray(r)
        return (-2.0 * c + 4.0 * c ** 2 * r ** 2) * rho(r)

    def rho_prime_over_r(r):
        return -2.0 * c * rho(r)

    return RhoSpec(rho, rho_prime, rho_second, rho_prime_over_r, label=f"exp(-r^2/{width:g})")


def _rotation(t):
    c, s = np.cos(t), np.sin(t)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


class RhoTwist(SmoothMap):
    """(x, y, t) -> rho(|z|) e^{it} z with z = x + iy. Not symplectic."""

    name = "rho"

    def __init__(self, spec):
        super().__init__(3, 2, symplectic=False)
        self.spec = spec

    def _evaluate(self, X):
        z, t = X[:, :2], X[:, 2]
        r = np.linalg.norm(z, axis=1)
        rotated = np.einsum("nij,nj->ni", _rotation(t), z)
        return self.spec.rho(r)[:, None] * rotated

    def _jacobian(self, X):
        z, t = X[:, :2], X[:, 2]
        r = np.linalg.norm(z, axis=1)
        rho = self.spec.rho(r)
        inner = rho[:, None, None] * np.eye(2) + self.spec.rho_prime_over_r(r)[:, None, None] * (
            z[:, :, None] * z[:, None, :]
        )
        Rt = _rotation(t)
        D = np.empty((X.shape[0], 2, 3))
        D[:, :, :2] = Rt @ inner
        Jz = z @ np.array([[0.0, -1.0], [1.0, 0.0]]).T
        D[:, :, 2] = rho[:, None] * np.einsum("nij,nj->ni", Rt, Jz)
        return D


def rho_twist(spec=None):
    return RhoTwist(spec if spec is not None else gaussian_rho())


def rho_jacobian_closed_form(spec, r):
    """rho(r) (rho(r) + r rho'(r)) sqrt(1 + r^2)."""
    r = np.asarray(r, dtype=float)
    rho = spec.rho(r)
    return np.abs(rho * (rho + r * spec.rho_prime(r))) * np.sqrt(1.0 + r ** 2)


def rho_taylor(spec, r):
    """Second-order expansion 1 + (1/2 + 2 rho''(0)) r^2."""
    return 1.0 + (0.5 + 2.0 * spec.rho_second(0.0)) * np.asarray(r, dtype=float) ** 2


def first_crossing(spec, r_max=4.0, points=4001):
    """
    First r > 0 where the 2-Jacobian of the rho-twist drops below 1.

    Returns None when no crossing is found on (0, r_max].
    """
    grid = np.linspace(0.0, r_max, points)[1:]
    below = np.nonzero(rho_jacobian_closed_form(spec, grid) < 1.0)[0]
    if below.size == 0:
        return None
    hi = grid[below[0]]
    lo = grid[below[0] - 1] if below[0] > 0 else hi / 2.0
    return float(scipy.optimize.brentq(lambda r: rho_jacobian_closed_form(spec, r) - 1.0, lo, hi, xtol=1e-14))


# ---------------------------------------------------------------------------
# Combinators
# ---------------------------------------------------------------------------

class Rescaled(SmoothMap):
    """z -> inner(R z) / R."""

    name = "rescaled"

    def __init__(self, inner, R):
        super().__init__(inner.domain_dim, inner.codomain_dim, inner.symplectic)
        self.inner = inner
        self.R = float(R)

    def _evaluate(self, X):
        return self.inner._evaluate(self.R * X) / self.R

    def _jacobian(self, X):
        return self.inner._jacobian(self.R * X)


def rescale_map(smooth_map, R):
    """Returns z -> smooth_map(R z) / R; linear maps and R = 1 come back unchanged."""
    if not R > 0:
        raise PreconditionError(f"rescaling radius must be positive, got {R}")
    if R == 1.0 or isinstance(smooth_map, LinearMap):
        return smooth_map
    return Rescaled(smooth_map, R)


class Composite(SmoothMap):
    """Pipeline of maps; the first map is applied first."""

    name = "composite"

    def __init__(self, maps):
        for before, after in zip(maps, maps[1:]):
            if before.codomain_dim != after.domain_dim:
                raise DimensionError(
                    f"cannot feed R^{before.codomain_dim} from {before!r} into {after!r}"
                )
        super().__init__(maps[0].domain_dim, maps[-1].codomain_dim, all(m.symplectic for m in maps))
        self.maps = tuple(maps)

    def _evaluate(self, X):
        for m in self.maps:
            X = m._evaluate(X)
        return X

    def _jacobian(self, X):
        D = None
        for m in self.maps:
            local = m._jacobian(X)
            D = local if D is None else local @ D
            X = m._evaluate(X)
        return D


def compose(maps):
    maps = list(maps)
    if not maps:
        raise PreconditionError("compose needs at least one map")
    if len(maps) == 1:
        return maps[0]
    return Composite(maps)


class Product(SmoothMap):
    """Block product f x g acting on consecutive coordinate blocks."""

    name = "product"

    def __init__(self, factors):
        domain = sum(f.domain_dim for f in factors)
        codomain = sum(f.codomain_dim for f in factors)
        symplectic = all(f.symplectic and f.domain_dim % 2 == 0 for f in factors)
        super().__init__(domain, codomain, symplectic)
        self.factors = tuple(factors)

    def _evaluate(self, X):
        parts, start = [], 0
        for f in self.factors:
            parts.append(f._evaluate(X[:, start:start + f.domain_dim]))
            start += f.domain_dim
        return np.hstack(parts)

    def _jacobian(self, X):
        D = np.zeros((X.shape[0], self.codomain_dim, self.domain_dim))
        row, col = 0, 0
        for f in self.factors:
            D[:, row:row + f.codomain_dim, col:col + f.domain_dim] = f._jacobian(X[:, col:col + f.domain_dim])
            row += f.codomain_dim
            col += f.domain_dim
        return D


def product(*maps):
    if not maps:
        raise PreconditionError("product needs at least one factor")
    return maps[0] if len(maps) == 1 else Product(maps)


class ProjectedMap(SmoothMap):
    """psi = P phi read in an orthonormal basis of V: x -> B^T phi(x)."""

    name = "projected"

    def __init__(self, inner, V):
        if V.ambient_dim != inner.codomain_dim:
            raise DimensionError(f"V lives in R^{V.ambient_dim}, map lands in R^{inner.codomain_dim}")
        super().__init__(inner.domain_dim, V.dim, symplectic=False)
        self.inner = inner
        self.V = V

    def _evaluate(self, X):
        return self.inner._evaluate(X) @ self.V.basis

    def _jacobian(self, X):
        return self.V.basis.T @ self.inner._jacobian(X)


def projected(smooth_map, V):
    return ProjectedMap(smooth_map, V)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def symplectic_residual(smooth_map, x):
    """||D^T J D - J||_F at each point (float for a single point)."""
    if smooth_map.domain_dim != smooth_map.codomain_dim or smooth_map.domain_dim % 2:
        raise DimensionError(f"{smooth_map!r} is not a map of some R^{{2n}} to itself")
    D = smooth_map.jacobian(x)
    J = standard_J(smooth_map.domain_dim // 2)
    defect = np.swapaxes(D, -1, -2) @ J @ D - J
    norms = np.linalg.norm(defect, axis=(-2, -1))
    return float(norms) if np.ndim(norms) == 0 else norms


def finite_difference_jacobian(smooth_map, x, step=FD_STEP):
    """
    Central differences with step h = step * (1 + |x|).

    Returns an array shaped like smooth_map.jacobian(x).
    """
    X, single = smooth_map._batch(x)
    h = step * (1.0 + np.linalg.norm(X, axis=1))
    D = np.empty((X.shape[0], smooth_map.codomain_dim, smooth_map.domain_dim))
    for j in range(smooth_map.domain_dim):
        shift = np.zeros_like(X)
        shift[:, j] = h
        D[:, :, j] = (smooth_map._evaluate(X + shift) - smooth_map._evaluate(X - shift)) / (2.0 * h[:, None])
    return D[0] if single else D


def middle_jacobian(smooth_map, x, order=None):
    """
    J_{2k} of a map into R^{2k}: the product of the 2k singular values of its
    differential, which equals the largest |det D|_W| over 2k-planes W.

    Returns 0.0 when the differential loses rank.
    """
    order = smooth_map.codomain_dim if order is None else int(order)
    if order != smooth_map.codomain_dim or order > smooth_map.domain_dim:
        raise DimensionError(
            f"J_{order} needs a map R^d -> R^{order} with {order} <= d, got {smooth_map!r}"
        )
    singular = np.linalg.svd(smooth_map.jacobian(np.asarray(x, dtype=float)), compute_uv=False)
    if singular[-1] <= RANK_TOL * max(1.0, singular[0]):
        logger.debug(f"Rank-deficient differential at {x}")
        return 0.0
    return float(np.prod(singular))


def map_from_name(name, dim=4, R=1.0, eps=0.3, shoulder=None, scale=None, seed=0):
    """Builds one of the named maps used by the experiment driver."""
    if name == "identity":
        return identity(dim)
    if name == "linear":
        return LinearMap(random_symplectic(dim, DEFAULT_SCALE if scale is None else scale, seed))
    if name == "guth":
        shear = guth_shear(bump_profile(R, eps, shoulder))
        return shear if dim == 4 else product(shear, identity(dim - 4))
    if name == "generating":
        shear = generating_shear()
        return shear if dim == 4 else product(shear, identity(dim - 4))
    if name == "rho":
        return rho_twist()
    raise PreconditionError(f"unknown map {name!r}")


def coordinate_plane_of(smooth_map, k=1):
    """span(e_q1, e_p1, ...) in the codomain of the map."""
    return Subspace(np.eye(smooth_map.codomain_dim)[:, : 2 * k])
