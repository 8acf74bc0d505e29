"""
Linear Symplectic Analysis
Random symplectic matrices, exact volumes of linear images of balls and the
linear nonsqueezing check with its equality case.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from core import (
    DegenerateError,
    DimensionError,
    NumericalFailure,
    PreconditionError,
    Subspace,
    check_dimension,
    complexity_residual,
    is_complex_subspace,
    omega_power_abs,
    omega_power_eval,
    standard_J,
    wedge_norm,
    MAX_PFAFFIAN_SIZE,
)

logger = logging.getLogger(__name__)

SYMPLECTIC_TOL = 1e-9
SURJECTIVE_TOL = 1e-10
DEFAULT_SCALE = 0.5
RESIDUAL_SLACK = 4.0
MAX_DRAWS = 10


def symplectic_residual_of(M):
    """||M^T J M - J||_F for a square matrix on R^{2n}."""
    M = np.asarray(M, dtype=float)
    n = check_dimension(M.shape[0])
    J = standard_J(n)
    return float(np.linalg.norm(M.T @ J @ M - J))


@dataclass(frozen=True)
class SymplecticMatrix:
    """
    A linear symplectic automorphism of R^{2n}.

    Construction fails with PreconditionError when ||M^T J M - J||_F > 1e-9.
    """

    entries: np.ndarray
    residual: float = field(init=False)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionError(f"a symplectic matrix must be square, got {entries.shape}")
        residual = symplectic_residual_of(entries)
        if not residual <= SYMPLECTIC_TOL:
            raise PreconditionError(f"matrix is not symplectic (residual {residual:.3e})")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "residual", residual)

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def T(self):
        return self.entries.T

    def commutator_residual(self):
        """||Phi J - J Phi||_F, zero for unitary symplectic matrices."""
        J = standard_J(self.dim // 2)
        return float(np.linalg.norm(self.entries @ J - J @ self.entries))


def _symmetric_uniform(rng, dim, scale):
    upper = np.triu(rng.uniform(-scale, scale, size=(dim, dim)))
    return upper + np.triu(upper, 1).T


def _exponentiate(generator):
    try:
        result = scipy.linalg.expm(generator)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"matrix exponential failed: {exc}") from exc
    if not np.all(np.isfinite(result)):
        raise NumericalFailure("matrix exponential overflowed")
    try:
        return SymplecticMatrix(result)
    except PreconditionError as exc:
        raise NumericalFailure(f"exp(JS) lost symplecticity: {exc}") from exc


def random_symplectic(dim, scale=DEFAULT_SCALE, seed=0):
    """
    Draws exp(J S) with S symmetric, entries uniform in [-scale, scale].

    Args:
        dim (int): ambient dimension 2n, 4 <= dim <= 16
        scale (float): entry range of S; 0 gives the identity
        seed: anything np.random.default_rng accepts

    Returns:
        SymplecticMatrix
    """
    n = check_dimension(dim)
    if dim < 4:
        raise DimensionError("random symplectic matrices are drawn for dim >= 4")
    if scale < 0:
        raise PreconditionError(f"scale must be non-negative, got {scale}")
    rng = np.random.default_rng(seed)
    S = _symmetric_uniform(rng, dim, scale)
    return _exponentiate(standard_J(n) @ S)


def random_unitary_symplectic(dim, seed=0, scale=1.0):
    """
    Draws exp(J S) with S symmetric and commuting with J.

    S = (A + J^T A J) / 2 for a random symmetric A, so J S is skew and
    commutes with J; the result is orthogonal and complex linear.
    """
    n = check_dimension(dim)
    if dim < 4:
        raise DimensionError("random symplectic matrices are drawn for dim >= 4")
    rng = np.random.default_rng(seed)
    J = standard_J(n)
    A = _symmetric_uniform(rng, dim, scale)
    S = 0.5 * (A + J.T @ A @ J)
    phi = _exponentiate(J @ S)
    drift = phi.commutator_residual()
    if drift > SYMPLECTIC_TOL:
        raise NumericalFailure(f"unitary draw does not commute with J (residual {drift:.3e})")
    return phi


def complex_span(vectors):
    """Subspace spanned by w_1, J w_1, ..., w_k, J w_k."""
    rows = np.atleast_2d(np.asarray(vectors, dtype=float))
    n = check_dimension(rows.shape[1])
    J = standard_J(n)
    columns = []
    for w in rows:
        columns.extend([w, J @ w])
    return Subspace.from_columns(np.column_stack(columns), expected_dim=2 * rows.shape[0])


def random_complex_subspace(dim, k, seed=0):
    """
    Random complex 2k-dimensional subspace of R^{dim}.

    Degenerate draws are redrawn, at most 10 times.
    """
    n = check_dimension(dim)
    if not 1 <= k <= n:
        raise PreconditionError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_DRAWS):
        try:
            V = complex_span(rng.standard_normal((k, dim)))
        except DegenerateError:
            logger.warning(f"⚠️ Degenerate complex span on draw {attempt + 1}, redrawing")
            continue
        return V
    raise NumericalFailure(f"no non-degenerate complex {2 * k}-plane after {MAX_DRAWS} draws")


def coupling_shear(dim=4):
    """
    Time-one map of H = -q1 q2: p1 += q2, p2 += q1, everything else fixed.

    Pushes span(e_q1, e_p1) to a plane whose pullback is not complex.
    """
    check_dimension(dim)
    if dim < 4:
        raise DimensionError("the coupling shear needs two conjugate pairs")
    M = np.eye(dim)
    M[1, 2] = 1.0
    M[3, 0] = 1.0
    return SymplecticMatrix(M)


def diagonal_symplectic(dim, lam):
    """diag(lam, 1/lam, 1, ..., 1)."""
    check_dimension(dim)
    if lam == 0:
        raise PreconditionError("lam must be non-zero")
    diagonal = np.ones(dim)
    diagonal[0], diagonal[1] = lam, 1.0 / lam
    return SymplecticMatrix(np.diag(diagonal))


def unit_ball_log_volume(m):
    """log of omega_m = pi^{m/2} / Gamma(m/2 + 1)."""
    return 0.5 * m * math.log(math.pi) - gammaln(0.5 * m + 1.0)


def unit_ball_volume(m):
    return math.exp(unit_ball_log_volume(m))


def _surjective_singular_values(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, d = A.shape
    if m > d:
        raise DimensionError(f"a map R^{d} -> R^{m} with m > d cannot be onto")
    singular = np.linalg.svd(A, compute_uv=False)
    if singular[-1] <= SURJECTIVE_TOL:
        raise DegenerateError(
            f"map is not onto (smallest singular value {singular[-1]:.3e}); image has measure zero",
            volume=0.0,
        )
    return singular


def log_volume_ratio(A):
    """log of vol_m(A(B)) / omega_m, summed in log space."""
    return float(np.sum(np.log(_surjective_singular_values(A))))


def projected_ball_volume(A, radius=1.0):
    """
    Volume of the image of the ball B^{2n}(radius) under a surjective A.

    Args:
        A: m x 2n matrix
        radius (float): ball radius

    Returns:
        float: omega_m * prod(singular values of A) * radius^m

    Raises:
        DegenerateError: A is not onto; the exception carries volume = 0
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    log_vol = unit_ball_log_volume(m) + log_volume_ratio(A) + m * math.log(radius)
    return math.exp(log_vol)


def maximal_expanding_subspace(A):
    """
    The m-plane W maximising |det A|_W|, namely ran A^T = (ker A)^perp.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    _surjective_singular_values(A)
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    return Subspace(Vt.T)


def determinant_on(A, W):
    """|det A|_W| for an m x 2n matrix A and an m-dimensional subspace W."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if W.dim != A.shape[0] or W.ambient_dim != A.shape[1]:
        raise DimensionError(f"cannot restrict a {A.shape} map to a {W.dim}-plane of R^{W.ambient_dim}")
    return wedge_norm((A @ W.basis).T)


def _omega_power_magnitude(vectors):
    if len(vectors) <= MAX_PFAFFIAN_SIZE:
        return abs(omega_power_eval(vectors))
    return omega_power_abs(vectors)


@dataclass(frozen=True)
class ProjectedVolumeReport:
    """Outcome of one linear nonsqueezing check."""

    volume_ratio: float
    pullback: Subspace
    pullback_complexity_residual: float
    equality_flag: bool
    inequality_holds: bool
    iff_consistent: bool
    ratio_squared: float
    omega_pullback: float
    omega_projected: float
    chain_holds: bool

    @property
    def passed(self):
        return self.inequality_holds and self.iff_consistent and self.chain_holds

    def to_dict(self):
        return {
            "volume_ratio": self.volume_ratio,
            "pullback_complexity_residual": self.pullback_complexity_residual,
            "equality_flag": self.equality_flag,
            "inequality_holds": self.inequality_holds,
            "iff_consistent": self.iff_consistent,
            "ratio_squared": self.ratio_squared,
            "omega_pullback": self.omega_pullback,
            "omega_projected": self.omega_projected,
            "chain_holds": self.chain_holds,
        }


def _iff_consistent(equality_flag, residual, tol):
    """
    Near equality ratio - 1 is about residual^2 / 4, so residuals between
    sqrt(tol) and RESIDUAL_SLACK * sqrt(tol) agree with either verdict.
    """
    band = math.sqrt(tol)
    if equality_flag:
        return residual <= RESIDUAL_SLACK * band
    return residual > band


def linear_nonsqueezing_verify(phi, V, tol=1e-8):
    """
    Checks vol_{2k}(P Phi(B)) >= omega_{2k} for a complex 2k-plane V.

    Builds A = B^T Phi, measures the volume ratio and the complexity of the
    pullback ran A^T = Phi^T V, and re-derives the ratio through the chain
    ratio^2 = |Phi^T P Phi xi| >= |Omega^k[Phi^T P Phi xi]| / k!
            = |Omega^k[P Phi xi]| / k! = ratio
    with xi an orthonormal basis of the pullback.

    Args:
        phi (SymplecticMatrix): the map
        V (Subspace): complex target plane
        tol (float): inequality/equality tolerance; equality must come with a
            pullback residual below 4 sqrt(tol), strict inequality with one
            above sqrt(tol)

    Returns:
        ProjectedVolumeReport
    """
    if tol <= 0:
        raise PreconditionError(f"tol must be positive, got {tol}")
    if V.ambient_dim != phi.dim:
        raise DimensionError(f"V lives in R^{V.ambient_dim}, Phi acts on R^{phi.dim}")
    complex_ok, residual = is_complex_subspace(V, tol=1e-8)
    if not complex_ok:
        raise PreconditionError(f"target plane is not complex (residual {residual:.3e})")

    B = V.basis
    k = V.dim // 2
    A = B.T @ phi.entries
    ratio = math.exp(log_volume_ratio(A))
    pullback = maximal_expanding_subspace(A)
    pullback_residual = complexity_residual(pullback)

    xi = pullback.basis
    projected = B @ (A @ xi)
    pulled_back = phi.entries.T @ projected
    ratio_squared = wedge_norm(pulled_back.T)
    factorial = math.factorial(k)
    omega_pullback = _omega_power_magnitude(pulled_back.T) / factorial
    omega_projected = _omega_power_magnitude(projected.T) / factorial

    scale = max(1.0, ratio_squared)
    chain_holds = (
        ratio_squared >= omega_pullback - tol * scale
        and abs(omega_pullback - omega_projected) <= tol * scale
        and abs(omega_projected - ratio) <= tol * max(1.0, ratio)
    )
    equality_flag = ratio <= 1.0 + tol
    report = ProjectedVolumeReport(
        volume_ratio=ratio,
        pullback=pullback,
        pullback_complexity_residual=pullback_residual,
        equality_flag=equality_flag,
        inequality_holds=ratio >= 1.0 - tol,
        iff_consistent=_iff_consistent(equality_flag, pullback_residual, tol),
        ratio_squared=ratio_squared,
        omega_pullback=omega_pullback,
        omega_projected=omega_projected,
        chain_holds=chain_holds,
    )
    if not report.passed:
        logger.warning(f"⚠️ Linear check failed: ratio={ratio:.12g} residual={pullback_residual:.3e}")
    return report
