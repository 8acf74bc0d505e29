"""
Geometry Kernel
Symplectic form, complex structure, Gram/wedge norms, Pfaffians and subspaces
of R^{2n} with interleaved coordinates (q1, p1, ..., qn, pn).
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

MAX_DIM = 16
MAX_PFAFFIAN_SIZE = 12
RANK_TOL = 1e-10
ORTHONORMAL_TOL = 1e-12
SKEW_TOL = 1e-10


class LabError(Exception):
    """Base class for every error raised by the lab."""


class DimensionError(LabError, ValueError):
    """Shapes or sizes do not fit together."""


class PreconditionError(LabError, ValueError):
    """An operation was called outside its domain."""


class DegenerateError(LabError, ArithmeticError):
    """A rank collapse made the requested quantity meaningless."""

    def __init__(self, message, volume=0.0):
        super().__init__(message)
        self.volume = volume


class NumericalFailure(LabError, RuntimeError):
    """A numerical routine failed in a way that points at a bug."""


class UnboundedImageError(NumericalFailure):
    """A sampled image escaped every reasonable bounding box."""


def check_dimension(dim):
    """Validates an ambient dimension 2n and returns n."""
    if int(dim) != dim or dim < 2 or dim % 2:
        raise DimensionError(f"ambient dimension must be a positive even integer, got {dim}")
    if dim > MAX_DIM:
        raise DimensionError(f"ambient dimension {dim} exceeds the supported maximum {MAX_DIM}")
    return int(dim) // 2


def as_point(x, dim=None):
    """
    Converts x to a 1-d float array in R^{2n}.

    Args:
        x: sequence of coordinates ordered (q1, p1, ..., qn, pn)
        dim: expected length (optional)

    Returns:
        np.ndarray of shape (2n,)
    """
    point = np.asarray(x, dtype=float)
    if point.ndim != 1:
        raise DimensionError(f"a point must be 1-d, got shape {point.shape}")
    check_dimension(point.size)
    if dim is not None and point.size != dim:
        raise DimensionError(f"expected a point of R^{dim}, got R^{point.size}")
    return point


def _as_rows(vectors):
    rows = np.atleast_2d(np.asarray(vectors, dtype=float))
    if rows.ndim != 2:
        raise DimensionError(f"expected a list of vectors, got shape {rows.shape}")
    return rows


@lru_cache(maxsize=None)
def standard_J(n):
    """
    Block-diagonal complex structure of R^{2n}.

    Each (q_j, p_j) pair gets the block [[0, -1], [1, 0]], so J e_q = e_p
    (multiplication by i) and u^T J v is the form sum dp_j ^ dq_j.
    """
    block = np.array([[0.0, -1.0], [1.0, 0.0]])
    J = np.kron(np.eye(n), block)
    J.flags.writeable = False
    return J


@dataclass(frozen=True)
class StdSymplectic:
    """The standard symplectic structure of R^{2n}."""

    n: int

    def __post_init__(self):
        check_dimension(2 * self.n)

    @property
    def dim(self):
        return 2 * self.n

    @property
    def J(self):
        return standard_J(self.n)

    def omega(self, u, v):
        return omega_eval(u, v)


def omega_eval(u, v):
    """
    Evaluates Omega(u, v) = u^T J v.

    Args:
        u, v: points of the same R^{2n}

    Returns:
        float
    """
    u = as_point(u)
    v = as_point(v, dim=u.size)
    return float(u @ standard_J(u.size // 2) @ v)


def omega_gram(vectors):
    """Returns the skew matrix G_ij = Omega(u_i, u_j) of a tuple of vectors."""
    rows = _as_rows(vectors)
    check_dimension(rows.shape[1])
    G = rows @ standard_J(rows.shape[1] // 2) @ rows.T
    return 0.5 * (G - G.T)


def _pfaffian_rec(M, idx):
    if not idx:
        return 1.0
    i, rest = idx[0], idx[1:]
    total = 0.0
    for pos, j in enumerate(rest):
        if M[i, j] == 0.0:
            continue
        sign = -1.0 if pos % 2 else 1.0
        total += sign * M[i, j] * _pfaffian_rec(M, rest[:pos] + rest[pos + 1:])
    return total


def pfaffian(M):
    """
    Pfaffian of a skew-symmetric matrix by first-row expansion.

    Args:
        M: 2k x 2k skew-symmetric matrix, 2k <= 12

    Returns:
        float with pfaffian(M)**2 == det(M)
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"pfaffian needs a square matrix, got shape {M.shape}")
    size = M.shape[0]
    if size % 2:
        raise DimensionError(f"pfaffian of an odd-dimensional matrix ({size}) is undefined")
    if size > MAX_PFAFFIAN_SIZE:
        raise DimensionError(f"pfaffian supports sizes up to {MAX_PFAFFIAN_SIZE}, got {size}")
    if np.linalg.norm(M + M.T) > SKEW_TOL:
        raise PreconditionError("pfaffian input is not skew-symmetric")
    return _pfaffian_rec(M, tuple(range(size)))


def _tuple_order(vectors):
    rows = _as_rows(vectors)
    count, dim = rows.shape
    n = check_dimension(dim)
    if count % 2 or count == 0:
        raise DimensionError(f"Omega^k needs an even, non-empty number of vectors, got {count}")
    k = count // 2
    if k > n:
        raise DimensionError(f"Omega^{k} vanishes identically on R^{dim}")
    return rows, k


def omega_power_eval(vectors):
    """
    Evaluates Omega^k on 2k vectors as k! * Pf(G), G_ij = Omega(u_i, u_j).

    Args:
        vectors: 2k points of R^{2n}, k <= n

    Returns:
        float
    """
    rows, k = _tuple_order(vectors)
    return math.factorial(k) * pfaffian(omega_gram(rows))


def omega_power_abs(vectors):
    """|Omega^k| on 2k vectors via k! * sqrt(|det G|); valid at any size."""
    rows, k = _tuple_order(vectors)
    det = np.linalg.det(omega_gram(rows))
    return math.factorial(k) * math.sqrt(abs(det))


def _permutation_sign(perm):
    sign = 1
    seen = list(perm)
    for i in range(len(seen)):
        for j in range(i + 1, len(seen)):
            if seen[i] > seen[j]:
                sign = -sign
    return sign


def omega_power_alternating(vectors):
    """
    Omega^k from the alternating-sum definition of the wedge power.

    Sums sign(s) * prod_i Omega(u_s(2i), u_s(2i+1)) over all permutations s
    and divides by 2^k. Factorial cost, so only tuples of up to 6 vectors.
    """
    rows, k = _tuple_order(vectors)
    if 2 * k > 6:
        raise DimensionError("the alternating-sum oracle is limited to 6 vectors")
    G = omega_gram(rows)
    total = 0.0
    for perm in itertools.permutations(range(2 * k)):
        term = float(_permutation_sign(perm))
        for i in range(k):
            term *= G[perm[2 * i], perm[2 * i + 1]]
        total += term
    return total / 2 ** k


def gram_matrix(vectors):
    rows = _as_rows(vectors)
    return rows @ rows.T


def wedge_norm(vectors):
    """
    Norm of u_1 ^ ... ^ u_m, the m-volume of the prism they span.

    Equals sqrt(det Gram); computed as the product of singular values.
    """
    rows = _as_rows(vectors)
    count, dim = rows.shape
    if count > dim:
        return 0.0
    singular = np.linalg.svd(rows, compute_uv=False)
    return float(np.prod(singular))


@dataclass(frozen=True)
class Subspace:
    """
    Linear subspace of R^{2n} stored as an orthonormal basis (columns).
    """

    basis: np.ndarray

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[1] > basis.shape[0]:
            raise DimensionError(f"basis must be a tall matrix, got shape {basis.shape}")
        gap = np.linalg.norm(basis.T @ basis - np.eye(basis.shape[1]))
        if gap > ORTHONORMAL_TOL * max(1, basis.shape[1]):
            raise PreconditionError(f"basis columns are not orthonormal (defect {gap:.2e})")
        basis.flags.writeable = False
        object.__setattr__(self, "basis", basis)

    @classmethod
    def from_columns(cls, M, rank_tol=RANK_TOL, expected_dim=None):
        """
        Orthonormalizes the column span of M by QR with column pivoting.

        Args:
            M: 2n x m matrix
            rank_tol: relative threshold on |R_ii| for the rank decision
            expected_dim: raise DegenerateError unless the rank equals this

        Returns:
            Subspace
        """
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        Q, R, _ = scipy.linalg.qr(M, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag[0] == 0.0:
            raise DegenerateError("cannot span a subspace with zero vectors")
        rank = int(np.count_nonzero(diag > rank_tol * diag[0]))
        if expected_dim is not None and rank != expected_dim:
            raise DegenerateError(f"span has rank {rank}, expected {expected_dim}")
        return cls(Q[:, :rank])

    @classmethod
    def from_vectors(cls, vectors, **kwargs):
        return cls.from_columns(np.column_stack(vectors), **kwargs)

    @property
    def ambient_dim(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]

    @cached_property
    def projector(self):
        return self.basis @ self.basis.T

    @cached_property
    def complexity_residual(self):
        return complexity_residual(self)

    def image(self, M):
        """Subspace spanned by M applied to this basis."""
        return Subspace.from_columns(np.asarray(M) @ self.basis, expected_dim=self.dim)


def complexity_residual(W):
    """||(I - BB^T) J B||_F; zero exactly when J W = W."""
    n = check_dimension(W.ambient_dim)
    B = W.basis
    JB = standard_J(n) @ B
    return float(np.linalg.norm(JB - B @ (B.T @ JB)))


def is_complex_subspace(W, tol=RANK_TOL):
    """
    Decides whether W is a complex subspace.

    Returns:
        (bool, residual); odd-dimensional subspaces give (False, inf)
    """
    if W.dim % 2:
        return False, math.inf
    residual = complexity_residual(W)
    return residual <= tol, residual


def wirtinger_check(vectors):
    """
    Compares both sides of |Omega^k[u]| <= k! |u_1 ^ ... ^ u_2k|.

    Args:
        vectors: 2k points of R^{2n}

    Returns:
        dict with lhs, rhs, gap, span_complexity_residual, degenerate
    """
    rows, k = _tuple_order(vectors)
    volume = wedge_norm(rows)
    if volume <= RANK_TOL:
        logger.debug(f"Degenerate Wirtinger tuple (wedge norm {volume:.3e})")
        return {"lhs": 0.0, "rhs": 0.0, "gap": 0.0,
                "span_complexity_residual": math.inf, "degenerate": True}
    if 2 * k <= MAX_PFAFFIAN_SIZE:
        lhs = abs(omega_power_eval(rows))
    else:
        lhs = omega_power_abs(rows)
    rhs = math.factorial(k) * volume
    span = Subspace.from_columns(rows.T, expected_dim=2 * k)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "gap": rhs - lhs,
        "span_complexity_residual": complexity_residual(span),
        "degenerate": False,
    }


def principal_angles(W1, W2):
    """Principal angles (radians, descending) between two subspaces."""
    if W1.ambient_dim != W2.ambient_dim:
        raise DimensionError("subspaces live in different ambient spaces")
    return scipy.linalg.subspace_angles(W1.basis, W2.basis)


def subspace_distance(W1, W2):
    """Largest principal angle between two subspaces of equal dimension."""
    if W1.dim != W2.dim:
        raise DimensionError(f"cannot compare a {W1.dim}-plane with a {W2.dim}-plane")
    return float(np.max(principal_angles(W1, W2)))


def coordinate_complex_subspace(dim, k):
    """span(e_q1, e_p1, ..., e_qk, e_pk) in R^dim."""
    n = check_dimension(dim)
    if not 1 <= k <= n:
        raise PreconditionError(f"k must lie in [1, {n}], got {k}")
    return Subspace(np.eye(dim)[:, : 2 * k])
