"""Dense complex matrix kernels shared across the package.

Band convention: a matrix is *banded within diagonals* ``[-nu_upper,
nu_lower]`` when entry ``(r, c)`` vanishes for ``c - r > nu_upper`` or
``r - c > nu_lower``.  That is, ``nu_upper`` counts the non-zero upper
diagonals and ``nu_lower`` the non-zero lower ones.  This matches the
standard Toeplitz-literature orientation; note that some linear-algebra
texts use the opposite sign for the band interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "NotPositiveDefiniteError",
    "SingularMatrixError",
    "hermitize",
    "band_mask",
    "band_project",
    "band_part",
    "band_complement",
    "is_banded",
    "band_width",
    "banded_trace_identity_check",
    "chol_logdet",
    "kron_vec_apply",
    "FreePositionMap",
    "BandSpec",
    "forney_band_mask",
    "r_shape_zero_mask",
]

# Structural zero checks at 1e-8 absolute, identity checks at 1e-9
# relative, unless an operation documents otherwise.
STRUCTURAL_ATOL = 1e-8
IDENTITY_RTOL = 1e-9


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failure; ``pivot`` is the 0-based index of the bad minor."""

    def __init__(self, pivot=None, message="not positive definite"):
        self.pivot = pivot
        if pivot is not None:
            message = f"{message} (pivot {pivot})"
        super().__init__(message)


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def hermitize(a):
    """Average away Hermitian drift after a chain of matrix products."""
    return 0.5 * (a + a.conj().T)


def band_mask(rows, cols, nu_upper, nu_lower):
    """Boolean mask of the entries inside diagonals [-nu_upper, nu_lower]."""
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    return (c - r <= nu_upper) & (r - c <= nu_lower)


def band_project(a, nu_upper, nu_lower):
    """Restrict ``a`` to diagonals [-nu_upper, nu_lower], zero elsewhere.

    The projection is total and linear; ``band_project(a, u, l) +
    (a - band_project(a, u, l))`` reconstructs ``a`` exactly.
    """
    a = np.asarray(a)
    return np.where(band_mask(a.shape[0], a.shape[1], nu_upper, nu_lower), a, 0)


def band_part(a, nu):
    """Symmetric band restriction to diagonals [-nu, nu]."""
    return band_project(a, nu, nu)


def band_complement(a, nu):
    """Everything outside diagonals [-nu, nu]."""
    a = np.asarray(a)
    return a - band_part(a, nu)


def is_banded(a, nu_upper, nu_lower, atol=STRUCTURAL_ATOL):
    a = np.asarray(a)
    off = a[~band_mask(a.shape[0], a.shape[1], nu_upper, nu_lower)]
    if off.size == 0:
        return True
    return float(np.max(np.abs(off))) <= atol


def band_width(a, atol=STRUCTURAL_ATOL):
    """Smallest nu such that ``a`` is banded within [-nu, nu]."""
    a = np.asarray(a)
    k = max(a.shape)
    for nu in range(k):
        if is_banded(a, nu, nu, atol=atol):
            return nu
    return k - 1


def banded_trace_identity_check(a1, a2, nu, rtol=IDENTITY_RTOL):
    """Trace identity for a banded invertible matrix.

    If ``a1`` is banded within [-nu, nu], invertible, and its inverse
    matches ``a2`` on that band, then ``trace(a1 @ a2)`` equals the
    trace of the identity.  Returns True when the identity holds to
    ``rtol``; raises :class:`SingularMatrixError` when ``a1`` is not
    invertible.
    """
    a1 = np.asarray(a1)
    a2 = np.asarray(a2)
    k = a1.shape[0]
    if np.linalg.matrix_rank(a1) < k:
        raise SingularMatrixError("not invertible")
    tr = np.trace(a1 @ a2)
    return abs(tr - k) <= rtol * max(1.0, k)


def chol_logdet(a):
    """Lower Cholesky factor and log-determinant of a Hermitian PD matrix.

    Returns ``(L, logdet)`` with ``L @ L.conj().T == a`` and ``logdet =
    2 * sum(log(diag(L)))``.  Raises :class:`NotPositiveDefiniteError`
    carrying the failing pivot index otherwise.
    """
    a = np.asarray(a)
    try:
        factor = sla.cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(pivot=_first_bad_pivot(a)) from None
    return factor, 2.0 * float(np.sum(np.log(np.real(np.diag(factor)))))


def _first_bad_pivot(a):
    # Smallest leading principal minor that is not positive definite.
    for j in range(1, a.shape[0] + 1):
        try:
            sla.cholesky(a[:j, :j], lower=True)
        except np.linalg.LinAlgError:
            return j - 1
    return None


def kron_vec_apply(m_left, m_right, x):
    """Apply ``kron(m_left, m_right)`` to ``x`` without forming the product.

    Uses ``vec(m_right @ X @ m_left.T) == kron(m_left, m_right) @ vec(X)``
    with column-major ``vec``.
    """
    m_left = np.asarray(m_left)
    m_right = np.asarray(m_right)
    x = np.asarray(x)
    p, q = m_left.shape
    r, s = m_right.shape
    if x.shape[0] != q * s:
        raise ValueError(f"dimension mismatch: expected {q * s}, got {x.shape[0]}")
    xm = x.reshape((s, q), order="F")
    return (m_right @ xm @ m_left.T).reshape(p * r, order="F")


@dataclass(frozen=True)
class FreePositionMap:
    """Ordered free (row, col) positions of a K x K constrained matrix.

    Plays the role of an S x K^2 selection operator acting on
    column-major ``vec``: positions are sorted by (col, row) so that
    ``select`` stacks the surviving entries of each column in order.
    """

    k: int
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def from_free_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        k = mask.shape[0]
        cols, rows = np.nonzero(mask.T)  # (col, row) lexicographic order
        return cls(k=k, rows=rows.copy(), cols=cols.copy())

    @property
    def size(self):
        return int(self.rows.size)

    def free_mask(self):
        mask = np.zeros((self.k, self.k), dtype=bool)
        mask[self.rows, self.cols] = True
        return mask

    def select(self, mat):
        """S-vector of the free entries (the selection operator)."""
        return np.asarray(mat)[self.rows, self.cols]

    def embed(self, vec):
        """Adjoint of ``select``: scatter an S-vector into a K x K matrix."""
        out = np.zeros((self.k, self.k), dtype=complex)
        out[self.rows, self.cols] = vec
        return out

    def kron_gram(self, left, right):
        """S x S matrix ``Sel (left (x) right) Sel^T`` without the Kronecker.

        Entry (a, b) equals ``left[col_a, col_b] * right[row_a, row_b]``,
        which is the (vec-index a, vec-index b) element of the K^2 x K^2
        Kronecker product restricted to the free positions.
        """
        return (np.asarray(left)[np.ix_(self.cols, self.cols)]
                * np.asarray(right)[np.ix_(self.rows, self.rows)])

    def drop_columns(self, dead_cols):
        """Restriction of the map with the given matrix columns removed."""
        dead = np.zeros(self.k, dtype=bool)
        dead[np.asarray(dead_cols, dtype=int)] = True
        keep = ~dead[self.cols]
        return FreePositionMap(k=self.k, rows=self.rows[keep], cols=self.cols[keep])


def forney_band_mask(k, nu):
    """Positions where a causal shortening factor may be non-zero.

    The factor is lower triangular with the main diagonal and the first
    ``nu`` lower diagonals free: ``0 <= r - c <= nu``.
    """
    return band_mask(k, k, 0, nu)


def r_shape_zero_mask(k, nu, shape):
    """Zero set of the cancelation matrix for shape type 'a', 'b' or 'c'.

    'b' zeroes only the main diagonal; 'c' zeroes all diagonals within
    [-nu, nu]; 'a' zeroes the main diagonal plus the lower-triangular
    part of the trailing (nu+1) x (nu+1) corner, which is exactly the
    zero pattern induced by the causal-factor cancelation product.
    """
    r = np.arange(k)[:, None]
    c = np.arange(k)[None, :]
    if shape == "b":
        return r == c
    if shape == "c":
        return np.abs(r - c) <= nu
    if shape == "a":
        corner = (r >= c) & (r >= k - 1 - nu) & (c >= k - 1 - nu)
        return (r == c) | corner
    raise ValueError(f"unknown shape {shape!r}")


@dataclass(frozen=True)
class BandSpec:
    """Trellis memory, cancelation-shape metadata and derived index maps."""

    nu: int
    k: int
    r_shape: str = "b"

    def __post_init__(self):
        if self.nu < 0 or self.nu > self.k - 1:
            raise ValueError(f"nu={self.nu} out of range for k={self.k}")
        if self.r_shape not in ("a", "b", "c"):
            raise ValueError(f"unknown r_shape {self.r_shape!r}")

    @property
    def nu_r(self):
        """Half-width of the central band forced to zero (0 or nu)."""
        return self.nu if self.r_shape == "c" else 0

    def r_free_map(self):
        return FreePositionMap.from_free_mask(
            ~r_shape_zero_mask(self.k, self.nu, self.r_shape))

    def t_free_map(self):
        # The cancelation factor is zero wherever the causal factor is free.
        return FreePositionMap.from_free_mask(~forney_band_mask(self.k, self.nu))

    def f_band_mask(self):
        return forney_band_mask(self.k, self.nu)
