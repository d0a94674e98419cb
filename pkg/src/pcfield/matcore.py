"""Dense Hermitian linear algebra primitives.

Everything here operates on small complex Hermitian matrices (sensor-space
covariances and cross-spectra, at most a few hundred rows). The routines are
pure functions of immutable inputs: eigendecomposition with rank detection,
pseudo-inverse square root, Moore-Penrose inverse, the two-sided check that
characterizes a reflexive generalized inverse, and the textbook partial
coherence of a full-rank covariance, which doubles as a brute-force oracle
for the low-rank field estimator in :mod:`pcfield.confield`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    NotPositiveSemidefiniteError,
    SingularMatrixError,
    ValidationError,
)

#: Relative eigenvalue threshold below which rank is considered lost.
DEFAULT_RANK_TOL = 1e-10

#: Absolute conjugate-symmetry tolerance accepted at construction.
HERMITIAN_ATOL = 1e-12


class HermitianMatrix:
    """Complex square matrix with conjugate symmetry.

    Construction validates ``max|S - S*| <= atol`` and then stores the exact
    symmetrization ``(S + S*) / 2``, so the stored diagonal is exactly real.
    The underlying array is frozen; use :attr:`values` to read it.

    Parameters
    ----------
    entries : array_like
        Square matrix, real or complex.
    atol : float
        Absolute asymmetry tolerated before construction fails. Internal
        callers that have already produced a Hermitian result pass ``inf``
        to skip the check (the symmetrization still runs).
    """

    __slots__ = ("_values",)

    def __init__(self, entries, atol: float = HERMITIAN_ATOL):
        values = np.asarray(entries)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError(
                f"expected a square matrix, got shape {values.shape}"
            )
        if values.shape[0] == 0:
            raise DimensionError("empty matrix (dim 0)")
        values = values.astype(np.complex128, copy=True)
        if not np.all(np.isfinite(values)):
            raise ValidationError("matrix contains non-finite entries")
        asymmetry = float(np.max(np.abs(values - values.conj().T)))
        if not (asymmetry <= atol):
            raise ValidationError(
                f"matrix is not Hermitian: max|S - S*| = {asymmetry:.3e} "
                f"exceeds {atol:.3e}"
            )
        symmetrized = (values + values.conj().T) / 2.0
        symmetrized.setflags(write=False)
        self._values = symmetrized

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    @property
    def values(self) -> np.ndarray:
        """Read-only ``(dim, dim)`` complex128 view."""
        return self._values

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def __repr__(self) -> str:
        return f"HermitianMatrix(dim={self.dim})"


def as_hermitian(matrix, atol: float = HERMITIAN_ATOL) -> HermitianMatrix:
    """Coerce an array or :class:`HermitianMatrix` into a validated instance."""
    if isinstance(matrix, HermitianMatrix):
        return matrix
    return HermitianMatrix(matrix, atol=atol)


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectral factorization ``S = vectors @ diag(values) @ vectors*``.

    ``eigenvalues`` is real and nonincreasing; entries whose magnitude fell
    at or below the rank tolerance were forced to exactly zero, and ``rank``
    counts the survivors. ``eigenvectors`` has unit-norm columns.
    """

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    rank: int

    def reconstruct(self) -> np.ndarray:
        """Return ``vectors @ diag(values) @ vectors*``."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.conj().T


def hermitian_eig(matrix, tol: float = DEFAULT_RANK_TOL) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix with rank detection.

    Eigenvalues are returned in nonincreasing order; any eigenvalue with
    magnitude at or below ``tol * max|eigenvalue|`` is reported as exactly
    zero. For a PSD Hermitian matrix this coincides with its singular value
    decomposition.

    Raises
    ------
    ValidationError
        If the input is not Hermitian to within the construction tolerance.
    DimensionError
        If the input is empty or not square.
    """
    if tol < 0:
        raise ValidationError(f"tol must be nonnegative, got {tol}")
    hermitian = as_hermitian(matrix)
    eigvals, eigvecs = np.linalg.eigh(hermitian.values)
    eigvals = eigvals[::-1].copy()
    eigvecs = eigvecs[:, ::-1].copy()
    scale = float(np.max(np.abs(eigvals)))
    negligible = np.abs(eigvals) <= tol * scale
    eigvals[negligible] = 0.0
    rank = int(np.count_nonzero(eigvals))
    return EigenDecomposition(eigenvectors=eigvecs, eigenvalues=eigvals, rank=rank)


def _require_psd(decomposition: EigenDecomposition, context: str) -> None:
    smallest = float(decomposition.eigenvalues[-1])
    if smallest < 0.0:
        raise NotPositiveSemidefiniteError(
            f"{context}: eigenvalue {smallest:.6e} is negative beyond the "
            "rank tolerance"
        )


def inv_sqrt_hermitian(matrix, tol: float = DEFAULT_RANK_TOL) -> HermitianMatrix:
    """Hermitian pseudo-inverse square root of a PSD matrix.

    Returns ``U = vectors @ diag(values^(-1/2)) @ vectors*`` over the
    eigenvalues above the rank tolerance; eigenvalues reported as zero
    contribute zero, so ``U @ S @ U`` projects onto the column space of
    ``S`` rather than the identity when ``S`` is singular.

    Raises
    ------
    NotPositiveSemidefiniteError
        If an eigenvalue is below ``-tol * max|eigenvalue|``.
    """
    decomposition = hermitian_eig(matrix, tol)
    _require_psd(decomposition, "inv_sqrt_hermitian")
    eigvals = decomposition.eigenvalues
    positive = eigvals > 0.0
    inv_sqrt = np.zeros_like(eigvals)
    inv_sqrt[positive] = 1.0 / np.sqrt(eigvals[positive])
    vectors = decomposition.eigenvectors
    result = (vectors * inv_sqrt) @ vectors.conj().T
    return HermitianMatrix(result, atol=math.inf)


def moore_penrose(matrix, tol: float = DEFAULT_RANK_TOL) -> HermitianMatrix:
    """Moore-Penrose inverse of a Hermitian PSD matrix.

    The result satisfies all four Moore-Penrose conditions: ``S G S = S``,
    ``G S G = G``, and both products ``S G`` and ``G S`` are Hermitian.

    Raises
    ------
    NotPositiveSemidefiniteError
        If an eigenvalue is below ``-tol * max|eigenvalue|``.
    """
    decomposition = hermitian_eig(matrix, tol)
    _require_psd(decomposition, "moore_penrose")
    eigvals = decomposition.eigenvalues
    positive = eigvals > 0.0
    inverted = np.zeros_like(eigvals)
    inverted[positive] = 1.0 / eigvals[positive]
    vectors = decomposition.eigenvectors
    result = (vectors * inverted) @ vectors.conj().T
    return HermitianMatrix(result, atol=math.inf)


@dataclass(frozen=True)
class ReflexiveCheck:
    """Outcome of the two-identity reflexive generalized-inverse test.

    ``ginverse_residual`` is ``|A G A - A|_F / |A|_F`` (the generalized
    inverse identity) and ``reflexive_residual`` is ``|G A G - G|_F / |G|_F``
    (the reflexivity identity). ``is_reflexive`` is true iff both pass the
    requested tolerance.
    """

    is_reflexive: bool
    ginverse_residual: float
    reflexive_residual: float

    def __bool__(self) -> bool:
        return self.is_reflexive


def _relative_residual(deviation: np.ndarray, reference: np.ndarray) -> float:
    deviation_norm = float(np.linalg.norm(deviation))
    reference_norm = float(np.linalg.norm(reference))
    if reference_norm == 0.0:
        return 0.0 if deviation_norm == 0.0 else math.inf
    return deviation_norm / reference_norm


def is_reflexive_ginverse(candidate_a, candidate_g, tol: float = 1e-8) -> ReflexiveCheck:
    """Test whether ``G`` is a reflexive generalized inverse of ``A``.

    Both ``A G A = A`` and ``G A G = G`` must hold to the relative Frobenius
    tolerance; the two residuals are reported so a caller can see which
    identity failed. Note the first identity alone admits many non-reflexive
    inverses, so both are required.
    """
    a = np.asarray(candidate_a, dtype=np.complex128)
    g = np.asarray(candidate_g, dtype=np.complex128)
    if a.ndim != 2 or g.ndim != 2:
        raise DimensionError("inputs must be 2-d matrices")
    if a.shape[1] != g.shape[0] or g.shape[1] != a.shape[0]:
        raise DimensionError(
            f"non-conformable shapes {a.shape} and {g.shape}"
        )
    aga = a @ g @ a
    gag = g @ a @ g
    ginverse_residual = _relative_residual(aga - a, a)
    reflexive_residual = _relative_residual(gag - g, g)
    passed = ginverse_residual <= tol and reflexive_residual <= tol
    return ReflexiveCheck(
        is_reflexive=passed,
        ginverse_residual=ginverse_residual,
        reflexive_residual=reflexive_residual,
    )


def direct_partial_coherence(matrix, tol: float = DEFAULT_RANK_TOL) -> HermitianMatrix:
    """Partial coherence of a strictly positive definite covariance.

    Inverts the covariance with a dense LU solve and rescales the inverse by
    its diagonal: ``P = E Q E`` with ``Q = S^(-1)`` and
    ``E = diag(Q)^(-1/2)``. The diagonal of ``P`` is set to exactly one,
    which the normalization forces mathematically.

    This is the classical full-rank definition. It exists as the brute-force
    reference for the rank-deficient field estimator and fails loudly on
    singular input rather than falling back to a generalized inverse.

    Raises
    ------
    SingularMatrixError
        If the smallest eigenvalue is at or below ``tol`` times the largest;
        rank-deficient covariances must go through the field estimator.
    """
    hermitian = as_hermitian(matrix)
    eigvals = np.linalg.eigvalsh(hermitian.values)
    largest = float(eigvals[-1])
    smallest = float(eigvals[0])
    if smallest <= tol * max(abs(largest), abs(smallest)):
        raise SingularMatrixError(
            f"covariance is singular at rank tolerance {tol:.1e} "
            f"(eigenvalue range [{smallest:.3e}, {largest:.3e}]); "
            "use the low-rank field estimator instead"
        )
    inverse = np.linalg.inv(hermitian.values)
    scaling = 1.0 / np.sqrt(np.real(np.diag(inverse)))
    partial = inverse * np.outer(scaling, scaling)
    np.fill_diagonal(partial, 1.0)
    return HermitianMatrix(partial, atol=math.inf)
