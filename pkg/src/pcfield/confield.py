"""Connectivity fields on the cortical grid.

Two estimators live here. The classical field propagates a sensor
cross-spectrum through an explicit linear inverse and reads coherences off
the implied source covariance. The partial field never chooses an inverse:
it builds the generalized inverse of the source covariance directly from
the lead field and the (pseudo-)inverted sensor cross-spectrum, which is
the quantity whose off-diagonal structure survives common-source mixing.

Everything is held in factored form. The implied voxel-by-voxel matrices
``A A*`` and ``W W*`` are never materialized; seeded maps cost one
matrix-vector product per seed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    SingularMatrixError,
    ValidationError,
)
from .forward import (
    InverseOperator,
    LeadField,
    RANK_TOL,
    VoxelGrid,
    _as_gain,
    gain_fingerprint,
    read_pcf1,
    resolution_matrix,
    write_pcf1,
)
from .matcore import (
    DEFAULT_RANK_TOL,
    HermitianMatrix,
    ReflexiveCheck,
    _relative_residual,
    as_hermitian,
    hermitian_eig,
)
from .spectra import CrossSpectrum

#: Row norms of the partial factor this far (relative) below the largest
#: row are treated as voxels invisible to the montage.
ZERO_ROW_RTOL = 1e-12

#: Coherence magnitudes may exceed 1 by at most this before rejection.
MAGNITUDE_TOL = 1e-9

#: Re(r)^2 within this of 1 makes the lagged measure degenerate.
DEGENERATE_TOL = 1e-12

#: Dense voxel-by-voxel output is refused above this grid size.
MAX_DENSE_VOXELS = 2000

#: Legal seeded-map measure tags.
MEASURES = ("classical_coh", "classical_lagged", "partial_coh", "partial_lagged")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ConnectivityFactor:
    """Low-rank square root ``W`` of the partial coherence field.

    The implied field is ``P = W W*`` with unit diagonal; each row of ``W``
    has unit norm by construction. ``effective_rank`` is the rank of the
    sensor cross-spectrum the factor was built from, and ``fingerprint``
    ties the factor to the gain matrix it belongs to.
    """

    W: np.ndarray  # (n_voxels, n_electrodes) complex
    method: str
    band: tuple[float, float]
    fingerprint: str
    effective_rank: int

    def __post_init__(self):
        matrix = np.asarray(self.W, dtype=np.complex128)
        if matrix.ndim != 2:
            raise DimensionError("factor must be a 2-d matrix")
        if self.method != "partial":
            raise ValidationError(f"unknown factor method {self.method!r}")
        norms = np.linalg.norm(matrix, axis=1)
        worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
        if worst > 1e-10:
            raise ValidationError(
                f"factor rows must have unit norm (worst deviation {worst:.3e})"
            )
        matrix.setflags(write=False)
        object.__setattr__(self, "W", matrix)
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))

    @property
    def n_voxels(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class ClassicalField:
    """Factored source covariance ``S_J = A A*`` from an explicit inverse.

    ``diag`` holds the per-voxel source variances. A voxel with exactly
    zero variance is dead: it cannot appear in any coherence query.
    """

    A: np.ndarray  # (n_voxels, rank) complex
    diag: np.ndarray  # (n_voxels,) real

    def __post_init__(self):
        factor = np.asarray(self.A, dtype=np.complex128)
        variances = np.asarray(self.diag, dtype=np.float64)
        if factor.ndim != 2:
            raise DimensionError("factor must be a 2-d matrix")
        if variances.shape != (factor.shape[0],):
            raise DimensionError("diag length does not match factor rows")
        norms = np.sum(np.abs(factor) ** 2, axis=1)
        if not np.allclose(variances, norms, rtol=1e-10, atol=1e-10):
            raise ValidationError("diag does not match the factor row norms")
        factor.setflags(write=False)
        variances.setflags(write=False)
        object.__setattr__(self, "A", factor)
        object.__setattr__(self, "diag", variances)

    @property
    def n_voxels(self) -> int:
        return self.A.shape[0]

    @property
    def dead_voxels(self) -> np.ndarray:
        """Indices with zero source variance (excluded from coherence)."""
        return np.flatnonzero(self.diag == 0.0)


@dataclass(frozen=True)
class SeededMap:
    """One row of a connectivity field, as nonnegative display values.

    ``seed`` is ``None`` for composites built by :func:`max_over_seeds`.
    Values are clipped into [0, 1] after validation.
    """

    seed: int | None
    values: np.ndarray
    measure: str

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValidationError(
                f"unknown measure {self.measure!r}, expected one of {MEASURES}"
            )
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DimensionError("map values must be a nonempty vector")
        if not np.all(np.isfinite(values)):
            raise ValidationError("map contains non-finite values")
        if float(values.min()) < -MAGNITUDE_TOL or float(values.max()) > 1.0 + MAGNITUDE_TOL:
            raise ValidationError(
                f"map values outside [0, 1]: range "
                f"[{values.min():.6g}, {values.max():.6g}]"
            )
        if self.seed is not None:
            seed = int(self.seed)
            if not (0 <= seed < values.size):
                raise ValidationError(f"seed {seed} out of range for {values.size} voxels")
            if self.measure.endswith("_coh") and abs(values[seed] - 1.0) > MAGNITUDE_TOL:
                raise ValidationError("seed self-coherence must be 1")
            object.__setattr__(self, "seed", seed)
        values = np.clip(values, 0.0, 1.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_voxels(self) -> int:
        return self.values.size


# ---------------------------------------------------------------------------
# shared coercions


def _spectrum_matrix(spectrum) -> HermitianMatrix:
    if isinstance(spectrum, CrossSpectrum):
        return spectrum.matrix
    return as_hermitian(spectrum)


def _spectrum_band(spectrum) -> tuple[float, float]:
    if isinstance(spectrum, CrossSpectrum):
        if spectrum.band is not None:
            return spectrum.band
        return (spectrum.frequency, spectrum.frequency)
    return (math.nan, math.nan)


def _inverse_matrix(inverse) -> np.ndarray:
    if isinstance(inverse, InverseOperator):
        return inverse.matrix
    matrix = np.asarray(inverse, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError("inverse operator must be a 2-d matrix")
    return matrix


def _full_rank_gain(leadfield) -> np.ndarray:
    """Gain matrix with the full-row-rank precondition enforced."""
    gain = _as_gain(leadfield)
    if isinstance(leadfield, LeadField):
        return gain  # already validated at construction
    singular_values = np.linalg.svd(gain, compute_uv=False)
    if singular_values[-1] <= RANK_TOL * singular_values[0]:
        raise SingularMatrixError("gain matrix is not of full row rank")
    return gain


# ---------------------------------------------------------------------------
# classical route


def classical_field(inverse, spectrum) -> ClassicalField:
    """Source covariance factor ``A = T Gamma Lambda^(1/2)`` for inverse T.

    The implied covariance is ``S_J = T S T' = A A*``; it is never formed.
    Entry (k, l) is recoverable as ``row_k(A) . conj(row_l(A))``.
    """
    matrix = _inverse_matrix(inverse)
    spectrum_matrix = _spectrum_matrix(spectrum)
    if matrix.shape[1] != spectrum_matrix.dim:
        raise DimensionError(
            f"inverse expects {matrix.shape[1]} channels, spectrum has "
            f"{spectrum_matrix.dim}"
        )
    decomposition = hermitian_eig(spectrum_matrix)
    half = decomposition.eigenvectors * np.sqrt(
        np.maximum(decomposition.eigenvalues, 0.0)
    )
    factor = matrix @ half
    variances = np.sum(np.abs(factor) ** 2, axis=1)
    return ClassicalField(A=factor, diag=variances)


def classical_coherence(field: ClassicalField, k: int, l: int) -> complex:
    """Complex coherence ``S_kl / sqrt(S_kk S_ll)`` of two voxels."""
    n = field.n_voxels
    if not (0 <= k < n and 0 <= l < n):
        raise ValidationError(f"voxel pair ({k}, {l}) out of range for {n} voxels")
    for voxel in (k, l):
        if field.diag[voxel] == 0.0:
            raise ValidationError(
                f"voxel {voxel} has zero source variance; coherence is undefined"
            )
    if k == l:
        return 1.0 + 0.0j
    cross = np.dot(field.A[k], np.conj(field.A[l]))
    return complex(cross / math.sqrt(field.diag[k] * field.diag[l]))


# ---------------------------------------------------------------------------
# partial route


def partial_field(leadfield, spectrum, tol: float = DEFAULT_RANK_TOL) -> ConnectivityFactor:
    """Unit-row square root ``W`` of the whole-cortex partial coherence field.

    The sensor cross-spectrum is eigendecomposed once; eigenvalues at or
    below ``tol`` times the largest are treated as zero and handled by the
    pseudo-inverse branch, which activates automatically when the spectrum
    is rank deficient (fewer epochs than channels, for instance). The gain
    matrix is then pulled back through the inverse square root and each
    voxel row is normalized to unit length.

    No explicit inverse operator participates: the result is a function of
    the gain matrix and the cross-spectrum only.
    """
    gain = _full_rank_gain(leadfield)
    spectrum_matrix = _spectrum_matrix(spectrum)
    if spectrum_matrix.dim != gain.shape[0]:
        raise DimensionError(
            f"gain has {gain.shape[0]} electrodes, spectrum has "
            f"{spectrum_matrix.dim} channels"
        )
    decomposition = hermitian_eig(spectrum_matrix, tol=tol)
    positive = decomposition.eigenvalues > 0.0
    if not np.any(positive):
        raise SingularMatrixError("cross-spectrum has no positive eigenvalues")
    inv_half = np.zeros_like(decomposition.eigenvalues)
    inv_half[positive] = 1.0 / np.sqrt(decomposition.eigenvalues[positive])
    # V = K' (Gamma Lambda^(-1/2) Gamma*): same row norms and Gram matrix
    # as K' Gamma Lambda^(-1/2), so the rotated form saves nothing; keep
    # the full Hermitian inverse square root for fidelity to W = E K' U.
    inverse_root = (decomposition.eigenvectors * inv_half) @ decomposition.eigenvectors.conj().T
    pulled_back = gain.T @ inverse_root
    row_norms = np.linalg.norm(pulled_back, axis=1)
    largest = float(np.max(row_norms))
    dead = row_norms <= ZERO_ROW_RTOL * largest
    if np.any(dead):
        first = int(np.flatnonzero(dead)[0])
        raise ValidationError(
            f"voxel {first} is invisible to all electrodes under this "
            "cross-spectrum (zero factor row)"
        )
    factor = pulled_back / row_norms[:, None]
    if isinstance(leadfield, LeadField):
        digest = leadfield.fingerprint()
    else:
        digest = gain_fingerprint(gain)
    return ConnectivityFactor(
        W=factor,
        method="partial",
        band=_spectrum_band(spectrum),
        fingerprint=digest,
        effective_rank=decomposition.rank,
    )


def pairwise_partial(
    leadfield, spectrum, k: int, l: int, tol: float = DEFAULT_RANK_TOL
) -> complex:
    """Partial coherence of one voxel pair from its two gain columns alone.

    Evaluates ``g_k' S+ g_l / sqrt((g_k' S+ g_k)(g_l' S+ g_l))`` where
    ``S+`` is the (pseudo-)inverse of the sensor cross-spectrum. No other
    voxel enters, so the value is independent of the rest of the grid.
    """
    gain = _full_rank_gain(leadfield)
    n = gain.shape[1]
    if not (0 <= k < n and 0 <= l < n):
        raise ValidationError(f"voxel pair ({k}, {l}) out of range for {n} voxels")
    if k == l:
        return 1.0 + 0.0j
    spectrum_matrix = _spectrum_matrix(spectrum)
    if spectrum_matrix.dim != gain.shape[0]:
        raise DimensionError(
            f"gain has {gain.shape[0]} electrodes, spectrum has "
            f"{spectrum_matrix.dim} channels"
        )
    decomposition = hermitian_eig(spectrum_matrix, tol=tol)
    positive = decomposition.eigenvalues > 0.0
    if not np.any(positive):
        raise SingularMatrixError("cross-spectrum has no positive eigenvalues")
    basis = decomposition.eigenvectors[:, positive]
    scale = 1.0 / np.sqrt(decomposition.eigenvalues[positive])
    # coordinates of the two gain columns in the whitened sensor basis
    left = (basis.conj().T @ gain[:, k]) * scale
    right = (basis.conj().T @ gain[:, l]) * scale
    quad_kk = float(np.real(np.vdot(left, left)))
    quad_ll = float(np.real(np.vdot(right, right)))
    if quad_kk <= 0.0 or quad_ll <= 0.0:
        raise SingularMatrixError(
            f"zero denominator: voxel {k if quad_kk <= 0 else l} has no "
            "support in the cross-spectrum range"
        )
    cross = complex(np.vdot(left, right))
    return cross / math.sqrt(quad_kk * quad_ll)


def lagged_measure(r):
    """Lagged component ``sqrt(Im(r)^2 / (1 - Re(r)^2))`` of a coherence.

    Accepts a scalar or an array. Purely real coherence gives 0 (no lag);
    where ``Re(r)^2`` reaches 1 the denominator collapses and the value is
    reported as 0 with a RuntimeWarning, since instantaneous coupling
    saturates the measure. Results are clipped to [0, 1].
    """
    array = np.asarray(r, dtype=np.complex128)
    magnitude = np.abs(array)
    if np.any(magnitude > 1.0 + MAGNITUDE_TOL):
        raise ValidationError(
            f"coherence magnitude {float(np.max(magnitude)):.6g} exceeds 1"
        )
    real_sq = array.real**2
    degenerate = real_sq >= 1.0 - DEGENERATE_TOL
    if np.any(degenerate):
        warnings.warn(
            "instantaneous coherence saturates the lagged measure; reporting 0",
            RuntimeWarning,
            stacklevel=2,
        )
    denominator = np.where(degenerate, 1.0, 1.0 - real_sq)
    out = np.sqrt(array.imag**2 / denominator)
    out = np.where(degenerate, 0.0, np.minimum(out, 1.0))
    if np.ndim(r) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# seeded maps


def _seed_row(source, seed: int) -> np.ndarray:
    """Complex coherence of every voxel against the seed, O(N_V * N_E)."""
    if isinstance(source, ConnectivityFactor):
        return source.W @ np.conj(source.W[seed])
    if isinstance(source, ClassicalField):
        dead = source.dead_voxels
        if dead.size:
            raise ValidationError(
                f"{dead.size} voxel(s) have zero source variance "
                f"(first: {int(dead[0])}); classical coherence is undefined"
            )
        row = source.A @ np.conj(source.A[seed])
        return row / np.sqrt(source.diag * source.diag[seed])
    raise ValidationError(
        f"seeded maps need a ClassicalField or ConnectivityFactor, got "
        f"{type(source).__name__}"
    )


def seeded_map(source, seed: int, measure: str) -> SeededMap:
    """Whole-grid connectivity of one seed voxel under the given measure.

    Computes a single row of the implied field, never the full matrix.
    Coherence tags report magnitudes (seed entry exactly 1), lagged tags
    apply :func:`lagged_measure` (seed entry exactly 0, no self-lag).
    """
    if measure not in MEASURES:
        raise ValidationError(
            f"unknown measure {measure!r}, expected one of {MEASURES}"
        )
    expected = ConnectivityFactor if measure.startswith("partial") else ClassicalField
    if not isinstance(source, expected):
        raise ValidationError(
            f"measure {measure!r} requires a {expected.__name__}, got "
            f"{type(source).__name__}"
        )
    n = source.n_voxels
    if not (0 <= seed < n):
        raise ValidationError(f"seed {seed} out of range for {n} voxels")
    row = _seed_row(source, seed)
    if measure.endswith("_coh"):
        values = np.abs(row)
        values[seed] = 1.0
    else:
        row = row.copy()
        row[seed] = 0.0  # self-coherence is 1; mask before the lagged form
        values = lagged_measure(row)
        values[seed] = 0.0
    return SeededMap(seed=seed, values=values, measure=measure)


def max_over_seeds(maps) -> SeededMap:
    """Per-voxel maximum across seeded maps, own-seed entries excluded.

    Each map's seed entry is masked before the maximum so that the trivial
    self-connection (1 for coherence tags) cannot dominate the composite.
    A voxel with no contributors at all comes out as 0. The result carries
    ``seed = None``.
    """
    maps = list(maps)
    if not maps:
        raise ValidationError("need at least one seeded map")
    measure = maps[0].measure
    n = maps[0].n_voxels
    stacked = np.empty((len(maps), n), dtype=np.float64)
    for index, entry in enumerate(maps):
        if entry.measure != measure:
            raise ValidationError(
                f"mixed measure tags: {entry.measure!r} vs {measure!r}"
            )
        if entry.n_voxels != n:
            raise DimensionError("maps cover different grids")
        if entry.seed is None:
            raise ValidationError("composites cannot be composed again")
        stacked[index] = entry.values
        stacked[index, entry.seed] = -1.0
    composite = stacked.max(axis=0)
    composite[composite < 0.0] = 0.0
    return SeededMap(seed=None, values=composite, measure=measure)


# ---------------------------------------------------------------------------
# structural checks


def reflexive_residuals(leadfield, spectrum, inverse, tol: float = 1e-8) -> ReflexiveCheck:
    """Verify that ``G = K' S+ K`` is a reflexive g-inverse of ``T S T'``.

    Everything stays in factored form: with ``S_J = B B*`` and ``G = C C*``
    the two defining residuals reduce to small-matrix expressions through
    the thin QR factors of ``B`` and ``C``, so no voxel-by-voxel matrix is
    formed at any grid size.
    """
    gain = _full_rank_gain(leadfield)
    matrix = _inverse_matrix(inverse)
    spectrum_matrix = _spectrum_matrix(spectrum)
    if matrix.shape != (gain.shape[1], gain.shape[0]):
        raise DimensionError(
            f"inverse shape {matrix.shape} does not match gain {gain.shape}"
        )
    if spectrum_matrix.dim != gain.shape[0]:
        raise DimensionError("spectrum dimension does not match the gain matrix")
    decomposition = hermitian_eig(spectrum_matrix)
    positive = decomposition.eigenvalues > 0.0
    half = decomposition.eigenvectors[:, positive] * np.sqrt(
        decomposition.eigenvalues[positive]
    )
    inverse_half = decomposition.eigenvectors[:, positive] / np.sqrt(
        decomposition.eigenvalues[positive]
    )
    covariance_factor = matrix @ half  # S_J = B B*
    ginverse_factor = gain.T @ inverse_half  # G = C C*
    r_cov = np.linalg.qr(covariance_factor, mode="r")
    r_gin = np.linalg.qr(ginverse_factor, mode="r")
    mixed = covariance_factor.conj().T @ ginverse_factor
    eye = np.eye(mixed.shape[0])
    ginverse_residual = _relative_residual(
        r_cov @ (mixed @ mixed.conj().T - eye) @ r_cov.conj().T,
        r_cov @ r_cov.conj().T,
    )
    reflexive_residual = _relative_residual(
        r_gin @ (mixed.conj().T @ mixed - np.eye(mixed.shape[1])) @ r_gin.conj().T,
        r_gin @ r_gin.conj().T,
    )
    return ReflexiveCheck(
        is_reflexive=ginverse_residual <= tol and reflexive_residual <= tol,
        ginverse_residual=ginverse_residual,
        reflexive_residual=reflexive_residual,
    )


def resolution_check(leadfield, source_covariance, tol: float = 1e-8) -> ReflexiveCheck:
    """Check the estimator against the resolution-filtered truth.

    For a positive definite true source covariance ``S_J``, the sensor
    covariance it generates is ``K S_J K'``, and the estimator's
    ``G = K' (K S_J K')^(-1) K`` must be a reflexive g-inverse of the
    filtered covariance ``M = H S_J H`` seen through the resolution
    projector ``H``. Dense diagnostic, restricted to small grids.
    """
    gain = _full_rank_gain(leadfield)
    n_voxels = gain.shape[1]
    if n_voxels > 500:
        raise DimensionError(
            f"resolution_check is a dense diagnostic ({n_voxels} voxels > 500)"
        )
    truth = as_hermitian(source_covariance)
    if truth.dim != n_voxels:
        raise DimensionError("source covariance does not match the voxel count")
    eigenvalues = np.linalg.eigvalsh(truth.values)
    if eigenvalues[0] <= RANK_TOL * max(float(eigenvalues[-1]), 0.0):
        raise ValidationError("true source covariance must be positive definite")
    sensor = gain @ truth.values @ gain.T
    sensor_eigs = np.linalg.eigvalsh(sensor)
    if sensor_eigs[0] <= RANK_TOL * float(sensor_eigs[-1]):
        raise SingularMatrixError("implied sensor covariance is singular")
    ginverse = gain.T @ np.linalg.solve(sensor, gain)
    projector = resolution_matrix(gain)
    filtered = projector @ truth.values @ projector
    ginverse_residual = _relative_residual(
        filtered @ ginverse @ filtered - filtered, filtered
    )
    reflexive_residual = _relative_residual(
        ginverse @ filtered @ ginverse - ginverse, ginverse
    )
    return ReflexiveCheck(
        is_reflexive=ginverse_residual <= tol and reflexive_residual <= tol,
        ginverse_residual=ginverse_residual,
        reflexive_residual=reflexive_residual,
    )


def dominant_component(factor) -> tuple[np.ndarray, float]:
    """Leading left singular vector of the factor and its singular value.

    Works from the small Gram matrix ``W* W`` (electrode-sized), so the
    voxel dimension never appears squared. The vector's global phase is
    fixed by making its largest-magnitude entry real and positive.
    """
    if isinstance(factor, ConnectivityFactor):
        matrix = factor.W
    else:
        matrix = np.asarray(factor, dtype=np.complex128)
        if matrix.ndim != 2:
            raise DimensionError("factor must be a 2-d matrix")
    gram = matrix.conj().T @ matrix
    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    top = float(eigenvalues[-1])
    if top <= 0.0:
        raise ValidationError("factor is zero; no dominant component")
    singular_value = math.sqrt(top)
    weights = matrix @ eigenvectors[:, -1] / singular_value
    weights = weights / np.linalg.norm(weights)
    anchor = int(np.argmax(np.abs(weights)))
    phase = weights[anchor] / abs(weights[anchor])
    return weights * np.conj(phase), singular_value


# ---------------------------------------------------------------------------
# persistence


def _manifest_path(path) -> Path:
    base = Path(path)
    stem = base.with_suffix("") if base.suffix else base
    return stem.parent / f"{stem.name}.manifest.csv"


def save_factor(path, factor: ConnectivityFactor) -> None:
    """Write the factor matrix (complex PCF1) plus a CSV manifest."""
    write_pcf1(path, factor.W.astype(np.complex128))
    with open(_manifest_path(path), "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", "value"])
        writer.writerow(["method", factor.method])
        writer.writerow(["band_lo", repr(factor.band[0])])
        writer.writerow(["band_hi", repr(factor.band[1])])
        writer.writerow(["fingerprint", factor.fingerprint])
        writer.writerow(["effective_rank", factor.effective_rank])


def load_factor(path) -> ConnectivityFactor:
    matrix = read_pcf1(path)
    manifest_path = _manifest_path(path)
    entries: dict[str, str] = {}
    with open(manifest_path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["key", "value"]:
            raise FormatError(f"{manifest_path}: expected header key,value")
        for line in reader:
            if len(line) != 2:
                raise FormatError(f"{manifest_path}: malformed row {line!r}")
            entries[line[0].strip()] = line[1]
    required = ("method", "band_lo", "band_hi", "fingerprint", "effective_rank")
    missing = [key for key in required if key not in entries]
    if missing:
        raise FormatError(f"{manifest_path}: missing keys {missing}")
    try:
        band = (float(entries["band_lo"]), float(entries["band_hi"]))
        rank = int(entries["effective_rank"])
    except ValueError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc
    return ConnectivityFactor(
        W=np.asarray(matrix, dtype=np.complex128),
        method=entries["method"],
        band=band,
        fingerprint=entries["fingerprint"],
        effective_rank=rank,
    )


def write_map_csv(path, seeded: SeededMap, voxels: VoxelGrid) -> None:
    """Write a map as `voxel_id,x,y,z,value` rows in voxel order."""
    if len(voxels) != seeded.n_voxels:
        raise DimensionError(
            f"map covers {seeded.n_voxels} voxels, grid has {len(voxels)}"
        )
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["voxel_id", "x", "y", "z", "value"])
        for index, (position, value) in enumerate(zip(voxels.positions, seeded.values)):
            writer.writerow(
                [index] + [repr(float(c)) for c in position] + [repr(float(value))]
            )


def read_map_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a map CSV; returns (positions, values) in voxel-id order."""
    rows: list[tuple[int, float, float, float, float]] = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "voxel_id", "x", "y", "z", "value",
        ]:
            raise FormatError(f"{path}: expected header voxel_id,x,y,z,value")
        for line in reader:
            if len(line) != 5:
                raise FormatError(f"{path}: malformed row {line!r}")
            rows.append(
                (int(line[0]), float(line[1]), float(line[2]), float(line[3]), float(line[4]))
            )
    if not rows:
        raise FormatError(f"{path}: no map rows")
    rows.sort(key=lambda row: row[0])
    ids = [row[0] for row in rows]
    if ids != list(range(len(rows))):
        raise FormatError(f"{path}: voxel ids must be 0..{len(rows) - 1} without gaps")
    positions = np.array([[row[1], row[2], row[3]] for row in rows])
    values = np.array([row[4] for row in rows])
    return positions, values
