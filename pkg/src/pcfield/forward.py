"""Lead fields, linear inverse operators, and their on-disk formats.

The head model is deliberately synthetic: electrodes live on the unit
sphere, sources on a cubic lattice strictly inside ``CORTEX_RADIUS``, and
the gain from a voxel to an electrode is the inverse of their Euclidean
distance. That keeps the gain matrix full row rank (no re-referencing is
applied, which would cost one rank) while staying agnostic about anatomy;
any externally computed gain matrix can be loaded through the same PCF1
container.

PCF1 matrix container (little-endian throughout)::

    bytes 0-3   magic "PCF1"
    byte  4     dtype: 0 = real float64, 1 = complex float64 (re, im pairs)
    bytes 5-8   rows, uint32
    bytes 9-12  cols, uint32
    bytes 13-   row-major float64 payload

Geometry sidecars are plain CSV: ``label,x,y,z`` for electrodes and
``id,x,y,z`` for voxels.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    SingularMatrixError,
    ValidationError,
)

#: Scalp sphere radius is 1; sources must stay strictly inside this radius.
CORTEX_RADIUS = 0.85

#: Lattice spacing that yields roughly 800 voxels inside ``CORTEX_RADIUS``.
DEFAULT_GRID_SPACING = 0.145

#: Rank-loss threshold on the singular values of a gain matrix.
RANK_TOL = 1e-10

#: Dense resolution matrices are refused above this voxel count.
MAX_DENSE_VOXELS = 2000

_PCF1_MAGIC = b"PCF1"
_PCF1_REAL = 0
_PCF1_COMPLEX = 1


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class ElectrodeArray:
    """Named scalp electrodes on the unit sphere."""

    labels: tuple[str, ...]
    positions: np.ndarray  # (n_electrodes, 3), unit norm

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise DimensionError("electrode positions must be (n, 3)")
        if len(self.labels) != positions.shape[0]:
            raise DimensionError("label count does not match position count")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("electrode labels must be unique")
        norms = np.linalg.norm(positions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValidationError("electrode positions must be unit norm")
        positions.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "positions", positions)

    def __len__(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown electrode label {label!r}") from None


@dataclass(frozen=True)
class VoxelGrid:
    """Source positions, with the characteristic spacing used for metrics."""

    positions: np.ndarray  # (n_voxels, 3)
    spacing: float

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise DimensionError("voxel positions must be (n, 3)")
        if positions.shape[0] == 0:
            raise DimensionError("voxel grid is empty")
        if not np.all(np.isfinite(positions)):
            raise ValidationError("voxel positions contain non-finite values")
        if self.spacing <= 0:
            raise ValidationError(f"spacing must be positive, got {self.spacing}")
        if np.unique(positions, axis=0).shape[0] != positions.shape[0]:
            raise ValidationError("voxel grid contains duplicate positions")
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "spacing", float(self.spacing))

    def __len__(self) -> int:
        return self.positions.shape[0]


def _arc_midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mid = a + b
    return mid / np.linalg.norm(mid)


def _from_angles(elevation_deg: float, azimuth_deg: float) -> np.ndarray:
    """Unit vector from elevation above the horizontal plane and azimuth.

    Azimuth is measured from the anterior direction (+y), positive toward
    the left; axes are right-anterior-superior.
    """
    elevation = np.deg2rad(elevation_deg)
    azimuth = np.deg2rad(azimuth_deg)
    return np.array(
        [
            -np.sin(azimuth) * np.cos(elevation),
            np.cos(azimuth) * np.cos(elevation),
            np.sin(elevation),
        ]
    )


def builtin_1020_electrodes() -> ElectrodeArray:
    """The 19-channel 10/20 montage on an ideal unit sphere.

    Construction (elevation above the horizontal plane / azimuth from the
    anterior direction, positive leftward):

    * ``Cz`` at the vertex; ``Fz``/``Pz`` and ``C3``/``C4`` at elevation 54
      on the midline and central coronal arcs.
    * The circumferential ring at elevation 18: ``Fp1``/``Fp2`` at azimuth
      +-18, ``F7``/``F8`` at +-54, ``T3``/``T4`` at +-90, ``T5``/``T6`` at
      +-126, ``O1``/``O2`` at +-162.
    * ``F3``/``F4`` and ``P3``/``P4`` at the great-circle midpoints of
      (``Fz``, ``F7``/``F8``) and (``Pz``, ``T5``/``T6``).

    The resulting coordinates are a stable part of the public contract.
    """
    ring = {
        "Fp1": 18.0, "Fp2": -18.0,
        "F7": 54.0, "F8": -54.0,
        "T3": 90.0, "T4": -90.0,
        "T5": 126.0, "T6": -126.0,
        "O1": 162.0, "O2": -162.0,
    }
    points = {name: _from_angles(18.0, az) for name, az in ring.items()}
    points["Cz"] = _from_angles(90.0, 0.0)
    points["Fz"] = _from_angles(54.0, 0.0)
    points["Pz"] = _from_angles(54.0, 180.0)
    points["C3"] = _from_angles(54.0, 90.0)
    points["C4"] = _from_angles(54.0, -90.0)
    points["F3"] = _arc_midpoint(points["Fz"], points["F7"])
    points["F4"] = _arc_midpoint(points["Fz"], points["F8"])
    points["P3"] = _arc_midpoint(points["Pz"], points["T5"])
    points["P4"] = _arc_midpoint(points["Pz"], points["T6"])

    order = (
        "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
        "T3", "C3", "Cz", "C4", "T4",
        "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
    )
    positions = np.stack([points[name] for name in order])
    return ElectrodeArray(labels=order, positions=positions)


def spherical_grid(
    spacing: float = DEFAULT_GRID_SPACING,
    radius: float = CORTEX_RADIUS,
) -> VoxelGrid:
    """Cubic lattice of source positions strictly inside ``radius``."""
    if spacing <= 0:
        raise ValidationError(f"spacing must be positive, got {spacing}")
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    reach = int(np.floor(radius / spacing))
    axis = np.arange(-reach, reach + 1, dtype=np.float64) * spacing
    xs, ys, zs = np.meshgrid(axis, axis, axis, indexing="ij")
    points = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])
    inside = np.linalg.norm(points, axis=1) < radius
    return VoxelGrid(positions=points[inside], spacing=spacing)


def min_nn_distance(positions: np.ndarray) -> float:
    """Smallest pairwise distance; recovers the spacing of a regular grid."""
    points = np.asarray(positions, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise ValidationError("need at least two positions")
    best = np.inf
    chunk = 512
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        distances = np.linalg.norm(block[:, None, :] - points[None, :, :], axis=2)
        rows = np.arange(block.shape[0])
        distances[rows, start + rows] = np.inf
        best = min(best, float(distances.min()))
    return best


# ---------------------------------------------------------------------------
# lead field


@dataclass(frozen=True)
class LeadField:
    """Gain matrix (electrodes x voxels) with its geometry attached.

    Construction verifies full row rank numerically: the smallest singular
    value must exceed ``RANK_TOL`` times the largest.
    """

    gain: np.ndarray
    electrodes: ElectrodeArray
    voxels: VoxelGrid

    def __post_init__(self):
        gain = np.asarray(self.gain, dtype=np.float64)
        if gain.ndim != 2:
            raise DimensionError("gain must be a 2-d matrix")
        if gain.shape != (len(self.electrodes), len(self.voxels)):
            raise DimensionError(
                f"gain shape {gain.shape} does not match geometry "
                f"({len(self.electrodes)} electrodes, {len(self.voxels)} voxels)"
            )
        if not np.all(np.isfinite(gain)):
            raise ValidationError("gain matrix contains non-finite entries")
        singular_values = np.linalg.svd(gain, compute_uv=False)
        if singular_values[-1] <= RANK_TOL * singular_values[0]:
            raise SingularMatrixError(
                "gain matrix is not of full row rank "
                f"(singular values span [{singular_values[-1]:.3e}, "
                f"{singular_values[0]:.3e}]); perturb the voxel grid or "
                "electrode layout"
            )
        gain.setflags(write=False)
        object.__setattr__(self, "gain", gain)

    @property
    def n_electrodes(self) -> int:
        return self.gain.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.gain.shape[1]

    def fingerprint(self) -> str:
        """Stable content hash of the gain matrix (hex digest)."""
        return gain_fingerprint(self.gain)


def gain_fingerprint(gain: np.ndarray) -> str:
    """sha256 hex digest of a gain matrix's shape and raw bytes."""
    import hashlib

    array = np.ascontiguousarray(gain, dtype=np.float64)
    digest = hashlib.sha256()
    digest.update(str(array.shape).encode())
    digest.update(array.tobytes())
    return digest.hexdigest()


def synth_leadfield(electrodes: ElectrodeArray, voxels: VoxelGrid) -> LeadField:
    """Inverse-distance gain matrix for the synthetic spherical model.

    ``gain[e, v] = 1 / |r_e - r_v|``; no reference transform is applied, so
    the matrix keeps rank equal to the electrode count.
    """
    if len(voxels) < len(electrodes):
        raise DimensionError(
            f"need at least as many voxels ({len(voxels)}) as electrodes "
            f"({len(electrodes)})"
        )
    deltas = electrodes.positions[:, None, :] - voxels.positions[None, :, :]
    distances = np.linalg.norm(deltas, axis=2)
    if np.any(distances == 0.0):
        raise ValidationError("a voxel coincides with an electrode")
    return LeadField(gain=1.0 / distances, electrodes=electrodes, voxels=voxels)


def voxel_under_electrode(leadfield: LeadField, label: str) -> int:
    """Index of the voxel with the strongest gain to the named electrode."""
    row = leadfield.electrodes.index_of(label)
    return int(np.argmax(np.abs(leadfield.gain[row])))


def electrode_seed_voxels(leadfield: LeadField) -> list[int]:
    """Seed voxel for every electrode, in montage order."""
    return [voxel_under_electrode(leadfield, label) for label in leadfield.electrodes.labels]


# ---------------------------------------------------------------------------
# linear inverses


@dataclass(frozen=True)
class InverseOperator:
    """Linear inverse ``T`` (voxels x electrodes) with ``K T = I`` verified."""

    matrix: np.ndarray
    kind: str
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionError("inverse operator must be a 2-d matrix")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)


def _as_gain(leadfield) -> np.ndarray:
    if isinstance(leadfield, LeadField):
        return leadfield.gain
    gain = np.asarray(leadfield, dtype=np.float64)
    if gain.ndim != 2:
        raise DimensionError("gain must be a 2-d matrix")
    return gain


def _verify_right_inverse(gain: np.ndarray, matrix: np.ndarray, kind: str) -> None:
    identity_defect = np.linalg.norm(gain @ matrix - np.eye(gain.shape[0]))
    if identity_defect > 1e-8:
        raise SingularMatrixError(
            f"{kind} inverse failed the K T = I check "
            f"(defect {identity_defect:.3e}); gain matrix is too "
            "ill-conditioned"
        )


def min_norm_inverse(leadfield) -> InverseOperator:
    """Minimum-norm inverse ``T = K' (K K')^(-1)``."""
    gain = _as_gain(leadfield)
    gram = gain @ gain.T
    try:
        solved = np.linalg.solve(gram, gain)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"K K' is numerically singular: {exc}") from exc
    matrix = solved.T
    _verify_right_inverse(gain, matrix, "minimum-norm")
    return InverseOperator(matrix=matrix, kind="minimum_norm")


def weighted_inverse(leadfield, weights) -> InverseOperator:
    """Weighted inverse ``T = W K' (K W K')^(-1)`` for positive diagonal W."""
    gain = _as_gain(leadfield)
    weight_vector = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weight_vector.shape[0] != gain.shape[1]:
        raise DimensionError(
            f"got {weight_vector.shape[0]} weights for {gain.shape[1]} voxels"
        )
    if np.any(weight_vector <= 0) or not np.all(np.isfinite(weight_vector)):
        raise ValidationError("weights must be finite and strictly positive")
    weighted_gain = gain * weight_vector[None, :]
    gram = weighted_gain @ gain.T
    try:
        solved = np.linalg.solve(gram, weighted_gain)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"K W K' is numerically singular: {exc}") from exc
    matrix = solved.T
    _verify_right_inverse(gain, matrix, "weighted")
    return InverseOperator(matrix=matrix, kind="weighted", weights=weight_vector)


def forward_project(leadfield, sources) -> np.ndarray:
    """Project source amplitudes to the sensors: ``K @ sources``."""
    gain = _as_gain(leadfield)
    source_array = np.asarray(sources)
    if source_array.shape[0] != gain.shape[1]:
        raise DimensionError(
            f"source length {source_array.shape[0]} does not match "
            f"{gain.shape[1]} voxels"
        )
    return gain @ source_array


def resolution_matrix(leadfield) -> np.ndarray:
    """Dense resolution matrix ``H = K' (K K')^(-1) K``.

    ``H`` is the symmetric idempotent projector onto the row space of the
    gain matrix; its trace equals the electrode count. Refused above
    ``MAX_DENSE_VOXELS`` voxels; use :func:`resolution_operator` there.
    """
    gain = _as_gain(leadfield)
    if gain.shape[1] > MAX_DENSE_VOXELS:
        raise DimensionError(
            f"{gain.shape[1]} voxels would materialize a "
            f"{gain.shape[1]}x{gain.shape[1]} matrix; use resolution_operator"
        )
    try:
        solved = np.linalg.solve(gain @ gain.T, gain)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"K K' is numerically singular: {exc}") from exc
    dense = gain.T @ solved
    return (dense + dense.T) / 2.0


def resolution_operator(leadfield):
    """Matrix-free form of the resolution matrix: a callable ``x -> H x``."""
    gain = _as_gain(leadfield)
    try:
        gram_inverse = np.linalg.inv(gain @ gain.T)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"K K' is numerically singular: {exc}") from exc

    def apply(vector: np.ndarray) -> np.ndarray:
        return gain.T @ (gram_inverse @ (gain @ vector))

    return apply


def mp_symmetry_defect(leadfield, inverse: InverseOperator) -> float:
    """Asymmetry ``|(T K)' - T K|_F`` of the source-space projector.

    Zero (to rounding) exactly when ``T K`` is symmetric, which holds for
    the minimum-norm inverse but fails for generic weighted inverses; this
    is what separates the reflexive estimator from a Moore-Penrose one.
    For voxel counts above ``MAX_DENSE_VOXELS`` a trace identity avoids the
    dense product at some cost in precision near zero.
    """
    gain = _as_gain(leadfield)
    matrix = inverse.matrix if isinstance(inverse, InverseOperator) else np.asarray(inverse)
    if matrix.shape[0] != gain.shape[1] or matrix.shape[1] != gain.shape[0]:
        raise DimensionError(
            f"inverse shape {matrix.shape} does not match gain {gain.shape}"
        )
    if gain.shape[1] <= MAX_DENSE_VOXELS:
        projector = matrix @ gain
        return float(np.linalg.norm(projector.T - projector))
    cross = gain @ matrix  # K T, electrode-sized
    gram_gain = gain @ gain.T
    gram_inverse = matrix.T @ matrix
    squared = 2.0 * (np.trace(gram_gain @ gram_inverse) - np.trace(cross @ cross))
    return float(np.sqrt(max(squared, 0.0)))


# ---------------------------------------------------------------------------
# PCF1 container and geometry sidecars


def write_pcf1(path, matrix) -> None:
    """Write a real or complex 2-d float64 matrix in the PCF1 container."""
    array = np.asarray(matrix)
    if array.ndim != 2:
        raise DimensionError("PCF1 stores 2-d matrices only")
    if not np.all(np.isfinite(array)):
        raise FormatError("matrix contains non-finite entries")
    if np.iscomplexobj(array):
        dtype_code = _PCF1_COMPLEX
        payload = np.ascontiguousarray(array, dtype="<c16").tobytes()
    else:
        dtype_code = _PCF1_REAL
        payload = np.ascontiguousarray(array, dtype="<f8").tobytes()
    header = _PCF1_MAGIC + struct.pack("<BII", dtype_code, array.shape[0], array.shape[1])
    Path(path).write_bytes(header + payload)


def read_pcf1(path) -> np.ndarray:
    """Read a PCF1 matrix file; returns float64 or complex128."""
    raw = Path(path).read_bytes()
    if len(raw) < 13:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != _PCF1_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    dtype_code, rows, cols = struct.unpack("<BII", raw[4:13])
    if dtype_code not in (_PCF1_REAL, _PCF1_COMPLEX):
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    item = np.dtype("<f8") if dtype_code == _PCF1_REAL else np.dtype("<c16")
    expected = 13 + rows * cols * item.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - 13} bytes, expected {expected - 13} "
            f"for a {rows}x{cols} matrix"
        )
    matrix = np.frombuffer(raw, dtype=item, offset=13).reshape(rows, cols)
    if not np.all(np.isfinite(matrix)):
        raise FormatError(f"{path}: matrix contains non-finite entries")
    native = np.float64 if dtype_code == _PCF1_REAL else np.complex128
    return matrix.astype(native)


def _sidecar_paths(path) -> tuple[Path, Path]:
    base = Path(path)
    stem = base.with_suffix("") if base.suffix else base
    return (
        stem.parent / f"{stem.name}.electrodes.csv",
        stem.parent / f"{stem.name}.voxels.csv",
    )


def write_electrodes_csv(path, electrodes: ElectrodeArray) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["label", "x", "y", "z"])
        for label, position in zip(electrodes.labels, electrodes.positions):
            writer.writerow([label] + [repr(float(c)) for c in position])


def read_electrodes_csv(path) -> ElectrodeArray:
    labels: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["label", "x", "y", "z"]:
            raise FormatError(f"{path}: expected header label,x,y,z")
        for line in reader:
            if len(line) != 4:
                raise FormatError(f"{path}: malformed row {line!r}")
            labels.append(line[0])
            rows.append([float(line[1]), float(line[2]), float(line[3])])
    if not labels:
        raise FormatError(f"{path}: no electrode rows")
    return ElectrodeArray(labels=tuple(labels), positions=np.array(rows))


def write_voxels_csv(path, voxels: VoxelGrid) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", "x", "y", "z"])
        for index, position in enumerate(voxels.positions):
            writer.writerow([index] + [repr(float(c)) for c in position])


def read_voxels_csv(path, spacing: float | None = None) -> VoxelGrid:
    rows: list[tuple[int, float, float, float]] = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "x", "y", "z"]:
            raise FormatError(f"{path}: expected header id,x,y,z")
        for line in reader:
            if len(line) != 4:
                raise FormatError(f"{path}: malformed row {line!r}")
            rows.append((int(line[0]), float(line[1]), float(line[2]), float(line[3])))
    if not rows:
        raise FormatError(f"{path}: no voxel rows")
    rows.sort(key=lambda row: row[0])
    ids = [row[0] for row in rows]
    if ids != list(range(len(rows))):
        raise FormatError(f"{path}: voxel ids must be 0..{len(rows) - 1} without gaps")
    positions = np.array([[row[1], row[2], row[3]] for row in rows])
    if spacing is None:
        spacing = min_nn_distance(positions) if len(rows) > 1 else 1.0
    return VoxelGrid(positions=positions, spacing=spacing)


def save_leadfield(leadfield: LeadField, path) -> None:
    """Write gain matrix (PCF1) plus electrode and voxel CSV sidecars."""
    write_pcf1(path, leadfield.gain)
    electrode_path, voxel_path = _sidecar_paths(path)
    write_electrodes_csv(electrode_path, leadfield.electrodes)
    write_voxels_csv(voxel_path, leadfield.voxels)


def load_leadfield(path) -> LeadField:
    """Read a PCF1 gain matrix and its geometry sidecars.

    The grid spacing is recovered as the minimum nearest-neighbour distance
    of the voxel positions, which is exact for regular lattices.
    """
    gain = read_pcf1(path)
    if np.iscomplexobj(gain):
        raise FormatError(f"{path}: lead field must be real, found complex dtype")
    electrode_path, voxel_path = _sidecar_paths(path)
    electrodes = read_electrodes_csv(electrode_path)
    voxels = read_voxels_csv(voxel_path)
    return LeadField(gain=gain, electrodes=electrodes, voxels=voxels)
