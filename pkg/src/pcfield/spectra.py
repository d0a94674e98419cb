"""Epoched recordings and Hermitian cross-spectrum estimation.

The transform convention is the unnormalized forward DFT with kernel
``exp(-i 2 pi w t / N_T)`` over a rectangular window, which is exactly what
``numpy.fft`` computes; Parseval's identity in the tests pins the scaling.
No tapering, detrending, or epoch overlap: epochs are assumed stationary
and are combined by a plain average of their spectral outer products.

Summation order is part of the contract so that parallel and sequential
runs agree bit for bit: epochs are reduced in index order with numpy's
pairwise tree (``np.mean`` over the epoch axis), and band averages reduce
the per-bin matrices the same way.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    NotPositiveSemidefiniteError,
    ValidationError,
)
from .matcore import HermitianMatrix

#: Cross-spectra may dip this far (times the top eigenvalue) below zero.
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class EpochedRecording:
    """Multichannel epochs, indexed (epoch, sample, channel).

    ``labels`` is optional channel naming carried through CSV round-trips;
    it never affects the numerics.
    """

    data: np.ndarray  # (n_epochs, n_samples, n_channels)
    rate: float
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise DimensionError(
                f"epoch data must be 3-d (epoch, sample, channel), got {data.ndim}-d"
            )
        n_epochs, n_samples, n_channels = data.shape
        if n_epochs < 1 or n_channels < 1:
            raise DimensionError("need at least one epoch and one channel")
        if n_samples < 2:
            raise DimensionError("need at least two samples per epoch")
        if not np.all(np.isfinite(data)):
            raise ValidationError("epoch data contains non-finite values")
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ValidationError(f"sampling rate must be positive, got {self.rate}")
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != n_channels:
                raise DimensionError(
                    f"{len(labels)} labels for {n_channels} channels"
                )
            if len(set(labels)) != len(labels):
                raise ValidationError("channel labels must be unique")
            object.__setattr__(self, "labels", labels)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def n_epochs(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    @property
    def bin_width(self) -> float:
        """Frequency resolution in Hz."""
        return self.rate / self.n_samples


@dataclass(frozen=True)
class CrossSpectrum:
    """Epoch-averaged Hermitian cross-spectral matrix at one frequency.

    ``band`` is set when the matrix is an average over several bins, in
    which case ``frequency`` is the mean of the included bin frequencies.
    """

    matrix: HermitianMatrix
    frequency: float
    n_epochs: int
    band: tuple[float, float] | None = None

    def __post_init__(self):
        if not isinstance(self.matrix, HermitianMatrix):
            object.__setattr__(self, "matrix", HermitianMatrix(self.matrix))
        if self.n_epochs < 1:
            raise ValidationError("n_epochs must be at least 1")
        eigenvalues = np.linalg.eigvalsh(self.matrix.values)
        floor = -PSD_RTOL * max(float(eigenvalues[-1]), 0.0)
        if float(eigenvalues[0]) < floor:
            raise NotPositiveSemidefiniteError(
                f"cross-spectrum has eigenvalue {eigenvalues[0]:.3e} below "
                f"the tolerance floor {floor:.3e}"
            )

    @property
    def values(self) -> np.ndarray:
        return self.matrix.values

    @property
    def dim(self) -> int:
        return self.matrix.dim


def dft_epoch(epoch: np.ndarray, bin: int) -> np.ndarray:
    """Unnormalized forward DFT of one epoch at a single frequency bin.

    ``epoch`` is (n_samples, n_channels); the result is one complex value
    per channel.
    """
    data = np.asarray(epoch, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionError("epoch must be 2-d (sample, channel)")
    n_samples = data.shape[0]
    if not (0 <= bin < n_samples):
        raise ValidationError(f"bin {bin} out of range [0, {n_samples})")
    return np.fft.fft(data, axis=0)[bin]


def _epoch_bin_matrices(rec: EpochedRecording, bins: np.ndarray) -> np.ndarray:
    """Per-bin epoch averages of the spectral outer products.

    Returns (n_bins, n_channels, n_channels). The per-epoch outer product
    ``x x*`` is exactly Hermitian in floating point, and the epoch mean
    (pairwise tree, index order) preserves that exactly.
    """
    spectra = np.fft.fft(rec.data, axis=1)[:, bins, :]  # (n_epochs, n_bins, n_ch)
    outer = spectra[:, :, :, None] * np.conj(spectra[:, :, None, :])
    return np.mean(outer, axis=0)


def cross_spectrum(rec: EpochedRecording, bin: int) -> CrossSpectrum:
    """Average over epochs of the DFT outer products at one bin."""
    if not (0 <= bin < rec.n_samples):
        raise ValidationError(f"bin {bin} out of range [0, {rec.n_samples})")
    matrix = _epoch_bin_matrices(rec, np.array([bin]))[0]
    # trusted construction: symmetrization below is the documented (S+S*)/2
    return CrossSpectrum(
        matrix=HermitianMatrix(matrix, atol=math.inf),
        frequency=bin * rec.bin_width,
        n_epochs=rec.n_epochs,
    )


def band_bins(
    n_samples: int,
    rate: float,
    f_lo: float,
    f_hi: float,
    include_edges: bool = False,
) -> list[int]:
    """DFT bins whose frequency lies in [f_lo, f_hi], both ends inclusive.

    DC and (for even lengths) Nyquist are excluded unless ``include_edges``
    is set; both are degenerate for real signals.
    """
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or f_lo > f_hi:
        raise ValidationError(f"invalid band [{f_lo}, {f_hi}]")
    width = rate / n_samples
    lowest = 0 if include_edges else 1
    highest = n_samples // 2
    if not include_edges and n_samples % 2 == 0:
        highest -= 1
    bins = [b for b in range(lowest, highest + 1) if f_lo <= b * width <= f_hi]
    if not bins:
        raise ValidationError(
            f"band [{f_lo}, {f_hi}] Hz contains no usable DFT bin at "
            f"resolution {width} Hz"
        )
    return bins


def band_cross_spectrum(
    rec: EpochedRecording,
    f_lo: float,
    f_hi: float,
    include_edges: bool = False,
) -> CrossSpectrum:
    """Arithmetic mean of the per-bin cross-spectra across a frequency band.

    The mean of PSD matrices is PSD, so the result satisfies the same
    eigenvalue floor as a single-bin estimate.
    """
    bins = band_bins(rec.n_samples, rec.rate, f_lo, f_hi, include_edges)
    per_bin = _epoch_bin_matrices(rec, np.asarray(bins))
    matrix = np.mean(per_bin, axis=0)
    frequencies = np.asarray(bins, dtype=np.float64) * rec.bin_width
    return CrossSpectrum(
        matrix=HermitianMatrix(matrix, atol=math.inf),
        frequency=float(np.mean(frequencies)),
        n_epochs=rec.n_epochs,
        band=(float(f_lo), float(f_hi)),
    )


# ---------------------------------------------------------------------------
# epoch CSV

def write_epochs_csv(path, rec: EpochedRecording) -> None:
    """Write epochs as `epoch,t,<ch...>` rows, 1-based indices, full precision."""
    labels = rec.labels or tuple(f"ch{i + 1}" for i in range(rec.n_channels))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "t", *labels])
        for i in range(rec.n_epochs):
            for t in range(rec.n_samples):
                row = [i + 1, t + 1]
                row.extend(repr(float(v)) for v in rec.data[i, t])
                writer.writerow(row)


def read_epochs_csv(path, rate: float) -> EpochedRecording:
    """Read `epoch,t,<ch...>` rows into an EpochedRecording.

    Rows must be sorted by (epoch, t) and every epoch must contain the same
    number of samples.
    """
    path = Path(path)
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise FormatError(f"{path}: expected header epoch,t,<channels...>")
        if [h.strip() for h in header[:2]] != ["epoch", "t"]:
            raise FormatError(f"{path}: header must start with epoch,t")
        labels = tuple(h.strip() for h in header[2:])
        n_channels = len(labels)
        rows: list[tuple[int, int, list[float]]] = []
        for number, line in enumerate(reader, start=2):
            if len(line) != 2 + n_channels:
                raise FormatError(
                    f"{path}:{number}: expected {2 + n_channels} fields, got {len(line)}"
                )
            try:
                epoch_id = int(line[0])
                sample_id = int(line[1])
                values = [float(v) for v in line[2:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{number}: {exc}") from exc
            rows.append((epoch_id, sample_id, values))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    keys = [(r[0], r[1]) for r in rows]
    if keys != sorted(keys):
        raise FormatError(f"{path}: rows are not sorted by (epoch, t)")
    if len(set(keys)) != len(keys):
        raise FormatError(f"{path}: duplicate (epoch, t) rows")
    epoch_ids = sorted({r[0] for r in rows})
    counts = {e: 0 for e in epoch_ids}
    for e, _, _ in rows:
        counts[e] += 1
    sizes = set(counts.values())
    if len(sizes) != 1:
        raise FormatError(f"{path}: epochs have unequal sample counts {sorted(sizes)}")
    n_samples = sizes.pop()
    data = np.array([r[2] for r in rows], dtype=np.float64)
    data = data.reshape(len(epoch_ids), n_samples, n_channels)
    return EpochedRecording(data=data, rate=rate, labels=labels)
