"""Command-line front end.

Subcommands mirror the analysis pipeline: ``leadfield`` builds or imports
a gain matrix, ``simulate`` synthesizes the two-source recording,
``xspec`` estimates a band-averaged cross-spectrum, ``connect`` computes
seeded connectivity maps and their max composite, ``compare`` scores map
directories against the ground truth, and ``render`` draws a map as a
portable pixmap.

Exit codes: 0 success, 2 numerical or validation failure, 64 usage error,
66 missing input file. All outputs are deterministic for fixed inputs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .confield import (
    classical_field,
    max_over_seeds,
    partial_field,
    save_factor,
    seeded_map,
    read_map_csv,
    write_map_csv,
)
from .errors import FormatError, PcfieldError, ValidationError
from .forward import (
    LeadField,
    builtin_1020_electrodes,
    electrode_seed_voxels,
    load_leadfield,
    min_nn_distance,
    min_norm_inverse,
    read_electrodes_csv,
    read_pcf1,
    read_voxels_csv,
    save_leadfield,
    spherical_grid,
    synth_leadfield,
    write_pcf1,
)
from .matcore import as_hermitian
from .simharness import (
    SimulationConfig,
    parse_config,
    simulate_eeg,
    write_config,
)
from .spectra import (
    CrossSpectrum,
    band_bins,
    band_cross_spectrum,
    read_epochs_csv,
    write_epochs_csv,
)

_PANEL = 96
_MARGIN = 8


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code pinned to 64."""

    def error(self, message):
        self.exit(64, f"{self.prog}: error: {message}\n")


def _band(text: str) -> tuple[float, float]:
    try:
        lo, _, hi = text.partition(":")
        return (float(lo), float(hi))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"band must be lo:hi in Hz, got {text!r}"
        ) from None


def _percent(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (0.0 < value <= 100.0):
        raise argparse.ArgumentTypeError(f"percent must be in (0, 100], got {value}")
    return value


def _require_file(path) -> Path:
    resolved = Path(path)
    if not resolved.is_file():
        raise FileNotFoundError(f"input file not found: {resolved}")
    return resolved


def build_parser() -> _Parser:
    parser = _Parser(prog="pcfield", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pcfield {__version__}")
    commands = parser.add_subparsers(
        dest="command", required=True, parser_class=_Parser
    )

    lead = commands.add_parser("leadfield", help="build or import a lead field")
    electrodes = lead.add_mutually_exclusive_group(required=True)
    electrodes.add_argument("--electrodes", metavar="CSV", help="electrode table label,x,y,z")
    electrodes.add_argument(
        "--builtin-1020", action="store_true", help="use the built-in 19-channel montage"
    )
    voxels = lead.add_mutually_exclusive_group(required=True)
    voxels.add_argument("--voxels", metavar="CSV", help="voxel table id,x,y,z")
    voxels.add_argument(
        "--grid", type=float, metavar="SPACING", help="build a spherical lattice"
    )
    lead.add_argument("--out", required=True, metavar="PCF", help="output lead field")
    lead.set_defaults(func=cmd_leadfield)

    sim = commands.add_parser("simulate", help="synthesize the two-source recording")
    sim.add_argument("--config", metavar="FILE", help="key=value config (defaults if omitted)")
    sim.add_argument("--leadfield", required=True, metavar="PCF")
    sim.add_argument("--out", required=True, metavar="DIR")
    sim.set_defaults(func=cmd_simulate)

    xspec = commands.add_parser("xspec", help="band-averaged cross-spectrum")
    xspec.add_argument("--epochs", required=True, metavar="CSV")
    xspec.add_argument("--rate", required=True, type=float, metavar="HZ")
    xspec.add_argument("--band", required=True, type=_band, metavar="LO:HI")
    xspec.add_argument("--out", required=True, metavar="PCF")
    xspec.set_defaults(func=cmd_xspec)

    connect = commands.add_parser("connect", help="seeded connectivity maps")
    connect.add_argument("--leadfield", required=True, metavar="PCF")
    connect.add_argument("--xspec", required=True, metavar="PCF")
    connect.add_argument(
        "--method", required=True, choices=("classical", "partial")
    )
    connect.add_argument(
        "--measure", required=True, choices=("coherence", "lagged")
    )
    connect.add_argument(
        "--seeds",
        default="all-1020",
        metavar="all-1020|IDS",
        help="seed voxels: all-1020 (one per electrode) or comma-separated ids",
    )
    connect.add_argument("--out", required=True, metavar="DIR")
    connect.set_defaults(func=cmd_connect)

    render = commands.add_parser("render", help="draw a map as a portable pixmap")
    render.add_argument("--map", required=True, metavar="CSV")
    render.add_argument("--out", required=True, metavar="PPM")
    render.add_argument(
        "--scale-percent", type=_percent, default=95.0, metavar="PCT",
        help="clip the color ramp at this percent of the map maximum",
    )
    render.set_defaults(func=cmd_render)

    compare = commands.add_parser("compare", help="score map directories against truth")
    compare.add_argument(
        "--maps", required=True, nargs="+", metavar="DIR", help="connect output dirs"
    )
    compare.add_argument("--truth", required=True, metavar="CSV")
    compare.add_argument("--out", required=True, metavar="CSV")
    compare.set_defaults(func=cmd_compare)

    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_leadfield(args) -> int:
    if args.builtin_1020:
        electrodes = builtin_1020_electrodes()
    else:
        electrodes = read_electrodes_csv(_require_file(args.electrodes))
    if args.grid is not None:
        grid = spherical_grid(args.grid)
    else:
        grid = read_voxels_csv(_require_file(args.voxels))
    leadfield = synth_leadfield(electrodes, grid)
    save_leadfield(leadfield, args.out)
    singular_values = np.linalg.svd(leadfield.gain, compute_uv=False)
    print(
        f"lead field {leadfield.n_electrodes} x {leadfield.n_voxels}: full row "
        f"rank {leadfield.n_electrodes} (singular value ratio "
        f"{singular_values[-1] / singular_values[0]:.3e})"
    )
    print(f"wrote {args.out}")
    return 0


def _write_truth_csv(path, truth, voxels) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["role", "voxel_id", "x", "y", "z"])
        for voxel in truth.source_voxels:
            position = voxels.positions[voxel]
            writer.writerow(
                ["source", voxel] + [repr(float(c)) for c in position]
            )
        for voxel in truth.bio_voxels:
            position = voxels.positions[voxel]
            writer.writerow(["bio", voxel] + [repr(float(c)) for c in position])


def _read_truth_sources(path) -> np.ndarray:
    positions = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "role", "voxel_id", "x", "y", "z",
        ]:
            raise FormatError(f"{path}: expected header role,voxel_id,x,y,z")
        for line in reader:
            if len(line) != 5:
                raise FormatError(f"{path}: malformed row {line!r}")
            if line[0] == "source":
                positions.append([float(line[2]), float(line[3]), float(line[4])])
    if not positions:
        raise FormatError(f"{path}: no source rows")
    return np.array(positions)


def cmd_simulate(args) -> int:
    leadfield = load_leadfield(_require_file(args.leadfield))
    if args.config is not None:
        config = parse_config(_require_file(args.config))
    else:
        config = SimulationConfig()
    recording, truth = simulate_eeg(config, leadfield)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_epochs_csv(out / "epochs.csv", recording)
    _write_truth_csv(out / "truth.csv", truth, leadfield.voxels)
    write_config(out / "config.txt", config)
    print(
        f"simulated {recording.n_epochs} epochs x {recording.n_samples} samples "
        f"x {recording.n_channels} channels (sources at voxels "
        f"{truth.source_voxels[0]} and {truth.source_voxels[1]})"
    )
    print(f"wrote {out / 'epochs.csv'}")
    return 0


def cmd_xspec(args) -> int:
    recording = read_epochs_csv(_require_file(args.epochs), rate=args.rate)
    lo, hi = args.band
    bins = band_bins(recording.n_samples, recording.rate, lo, hi)
    spectrum = band_cross_spectrum(recording, lo, hi)
    write_pcf1(args.out, spectrum.values)
    with open(_meta_path(args.out), "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", "value"])
        writer.writerow(["band_lo", repr(lo)])
        writer.writerow(["band_hi", repr(hi)])
        writer.writerow(["rate", repr(recording.rate)])
        writer.writerow(["n_epochs", spectrum.n_epochs])
        writer.writerow(["bins", " ".join(str(b) for b in bins)])
    print(
        f"averaged {len(bins)} bins ({', '.join(str(b) for b in bins)}) over "
        f"{spectrum.n_epochs} epochs; wrote {args.out}"
    )
    return 0


def _meta_path(path) -> Path:
    base = Path(path)
    stem = base.with_suffix("") if base.suffix else base
    return stem.parent / f"{stem.name}.meta.csv"


def _read_xspec(path) -> CrossSpectrum:
    matrix = read_pcf1(path)
    band = None
    frequency = 0.0
    n_epochs = 1
    meta = _meta_path(path)
    if meta.is_file():
        entries: dict[str, str] = {}
        with open(meta, newline="") as handle:
            reader = csv.reader(handle)
            next(reader, None)
            for line in reader:
                if len(line) == 2:
                    entries[line[0]] = line[1]
        try:
            if "band_lo" in entries and "band_hi" in entries:
                band = (float(entries["band_lo"]), float(entries["band_hi"]))
                frequency = (band[0] + band[1]) / 2.0
            if "n_epochs" in entries:
                n_epochs = int(entries["n_epochs"])
        except ValueError as exc:
            raise FormatError(f"{meta}: {exc}") from exc
    return CrossSpectrum(
        matrix=as_hermitian(matrix, atol=1e-8),
        frequency=frequency,
        n_epochs=n_epochs,
        band=band,
    )


def _parse_seeds(text: str, leadfield: LeadField) -> list[int]:
    if text == "all-1020":
        return electrode_seed_voxels(leadfield)
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError(
            f"--seeds must be 'all-1020' or comma-separated ids, got {text!r}"
        ) from None
    if not seeds:
        raise ValidationError("empty seed list")
    return seeds


def cmd_connect(args) -> int:
    leadfield = load_leadfield(_require_file(args.leadfield))
    spectrum = _read_xspec(_require_file(args.xspec))
    if spectrum.dim != leadfield.n_electrodes:
        raise ValidationError(
            f"cross-spectrum is {spectrum.dim} channels, lead field has "
            f"{leadfield.n_electrodes} electrodes"
        )
    seeds = _parse_seeds(args.seeds, leadfield)
    suffix = "coh" if args.measure == "coherence" else "lagged"
    tag = f"{args.method}_{suffix}"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.method == "partial":
        source = partial_field(leadfield, spectrum)
        save_factor(out / "factor.pcf", source)
        print(
            f"partial factor: effective rank {source.effective_rank}, no "
            "inverse operator involved"
        )
    else:
        inverse = min_norm_inverse(leadfield)
        source = classical_field(inverse, spectrum)
        print("classical field via the minimum-norm inverse")

    maps = [seeded_map(source, seed, tag) for seed in seeds]
    for entry in maps:
        write_map_csv(out / f"seed_{entry.seed}.csv", entry, leadfield.voxels)
    composite = max_over_seeds(maps)
    write_map_csv(out / "composite.csv", composite, leadfield.voxels)
    with open(out / "manifest.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", "value"])
        writer.writerow(["method", args.method])
        writer.writerow(["measure", args.measure])
        writer.writerow(["tag", tag])
        writer.writerow(["seeds", " ".join(str(s) for s in seeds)])
    print(f"wrote {len(maps)} seeded maps + composite to {out}")
    return 0


def _hot_ramp(t: np.ndarray) -> np.ndarray:
    """Black -> red -> yellow -> white, t in [0, 1]; returns uint8 RGB."""
    r = np.clip(3.0 * t, 0.0, 1.0)
    g = np.clip(3.0 * t - 1.0, 0.0, 1.0)
    b = np.clip(3.0 * t - 2.0, 0.0, 1.0)
    return (np.stack([r, g, b], axis=-1) * 255.0 + 0.5).astype(np.uint8)


def cmd_render(args) -> int:
    positions, values = read_map_csv(_require_file(args.map))
    peak = float(values.max())
    ceiling = (args.scale_percent / 100.0) * peak
    if ceiling > 0.0:
        intensity = np.minimum(values / ceiling, 1.0)
    else:
        intensity = np.zeros_like(values)
    half = float(np.max(np.abs(positions)))
    if half == 0.0:
        half = 1.0
    # orthographic projections: (horizontal axis, vertical axis) per panel
    panels = ((0, 1), (1, 2), (0, 2))  # axial, sagittal, coronal
    width = 3 * _PANEL + 4 * _MARGIN
    height = _PANEL + 2 * _MARGIN
    image = np.zeros((height, width, 3), dtype=np.uint8)
    scale = (_PANEL - 1) / (2.0 * half)
    for index, (ax_h, ax_v) in enumerate(panels):
        level = np.zeros((_PANEL, _PANEL))
        cols = np.clip(
            np.round((positions[:, ax_h] + half) * scale).astype(int), 0, _PANEL - 1
        )
        rows = np.clip(
            np.round((half - positions[:, ax_v]) * scale).astype(int), 0, _PANEL - 1
        )
        np.maximum.at(level, (rows, cols), intensity)
        colored = _hot_ramp(level)
        top = _MARGIN
        left = _MARGIN + index * (_PANEL + _MARGIN)
        image[top : top + _PANEL, left : left + _PANEL] = colored
    header = f"P6\n{width} {height}\n255\n".encode()
    Path(args.out).write_bytes(header + image.tobytes())
    print(f"rendered {args.map} -> {args.out} ({width}x{height})")
    return 0


def cmd_compare(args) -> int:
    truth_positions = _read_truth_sources(_require_file(args.truth))
    rows = []
    for directory in args.maps:
        base = Path(directory)
        manifest = base / "manifest.csv"
        composite = base / "composite.csv"
        _require_file(manifest)
        _require_file(composite)
        entries: dict[str, str] = {}
        with open(manifest, newline="") as handle:
            reader = csv.reader(handle)
            next(reader, None)
            for line in reader:
                if len(line) == 2:
                    entries[line[0]] = line[1]
        positions, values = read_map_csv(composite)
        spacing = min_nn_distance(positions) if positions.shape[0] > 1 else 1.0
        order = np.argsort(-values, kind="stable")
        peaks = positions[order[:2]]
        worst = 0.0
        for source in truth_positions:
            nearest = float(np.min(np.linalg.norm(peaks - source, axis=1)))
            worst = max(worst, nearest)
        rows.append(
            (
                entries.get("method", base.name),
                entries.get("measure", ""),
                worst / spacing,
            )
        )
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "measure", "localization_error"])
        for method, measure, error in rows:
            writer.writerow([method, measure, repr(error)])
    for method, measure, error in rows:
        print(f"{method} {measure}: localization error {error:.3f} grid spacings")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"pcfield: {exc}", file=sys.stderr)
        return 66
    except (PcfieldError, np.linalg.LinAlgError, KeyError) as exc:
        print(f"pcfield: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
