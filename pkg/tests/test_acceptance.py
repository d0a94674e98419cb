"""Acceptance gates, one test per shipping criterion.

Every test records its verdict for the terminal scoreboard before any
assert fires, so a failing run still prints the complete picture.
"""

import math
import time

import numpy as np
from conftest import random_pd, record_criterion
import pytest

from pcfield import (
    CrossSpectrum,
    EpochedRecording,
    SimulationConfig,
    as_hermitian,
    builtin_1020_electrodes,
    classical_field,
    cross_spectrum,
    direct_partial_coherence,
    gen_sources,
    lagged_measure,
    min_norm_inverse,
    mp_symmetry_defect,
    pairwise_partial,
    partial_field,
    reflexive_residuals,
    resolution_check,
    resolution_matrix,
    rng_streams,
    run_experiment,
    simulate_eeg,
    spherical_grid,
    synth_leadfield,
    weighted_inverse,
)


def random_gain(rng, n_electrodes, n_voxels):
    gain = rng.standard_normal((n_electrodes, n_voxels))
    gain[:, :n_electrodes] += 3.0 * np.eye(n_electrodes)
    return gain


def dense_coherence(field):
    """Full classical coherence matrix from a factored field."""
    covariance = field.A @ field.A.conj().T
    scale = np.sqrt(np.real(np.diag(covariance)))
    return covariance / np.outer(scale, scale)


@pytest.fixture(scope="module")
def reference_leadfield():
    return synth_leadfield(builtin_1020_electrodes(), spherical_grid())


def test_criterion_1():
    """Factored residual check passes for min-norm and weighted inverses."""
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    all_reflexive = True
    for _ in range(20):
        gain = random_gain(rng, 8, 50)
        spectrum = random_pd(rng, 8)
        inverses = [min_norm_inverse(gain)]
        inverses += [
            weighted_inverse(gain, rng.uniform(0.2, 5.0, size=50)) for _ in range(5)
        ]
        for inverse in inverses:
            check = reflexive_residuals(gain, spectrum, inverse)
            worst = max(worst, check.ginverse_residual, check.reflexive_residual)
            all_reflexive = all_reflexive and bool(check)
    elapsed = time.perf_counter() - start
    passed = all_reflexive and worst <= 1e-8 and elapsed < 5.0
    record_criterion(
        1,
        "reflexive residuals below 1e-8 for 120 random inverses",
        passed,
        f"worst residual {worst:.2e}, {elapsed:.2f}s",
    )
    assert all_reflexive
    assert worst <= 1e-8
    assert elapsed < 5.0


def test_criterion_2():
    """Partial field ignores the inverse operator; the classical field cannot."""
    rng = np.random.default_rng(202)
    worst_partial_gap = 0.0
    smallest_classical_gap = math.inf
    for _ in range(5):
        gain = random_gain(rng, 8, 50)
        sensor = random_pd(rng, 8)

        factor_raw = partial_field(gain, sensor)
        field_raw = factor_raw.W @ factor_raw.W.conj().T

        minnorm = min_norm_inverse(gain)
        weighted = weighted_inverse(gain, rng.uniform(0.2, 5.0, size=50))
        wrapped = CrossSpectrum(
            matrix=as_hermitian(sensor), frequency=10.0, n_epochs=50
        )
        factor_again = partial_field(gain, wrapped)
        field_again = factor_again.W @ factor_again.W.conj().T
        worst_partial_gap = max(
            worst_partial_gap, float(np.max(np.abs(field_raw - field_again)))
        )

        classical_gap = float(
            np.max(
                np.abs(
                    dense_coherence(classical_field(minnorm, sensor))
                    - dense_coherence(classical_field(weighted, sensor))
                )
            )
        )
        smallest_classical_gap = min(smallest_classical_gap, classical_gap)

    passed = worst_partial_gap <= 1e-10 and smallest_classical_gap > 1e-3
    record_criterion(
        2,
        "partial field invariant to inverse choice, classical field is not",
        passed,
        f"partial gap {worst_partial_gap:.2e}, classical gap "
        f"{smallest_classical_gap:.2e}",
    )
    assert worst_partial_gap <= 1e-10
    assert smallest_classical_gap > 1e-3


def test_criterion_3():
    """Square gain reduces to the direct definition; pairwise matches the field."""
    rng = np.random.default_rng(303)

    gain = rng.standard_normal((8, 8)) + 3.0 * np.eye(8)
    source_cov = random_pd(rng, 8)
    sensor = gain @ source_cov @ gain.T
    factor = partial_field(gain, sensor)
    field = factor.W @ factor.W.conj().T
    direct = direct_partial_coherence(source_cov).values
    worst_square = float(np.max(np.abs(field - direct)))

    wide = random_gain(rng, 8, 60)
    spectrum = random_pd(rng, 8)
    wide_factor = partial_field(wide, spectrum)
    wide_field = wide_factor.W @ wide_factor.W.conj().T
    worst_pair = 0.0
    for _ in range(100):
        k, l = (int(i) for i in rng.integers(0, 60, size=2))
        entry = pairwise_partial(wide, spectrum, k, l)
        worst_pair = max(worst_pair, abs(entry - wide_field[k, l]))

    passed = worst_square <= 1e-8 and worst_pair <= 1e-10
    record_criterion(
        3,
        "square-gain field matches the direct definition, pairwise matches full",
        passed,
        f"square gap {worst_square:.2e}, pairwise gap {worst_pair:.2e}",
    )
    assert worst_square <= 1e-8
    assert worst_pair <= 1e-10


def test_criterion_4():
    """Estimator agrees with the resolution-filtered truth; H is a projector."""
    rng = np.random.default_rng(404)
    worst_residual = 0.0
    for index in range(10):
        gain = random_gain(rng, 6, 40)
        truth_cov = random_pd(rng, 40, complex_entries=index % 2 == 0)
        check = resolution_check(gain, truth_cov)
        worst_residual = max(
            worst_residual, check.ginverse_residual, check.reflexive_residual
        )

    gain = random_gain(rng, 6, 40)
    resolution = resolution_matrix(gain)
    symmetry = float(np.max(np.abs(resolution - resolution.T)))
    idempotence = float(np.max(np.abs(resolution @ resolution - resolution)))
    trace_gap = abs(float(np.trace(resolution)) - 6.0)

    passed = (
        worst_residual <= 1e-8
        and symmetry <= 1e-8
        and idempotence <= 1e-8
        and trace_gap <= 1e-8
    )
    record_criterion(
        4,
        "resolution-filtered truth reproduced, projector invariants hold",
        passed,
        f"worst residual {worst_residual:.2e}, trace gap {trace_gap:.2e}",
    )
    assert worst_residual <= 1e-8
    assert symmetry <= 1e-8
    assert idempotence <= 1e-8
    assert trace_gap <= 1e-8


def test_criterion_5():
    """Noise-free coupled pair reproduces the closed-form spectra."""
    cfg = SimulationConfig(
        n_epochs=1000, bio_noise=0.0, bio_noise_count=0, sensor_noise=0.0, seed=2
    )
    start = time.perf_counter()
    source_rng, _, _ = rng_streams(cfg.seed)
    series = gen_sources(cfg, source_rng)
    recording = EpochedRecording(series, cfg.rate)

    n, c = cfg.n_samples, cfg.ar_coefficient
    expected_coh_sq = c**2 * (n - 1) ** 2 / (n * (c**2 * (n - 1) + n))
    omega = 2.0 * math.pi * 8 / n
    magnitude = math.sqrt(expected_coh_sq)
    expected_lagged = (
        magnitude
        * math.sin(omega)
        / math.sqrt(1.0 - expected_coh_sq * math.cos(omega) ** 2)
    )
    assert abs(expected_coh_sq - 0.19441) < 5e-6
    assert abs(expected_lagged - 0.328128) < 5e-6

    coherences = []
    lagged_at_8 = None
    for bin_index in range(1, 32):
        values = cross_spectrum(recording, bin_index).matrix.values
        r = values[0, 1] / math.sqrt(values[0, 0].real * values[1, 1].real)
        coherences.append(abs(r) ** 2)
        if bin_index == 8:
            lagged_at_8 = float(lagged_measure(r))
    mean_coh_sq = float(np.mean(coherences))
    elapsed = time.perf_counter() - start

    coh_gap = abs(mean_coh_sq - expected_coh_sq)
    lag_gap = abs(lagged_at_8 - expected_lagged)
    passed = coh_gap <= 0.03 and lag_gap <= 0.05 and elapsed < 10.0
    record_criterion(
        5,
        "two-source run reproduces analytic coherence and lagged values",
        passed,
        f"mean |coh|^2 {mean_coh_sq:.4f} (target {expected_coh_sq:.4f}), "
        f"lagged {lagged_at_8:.4f} (target {expected_lagged:.4f}), {elapsed:.2f}s",
    )
    assert coh_gap <= 0.03
    assert lag_gap <= 0.05
    assert elapsed < 10.0


def test_criterion_6(reference_leadfield):
    """Default runs localize within 2 spacings and beat the classical maps."""
    within_two = 0
    at_or_below_classical = 0
    slowest = 0.0
    errors = []
    for seed in range(10):
        start = time.perf_counter()
        report = run_experiment(SimulationConfig(seed=seed), reference_leadfield)
        slowest = max(slowest, time.perf_counter() - start)
        errors.append((report.partial_error, report.classical_error))
        if report.partial_error <= 2.0:
            within_two += 1
        if report.partial_error <= report.classical_error:
            at_or_below_classical += 1

    passed = within_two >= 8 and at_or_below_classical >= 8 and slowest < 60.0
    record_criterion(
        6,
        "10-seed default study: partial maps localize and beat classical",
        passed,
        f"{within_two}/10 within 2 spacings, {at_or_below_classical}/10 at or "
        f"below classical, slowest run {slowest:.1f}s",
    )
    assert within_two >= 8, errors
    assert at_or_below_classical >= 8, errors
    assert slowest < 60.0


def test_criterion_7():
    """Weighted inverse stays reflexive while failing Moore-Penrose symmetry."""
    rng = np.random.default_rng(707)
    gain = random_gain(rng, 8, 50)
    weights = np.ones(50)
    weights[1::2] = 3.0
    inverse = weighted_inverse(gain, weights)

    defect = mp_symmetry_defect(gain, inverse)
    spectrum = random_pd(rng, 8)
    check = reflexive_residuals(gain, spectrum, inverse)
    worst = max(check.ginverse_residual, check.reflexive_residual)

    passed = defect > 1e-3 and bool(check) and worst <= 1e-8
    record_criterion(
        7,
        "weighted inverse reflexive yet not Moore-Penrose symmetric",
        passed,
        f"symmetry defect {defect:.3e}, worst residual {worst:.2e}",
    )
    assert defect > 1e-3
    assert bool(check)
    assert worst <= 1e-8


def test_criterion_8(reference_leadfield):
    """Rank-deficient cross-spectrum still yields a bounded unit-diagonal field."""
    cfg = SimulationConfig(n_epochs=10, seed=8)
    recording, _ = simulate_eeg(cfg, reference_leadfield)
    spectrum = cross_spectrum(recording, 10)

    factor = partial_field(reference_leadfield, spectrum)
    field = factor.W @ factor.W.conj().T
    diagonal_gap = float(np.max(np.abs(np.diag(field) - 1.0)))
    magnitude_excess = float(np.max(np.abs(field))) - 1.0

    passed = (
        factor.effective_rank <= 10
        and diagonal_gap <= 1e-9
        and magnitude_excess <= 1e-9
    )
    record_criterion(
        8,
        "10-epoch spectrum: field completes with bounded entries",
        passed,
        f"effective rank {factor.effective_rank}, diagonal gap {diagonal_gap:.2e}, "
        f"magnitude excess {max(magnitude_excess, 0.0):.2e}",
    )
    assert factor.effective_rank <= 10
    assert diagonal_gap <= 1e-9
    assert magnitude_excess <= 1e-9
