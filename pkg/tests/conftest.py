"""Shared helpers and the acceptance-summary terminal hook."""

import numpy as np

# populated by tests/test_acceptance.py; printed after the run
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, description: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[number] = (description, bool(passed), detail)


def random_pd(rng: np.random.Generator, n: int, complex_entries: bool = True) -> np.ndarray:
    """Random Hermitian positive definite matrix, well conditioned."""
    cols = 2 * n
    factor = rng.standard_normal((n, cols))
    if complex_entries:
        factor = factor + 1j * rng.standard_normal((n, cols))
    return (factor @ factor.conj().T) / cols


def random_psd(
    rng: np.random.Generator, n: int, rank: int, complex_entries: bool = True
) -> np.ndarray:
    """Random Hermitian PSD matrix of the requested rank."""
    factor = rng.standard_normal((n, rank))
    if complex_entries:
        factor = factor + 1j * rng.standard_normal((n, rank))
    return factor @ factor.conj().T


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        description, passed, detail = ACCEPTANCE_RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number}: {verdict} - {description}"
        if detail:
            line = f"{line} ({detail})"
        terminalreporter.write_line(line)
