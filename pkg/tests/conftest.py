from __future__ import annotations

import numpy as np
import pytest

from ctwsim.material import make_table

THETA_KNOTS = [0.0, 400.0, 800.0, 1200.0, 1500.0]


def synthetic_table(seed: int = 0, n_alpha: int = 4):
    """Temperature-dependent table with random (but physical) curves."""
    rng = np.random.default_rng(seed)
    th = np.array(THETA_KNOTS)
    E = np.sort(rng.uniform(20e3, 210e3, th.size))[::-1]
    nu = rng.uniform(0.25, 0.35, th.size)
    aT = np.sort(rng.uniform(1.2e-5, 2.0e-5, th.size))
    c = rng.uniform(400.0, 700.0, th.size)
    lam = rng.uniform(12.0, 35.0, th.size)
    alpha = np.concatenate([[0.0], np.sort(rng.uniform(0.005, 0.5, n_alpha - 1))])
    y0 = np.sort(rng.uniform(20.0, 300.0, th.size))[::-1]
    grid = y0[None, :] * (1.0 + np.cumsum(np.r_[0.0, rng.uniform(0.05, 0.6, n_alpha - 1)]))[:, None]
    return make_table(
        {"E": (th, E), "nu": (th, nu), "alpha_T": (th, aT), "c": (th, c), "lambda": (th, lam)},
        alpha,
        th,
        grid,
    )


@pytest.fixture
def table():
    return synthetic_table(0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion and assert it."""

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
