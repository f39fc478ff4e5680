import numpy as np
import pytest

from kflows.geometry import SpaceSpec, speed2

MODEL_SPACES = {
    "CP1": SpaceSpec.projective(1, 1.0),
    "CP2": SpaceSpec.projective(2, 1.0),
    "CH1": SpaceSpec.hyperbolic(1, -1.0),
    "indefinite": SpaceSpec(2, 1.0, (1, -1)),
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sample_point(space, rng, radius=0.5, margin=0.5):
    while True:
        z = radius * (rng.standard_normal(space.n) + 1j * rng.standard_normal(space.n)) / np.sqrt(2 * space.n)
        if space.is_flat or 1.0 + space.S(z) > margin:
            return z


def sample_direction(space, z, rng, floor=0.05):
    while True:
        v = rng.standard_normal(space.n) + 1j * rng.standard_normal(space.n)
        v /= np.linalg.norm(v)
        if abs(speed2(space, z, v)) > floor:
            return v


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line for the terminal summary."""

    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
