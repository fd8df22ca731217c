import numpy as np
import pytest

from collateral.synthgen import PhantomSpec, gen_dataset, gen_phantom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_phantom():
    spec = PhantomSpec(seed=3, grade=0, lesion_center=(22, 16, 16), lesion_radii=(3, 3, 3),
                       dims=(32, 32, 32), edge=8)
    return gen_phantom(spec)


@pytest.fixture(scope="session")
def small_dataset():
    """Nine 32**3 phantoms with 16**3 ROIs, three per grade."""
    return gen_dataset((3, 3, 3), seed=11, dims=(32, 32, 32), edge=16, radius_range=(0.06, 0.1))


ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str):
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
