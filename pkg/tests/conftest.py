import numpy as np
import pytest

from fsistab.grid import State, build_calculus, build_geometry


@pytest.fixture(scope="session")
def calc8():
    return build_calculus(build_geometry(1.0, 1.0, 8, 8))


@pytest.fixture(scope="session")
def calc16():
    return build_calculus(build_geometry(1.0, 1.0, 16, 16))


@pytest.fixture(scope="session")
def calc32():
    return build_calculus(build_geometry(1.0, 1.0, 32, 32))


def random_state(geom, rng, clamp=True):
    n, m = geom.n_nodes, geom.n_beam
    s = State(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(-1, 1, n),
              rng.uniform(-1, 1, m), rng.uniform(-1, 1, m))
    if clamp:
        s.w[0] = s.w[-1] = s.v[0] = s.v[-1] = 0.0
    return s


def smooth_state(geom):
    s = State.zeros(geom)
    s.p[:] = geom.sample(lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    s.u1[:] = geom.sample(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    s.u2[:] = geom.sample(lambda x, y: 0.5 * np.sin(2 * np.pi * x) * np.sin(np.pi * y))
    xb = np.linspace(0.0, geom.L1, geom.n_beam)
    s.w[:] = 0.1 * np.sin(np.pi * xb / geom.L1) ** 2
    return s


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and echo it."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
