import numpy as np
import pytest

from inelastic_lorentz.chain import run_chain
from inelastic_lorentz.collision import ModelParams
from inelastic_lorentz.rng import RngStream


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def path_1e4(params):
    return run_chain((0.0, 0.0, 1.0), 10_000, params, RngStream(11, 0))


@pytest.fixture(scope="session")
def path_2e5(params):
    return run_chain((0.0, 0.0, 1.0), 200_000, params, RngStream(12, 0))


def random_unit(rng, n):
    z = rng.standard_normal((n, 3))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


ACCEPTANCE = {}


def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE[number] = (name, bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {name}: {detail}")
