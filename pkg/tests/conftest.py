import numpy as np
import pytest

from voxcond.grid import DEFAULT_TAXONOMY, SemanticGrid


def central_difference(f, x, h=1e-6):
    """Numerical gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def random_grid(rng, dims=(8, 8, 8), vs=1.0, origin=(0.0, 0.0, 0.0), density=0.1):
    labels = np.where(
        rng.random(dims) < density, rng.integers(1, len(DEFAULT_TAXONOMY), dims), 0
    ).astype(np.uint8)
    return SemanticGrid(labels, vs, tuple(origin), DEFAULT_TAXONOMY)


def random_unit(rng):
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    from voxcond.scenegen import SceneConfig, generate_scene

    return generate_scene(SceneConfig(seed=5, frames=4))


@pytest.fixture(scope="session")
def toy_dataset():
    from voxcond.toydiff import DatasetConfig, build_dataset

    return build_dataset(DatasetConfig())


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
