import math

import pytest

from densityprice import gen_gbm, gen_jump_diffusion, make_mesh, to_densities

SIGMA = 0.2
CRASH_LOG_JUMP = math.log(0.6)


@pytest.fixture(scope="session")
def gbm_small():
    mesh = make_mesh("uniform", 0.0, 1.0, 64)
    return gen_gbm(100.0, 0.08, SIGMA, mesh, 20_000, seed=3)


@pytest.fixture(scope="session")
def gbm_small_exp(gbm_small):
    return to_densities(gbm_small)


@pytest.fixture(scope="session")
def jump_small():
    mesh = make_mesh("uniform", 0.0, 1.0, 64)
    return gen_jump_diffusion(100.0, 0.08, SIGMA, 1.0, [(CRASH_LOG_JUMP, 1.0)], mesh, 20_000, seed=5)


@pytest.fixture(scope="session")
def jump_small_exp(jump_small):
    return to_densities(jump_small)


@pytest.fixture(scope="session")
def gbm_256():
    mesh = make_mesh("uniform", 0.0, 1.0, 256)
    return gen_gbm(100.0, 0.08, SIGMA, mesh, 100_000, seed=2024)


@pytest.fixture(scope="session")
def gbm_256_exp(gbm_256):
    return to_densities(gbm_256)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            for key, value in getattr(rep, "user_properties", ()):
                if key == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
