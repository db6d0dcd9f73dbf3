import numpy as np
import pytest

from biotsplit.benchmark import benchmark_loads, initial_state, make_case
from biotsplit.biot import build_system
from biotsplit.mesh import build_uniform


@pytest.fixture(scope="session")
def nu03_case():
    return make_case("nu03")


@pytest.fixture(scope="session")
def small_system(nu03_case):
    """4x4 benchmark system with manufactured loads -- cheap enough to share."""
    mesh = build_uniform(4)
    return build_system(mesh, nu03_case.params, benchmark_loads(nu03_case))


@pytest.fixture(scope="session")
def small_initial(small_system, nu03_case):
    return initial_state(small_system, nu03_case)


@pytest.fixture(scope="session")
def c00_system():
    case = make_case("c00")
    system = build_system(build_uniform(4), case.params, benchmark_loads(case))
    return system


@pytest.fixture(scope="session")
def c00_initial(c00_system):
    return initial_state(c00_system, make_case("c00"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
