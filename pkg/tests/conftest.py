import numpy as np
import pytest

from bdmadapt import DomainSpec, ProblemSpec, build_initial_mesh, solve_problem


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)


def make_linear_problem():
    return ProblemSpec(
        domain=DomainSpec.unit_square(),
        f=lambda x: np.zeros(len(x)),
        u_D=lambda x: x[:, 0],
        exact_u=lambda x: x[:, 0],
        exact_q=lambda x: np.stack([-np.ones(len(x)), np.zeros(len(x))],
                                   axis=1),
        name="linear")


@pytest.fixture(scope="session")
def linear_problem():
    return make_linear_problem()


@pytest.fixture(scope="session")
def smooth_problem():
    from bdmadapt import preset
    return preset("smooth")


@pytest.fixture(scope="session")
def small_smooth_solutions(smooth_problem):
    """(p -> (solution, mesh)) on a 128-element unit square mesh."""
    out = {}
    mesh = build_initial_mesh(smooth_problem.domain, 32).refine(range(32))
    for p in (1, 2, 3):
        out[p] = solve_problem(mesh, p, smooth_problem)
    return out


def skewed_triangle():
    """A reference-unlike triangle for single-element checks."""
    return np.array([[0.2, -0.1], [1.3, 0.4], [0.1, 1.1]])


def single_element_mesh(tri=None):
    from bdmadapt import TriMesh
    tri = skewed_triangle() if tri is None else np.asarray(tri, dtype=float)
    return TriMesh(tri, np.array([[0, 1, 2]]))
