import numpy as np
import pytest

from bdmadapt import postprocess_resmin, solve_theta, stenberg_oracle
from bdmadapt.basis import basis_size, make_scalar_basis, quad_rule
from bdmadapt.bdm import BdmSpace, DgSpace
from bdmadapt.estimators import dual_norm_star
from bdmadapt.fields import stiffness_tensors
from bdmadapt.solver import MixedSolution

from conftest import single_element_mesh


def manual_solution(mesh, p, flux, scalar):
    return MixedSolution(flux=flux, scalar=scalar, mesh=mesh, p=p,
                         flux_space=BdmSpace(mesh, p),
                         scalar_space=DgSpace(mesh, p - 1))


def element_means(mesh, coeffs):
    """(field, 1)_K for elementwise orthonormal-basis coefficient rows."""
    return coeffs[:, 0] * mesh.det_jacobians / np.sqrt(2.0)


def test_zero_data_gives_zero():
    mesh = single_element_mesh()
    p = 2
    space = BdmSpace(mesh, p)
    dg = DgSpace(mesh, p - 1)
    sol = manual_solution(mesh, p, np.zeros(space.n_dofs), np.zeros(dg.n_dofs))
    post = postprocess_resmin(sol)
    assert np.abs(post.nu).max() == 0.0
    assert np.abs(post.eps).max() == 0.0
    assert np.abs(post.eta_tilde_K).max() == 0.0
    assert np.abs(solve_theta(sol)).max() == 0.0
    assert np.abs(stenberg_oracle(sol)).max() == 0.0


@pytest.mark.parametrize("p", [1, 2, 3])
def test_exactly_representable_residual(p, rng):
    # q_h = -grad w with w of degree p+1: nu recovers w, eps vanishes
    mesh = single_element_mesh()
    space = BdmSpace(mesh, p)
    dg = DgSpace(mesh, p - 1)
    basis = make_scalar_basis(p + 1)
    w = rng.standard_normal(basis.size)
    Binv = mesh.inv_jacobians[0]
    v0 = mesh.tri_coords[0, 0]

    def q(x):
        ref = (x - v0) @ Binv.T
        g = np.einsum("qib,i->qb", basis.grads(ref), w)
        return -(g @ Binv)

    flux = space.interpolate(q)
    scalar = np.zeros(dg.n_dofs)
    scalar[: basis_size(p - 1)] = w[: basis_size(p - 1)]
    sol = manual_solution(mesh, p, flux, scalar)
    post = postprocess_resmin(sol)
    scale = max(1.0, np.abs(w).max())
    assert np.abs(post.nu[0] - w).max() <= 1e-10 * scale
    assert np.abs(post.eps).max() <= 1e-10 * scale
    assert post.eta_tilde_K[0] <= 1e-10 * scale


@pytest.mark.parametrize("p", [1, 2, 3])
def test_equivalence_with_direct_elliptic_solve(p, small_smooth_solutions):
    sol = small_smooth_solutions[p]
    post = postprocess_resmin(sol)
    ref = stenberg_oracle(sol)
    norm = np.sqrt(np.sum(sol.mesh.det_jacobians[:, None] * ref ** 2))
    assert np.abs(post.nu - ref).max() <= 1e-10 * max(norm, 1.0)


@pytest.mark.parametrize("p", [1, 2])
def test_minimization_property(p, small_smooth_solutions, rng):
    sol = small_smooth_solutions[p]
    mesh = sol.mesh
    post = postprocess_resmin(sol)
    basis = make_scalar_basis(p + 1)
    rule = quad_rule(2 * (p + 2), "triangle")
    for trial in range(10):
        k = int(rng.integers(0, mesh.n_triangles))

        def residual_field(coeffs, k=k):
            def r(x, coeffs=coeffs, k=k):
                ref = (x - mesh.tri_coords[k, 0]) @ mesh.inv_jacobians[k].T
                g = np.einsum("qib,i->qb", basis.grads(ref), coeffs)
                qh = sol.flux_space.eval_flux(sol.flux, k, ref)
                return qh + g @ mesh.inv_jacobians[k]
            return r

        opt = dual_norm_star(mesh, p, k, residual_field(post.nu[k]))
        w = post.nu[k] + np.concatenate([[0.0],
                                         rng.standard_normal(basis.size - 1)])
        other = dual_norm_star(mesh, p, k, residual_field(w))
        assert opt <= other + 1e-10


@pytest.mark.parametrize("p", [1, 2, 3])
def test_mean_constraints(p, small_smooth_solutions):
    sol = small_smooth_solutions[p]
    mesh = sol.mesh
    post = postprocess_resmin(sol)
    theta = solve_theta(sol)
    u_means = element_means(mesh, sol.scalar_by_element)
    scale = np.abs(u_means).max()
    assert np.abs(element_means(mesh, post.nu) - u_means).max() <= 1e-12 * max(
        scale, 1.0)
    assert np.abs(element_means(mesh, theta) - u_means).max() <= 1e-12 * max(
        scale, 1.0)


@pytest.mark.parametrize("p", [1, 2])
def test_gradient_orthogonality_of_residual_representative(
        p, small_smooth_solutions):
    # (grad w, grad eps) = 0 for all mean-free w of degree p+1
    sol = small_smooth_solutions[p]
    post = postprocess_resmin(sol)
    S22 = stiffness_tensors(sol.mesh, p + 2, 2 * (p + 2))[:, 1:, 1:]
    n1 = basis_size(p + 1) - 1
    inner = np.einsum("nij,nj->ni", S22[:, :n1, :], post.eps)
    scale = max(post.eta_tilde_K.max(), 1e-30)
    assert np.abs(inner).max() <= 1e-11 * max(1.0, scale)


@pytest.mark.parametrize("p", [1, 2])
def test_euler_lagrange_consistency(p, small_smooth_solutions):
    # (grad eps + grad nu + q_h, grad v) = 0, recomputed with a finer rule
    sol = small_smooth_solutions[p]
    mesh = sol.mesh
    post = postprocess_resmin(sol)
    exact = 2 * p + 10
    rule = quad_rule(exact, "triangle")
    basis2 = make_scalar_basis(p + 2)
    D2 = basis2.grads(rule.points)[:, 1:, :]
    qh = sol.flux_space.flux_values(sol.flux, rule.points)
    # grad(eps + nu) in physical coordinates
    full = np.zeros((mesh.n_triangles, basis2.size))
    full[:, 1:] += post.eps
    full[:, 1: post.nu.shape[1]] += post.nu[:, 1:]
    ref = np.einsum("ni,qib->nqb", full[:, 1:], D2)
    grad = np.einsum("nqb,nba->nqa", ref, mesh.inv_jacobians)
    total = qh + grad
    pulled = np.einsum("nqa,nba->nqb", total, mesh.inv_jacobians)
    resid = np.einsum("q,nqb,qib,n->ni", rule.weights, pulled, D2,
                      mesh.det_jacobians)
    scale = max(1.0, np.abs(qh).max())
    assert np.abs(resid).max() <= 1e-11 * scale


@pytest.mark.parametrize("p", [1, 2, 3])
def test_enrichment_identity_per_element(p, small_smooth_solutions):
    # ||grad(theta - nu)||_K equals the built-in indicator elementwise
    sol = small_smooth_solutions[p]
    post = postprocess_resmin(sol)
    theta = solve_theta(sol)
    S22 = stiffness_tensors(sol.mesh, p + 2, 2 * (p + 2))[:, 1:, 1:]
    diff = theta[:, 1:].copy()
    n1 = post.nu.shape[1] - 1
    diff[:, :n1] -= post.nu[:, 1:]
    lhs = np.sqrt(np.einsum("ni,nij,nj->n", diff, S22, diff))
    dev = np.abs(lhs - post.eta_tilde_K)
    tol = np.maximum(1e-10 * post.eta_tilde_K, 1e-12)
    assert np.all(dev <= tol)


def test_bitwise_determinism(small_smooth_solutions):
    sol = small_smooth_solutions[2]
    a = postprocess_resmin(sol)
    b = postprocess_resmin(sol)
    assert np.array_equal(a.nu, b.nu)
    assert np.array_equal(a.eps, b.eps)
    assert np.array_equal(a.eta_tilde_K, b.eta_tilde_K)
