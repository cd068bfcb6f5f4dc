"""Element-local postprocessing of the mixed solution.

Three local solves share one stiffness family on the mean-free hierarchical
bases (the degree-(p+1) basis is the leading slice of the degree-(p+2) one):

  * residual minimization: find (eps_K, nu_K) with nu_K of degree p+1, the
    residual representative eps_K mean-free of degree p+2, such that
    (grad eps + grad nu, grad v) = -(q_h, grad v) for all mean-free v of
    degree p+2, (grad w, grad eps) = 0 for all mean-free w of degree p+1,
    and nu_K matches the element mean of u_h;
  * the classical elliptic postprocessing of degree p+1 with the same mean
    constraint (reference implementation used as an independent oracle);
  * the enriched degree-(p+2) elliptic solve producing the auxiliary field
    used by the saturation measurements.

The element mean constraint reduces to copying the constant coefficient of
u_h because all bases share the same normalized constant.  Each element's
dense system is factorized independently (LU with partial pivoting), so
results do not depend on element order.
"""

from dataclasses import dataclass

import numpy as np

from .basis import basis_size
from .bdm import bdm_tables
from .fields import scalar_tables, stiffness_tensors
from .mesh import TriMesh
from .solver import MixedSolution


@dataclass
class PostprocResult:
    """Per-element coefficients of the postprocessed scalar and residual.

    nu has full degree-(p+1) coefficients (column 0 is the constant); eps has
    mean-free degree-(p+2) coefficients; eta_tilde_K holds ||grad eps||_K.
    """

    mesh: TriMesh
    p: int
    nu: np.ndarray
    eps: np.ndarray
    eta_tilde_K: np.ndarray


def _local_ingredients(solution: MixedSolution):
    """Stiffness on the mean-free degree-(p+2) basis and the residual load.

    Returns (S22, rhs) with S22 of shape (n, n2, n2) and rhs of shape (n, n2),
    rhs_i = -(q_h, grad v_i)_K.
    """
    mesh, p = solution.mesh, solution.p
    exact = 2 * (p + 2)
    S_full = stiffness_tensors(mesh, p + 2, exact)
    S22 = S_full[:, 1:, 1:]
    rule, Nh, _ = bdm_tables(p, exact)
    _, _, D = scalar_tables(p + 2, exact)
    c = solution.flux_space.local_coeffs(solution.flux)
    ref_flux = np.einsum("nl,qla->nqa", c, Nh)
    B, Binv = mesh.jacobians, mesh.inv_jacobians
    W = np.einsum("nca,nbc->nab", B, Binv)  # B^T B^{-T}
    tw = np.einsum("nqa,nab->nqb", ref_flux, W)
    rhs = -np.einsum("nqb,qib,q->ni", tw, D[:, 1:, :], rule.weights)
    return S22, rhs


def postprocess_resmin(solution: MixedSolution) -> PostprocResult:
    """Solve the local residual-minimization saddle systems on every element."""
    mesh, p = solution.mesh, solution.p
    n1 = basis_size(p + 1) - 1
    n2 = basis_size(p + 2) - 1
    S22, rhs = _local_ingredients(solution)
    nt = mesh.n_triangles
    A = np.zeros((nt, n2 + n1, n2 + n1))
    A[:, :n2, :n2] = S22
    A[:, :n2, n2:] = S22[:, :, :n1]
    A[:, n2:, :n2] = S22[:, :n1, :]
    b = np.zeros((nt, n2 + n1))
    b[:, :n2] = rhs
    try:
        x = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(
            "singular local saddle system; the mean-free basis construction "
            "is broken") from exc
    eps = x[:, :n2]
    nu = np.zeros((nt, n1 + 1))
    nu[:, 0] = solution.scalar_by_element[:, 0]  # mean constraint
    nu[:, 1:] = x[:, n2:]
    eta = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", eps, S22, eps), 0.0))
    return PostprocResult(mesh=mesh, p=p, nu=nu, eps=eps, eta_tilde_K=eta)


def stenberg_oracle(solution: MixedSolution) -> np.ndarray:
    """Degree-(p+1) elliptic postprocessing, solved directly (SPD systems)."""
    p = solution.p
    n1 = basis_size(p + 1) - 1
    S22, rhs = _local_ingredients(solution)
    x = np.linalg.solve(S22[:, :n1, :n1], rhs[:, :n1, None])[..., 0]
    nu = np.zeros((solution.mesh.n_triangles, n1 + 1))
    nu[:, 0] = solution.scalar_by_element[:, 0]
    nu[:, 1:] = x
    return nu


def solve_theta(solution: MixedSolution) -> np.ndarray:
    """Enriched degree-(p+2) elliptic postprocessing with mean matching."""
    S22, rhs = _local_ingredients(solution)
    x = np.linalg.solve(S22, rhs[..., None])[..., 0]
    theta = np.zeros((solution.mesh.n_triangles, S22.shape[1] + 1))
    theta[:, 0] = solution.scalar_by_element[:, 0]
    theta[:, 1:] = x
    return theta
