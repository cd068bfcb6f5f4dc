"""Mesh-dependent norms, a posteriori estimators, and exact-error reports.

The built-in indicator is eta_tilde_K = ||grad eps_K||_K from the residual
representative.  The improved indicator adds the flux mismatch and scaled
traces of the postprocessed scalar:

    eta_K^2 = eta_tilde_K^2 + ||q_h + grad nu_h||_K^2
              + 1/2 sum_{interior F of K} h_F^{-1} ||[nu_h]||_F^2
              + sum_{boundary F of K} h_F^{-1} ||u_D - nu_h||_F^2.

Exact-error norms use a high-order rule, with subdivided quadrature on
elements and edges flagged by the problem (corner singularities, outflow
strips).  The element-local dual norm ||r||_*K is evaluated through its Riesz
representative on the mean-free degree-(p+2) space.
"""

import json
from dataclasses import dataclass

import numpy as np

from .basis import basis_size, make_scalar_basis, quad_rule
from .bdm import bdm_edge_tables, reference_shape_values, shifted_legendre
from .fields import (edge_ref_points, nu_jump_terms, scalar_tables,
                     stiffness_tensors, subdivided_edge_rule, subdivided_rule)
from .mesh import TriMesh
from .postprocess import PostprocResult
from .solver import MixedSolution, ProblemSpec


# -- quadrature groups for exact-solution integrals ---------------------------


def _element_groups(mesh: TriMesh, problem: ProblemSpec, exactness: int):
    """[(element ids, ref points, ref weights)] with local refinement flags."""
    base = quad_rule(exactness, "triangle")
    nt = mesh.n_triangles
    flagged = np.zeros(nt, dtype=bool)
    groups = []
    if problem.quad_singular_point is not None:
        xs = np.asarray(problem.quad_singular_point, dtype=float)
        touch = (np.linalg.norm(mesh.tri_coords - xs, axis=2) < 1e-12).any(axis=1)
        if touch.any():
            pts, w = subdivided_rule(exactness, 2)
            groups.append((np.nonzero(touch)[0], pts, w))
            flagged |= touch
    if problem.quad_strip is not None:
        d = problem.quad_strip
        xy = mesh.tri_coords
        near = ((xy[:, :, 0].max(axis=1) > 1.0 - d)
                | (xy[:, :, 1].max(axis=1) > 1.0 - d)) & ~flagged
        if near.any():
            pts, w = subdivided_rule(exactness, 1)
            groups.append((np.nonzero(near)[0], pts, w))
            flagged |= near
    rest = np.nonzero(~flagged)[0]
    if rest.size:
        groups.insert(0, (rest, base.points, base.weights))
    return groups


def _singular_edges(mesh: TriMesh, problem: ProblemSpec):
    if problem.quad_singular_point is None:
        return np.zeros(mesh.n_edges, dtype=bool)
    xs = np.asarray(problem.quad_singular_point, dtype=float)
    at = np.linalg.norm(mesh.vertices - xs, axis=1) < 1e-12
    return at[mesh.edges].any(axis=1)


def _subset_points(mesh, ids, ref_pts):
    v0 = mesh.tri_coords[ids, 0]
    return v0[:, None, :] + np.einsum("qb,nab->nqa", ref_pts, mesh.jacobians[ids])


# -- discrete dual norm -------------------------------------------------------


def _riesz_norms(rhs: np.ndarray, S22: np.ndarray) -> np.ndarray:
    x = np.linalg.solve(S22, rhs[..., None])[..., 0]
    return np.sqrt(np.maximum(np.einsum("ni,ni->n", rhs, x), 0.0))


def dual_norm_star(mesh: TriMesh, p: int, element: int, r,
                   exactness: int | None = None) -> float:
    """sup over mean-free degree-(p+2) v of (r, grad v)_K / ||grad v||_K.

    r maps (n, 2) physical points to (n, 2) vector values; alternatively an
    (nq, 2) array of values at the rule points of the element may be passed.
    """
    if not 0 <= element < mesh.n_triangles:
        raise IndexError(f"element {element} out of range")
    exact = exactness if exactness is not None else 2 * p + 8
    rule = quad_rule(exact, "triangle")
    basis = make_scalar_basis(p + 2)
    D = basis.grads(rule.points)[:, 1:, :]
    ids = np.array([element])
    if callable(r):
        pts = _subset_points(mesh, ids, rule.points)[0]
        vals = np.asarray(r(pts), dtype=float)
    else:
        vals = np.asarray(r, dtype=float)
    # (r, grad v)_K = J sum_q w r . (B^{-T} Dhat)
    pulled = np.einsum("qa,ba->qb", vals, mesh.inv_jacobians[element])
    b = mesh.det_jacobians[element] * np.einsum(
        "q,qb,qib->i", rule.weights, pulled, D)
    S22 = stiffness_tensors(mesh, p + 2, 2 * (p + 2))[element, 1:, 1:]
    x = np.linalg.solve(S22, b)
    return float(np.sqrt(max(b @ x, 0.0)))


# -- estimators ----------------------------------------------------------------


@dataclass
class EstimatorReport:
    """Per-element indicator decomposition plus optional exact-error block."""

    mesh: TriMesh
    p: int
    eta_K: np.ndarray
    eta_tilde_K: np.ndarray
    mismatch_K: np.ndarray
    jump_K: np.ndarray
    boundary_K: np.ndarray
    errors: "ErrorBlock | None" = None
    osc_K: np.ndarray | None = None
    delta: float | None = None
    delta_degenerate: bool = False
    effectivity: float | None = None

    @property
    def eta(self) -> float:
        return float(np.sqrt(np.sum(self.eta_K ** 2)))

    @property
    def eta_tilde(self) -> float:
        return float(np.sqrt(np.sum(self.eta_tilde_K ** 2)))

    @property
    def has_exact(self) -> bool:
        return self.errors is not None

    def to_dict(self) -> dict:
        out = {
            "p": self.p,
            "n_elements": self.mesh.n_triangles,
            "eta": self.eta,
            "eta_tilde": self.eta_tilde,
            "eta_K": self.eta_K.tolist(),
            "eta_tilde_K": self.eta_tilde_K.tolist(),
            "mismatch_K": self.mismatch_K.tolist(),
            "jump_K": self.jump_K.tolist(),
            "boundary_K": self.boundary_K.tolist(),
            "has_exact": self.has_exact,
            "delta": self.delta,
            "delta_degenerate": self.delta_degenerate,
            "effectivity": self.effectivity,
        }
        if self.errors is not None:
            out["errors"] = self.errors.to_dict()
        if self.osc_K is not None:
            out["osc"] = float(np.sqrt(np.sum(self.osc_K ** 2)))
            out["osc_K"] = self.osc_K.tolist()
        return out

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def eta_tilde(post: PostprocResult):
    """Built-in indicator ||grad eps_K||_K, recomputed from the coefficients."""
    S22 = stiffness_tensors(post.mesh, post.p + 2, 2 * (post.p + 2))[:, 1:, 1:]
    per = np.sqrt(np.maximum(
        np.einsum("ni,nij,nj->n", post.eps, S22, post.eps), 0.0))
    return per, float(np.sqrt(np.sum(per ** 2)))


def eta_improved(post: PostprocResult, solution: MixedSolution,
                 u_D) -> EstimatorReport:
    """Improved indicator: residual representative + mismatch + scaled traces."""
    mesh, p = post.mesh, post.p
    rule, _, D = scalar_tables(p + 1, 2 * (p + 2))
    grad_nu = np.einsum("ni,qib->nqb", post.nu, D)
    grad_nu = np.einsum("nqb,nba->nqa", grad_nu, mesh.inv_jacobians)
    qh = solution.flux_space.flux_values(solution.flux, rule.points)
    mismatch_sq = np.einsum("nq,q,n->n",
                            np.sum((qh + grad_nu) ** 2, axis=2),
                            rule.weights, mesh.det_jacobians)
    jump_K, bnd_K = nu_jump_terms(mesh, post.nu, u_D, p + 5)
    eta_K = np.sqrt(post.eta_tilde_K ** 2 + mismatch_sq + jump_K + bnd_K)
    return EstimatorReport(
        mesh=mesh, p=p, eta_K=eta_K, eta_tilde_K=post.eta_tilde_K.copy(),
        mismatch_K=np.sqrt(np.maximum(mismatch_sq, 0.0)),
        jump_K=jump_K, boundary_K=bnd_K)


# -- exact-error norms ---------------------------------------------------------


@dataclass
class ErrorBlock:
    """Per-element exact-error quantities and their global reductions."""

    grad_nu_K: np.ndarray       # ||grad(u - nu_h)||_K
    one_h_K: np.ndarray         # |u - nu_h|_{1,K,h}
    q_L2_K: np.ndarray          # ||q - q_h||_K
    q_trace_K: np.ndarray       # h_K^{1/2} ||(q - q_h).n||_{dK}
    q_star_K: np.ndarray        # ||q - q_h||_{*,K}
    u_L2: float                 # ||u - u_h||
    nu_L2: float                # ||u - nu_h||

    @property
    def grad_nu(self):
        return float(np.sqrt(np.sum(self.grad_nu_K ** 2)))

    @property
    def one_h(self):
        return float(np.sqrt(np.sum(self.one_h_K ** 2)))

    @property
    def q_0h_K(self):
        return np.sqrt(self.q_L2_K ** 2 + self.q_trace_K ** 2)

    @property
    def q_0h(self):
        return float(np.sqrt(np.sum(self.q_0h_K ** 2)))

    @property
    def q_star_h_K(self):
        return np.sqrt(self.q_star_K ** 2 + self.q_trace_K ** 2)

    @property
    def q_star_h(self):
        return float(np.sqrt(np.sum(self.q_star_h_K ** 2)))

    @property
    def full(self):
        """Combined error (||u - nu||_{1,h}^2 + ||q - q_h||_{0,h}^2)^(1/2)."""
        return float(np.sqrt(self.one_h ** 2 + self.q_0h ** 2))

    def to_dict(self):
        return {"grad_nu": self.grad_nu, "one_h": self.one_h,
                "q_0h": self.q_0h, "q_star_h": self.q_star_h,
                "u_L2": self.u_L2, "nu_L2": self.nu_L2, "full": self.full}


def error_norms(problem: ProblemSpec, solution: MixedSolution,
                post: PostprocResult) -> ErrorBlock:
    """All exact-error norms; requires the problem's exact pair."""
    if not problem.has_exact:
        raise ValueError("problem carries no exact solution")
    mesh, p = solution.mesh, solution.p
    exact = 2 * p + 8
    nt = mesh.n_triangles
    basis_nu = make_scalar_basis(p + 1)
    basis_u = make_scalar_basis(p - 1)
    grad_nu_sq = np.zeros(nt)
    q_L2_sq = np.zeros(nt)
    u_L2_sq = np.zeros(nt)
    nu_L2_sq = np.zeros(nt)
    star_rhs = np.zeros((nt, basis_size(p + 2) - 1))
    basis_p2 = make_scalar_basis(p + 2)
    u_by_el = solution.scalar_by_element
    c_flux = solution.flux_space.local_coeffs(solution.flux)

    for ids, pts, w in _element_groups(mesh, problem, exact):
        phys = _subset_points(mesh, ids, pts)
        flat = phys.reshape(-1, 2)
        qv = np.asarray(problem.exact_q(flat), float).reshape(len(ids), len(w), 2)
        uv = np.asarray(problem.exact_u(flat), float).reshape(len(ids), len(w))
        J = mesh.det_jacobians[ids]
        Binv = mesh.inv_jacobians[ids]
        Vnu = basis_nu.values(pts)
        Dnu = basis_nu.grads(pts)
        nu_vals = np.einsum("ni,qi->nq", post.nu[ids], Vnu)
        gnu = np.einsum("ni,qib->nqb", post.nu[ids], Dnu)
        gnu = np.einsum("nqb,nba->nqa", gnu, Binv)
        Nh = reference_shape_values(p, pts)
        qh = np.einsum("nl,qla->nqa", c_flux[ids], Nh)
        qh = np.einsum("nqa,nba->nqb", qh, mesh.jacobians[ids]) / J[:, None, None]
        uh = np.einsum("ni,qi->nq", u_by_el[ids], basis_u.values(pts))
        # grad(u - nu) = -q - grad nu
        grad_nu_sq[ids] = np.einsum("nq,q,n->n",
                                    np.sum((qv + gnu) ** 2, axis=2), w, J)
        q_L2_sq[ids] = np.einsum("nq,q,n->n",
                                 np.sum((qv - qh) ** 2, axis=2), w, J)
        u_L2_sq[ids] = np.einsum("nq,q,n->n", (uv - uh) ** 2, w, J)
        nu_L2_sq[ids] = np.einsum("nq,q,n->n", (uv - nu_vals) ** 2, w, J)
        diff = qv - qh
        pulled = np.einsum("nqa,nba->nqb", diff, Binv)
        Dp2 = basis_p2.grads(pts)[:, 1:, :]
        star_rhs[ids] = np.einsum("nqb,qib,q,n->ni", pulled, Dp2, w, J)

    S22 = stiffness_tensors(mesh, p + 2, 2 * (p + 2))[:, 1:, 1:]
    q_star_K = _riesz_norms(star_rhs, S22)

    trace_sq = _flux_trace_error_sq(problem, solution)
    jump_K, bnd_K = nu_jump_terms(mesh, post.nu, problem.u_D, p + 5)
    one_h_K = np.sqrt(grad_nu_sq + jump_K + bnd_K)
    return ErrorBlock(
        grad_nu_K=np.sqrt(grad_nu_sq),
        one_h_K=one_h_K,
        q_L2_K=np.sqrt(q_L2_sq),
        q_trace_K=np.sqrt(mesh.h_K * trace_sq),
        q_star_K=q_star_K,
        u_L2=float(np.sqrt(u_L2_sq.sum())),
        nu_L2=float(np.sqrt(nu_L2_sq.sum())),
    )


def _flux_trace_error_sq(problem: ProblemSpec, solution: MixedSolution):
    """sum over local edges of ||(q - q_h) . n_K||^2_{edge}, per element."""
    mesh, p = solution.mesh, solution.p
    c_flux = solution.flux_space.local_coeffs(solution.flux)
    singular = _singular_edges(mesh, problem)
    out = np.zeros(mesh.n_triangles)
    rules = [(False, *bdm_edge_tables(p, p + 5)[:2])]
    if singular.any():
        rules.append((True, *subdivided_edge_rule(p + 5, 2)))
    for flagged, t, w in rules:
        tab = np.stack([reference_shape_values(p, edge_ref_points(j, t))
                        for j in range(3)])
        for j in range(3):
            sel = singular[mesh.elem_edges[:, j]] == flagged
            ids = np.nonzero(sel)[0]
            if ids.size == 0:
                continue
            ref = np.einsum("nl,qla->nqa", c_flux[ids], tab[j])
            qh = np.einsum("nqa,nba->nqb", ref, mesh.jacobians[ids]) \
                / mesh.det_jacobians[ids, None, None]
            pts = _subset_points(mesh, ids, edge_ref_points(j, t))
            qv = np.asarray(problem.exact_q(pts.reshape(-1, 2)), float)
            qv = qv.reshape(len(ids), len(t), 2)
            nrm = mesh.outward_normals[ids, j]
            dn = np.einsum("nqa,na->nq", qv - qh, nrm)
            out[ids] += np.einsum("nq,q->n", dn ** 2, w) \
                * mesh.tri_edge_lengths[ids, j]
    return out


def oscillation_bound(problem: ProblemSpec, mesh: TriMesh, p: int):
    """Upper bound h_K^{1/2} * (edgewise best approximation of q.n by P_p).

    Returns (per-element array, global value).
    """
    if problem.exact_q is None:
        raise ValueError("oscillation bound needs the exact flux")
    singular = _singular_edges(mesh, problem)
    resid_sq = np.zeros(mesh.n_triangles)
    rules = [(False, *subdivided_edge_rule(p + 6, 0))]
    if singular.any():
        rules.append((True, *subdivided_edge_rule(p + 6, 2)))
    for flagged, t, w in rules:
        leg = np.stack([shifted_legendre(m, t) for m in range(p + 1)])
        for j in range(3):
            sel = singular[mesh.elem_edges[:, j]] == flagged
            ids = np.nonzero(sel)[0]
            if ids.size == 0:
                continue
            pts = _subset_points(mesh, ids, edge_ref_points(j, t))
            qv = np.asarray(problem.exact_q(pts.reshape(-1, 2)), float)
            qv = qv.reshape(len(ids), len(t), 2)
            g = np.einsum("nqa,na->nq", qv, mesh.outward_normals[ids, j])
            mom = np.einsum("nq,mq,q->nm", g, leg, w)
            proj = np.einsum("nm,m,mq->nq", mom,
                             2.0 * np.arange(p + 1) + 1.0, leg)
            resid_sq[ids] += np.einsum("nq,q->n", (g - proj) ** 2, w) \
                * mesh.tri_edge_lengths[ids, j]
    per = np.sqrt(mesh.h_K * resid_sq)
    return per, float(np.sqrt(np.sum(per ** 2)))


def saturation_delta(problem: ProblemSpec, post: PostprocResult,
                     theta: np.ndarray):
    """delta = ||grad(u - theta_h)|| / ||grad(u - nu_h)|| over the mesh.

    Returns (delta, degenerate) where degenerate marks an exactly discrete
    solution (zero denominator, delta reported as 0).
    """
    if not problem.has_exact:
        raise ValueError("saturation measurement needs the exact solution")
    mesh, p = post.mesh, post.p
    exact = 2 * p + 8
    basis_nu = make_scalar_basis(p + 1)
    basis_th = make_scalar_basis(p + 2)
    num_sq = 0.0
    den_sq = 0.0
    for ids, pts, w in _element_groups(mesh, problem, exact):
        phys = _subset_points(mesh, ids, pts)
        qv = np.asarray(problem.exact_q(phys.reshape(-1, 2)), float)
        qv = qv.reshape(len(ids), len(w), 2)
        J = mesh.det_jacobians[ids]
        Binv = mesh.inv_jacobians[ids]
        for coeffs, basis, acc in ((post.nu, basis_nu, "den"),
                                   (theta, basis_th, "num")):
            g = np.einsum("ni,qib->nqb", coeffs[ids], basis.grads(pts))
            g = np.einsum("nqb,nba->nqa", g, Binv)
            val = float(np.einsum("nq,q,n->",
                                  np.sum((qv + g) ** 2, axis=2), w, J))
            if acc == "den":
                den_sq += val
            else:
                num_sq += val
    if den_sq <= 1e-28:
        return 0.0, True
    return float(np.sqrt(num_sq / den_sq)), False


def full_report(problem: ProblemSpec, solution: MixedSolution,
                post: PostprocResult, theta: np.ndarray | None = None,
                with_errors: bool = True) -> EstimatorReport:
    """Improved-estimator report, augmented with the exact-error block."""
    report = eta_improved(post, solution, problem.u_D)
    if with_errors and problem.has_exact:
        report.errors = error_norms(problem, solution, post)
        report.osc_K, _ = oscillation_bound(problem, post.mesh, post.p)
        full = report.errors.full
        report.effectivity = report.eta / full if full > 0 else None
        if theta is not None:
            report.delta, report.delta_degenerate = saturation_delta(
                problem, post, theta)
    return report
