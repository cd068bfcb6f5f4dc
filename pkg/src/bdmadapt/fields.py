"""Batched element-level kernels shared by assembly, postprocessing and norms.

Scalar fields live elementwise as coefficient rows (n_elements, basis size)
with respect to the orthonormal reference basis composed with the inverse
affine map.  All kernels are vectorized over elements; per-element work is
expressed through a handful of reference tables contracted with 2x2 geometry
factors, so results do not depend on element visitation order.
"""

from functools import lru_cache

import numpy as np

from .basis import make_scalar_basis, quad_rule
from .mesh import TriMesh

_REF_EDGE_ENDS = (((1.0, 0.0), (0.0, 1.0)),
                  ((0.0, 1.0), (0.0, 0.0)),
                  ((0.0, 0.0), (1.0, 0.0)))


def edge_ref_points(local_edge: int, t) -> np.ndarray:
    """Reference coordinates of local-edge points at traversal parameters t."""
    t = np.asarray(t, dtype=float)[:, None]
    a, b = np.asarray(_REF_EDGE_ENDS[local_edge][0]), np.asarray(
        _REF_EDGE_ENDS[local_edge][1])
    return (1.0 - t) * a[None, :] + t * b[None, :]


@lru_cache(maxsize=None)
def scalar_tables(degree: int, exactness: int):
    """(rule, values (nq, s), grads (nq, s, 2)) on the triangle rule."""
    rule = quad_rule(exactness, "triangle")
    basis = make_scalar_basis(degree)
    V = basis.values(rule.points)
    D = basis.grads(rule.points)
    V.setflags(write=False)
    D.setflags(write=False)
    return rule, V, D


@lru_cache(maxsize=None)
def grad_outer_tables(degree: int, exactness: int):
    """R[a, b, i, j] = sum_q w_q d_a phi_i d_b phi_j on the reference element."""
    rule, _, D = scalar_tables(degree, exactness)
    R = np.einsum("q,qia,qjb->abij", rule.weights, D, D)
    R.setflags(write=False)
    return R


@lru_cache(maxsize=None)
def edge_scalar_tables(degree: int, n_points: int):
    """Basis values on all 6 (local edge, orientation) variants of edge points.

    Returns (t, w, table) with table shape (3, 2, nq, s); orientation index 1
    means the traversal parameter runs against the stored global direction.
    """
    rule = quad_rule(2 * n_points - 1, "edge")
    t, w = rule.points, rule.weights
    basis = make_scalar_basis(degree)
    tab = np.empty((3, 2, len(t), basis.size))
    for j in range(3):
        tab[j, 0] = basis.values(edge_ref_points(j, t))
        tab[j, 1] = basis.values(edge_ref_points(j, 1.0 - t))
    tab.setflags(write=False)
    return t, w, tab


def metric_tensors(mesh: TriMesh):
    """J * Binv Binv^T per element; contracts with grad_outer_tables."""
    Binv, J = mesh.inv_jacobians, mesh.det_jacobians
    return np.einsum("n,nab,ncb->nac", J, Binv, Binv)


def stiffness_tensors(mesh: TriMesh, degree: int, exactness: int) -> np.ndarray:
    """Element stiffness matrices (n, s, s) for the degree-r scalar basis.

    Row/column 0 belongs to the constant and vanishes; slicing [1:, 1:] gives
    the stiffness on the mean-free sub-basis.
    """
    R = grad_outer_tables(degree, exactness)
    return np.einsum("nab,abij->nij", metric_tensors(mesh), R)


def scalar_values_at(mesh: TriMesh, coeffs, V) -> np.ndarray:
    """Field values (n, nq) from coefficients (n, s) and a value table."""
    return np.einsum("ni,qi->nq", np.asarray(coeffs), V[:, : coeffs.shape[1]])


def scalar_grads_at(mesh: TriMesh, coeffs, D) -> np.ndarray:
    """Physical gradients (n, nq, 2) of an elementwise scalar field."""
    ref = np.einsum("ni,qib->nqb", np.asarray(coeffs), D[:, : coeffs.shape[1], :])
    return np.einsum("nqb,nba->nqa", ref, mesh.inv_jacobians)


def mapped_points(mesh: TriMesh, ref_pts) -> np.ndarray:
    """Physical images (n, nq, 2) of shared reference points."""
    v0 = mesh.tri_coords[:, 0]
    return v0[:, None, :] + np.einsum("qb,nab->nqa", np.asarray(ref_pts),
                                      mesh.jacobians)



def subdivided_rule(exactness: int, levels: int):
    """Reference rule replicated on the 4^levels congruent sub-triangles."""
    rule = quad_rule(exactness, "triangle")
    pts, wts = rule.points, rule.weights
    for _ in range(levels):
        children = (
            ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5)),
            ((0.5, 0.0), (1.0, 0.0), (0.5, 0.5)),
            ((0.0, 0.5), (0.5, 0.5), (0.0, 1.0)),
            ((0.5, 0.5), (0.0, 0.5), (0.5, 0.0)),
        )
        new_p, new_w = [], []
        for v0, v1, v2 in children:
            v0, v1, v2 = map(np.asarray, (v0, v1, v2))
            jac = np.stack([v1 - v0, v2 - v0], axis=1)
            new_p.append(v0[None, :] + pts @ jac.T)
            new_w.append(wts / 4.0)
        pts = np.vstack(new_p)
        wts = np.concatenate(new_w)
    return pts, wts


def subdivided_edge_rule(n_points: int, levels: int):
    """Edge rule on [0, 1] replicated on 2^levels equal sub-intervals."""
    rule = quad_rule(2 * n_points - 1, "edge")
    t, w = rule.points, rule.weights
    for _ in range(levels):
        t = np.concatenate([0.5 * t, 0.5 + 0.5 * t])
        w = np.concatenate([0.5 * w, 0.5 * w])
    return t, w


# -- interior-edge jumps and boundary traces of elementwise scalar fields ----


def nu_jump_terms(mesh: TriMesh, coeffs, u_D, n_points: int):
    """Scaled squared traces of an elementwise field across and along edges.

    Returns (jump_K, boundary_K): jump_K accumulates, per element, half of
    h_F^{-1} ||[field]||_F^2 over its interior edges; boundary_K accumulates
    h_F^{-1} ||u_D - field||_F^2 over its boundary edges.  u_D may be None,
    in which case the boundary part compares against zero traces of u_D = 0.
    """
    coeffs = np.asarray(coeffs)
    degree_size = coeffs.shape[1]
    t, w, tab = edge_scalar_tables(_degree_from_size(degree_size), n_points)
    tab = tab[:, :, :, :degree_size]
    nt = mesh.n_triangles
    jump_K = np.zeros(nt)
    bnd_K = np.zeros(nt)

    interior = np.nonzero(~mesh.boundary_edge)[0]
    if interior.size:
        kp = mesh.edge_tris[interior, 0]
        km = mesh.edge_tris[interior, 1]
        lp = mesh.edge_local[interior, 0]
        lm = mesh.edge_local[interior, 1]
        # K+ traverses with the global direction, K- against it
        vp = np.einsum("ni,nqi->nq", coeffs[kp], tab[lp, 0])
        vm = np.einsum("ni,nqi->nq", coeffs[km], tab[lm, 1])
        # h_F^{-1} ||jump||_F^2: the 1/h_F weight cancels the |e| of ds = |e| dt
        sq = np.einsum("nq,q->n", (vp - vm) ** 2, w)
        np.add.at(jump_K, kp, 0.5 * sq)
        np.add.at(jump_K, km, 0.5 * sq)

    bdry = np.nonzero(mesh.boundary_edge)[0]
    if bdry.size:
        k0 = mesh.edge_tris[bdry, 0]
        l0 = mesh.edge_local[bdry, 0]
        a0 = mesh.elem_edge_aligned[k0, l0].astype(int)
        v = np.einsum("ni,nqi->nq", coeffs[k0], tab[l0, 1 - a0])
        lo = mesh.vertices[mesh.edges[bdry, 0]]
        hi = mesh.vertices[mesh.edges[bdry, 1]]
        pts = lo[:, None, :] + t[None, :, None] * (hi - lo)[:, None, :]
        if u_D is not None:
            vals_ud = np.asarray(u_D(pts.reshape(-1, 2)), dtype=float)
            vals_ud = vals_ud.reshape(len(bdry), len(t))
        else:
            vals_ud = np.zeros((len(bdry), len(t)))
        sq = np.einsum("nq,q->n", (vals_ud - v) ** 2, w)
        np.add.at(bnd_K, k0, sq)
    return jump_K, bnd_K


def _degree_from_size(size: int) -> int:
    d = int(round((np.sqrt(8 * size + 1) - 3) / 2))
    if (d + 1) * (d + 2) // 2 != size:
        raise ValueError(f"{size} is not a triangular basis dimension")
    return d
