"""BDM H(div)-conforming flux spaces and discontinuous scalar spaces.

Reference shape functions of degree p are the nodal (dual) basis of these
functionals on the full vector polynomial space (P_p)^2:

  * per edge, moments of q.n against shifted Legendre polynomials of degree
    0..p in the edge traversal parameter (p+1 per edge);
  * for p >= 2, interior moments against gradients of mean-free scalars of
    degree <= p-1 and against curl(bubble * w) for w of degree <= p-2.

Physical shape functions are contravariant (Piola) push-forwards, which
preserve edge normal moments exactly, so a single global degree of freedom
per (edge, moment) with per-element sign factors yields single-valued normal
traces.  Global edges are oriented from the lower to the higher vertex index;
an element whose local traversal runs against that direction picks up the
sign (-1)^(m+1) on moment m.
"""

from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.special import eval_legendre

from .basis import basis_size, make_scalar_basis, make_zero_mean_basis, quad_rule
from .fields import edge_ref_points, mapped_points, scalar_tables
from .mesh import TriMesh

_REF_NORMALS = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
_REF_NORMALS[0] /= np.sqrt(2.0)
_REF_EDGE_LEN = np.array([np.sqrt(2.0), 1.0, 1.0])


def local_dimension(p: int) -> int:
    return (p + 1) * (p + 2)


def interior_dof_count(p: int) -> int:
    return p * p - 1 if p >= 2 else 0


def shifted_legendre(m, t):
    return eval_legendre(m, 2.0 * np.asarray(t, dtype=float) - 1.0)


def _bubble_and_grad(pts):
    x, y = pts[:, 0], pts[:, 1]
    b = x * y * (1.0 - x - y)
    db = np.stack([y * (1.0 - 2.0 * x - y), x * (1.0 - x - 2.0 * y)], axis=1)
    return b, db


def _interior_test_fields(p: int, pts) -> np.ndarray:
    """Interior functional fields at pts; shape (nq, n_interior, 2)."""
    n_int = interior_dof_count(p)
    pts = np.asarray(pts, dtype=float)
    out = np.empty((len(pts), n_int, 2))
    if n_int == 0:
        return out
    zm = make_zero_mean_basis(p - 1)
    out[:, : zm.size, :] = zm.grads(pts)
    wbas = make_scalar_basis(p - 2)
    b, db = _bubble_and_grad(pts)
    wv = wbas.values(pts)
    wg = wbas.grads(pts)
    # curl(b*w) = (d_y(b w), -d_x(b w))
    gx = wv * db[:, 0:1] + b[:, None] * wg[:, :, 0]
    gy = wv * db[:, 1:2] + b[:, None] * wg[:, :, 1]
    out[:, zm.size:, 0] = gy
    out[:, zm.size:, 1] = -gx
    return out


@lru_cache(maxsize=None)
def _bdm_reference(p: int):
    """Nodal coefficient matrix of the reference shape functions.

    Returns (coeffs, cond) where column l of coeffs holds the coefficients of
    shape function l over the primal basis [(phi_i, 0)] + [(0, phi_i)].
    """
    if p < 1:
        raise ValueError("BDM degree must be >= 1")
    s = basis_size(p)
    N = 2 * s
    basis = make_scalar_basis(p)
    V = np.zeros((N, N))
    row = 0
    erule = quad_rule(2 * p + 3, "edge")
    t, w = erule.points, erule.weights
    for j in range(3):
        phi = basis.values(edge_ref_points(j, t))
        for m in range(p + 1):
            base = _REF_EDGE_LEN[j] * np.einsum(
                "q,qi->i", w * shifted_legendre(m, t), phi)
            V[row, :s] = _REF_NORMALS[j, 0] * base
            V[row, s:] = _REF_NORMALS[j, 1] * base
            row += 1
    if p >= 2:
        trule = quad_rule(2 * p + 2, "triangle")
        phi = basis.values(trule.points)
        theta = _interior_test_fields(p, trule.points)
        for k in range(interior_dof_count(p)):
            V[row, :s] = np.einsum("q,qi->i", trule.weights * theta[:, k, 0], phi)
            V[row, s:] = np.einsum("q,qi->i", trule.weights * theta[:, k, 1], phi)
            row += 1
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e10:
        raise ArithmeticError(f"BDM degree-{p} functional matrix is ill posed")
    coeffs = np.linalg.inv(V)
    coeffs.setflags(write=False)
    return coeffs, cond


def reference_shape_values(p: int, pts) -> np.ndarray:
    """Reference shape function values; shape (npts, local_dim, 2)."""
    coeffs, _ = _bdm_reference(p)
    s = basis_size(p)
    phi = make_scalar_basis(p).values(pts)
    return np.stack([phi @ coeffs[:s, :], phi @ coeffs[s:, :]], axis=-1)


def reference_shape_divs(p: int, pts) -> np.ndarray:
    """Reference divergences of the shape functions; shape (npts, local_dim)."""
    coeffs, _ = _bdm_reference(p)
    s = basis_size(p)
    g = make_scalar_basis(p).grads(pts)
    return g[:, :, 0] @ coeffs[:s, :] + g[:, :, 1] @ coeffs[s:, :]


@lru_cache(maxsize=None)
def bdm_tables(p: int, exactness: int):
    """(rule, shape values (nq, nloc, 2), divergences (nq, nloc))."""
    rule = quad_rule(exactness, "triangle")
    Nh = reference_shape_values(p, rule.points)
    dNh = reference_shape_divs(p, rule.points)
    Nh.setflags(write=False)
    dNh.setflags(write=False)
    return rule, Nh, dNh


@lru_cache(maxsize=None)
def bdm_edge_tables(p: int, n_points: int):
    """Shape values along the 3 local edges in local parameter.

    Returns (t, w, table) with table shape (3, nq, nloc, 2).
    """
    rule = quad_rule(2 * n_points - 1, "edge")
    t, w = rule.points, rule.weights
    tab = np.stack([reference_shape_values(p, edge_ref_points(j, t))
                    for j in range(3)])
    tab.setflags(write=False)
    return t, w, tab


class DgSpace:
    """Elementwise discontinuous scalar space of total degree k."""

    def __init__(self, mesh: TriMesh, degree: int):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.mesh = mesh
        self.degree = degree
        self.local_dim = basis_size(degree)
        self.n_dofs = mesh.n_triangles * self.local_dim

    def coeffs_by_element(self, vec) -> np.ndarray:
        return np.asarray(vec).reshape(self.mesh.n_triangles, self.local_dim)

    def mass_diagonal(self) -> np.ndarray:
        """Orthonormal reference basis makes the mass matrix diagonal."""
        return np.repeat(self.mesh.det_jacobians, self.local_dim)

    def load_vector(self, f, exactness: int) -> np.ndarray:
        rule, V, _ = scalar_tables(self.degree, exactness)
        pts = mapped_points(self.mesh, rule.points)
        vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:2])
        F = np.einsum("n,q,nq,qi->ni", self.mesh.det_jacobians, rule.weights,
                      vals, V)
        return F.ravel()

    def eval(self, coeffs, element: int, pts) -> np.ndarray:
        basis = make_scalar_basis(self.degree)
        c = self.coeffs_by_element(coeffs)[element]
        return basis.values(pts) @ c


class BdmSpace:
    """Degree-p BDM space on a mesh with oriented shared edge DOFs."""

    def __init__(self, mesh: TriMesh, p: int):
        if p < 1:
            raise ValueError("BDM degree must be >= 1")
        self.mesh = mesh
        self.p = p
        self.local_dim = local_dimension(p)
        self.edge_dofs_per_edge = p + 1
        self.n_interior = interior_dof_count(p)
        self.n_edge_dofs = mesh.n_edges * (p + 1)
        self.n_dofs = self.n_edge_dofs + mesh.n_triangles * self.n_interior
        self._build_dof_map()

    def _build_dof_map(self):
        mesh, p = self.mesh, self.p
        nt = mesh.n_triangles
        l2g = np.empty((nt, self.local_dim), dtype=np.int64)
        sig = np.ones((nt, self.local_dim))
        m = np.arange(p + 1)
        for j in range(3):
            cols = slice(j * (p + 1), (j + 1) * (p + 1))
            l2g[:, cols] = mesh.elem_edges[:, j:j + 1] * (p + 1) + m[None, :]
            flip = ~mesh.elem_edge_aligned[:, j]
            sig[flip, cols] = ((-1.0) ** (m + 1))[None, :]
        if self.n_interior:
            base = self.n_edge_dofs + np.arange(nt)[:, None] * self.n_interior
            l2g[:, 3 * (p + 1):] = base + np.arange(self.n_interior)[None, :]
        self.l2g = l2g
        self.signs = sig

    def local_coeffs(self, vec) -> np.ndarray:
        """Per-element reference coefficients, orientation signs applied."""
        return np.asarray(vec)[self.l2g] * self.signs

    def eval_flux(self, coeffs, element: int, pts) -> np.ndarray:
        """Physical flux values of a global coefficient vector at reference pts."""
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (self.n_dofs,):
            raise ValueError(f"expected {self.n_dofs} coefficients")
        if not 0 <= element < self.mesh.n_triangles:
            raise IndexError(f"element {element} out of range")
        c = self.local_coeffs(coeffs)[element]
        Nh = reference_shape_values(self.p, pts)
        ref = np.einsum("l,qla->qa", c, Nh)
        B = self.mesh.jacobians[element]
        return ref @ B.T / self.mesh.det_jacobians[element]

    def flux_values(self, coeffs, ref_pts) -> np.ndarray:
        """Batched physical flux values (n_elements, nq, 2) at shared points."""
        Nh = reference_shape_values(self.p, ref_pts)
        c = self.local_coeffs(coeffs)
        ref = np.einsum("nl,qla->nqa", c, Nh)
        return np.einsum("nqa,nba->nqb", ref,
                         self.mesh.jacobians) / self.mesh.det_jacobians[:, None, None]

    def div_values(self, coeffs, ref_pts) -> np.ndarray:
        """Batched physical divergence values (n_elements, nq)."""
        d = reference_shape_divs(self.p, ref_pts)
        c = self.local_coeffs(coeffs)
        return np.einsum("nl,ql->nq", c, d) / self.mesh.det_jacobians[:, None]

    def normal_trace_edge(self, coeffs, n_points: int) -> np.ndarray:
        """q.n on every (element, local edge) at local-parameter Gauss points.

        Returns (t, values) with values shaped (n_elements, 3, nq); the normal
        is the element's outward one.
        """
        t, _, tab = bdm_edge_tables(self.p, n_points)
        c = self.local_coeffs(coeffs)
        ref = np.einsum("nl,jqla->njqa", c, tab)
        phys = np.einsum("njqa,nba->njqb", ref,
                         self.mesh.jacobians) / self.mesh.det_jacobians[:, None, None, None]
        vals = np.einsum("njqa,nja->njq", phys, self.mesh.outward_normals)
        return t, vals

    def interpolate(self, q, exactness: int | None = None) -> np.ndarray:
        """Canonical interpolation of a smooth vector field q(x) -> (n, 2)."""
        mesh, p = self.mesh, self.p
        exact = exactness if exactness is not None else 2 * p + 8
        erule = quad_rule(exact, "edge")
        t, w = erule.points, erule.weights
        lo = mesh.vertices[mesh.edges[:, 0]]
        hi = mesh.vertices[mesh.edges[:, 1]]
        pts = lo[:, None, :] + t[None, :, None] * (hi - lo)[:, None, :]
        qv = np.asarray(q(pts.reshape(-1, 2)), dtype=float).reshape(
            mesh.n_edges, len(t), 2)
        qn = np.einsum("eqa,ea->eq", qv, mesh.edge_normals)
        leg = np.stack([shifted_legendre(m, t) for m in range(p + 1)])
        dofs = np.empty(self.n_dofs)
        edge_part = np.einsum("eq,mq,q,e->em", qn, leg, w, mesh.edge_lengths)
        dofs[: self.n_edge_dofs] = edge_part.ravel()
        if self.n_interior:
            trule = quad_rule(exact, "triangle")
            theta = _interior_test_fields(p, trule.points)
            phys = mapped_points(mesh, trule.points)
            qv = np.asarray(q(phys.reshape(-1, 2)), dtype=float).reshape(
                mesh.n_triangles, len(trule.weights), 2)
            # contravariant pull-back J B^{-1} q
            qhat = np.einsum("n,nab,nqb->nqa", mesh.det_jacobians,
                             mesh.inv_jacobians, qv)
            vals = np.einsum("nqa,qka,q->nk", qhat, theta, trule.weights)
            dofs[self.n_edge_dofs:] = vals.ravel()
        return dofs


def bdm_mass_matrix(space: BdmSpace):
    """Global flux mass matrix (CSR)."""
    mesh, p = space.mesh, space.p
    rule, Nh, _ = bdm_tables(p, 2 * (p + 2))
    Rm = np.einsum("q,qia,qjb->abij", rule.weights, Nh, Nh)
    B, J = mesh.jacobians, mesh.det_jacobians
    T = np.einsum("nca,ncb->nab", B, B) / J[:, None, None]
    Mloc = np.einsum("nab,abij->nij", T, Rm)
    Mloc *= space.signs[:, :, None] * space.signs[:, None, :]
    rows = np.repeat(space.l2g, space.local_dim, axis=1).ravel()
    cols = np.tile(space.l2g, (1, space.local_dim)).ravel()
    mat = coo_matrix((Mloc.ravel(), (rows, cols)),
                     shape=(space.n_dofs, space.n_dofs))
    return mat.tocsr()


def divergence_matrix(space: BdmSpace, scalar: DgSpace):
    """B[i, j] = (div N_j, psi_i) over the mesh (CSR).

    The scalar space must have degree p-1; the reference pairing is geometry
    independent because the 1/J of the Piola divergence cancels the Jacobian.
    """
    if scalar.degree != space.p - 1:
        raise ValueError(
            f"scalar degree {scalar.degree} does not match flux degree "
            f"{space.p} (expected {space.p - 1})")
    if scalar.mesh is not space.mesh:
        raise ValueError("spaces live on different meshes")
    p = space.p
    rule, _, dNh = bdm_tables(p, 2 * (p + 2))
    _, V, _ = scalar_tables(scalar.degree, 2 * (p + 2))
    D0 = np.einsum("q,qi,ql->il", rule.weights, V, dNh)
    nt = space.mesh.n_triangles
    vals = D0[None, :, :] * space.signs[:, None, :]
    rows = (np.arange(nt)[:, None, None] * scalar.local_dim
            + np.arange(scalar.local_dim)[None, :, None])
    rows = np.broadcast_to(rows, vals.shape).ravel()
    cols = np.broadcast_to(space.l2g[:, None, :], vals.shape).ravel()
    mat = coo_matrix((vals.ravel(), (rows, cols)),
                     shape=(scalar.n_dofs, space.n_dofs))
    return mat.tocsr()


def advection_matrix(space: BdmSpace, scalar: DgSpace, beta):
    """C[i, j] = (beta . N_j, psi_i) for a constant vector beta (CSR)."""
    p = space.p
    rule, Nh, _ = bdm_tables(p, 2 * (p + 2))
    _, V, _ = scalar_tables(scalar.degree, 2 * (p + 2))
    Rc = np.einsum("q,qi,qla->ila", rule.weights, V, Nh)
    Btb = np.einsum("nba,b->na", space.mesh.jacobians, np.asarray(beta, float))
    vals = np.einsum("ila,na->nil", Rc, Btb)
    vals *= space.signs[:, None, :]
    nt = space.mesh.n_triangles
    rows = (np.arange(nt)[:, None, None] * scalar.local_dim
            + np.arange(scalar.local_dim)[None, :, None])
    rows = np.broadcast_to(rows, vals.shape).ravel()
    cols = np.broadcast_to(space.l2g[:, None, :], vals.shape).ravel()
    mat = coo_matrix((vals.ravel(), (rows, cols)),
                     shape=(scalar.n_dofs, space.n_dofs))
    return mat.tocsr()


def interpolate_boundary_term(space: BdmSpace, u_D) -> np.ndarray:
    """Load vector with entries -<u_D, N_j . n> over the domain boundary.

    Only boundary-edge DOFs receive contributions.  The normal trace of the
    global (edge e, moment m) basis function against the outward normal is
    +-(2m+1) L_m(t)/|e| depending on whether the owning element traverses e
    with the global orientation, so each entry reduces to a 1D moment of u_D.
    """
    mesh, p = space.mesh, space.p
    g = np.zeros(space.n_dofs)
    bdry = np.nonzero(mesh.boundary_edge)[0]
    if bdry.size == 0:
        return g
    rule = quad_rule(2 * p + 9, "edge")
    t, w = rule.points, rule.weights
    lo = mesh.vertices[mesh.edges[bdry, 0]]
    hi = mesh.vertices[mesh.edges[bdry, 1]]
    pts = lo[:, None, :] + t[None, :, None] * (hi - lo)[:, None, :]
    ud = np.asarray(u_D(pts.reshape(-1, 2)), dtype=float).reshape(len(bdry), len(t))
    owner = mesh.edge_tris[bdry, 0]
    local = mesh.edge_local[bdry, 0]
    sigma = np.where(mesh.elem_edge_aligned[owner, local], 1.0, -1.0)
    for m in range(p + 1):
        mom = np.einsum("eq,q->e", ud, w * shifted_legendre(m, t))
        g[bdry * (p + 1) + m] = -sigma * (2 * m + 1) * mom
    return g
