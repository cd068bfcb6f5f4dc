"""Self-contained identity and property battery behind the CLI verify command."""

import numpy as np
from scipy.linalg import eigh

from .adaptivity import dorfler_mark
from .basis import make_scalar_basis, quad_rule
from .estimators import dual_norm_star, error_norms, eta_improved, full_report
from .fields import stiffness_tensors
from .mesh import DomainSpec, build_initial_mesh
from .postprocess import postprocess_resmin, solve_theta, stenberg_oracle
from .problems import preset
from .solver import ProblemSpec, solve_problem


def _check(name, passed, detail):
    return {"name": name, "passed": bool(passed), "detail": detail}


def _linear_problem() -> ProblemSpec:
    return ProblemSpec(
        domain=DomainSpec.unit_square(),
        f=lambda x: np.zeros(len(x)),
        u_D=lambda x: x[:, 0],
        exact_u=lambda x: x[:, 0],
        exact_q=lambda x: np.stack([-np.ones(len(x)), np.zeros(len(x))], axis=1),
        name="linear")


def run_verification(seed: int = 0, quick: bool = True) -> dict:
    checks = []

    # quadrature exactness spot check
    rule = quad_rule(10, "triangle")
    val = float(np.einsum("q,q->", rule.weights,
                          rule.points[:, 0] ** 4 * rule.points[:, 1] ** 6))
    exact = 24.0 * 720.0 / 479001600.0  # 4! 6! / 12!
    checks.append(_check("quadrature_exactness",
                         abs(val - exact) <= 1e-13 * abs(exact),
                         f"|err|={abs(val - exact):.2e}"))

    # full-pipeline exactness on a linear solution
    lin = _linear_problem()
    worst = 0.0
    for p in (1, 2, 3):
        mesh = build_initial_mesh(lin.domain, 8)
        sol = solve_problem(mesh, p, lin)
        post = postprocess_resmin(sol)
        rep = eta_improved(post, sol, lin.u_D)
        err = error_norms(lin, sol, post)
        worst = max(worst, rep.eta, err.full, err.nu_L2)
    checks.append(_check("linear_exactness", worst <= 1e-10,
                         f"max residual {worst:.2e}"))

    # equivalence of the two postprocessing routes, and the enrichment identity
    smooth = preset("smooth")
    mesh = build_initial_mesh(smooth.domain, 32).refine(range(32))
    p = 2
    sol = solve_problem(mesh, p, smooth)
    post = postprocess_resmin(sol)
    ref = stenberg_oracle(sol)
    S = stiffness_tensors(mesh, p + 2, 2 * (p + 2))
    dev = np.abs(post.nu - ref)
    scale = np.sqrt(np.sum(mesh.det_jacobians[:, None] * ref ** 2))
    checks.append(_check("postprocessing_equivalence",
                         dev.max() <= 1e-10 * max(scale, 1.0),
                         f"max coeff dev {dev.max():.2e}"))
    theta = solve_theta(sol)
    diff = theta[:, 1:].copy()
    n1 = post.nu.shape[1] - 1
    diff[:, :n1] -= post.nu[:, 1:]
    lhs = np.sqrt(np.einsum("ni,nij,nj->n", diff, S[:, 1:, 1:], diff))
    resid = np.abs(lhs - post.eta_tilde_K)
    tol = 1e-10 * np.maximum(post.eta_tilde_K, 1e-2 * post.eta_tilde_K.max())
    checks.append(_check("enrichment_identity", np.all(resid <= tol),
                         f"max residual {resid.max():.2e}"))

    # local efficiency of both indicators
    rep = full_report(smooth, sol, post, theta=theta)
    err = rep.errors
    slack = 1e-8 * err.full
    eff1 = rep.eta_tilde_K <= err.grad_nu_K + err.q_star_K + slack
    eff2 = rep.eta_K <= err.one_h_K + err.q_L2_K + slack
    checks.append(_check("local_efficiency", bool(eff1.all() and eff2.all()),
                         f"violations {int((~eff1).sum() + (~eff2).sum())}"))
    checks.append(_check("saturation_delta",
                         rep.delta is not None and 0 <= rep.delta < 1,
                         f"delta={rep.delta}"))

    # dual norm against a dense eigen-oracle
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in (1, 2):
        S22 = stiffness_tensors(mesh, p + 2, 2 * (p + 2))[:, 1:, 1:]
        for _ in range(3 if quick else 10):
            k = int(rng.integers(0, mesh.n_triangles))
            coef = rng.standard_normal((3, 2))

            def fld(x, c=coef):
                return (c[None, 0] + c[None, 1] * x[:, 0:1]
                        + c[None, 2] * (x ** 2))

            got = dual_norm_star(mesh, p, k, fld)
            basis = make_scalar_basis(p + 2)
            rule = quad_rule(2 * p + 8, "triangle")
            D = basis.grads(rule.points)[:, 1:, :]
            v0 = mesh.tri_coords[k, 0]
            pts = v0[None, :] + rule.points @ mesh.jacobians[k].T
            vals = fld(pts)
            pulled = np.einsum("qa,ba->qb", vals, mesh.inv_jacobians[k])
            b = mesh.det_jacobians[k] * np.einsum("q,qb,qib->i",
                                                  rule.weights, pulled, D)
            evals, evecs = eigh(S22[k])
            ref_val = float(np.linalg.norm((evecs.T @ b) / np.sqrt(evals)))
            worst = max(worst, abs(got - ref_val) / max(ref_val, 1e-14))
    checks.append(_check("dual_norm_oracle", worst <= 1e-10,
                         f"max rel dev {worst:.2e}"))

    # marking sanity
    marked = dorfler_mark(np.array([3.0, 1.0, 1.0, 1.0]), 0.6)
    checks.append(_check("dorfler_marking", marked.tolist() == [0],
                         f"marked={marked.tolist()}"))

    return {"passed": all(c["passed"] for c in checks), "checks": checks}
