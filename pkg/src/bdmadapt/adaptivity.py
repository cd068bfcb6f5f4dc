"""Dörfler (bulk) marking and the solve/postprocess/estimate/refine loop."""

import json
from dataclasses import dataclass, field

import numpy as np

from .estimators import EstimatorReport, full_report
from .mesh import TriMesh, build_initial_mesh
from .postprocess import postprocess_resmin, solve_theta
from .solver import ProblemSpec, SingularSystemError, assemble, solve

_DEFAULT_INITIAL = {"unit_square": 32, "l_shape": 96}


def dorfler_mark(eta_K, theta: float) -> np.ndarray:
    """Minimal set M (greedy, squared indicators) with sum_{M} eta_K^2 >=
    theta * sum eta_K^2; ties broken by element id; empty if all zero."""
    eta_K = np.asarray(eta_K, dtype=float)
    if eta_K.ndim != 1:
        raise ValueError("eta_K must be one-dimensional")
    if np.any(eta_K < 0):
        raise ValueError("indicators must be nonnegative")
    if not 0.0 < theta < 1.0:
        raise ValueError("the marking fraction must lie in (0, 1)")
    total = float(np.sum(eta_K ** 2))
    if total == 0.0:
        return np.array([], dtype=np.int64)
    order = np.argsort(-eta_K, kind="stable")
    csum = np.cumsum(eta_K[order] ** 2)
    target = theta * total
    count = int(np.searchsorted(csum, target * (1.0 - 1e-12))) + 1
    count = min(count, len(eta_K))
    return np.sort(order[:count])


@dataclass
class IterationRecord:
    """State of one loop iteration (the mesh that was solved)."""

    iteration: int
    n_elements: int
    n_flux_dofs: int
    n_scalar_dofs: int
    eta: float
    eta_tilde: float
    delta: float | None = None
    effectivity: float | None = None
    errors: dict | None = None
    marked: np.ndarray | None = None
    marked_centroids: np.ndarray | None = None
    mesh: TriMesh | None = None
    report: EstimatorReport | None = None

    def to_dict(self) -> dict:
        out = {
            "iteration": self.iteration,
            "n_elements": self.n_elements,
            "n_flux_dofs": self.n_flux_dofs,
            "n_scalar_dofs": self.n_scalar_dofs,
            "eta": self.eta,
            "eta_tilde": self.eta_tilde,
            "delta": self.delta,
            "effectivity": self.effectivity,
            "n_marked": None if self.marked is None else int(len(self.marked)),
        }
        if self.errors is not None:
            out["errors"] = self.errors
        return out


@dataclass
class AdaptiveRun:
    """Append-only record of an adaptive (or uniform) refinement run."""

    problem_name: str
    p: int
    theta: float
    marker: str
    uniform: bool
    records: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    def element_counts(self):
        return [r.n_elements for r in self.records]

    def to_json(self, path: str):
        payload = {
            "problem": self.problem_name, "p": self.p, "theta": self.theta,
            "marker": self.marker, "uniform": self.uniform,
            "aborted": self.aborted, "abort_reason": self.abort_reason,
            "iterations": [r.to_dict() for r in self.records],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)


def run_adaptive(problem: ProblemSpec, p: int, theta: float = 0.5,
                 iterations: int = 10, marker: str = "eta",
                 uniform: bool = False, initial_elements: int | None = None,
                 initial_mesh: TriMesh | None = None,
                 with_errors: bool = True, with_theta: bool = True,
                 eta_tol: float = 0.0, max_elements: int | None = None,
                 keep_meshes: bool = True,
                 keep_reports: bool = False) -> AdaptiveRun:
    """Execute the refinement loop and record one entry per solved mesh.

    marker selects the indicator driving the marking ("eta" improved or
    "eta_tilde" built-in); uniform=True bisects every element instead.  The
    loop stops early when the estimator reaches eta_tol, when max_elements
    would be exceeded, or when the solver fails (partial run returned with
    the abort reason).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if marker not in ("eta", "eta_tilde"):
        raise ValueError("marker must be 'eta' or 'eta_tilde'")
    if initial_mesh is not None:
        mesh = initial_mesh
    else:
        count = initial_elements or _DEFAULT_INITIAL.get(problem.domain.name, 64)
        mesh = build_initial_mesh(problem.domain, count)
    run = AdaptiveRun(problem_name=problem.name, p=p, theta=theta,
                      marker=marker, uniform=uniform)
    for it in range(iterations):
        try:
            solution = solve(assemble(mesh, p, problem))
        except SingularSystemError as exc:
            run.aborted = True
            run.abort_reason = str(exc)
            break
        post = postprocess_resmin(solution)
        theta_h = solve_theta(solution) if (with_theta and problem.has_exact) \
            else None
        report = full_report(problem, solution, post, theta=theta_h,
                             with_errors=with_errors)
        rec = IterationRecord(
            iteration=it, n_elements=mesh.n_triangles,
            n_flux_dofs=solution.flux_space.n_dofs,
            n_scalar_dofs=solution.scalar_space.n_dofs,
            eta=report.eta, eta_tilde=report.eta_tilde,
            delta=report.delta, effectivity=report.effectivity,
            errors=None if report.errors is None else report.errors.to_dict(),
            mesh=mesh if keep_meshes else None,
            report=report if keep_reports else None)
        run.records.append(rec)
        if report.eta <= eta_tol:
            break
        if it == iterations - 1:
            break
        if uniform:
            # two bisection sweeps halve h, keeping one congruence family
            marked = np.arange(mesh.n_triangles)
            mesh = mesh.refine(marked)
            marked = np.arange(mesh.n_triangles)
        else:
            indicator = report.eta_K if marker == "eta" else report.eta_tilde_K
            marked = dorfler_mark(indicator, theta)
        rec.marked = marked
        rec.marked_centroids = mesh.centroids[marked] if len(marked) else \
            np.empty((0, 2))
        if len(marked) == 0:
            break
        refined = mesh.refine(marked)
        if max_elements is not None and refined.n_triangles > max_elements:
            run.abort_reason = "max_elements reached"
            break
        mesh = refined
    return run
