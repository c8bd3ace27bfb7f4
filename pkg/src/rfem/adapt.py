"""SOLVE -> ESTIMATE -> MARK -> REFINE with maximum-strategy marking."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimator import compute_indicators, energy_errors
from .fespace import FeFunction, build_space
from .forms import ProblemSpec, StabSpec
from .mesh import Mesh, refine
from .recovery import build_recovery
from .system import build_rfem_system, solve

log = logging.getLogger(__name__)


@dataclass
class AdaptRecord:
    iteration: int
    ndof: int
    ndof_cg: int
    error: float
    estimator: float
    effectivity: float
    nelems: int
    mesh: Mesh | None = field(default=None, repr=False)

    CSV_HEADER = "iter,ndof,error,estimator,effectivity,nelems"

    def csv_row(self) -> str:
        return (
            f"{self.iteration},{self.ndof},{self.error:.17g},{self.estimator:.17g},"
            f"{self.effectivity:.17g},{self.nelems}"
        )


def mark_maximum(etas, theta: float) -> np.ndarray:
    """Indices of elements with eta_T >= theta * max eta."""
    etas = np.asarray(etas, dtype=float)
    if etas.size == 0:
        raise ValueError("no indicators to mark")
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    return np.flatnonzero(etas >= theta * etas.max())


def adapt_loop(
    problem: ProblemSpec,
    mesh: Mesh,
    r: int = 0,
    s: int = 1,
    stab: StabSpec | None = None,
    theta: float = 0.25,
    max_iter: int = 25,
    tol: float = 1e-3,
    keep_meshes: bool = False,
) -> list[AdaptRecord]:
    """Run the adaptive loop; stops when the estimator drops below ``tol``.

    Errors are reported when ``problem.grad_u`` is available (NaN otherwise).
    """
    stab = stab or StabSpec("jump", alpha=1.0)
    history: list[AdaptRecord] = []
    for it in range(max_iter):
        dg = build_space(mesh, "DG", r)
        cg = build_space(mesh, "CG", s)
        op = build_recovery(dg, cg)
        u = solve(build_rfem_system(dg, cg, op, problem, stab))
        dg_fn = FeFunction(dg, u)
        cg_fn = op(dg_fn)
        ind = compute_indicators(mesh, cg_fn, dg_fn, problem, stab, op)
        est = ind.total
        if problem.grad_u is not None:
            err = float(np.sqrt(np.sum(energy_errors(cg_fn, problem.grad_u, problem.A))))
            eff = est / err if err > 0 else float("nan")
        else:
            err = eff = float("nan")
        history.append(
            AdaptRecord(it, dg.ndof, len(cg.interior_dofs), err, est, eff, mesh.n_elements, mesh if keep_meshes else None)
        )
        log.info("iter %d: ndof %d, error %.3e, estimator %.3e", it, dg.ndof, err, est)
        if est < tol or it == max_iter - 1:
            break
        mesh = refine(mesh, mark_maximum(ind.local, theta))
    return history
