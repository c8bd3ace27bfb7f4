"""Algebraic R-FEM system: assembly, solution, conditioning and equivalence checks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import FeSpace, build_space
from .forms import (
    ProblemSpec,
    StabSpec,
    assemble_dg_terms,
    assemble_ip_dg,
    assemble_load,
    assemble_mass_dg,
    assemble_stiffness,
    assemble_upwind,
    rfem_rhs,
    stabilisation_matrix,
)
from .mesh import Mesh
from .recovery import RecoveryOp, build_recovery, identity_recovery

log = logging.getLogger(__name__)

DIRECT_LIMIT = 20000
RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class ConvergenceError(RuntimeError):
    pass


@dataclass
class LinearSystem:
    """Matrix, right-hand side and, for reduced systems, the kept dofs."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool
    free: np.ndarray | None = None
    ndof_full: int | None = None
    parts: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError("incompatible system dimensions")
        if self.symmetric:
            amax = abs(self.matrix).max() if self.matrix.nnz else 0.0
            if amax and abs(self.matrix - self.matrix.T).max() > 1e-12 * amax:
                raise ValueError("matrix flagged symmetric is not symmetric")

    def expand(self, u: np.ndarray) -> np.ndarray:
        if self.free is None:
            return u
        full = np.zeros(self.ndof_full)
        full[self.free] = u
        return full


def build_rfem_system(dg: FeSpace, cg: FeSpace, op: RecoveryOp, problem: ProblemSpec, stab: StabSpec) -> LinearSystem:
    """(E^T K E + S) u = E^T b, with native DG convection/reaction blocks if present."""
    if dg.mesh is not cg.mesh or op.source is not dg or op.target is not cg:
        raise ValueError("spaces and recovery operator do not match")
    K = assemble_stiffness(cg, problem.A)
    S = stabilisation_matrix(dg, op, stab, problem.A)
    E = op.E
    EKE = (E.T @ K @ E).tocsr()
    matrix = EKE + S
    parts = {"K": K, "S": S, "EKE": EKE}
    symmetric = stab.kind != "dg" or stab.theta == 1.0
    if problem.c is not None:
        Mc = assemble_mass_dg(dg, problem.c)
        matrix = matrix + Mc
        parts["M"] = Mc
    if problem.w is not None:
        C = assemble_upwind(dg, problem.w)
        matrix = matrix + C
        parts["C"] = C
        symmetric = False
    b = assemble_load(cg, problem.f)
    return LinearSystem(matrix.tocsr(), rfem_rhs(op, b), symmetric, parts=parts)


def build_fem_system(cg: FeSpace, problem: ProblemSpec) -> LinearSystem:
    """Classical conforming FEM reduced to the interior dofs."""
    K = assemble_stiffness(cg, problem.A)
    b = assemble_load(cg, problem.f)
    free = cg.interior_dofs
    return LinearSystem(K[free][:, free].tocsr(), b[free], True, free=free, ndof_full=cg.ndof)


def build_ipdg_system(dg: FeSpace, problem: ProblemSpec, sigma, theta: float = 1.0) -> LinearSystem:
    """Interior penalty dG (upwinded when the problem has a convection field)."""
    K = assemble_stiffness(dg, problem.A) + assemble_dg_terms(dg, problem.A, sigma, theta)
    symmetric = theta == 1.0
    if problem.c is not None:
        K = K + assemble_mass_dg(dg, problem.c)
    if problem.w is not None:
        K = K + assemble_upwind(dg, problem.w)
        symmetric = False
    return LinearSystem(K.tocsr(), assemble_load(dg, problem.f), symmetric)


def solve(system: LinearSystem) -> np.ndarray:
    """Solve to relative residual below 1e-10; direct below 20000 unknowns."""
    A, b = system.matrix, system.rhs
    n = A.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    if n <= DIRECT_LIMIT:
        u = spla.spsolve(A.tocsc(), b)
    elif system.symmetric:
        u, info = spla.cg(A, b, rtol=1e-12, maxiter=20 * n)
    else:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-4, fill_factor=10)
        prec = spla.LinearOperator(A.shape, ilu.solve)
        u, info = spla.gmres(A, b, rtol=1e-12, restart=100, maxiter=n, M=prec)
    res = np.linalg.norm(A @ u - b) / bnorm
    if not np.all(np.isfinite(u)) or res >= RESIDUAL_TOL:
        if n > DIRECT_LIMIT and np.all(np.isfinite(u)):
            log.info("iterative solve stalled at %.2e; falling back to direct factorisation", res)
            u = spla.spsolve(A.tocsc(), b)
            res = np.linalg.norm(A @ u - b) / bnorm
        if not np.all(np.isfinite(u)) or res >= RESIDUAL_TOL:
            raise SolverError("linear solve failed", res)
    return u


# -------------------------------------------------------------- conditioning
def power_iteration(A, tol=1e-6, maxiter=100000, seed=0) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite operator.

    Stops once ``||A x - lam x|| <= tol * lam``, which for symmetric A puts an
    eigenvalue within ``tol * lam`` of the Rayleigh quotient.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(maxiter):
        y = A @ x
        lam = float(x @ y)
        if np.linalg.norm(y - lam * x) <= tol * abs(lam):
            return lam
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
    raise ConvergenceError("power iteration did not converge")


def inverse_iteration(A, tol=1e-6, maxiter=100000, seed=1) -> float:
    """Smallest eigenvalue of a symmetric positive definite matrix (same stopping rule)."""
    lu = spla.splu(sp.csc_matrix(A))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(maxiter):
        lam = float(x @ (A @ x))
        if np.linalg.norm(A @ x - lam * x) <= tol * abs(lam):
            return lam
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
    raise ConvergenceError("inverse iteration did not converge")


def condition_estimate(A, tol: float = 1e-6) -> float:
    """Spectral condition number lambda_max / lambda_min of an SPD matrix.

    Uses ARPACK Lanczos (the Krylov form of power iteration) for lambda_max and
    its shift-invert mode at zero (inverse iteration) for lambda_min. Tiny
    matrices fall back to the plain iterations.
    """
    n = A.shape[0]
    if n < 3:
        lmax, lmin = power_iteration(A, tol), inverse_iteration(A, tol)
    else:
        A = sp.csc_matrix(A)
        try:
            lmax = float(spla.eigsh(A, k=1, which="LA", tol=tol, ncv=min(n, 64), return_eigenvectors=False)[0])
            lmin = float(spla.eigsh(A, k=1, sigma=0.0, which="LM", tol=tol, ncv=min(n, 32), return_eigenvectors=False)[0])
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(str(exc)) from exc
    if lmin <= 0.0:
        raise ValueError("matrix is not positive definite")
    return lmax / lmin


def sparsity_summary(A) -> dict:
    A = sp.coo_matrix(A)
    bw = int(np.max(np.abs(A.row - A.col))) if A.nnz else 0
    return {"shape": A.shape, "nnz": int(A.nnz), "bandwidth": bw}


# ------------------------------------------------------------- equivalences
def fem_equivalence_gap(mesh: Mesh, degree: int, c_sigma: float, problem: ProblemSpec) -> float:
    """max |E(u_h) - u_h^FEM| over interior CG dofs for r = s = ``degree``."""
    dg = build_space(mesh, "DG", degree)
    cg = build_space(mesh, "CG", degree)
    op = build_recovery(dg, cg)
    stab = StabSpec("jump", alpha=0.0, c_sigma=c_sigma)
    u = solve(build_rfem_system(dg, cg, op, problem, stab))
    fem = build_fem_system(cg, problem)
    ufem = fem.expand(solve(fem))
    return float(np.max(np.abs(op.E @ u - ufem)[cg.interior_dofs]))


def dg_equivalence_gap(mesh: Mesh, r: int, c_sigma: float, theta: float, problem: ProblemSpec) -> tuple[float, float]:
    """Entrywise gaps (matrix, rhs) between identity-recovery R-FEM with dG
    stabilisation and independently assembled interior penalty dG."""
    dg = build_space(mesh, "DG", r)
    op = identity_recovery(dg)
    stab = StabSpec("dg", alpha=0.0, c_sigma=c_sigma, theta=theta)
    sysr = build_rfem_system(dg, dg, op, problem, stab)
    sigma = stab.facet_sigma(mesh, problem.A)
    Kip = assemble_ip_dg(dg, problem.A, sigma, theta)
    bdg = assemble_load(dg, problem.f)
    diff = sysr.matrix - Kip
    mgap = float(abs(diff).max()) if diff.nnz else 0.0
    return mgap, float(np.max(np.abs(sysr.rhs - bdg)))
