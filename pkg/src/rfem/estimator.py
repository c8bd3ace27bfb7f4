"""Residual a posteriori error indicators for the recovered solution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import FeFunction, build_space, l2_project, reference_basis
from .forms import ProblemSpec, StabSpec, local_stab_energy, scalar_at, tensor_at
from .mesh import Mesh
from .quadrature import MAX_DEGREE, edge_rule, tri_rule
from .recovery import RecoveryOp


@dataclass
class ErrorIndicators:
    eta: np.ndarray
    eta_A: np.ndarray
    stab: np.ndarray
    facet_part: np.ndarray

    @property
    def local(self) -> np.ndarray:
        """Per-element sqrt(eta_T^2 + h_T^(2 alpha) s_T + eta_A,T^2), used for marking."""
        return np.sqrt(self.eta**2 + self.stab + self.eta_A**2)

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.eta**2 + self.stab + self.eta_A**2)))

    def to_csv(self, patch_ratio=None) -> str:
        pr = np.full(len(self.eta), np.nan) if patch_ratio is None else patch_ratio
        lines = ["elem,eta,eta_A,stab,patch_ratio"]
        for i, row in enumerate(zip(self.eta, self.eta_A, self.stab, pr)):
            lines.append(f"{i}," + ",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def _projected_diffusion(mesh: Mesh, A, t: int):
    """Element-wise P_t projection of A, or None when A is constant."""
    if not callable(A):
        return None
    return l2_project(build_space(mesh, "DG", t), A)


def _physical_hessians(mesh: Mesh, ref_hess: np.ndarray) -> np.ndarray:
    G = mesh.inv_jac_t  # (M, 2, 2)
    return np.einsum("mia,qlab,mjb->mqlij", G, ref_hess, G)


def compute_indicators(
    mesh: Mesh,
    cg_fn: FeFunction,
    dg_fn: FeFunction,
    problem: ProblemSpec,
    stab: StabSpec,
    op: RecoveryOp | None = None,
) -> ErrorIndicators:
    """Element residual, flux-jump, stabilisation and data-oscillation terms.

    Only ``problem.f`` and ``problem.A`` are read; no exact solution is used.
    """
    s = cg_fn.space.degree
    t = max(s - 1, 0)
    A = problem.A
    PA = _projected_diffusion(mesh, A, t)
    h = mesh.elem_diameter

    rule = tri_rule(min(2 * s + 2, MAX_DEGREE))
    x = mesh.map_points(rule.points)
    w = rule.weights[None, :] * np.abs(mesh.det_jac)[:, None]
    loc = cg_fn.local
    _, rg, rh = reference_basis(s, rule.points)
    grad = np.einsum("ml,mqlj->mqj", loc, np.einsum("mij,qlj->mqli", mesh.inv_jac_t, rg))
    hess = np.einsum("ml,mqlij->mqij", loc, _physical_hessians(mesh, rh))
    if PA is None:
        At = tensor_at(A, x[..., 0], x[..., 1])
        div_flux = np.einsum("mqij,mqij->mq", At, hess)
        eta_A = np.zeros(mesh.n_elements)
    else:
        pv, pg, _ = reference_basis(t, rule.points)
        PAq = np.einsum("mlij,ql->mqij", PA, pv)
        dPA = np.einsum("mlij,mqlk->mqijk", PA, np.einsum("mab,qlb->mqla", mesh.inv_jac_t, pg))
        div_flux = np.einsum("mqiji,mqj->mq", dPA, grad) + np.einsum("mqij,mqij->mq", PAq, hess)
        At = tensor_at(A, x[..., 0], x[..., 1])
        osc = np.einsum("mqij,mqj->mqi", At - PAq, grad)
        eta_A = np.sqrt(np.sum(w * np.sum(osc**2, axis=-1), axis=1))
    res = scalar_at(problem.f, x[..., 0], x[..., 1]) + div_flux
    interior = h**2 * np.sum(w * res**2, axis=1)

    # normal jumps of the projected flux on interior facets
    erule = edge_rule(min(2 * s + 1, MAX_DEGREE))
    _, gtr = cg_fn.facet_traces(erule.points)  # (F, nq, 2 sides, 2)
    if PA is None:
        pts = mesh.facet_points(erule.points)
        Af = tensor_at(A, pts[..., 0], pts[..., 1])
        q = np.einsum("fqij,fqsj->fqsi", Af, gtr)
    else:
        dgt = build_space(mesh, "DG", t)
        comp = np.zeros(gtr.shape[:3] + (2, 2))
        for i in range(2):
            for j in range(2):
                comp[..., i, j] = FeFunction(dgt, PA[:, :, i, j].ravel()).facet_traces(erule.points)[0]
        q = np.einsum("fqsij,fqsj->fqsi", comp, gtr)
    jump = np.einsum("fqi,fi->fq", q[:, :, 0] - q[:, :, 1], mesh.facet_normals)
    inner = ~mesh.is_boundary_facet
    per_facet = mesh.facet_h * mesh.facet_lengths * (jump**2 @ erule.weights)
    per_facet[~inner] = 0.0
    e = mesh.facet_elems
    facet_part = 0.5 * (
        np.bincount(e[inner, 0], weights=per_facet[inner], minlength=mesh.n_elements)
        + np.bincount(e[inner, 1], weights=per_facet[inner], minlength=mesh.n_elements)
    )
    eta = np.sqrt(interior + facet_part)
    s_loc = local_stab_energy(dg_fn.space, op, stab, dg_fn.coeffs, A)
    stab_col = h ** (2.0 * stab.alpha) * s_loc
    return ErrorIndicators(eta, eta_A, stab_col, facet_part)


def effectivity(ind: ErrorIndicators, true_error: float) -> float:
    """Estimator divided by the energy error."""
    if not true_error > 0.0:
        raise ValueError("effectivity needs a positive true error")
    return ind.total / true_error


def patch_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Element-to-patch incidence: each element plus its facet neighbours."""
    e = mesh.facet_elems
    inner = e[:, 1] >= 0
    a, b = e[inner, 0], e[inner, 1]
    M = mesh.n_elements
    rows = np.concatenate([np.arange(M), a, b])
    cols = np.concatenate([np.arange(M), b, a])
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(M, M))


def energy_errors(cg_fn: FeFunction, grad_u, A=None) -> np.ndarray:
    """Per-element ||sqrt(A) grad(u - cg_fn)||_T^2."""
    mesh = cg_fn.space.mesh
    rule = tri_rule(min(max(2 * cg_fn.space.degree + 2, 6), MAX_DEGREE))
    x = mesh.map_points(rule.points)
    _, g = cg_fn.eval_ref(rule.points)
    d = np.stack(grad_u(x[..., 0], x[..., 1]), axis=-1) - g
    Ad = np.einsum("mqij,mqj->mqi", tensor_at(A, x[..., 0], x[..., 1]), d)
    w = rule.weights[None, :] * np.abs(mesh.det_jac)[:, None]
    return np.sum(w * np.sum(d * Ad, axis=-1), axis=1)


def lower_bound_ratio(ind: ErrorIndicators, mesh: Mesh, cg_fn: FeFunction, grad_u, A=None) -> np.ndarray:
    """eta_T^2 / (||sqrt(A) grad(u - E u_h)||^2 on the patch + eta_A,T^2)."""
    den = patch_matrix(mesh) @ energy_errors(cg_fn, grad_u, A) + ind.eta_A**2
    num = ind.eta**2
    safe = np.where(den > 0.0, den, 1.0)
    return np.where(den > 0.0, num / safe, np.where(num > 0.0, np.inf, 0.0))
