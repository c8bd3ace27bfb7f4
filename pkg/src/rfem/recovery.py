"""Nodal-averaging recovery from a DG space into a conforming space with zero trace."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import FeFunction, FeSpace, reference_basis, reference_nodes
from .quadrature import MAX_DEGREE, edge_rule, tri_rule

MAX_SVD_COLUMNS = 5000


@dataclass(frozen=True, eq=False)
class RecoveryOp:
    """Sparse recovery matrix E of shape (target.ndof, source.ndof)."""

    E: sp.csr_matrix
    source: FeSpace
    target: FeSpace

    def __call__(self, fn: FeFunction) -> FeFunction:
        if fn.space is not self.source:
            raise ValueError("function does not live on the recovery source space")
        return FeFunction(self.target, self.E @ fn.coeffs)


def transition_matrix(r: int, s: int) -> np.ndarray:
    """Values of the local P_r basis (rows) at the P_s Lagrange nodes (columns)."""
    if not (0 <= r <= s <= 3):
        raise ValueError(f"unsupported degree pair r={r}, s={s}")
    vals, _, _ = reference_basis(r, reference_nodes(s))
    T = vals.T.copy()
    T[np.abs(T) < 1e-14] = 0.0
    return T


def build_recovery(dg: FeSpace, cg: FeSpace) -> RecoveryOp:
    """Average the DG traces at each interior CG node; boundary nodes map to 0."""
    if dg.mesh is not cg.mesh:
        raise ValueError("DG and CG spaces must share a mesh")
    if not dg.is_dg or cg.is_dg:
        raise ValueError("recovery maps a DG space into a CG space")
    T = transition_matrix(dg.degree, cg.degree)
    M = dg.mesh.n_elements
    nr, ns = T.shape
    rows = np.repeat(cg.elem_dofs[:, None, :], nr, axis=1)  # (M, nr, ns)
    cols = np.repeat(dg.elem_dofs[:, :, None], ns, axis=2)
    weight = 1.0 / cg.node_multiplicity[cg.elem_dofs]  # (M, ns)
    vals = np.broadcast_to(T, (M, nr, ns)) * weight[:, None, :]
    keep = (~cg.boundary_dofs[rows]) & (vals != 0.0)
    E = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(cg.ndof, dg.ndof))
    E.sum_duplicates()
    return RecoveryOp(E, dg, cg)


def identity_recovery(dg: FeSpace) -> RecoveryOp:
    """No recovery: E = I on the DG space (turns R-FEM into interior penalty dG)."""
    return RecoveryOp(sp.identity(dg.ndof, format="csr"), dg, dg)


def embedding(dg: FeSpace, cg: FeSpace) -> sp.csr_matrix:
    """Matrix writing a CG function as DG coefficients of the same degree."""
    if dg.degree != cg.degree:
        raise ValueError("embedding needs equal degrees")
    rows = dg.elem_dofs.ravel()
    cols = cg.elem_dofs.ravel()
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(dg.ndof, cg.ndof))


def recovery_rank(op: RecoveryOp, rtol: float = 1e-10) -> int:
    """Numerical rank of E by dense SVD."""
    if op.E.shape[1] > MAX_SVD_COLUMNS:
        raise ValueError(f"refusing dense SVD with more than {MAX_SVD_COLUMNS} columns")
    sv = np.linalg.svd(op.E.toarray(), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def kp_ratio(dg: FeSpace, op: RecoveryOp, v: FeFunction, alpha: int) -> float:
    """sum_T |v - E v|_{alpha,T}^2 / ||h^(1/2-alpha) [[v]]||_Gamma^2 (0/0 -> 0)."""
    if alpha not in (0, 1):
        raise ValueError("alpha must be 0 or 1")
    mesh = dg.mesh
    ev = op(v)
    rule = tri_rule(min(2 * op.target.degree + 2, MAX_DEGREE))
    dv, dgv = v.eval_ref(rule.points)
    ev_v, ev_g = ev.eval_ref(rule.points)
    w = rule.weights[None, :] * np.abs(mesh.det_jac)[:, None]
    if alpha == 0:
        num = np.sum(w * (dv - ev_v) ** 2)
    else:
        num = np.sum(w * np.sum((dgv - ev_g) ** 2, axis=-1))
    erule = edge_rule(2 * dg.degree + 1)
    tr, _ = v.facet_traces(erule.points)
    jump = tr[..., 0] - tr[..., 1]
    hw = mesh.facet_h ** (1.0 - 2.0 * alpha) * mesh.facet_lengths
    den = np.sum(hw[:, None] * erule.weights[None, :] * jump**2)
    scale = np.sum(w * dv**2)
    if num <= 1e-24 * scale:
        return 0.0
    return float(num / den)

