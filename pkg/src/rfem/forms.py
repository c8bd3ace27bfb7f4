"""Bilinear and linear forms: stiffness, stabilisations, interior penalty dG,
upwind convection, reaction mass and load vectors.

Matrices follow the convention ``K[i, j] = B(phi_j, phi_i)`` (row = test).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, build_space, reference_basis
from .mesh import Mesh
from .quadrature import MAX_DEGREE, edge_rule, tri_rule
from .recovery import RecoveryOp, embedding, transition_matrix

STAB_KINDS = ("jump", "volume", "dg")


# ------------------------------------------------------------------- problems
def tensor_at(A, x, y) -> np.ndarray:
    """Evaluate a diffusion tensor (None, constant 2x2, or callable) at points."""
    x = np.asarray(x, dtype=float)
    if A is None:
        return np.broadcast_to(np.eye(2), x.shape + (2, 2))
    if callable(A):
        return np.broadcast_to(np.asarray(A(x, y), dtype=float), x.shape + (2, 2))
    return np.broadcast_to(np.asarray(A, dtype=float), x.shape + (2, 2))


def scalar_at(c, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if c is None:
        return np.zeros_like(x)
    if callable(c):
        return np.broadcast_to(np.asarray(c(x, y), dtype=float), x.shape)
    return np.full_like(x, float(c))


@dataclass
class ProblemSpec:
    """-div(A grad u) + w.grad u + c u = f with u = 0 on the boundary.

    ``A`` may be None (identity), a constant 2x2 array or a callable returning
    shape (..., 2, 2). ``u`` and ``grad_u`` are optional exact data used only
    for error measurement.
    """

    f: Callable
    A: object = None
    w: Callable | None = None
    c: object = None
    u: Callable | None = None
    grad_u: Callable | None = None
    eps: float | None = None
    name: str = ""

    @property
    def constant_diffusion(self) -> bool:
        return not callable(self.A)

    @property
    def has_lower_order(self) -> bool:
        return self.w is not None or self.c is not None

    def check_spd(self, points: np.ndarray) -> None:
        lam = np.linalg.eigvalsh(tensor_at(self.A, points[:, 0], points[:, 1]))
        if np.any(lam[..., 0] <= 0.0):
            raise ValueError("diffusion tensor is not positive definite")

    @classmethod
    def convection_diffusion(cls, eps, w, f, c=None, u=None, grad_u=None, name=""):
        return cls(f=f, A=eps * np.eye(2), w=w, c=c, u=u, grad_u=grad_u, eps=eps, name=name)


def diffusion_scale(mesh: Mesh, A) -> np.ndarray:
    """Element-wise spectral norm of A at the centroid."""
    xc = mesh.centroids
    return np.linalg.norm(tensor_at(A, xc[:, 0], xc[:, 1]), ord=2, axis=(-2, -1))


@dataclass(frozen=True)
class StabSpec:
    """Stabilisation choice.

    ``kind`` is 'jump' (facet jump penalty), 'volume' (penalty on v - E v) or
    'dg' (symmetric/nonsymmetric interior penalty terms). The penalty is
    ``sigma = c_sigma * scale * h**power`` on facets, where ``power`` defaults
    to ``2 * alpha - 1``; the volume weight is ``sigma / h_T``. ``scale``
    overrides the element-wise diffusion magnitude.
    """

    kind: str = "jump"
    alpha: float = 1.0
    c_sigma: float = 1.0
    theta: float = 1.0
    power: float | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in STAB_KINDS:
            raise ValueError(f"unknown stabilisation kind {self.kind!r}")
        if not self.c_sigma > 0.0:
            raise ValueError("c_sigma must be positive")

    @property
    def sigma_power(self) -> float:
        return 2.0 * self.alpha - 1.0 if self.power is None else float(self.power)

    def _scale(self, mesh, A):
        if self.scale is not None:
            return np.full(mesh.n_elements, float(self.scale))
        return diffusion_scale(mesh, A)

    def facet_sigma(self, mesh: Mesh, A=None) -> np.ndarray:
        s = self._scale(mesh, A)
        e = mesh.facet_elems
        sf = s[e[:, 0]].copy()
        inner = e[:, 1] >= 0
        sf[inner] = np.maximum(sf[inner], s[e[inner, 1]])
        return self.c_sigma * sf * mesh.facet_h**self.sigma_power

    def element_sigma(self, mesh: Mesh, A=None) -> np.ndarray:
        return self.c_sigma * self._scale(mesh, A) * mesh.elem_diameter ** (self.sigma_power - 1.0)


# ------------------------------------------------------------------- helpers
def _scatter(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    """Assemble element matrices (M, nloc, nloc) into a global sparse matrix."""
    d = space.elem_dofs
    n = d.shape[1]
    rows = np.repeat(d[:, :, None], n, axis=2).ravel()
    cols = np.repeat(d[:, None, :], n, axis=1).ravel()
    K = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(space.ndof, space.ndof))
    K.sum_duplicates()
    return K


def _weights(mesh: Mesh, rule) -> np.ndarray:
    return rule.weights[None, :] * np.abs(mesh.det_jac)[:, None]


@dataclass
class FacetOps:
    """Sparse trace operators at facet quadrature points.

    Rows are ``f * nq + q``. ``T[side]`` gives traces, ``G[side]`` the two
    gradient components; side-1 rows of boundary facets are zero.
    """

    T: tuple
    G: tuple
    weights: np.ndarray
    normals: np.ndarray
    points: np.ndarray
    boundary: np.ndarray
    nq: int


def facet_operators(space: FeSpace, degree: int) -> FacetOps:
    mesh = space.mesh
    rule = edge_rule(max(1, min(degree, MAX_DEGREE)))
    F, nq, nloc = mesh.n_facets, len(rule), space.nloc
    T, G = [], []
    for side in (0, 1):
        e = mesh.facet_elems[:, side]
        ok = np.flatnonzero(e >= 0)
        ee = e[ok]
        ref = mesh.facet_ref_points(side, rule.points)[ok].reshape(-1, 2)
        v, g, _ = reference_basis(space.degree, ref)
        v = v.reshape(len(ok), nq, nloc)
        g = np.einsum("fij,fqlj->fqli", mesh.inv_jac_t[ee], g.reshape(len(ok), nq, nloc, 2))
        rows = np.repeat((ok[:, None] * nq + np.arange(nq))[:, :, None], nloc, axis=2)
        cols = np.repeat(space.elem_dofs[ee][:, None, :], nq, axis=1)
        shape = (F * nq, space.ndof)
        T.append(sp.csr_matrix((v.ravel(), (rows.ravel(), cols.ravel())), shape=shape))
        G.append(tuple(sp.csr_matrix((g[..., k].ravel(), (rows.ravel(), cols.ravel())), shape=shape) for k in range(2)))
    w = (mesh.facet_lengths[:, None] * rule.weights[None, :]).ravel()
    normals = np.repeat(mesh.facet_normals, nq, axis=0)
    pts = mesh.facet_points(rule.points).reshape(-1, 2)
    bnd = np.repeat(mesh.is_boundary_facet, nq)
    return FacetOps(tuple(T), tuple(G), w, normals, pts, bnd, nq)


# -------------------------------------------------------------------- volume
def assemble_stiffness(space: FeSpace, A=None) -> sp.csr_matrix:
    """sum_T int_T A grad(phi_j) . grad(phi_i); broken on DG spaces."""
    mesh = space.mesh
    deg = max(2 * (space.degree - 1), 1) + (0 if not callable(A) else 2)
    rule = tri_rule(min(deg, MAX_DEGREE))
    _, pg = space.phys_basis(rule.points)
    x = mesh.map_points(rule.points)
    At = tensor_at(A, x[..., 0], x[..., 1])
    Ag = np.einsum("mqij,mqlj->mqli", At, pg)
    local = np.einsum("mq,mqki,mqli->mkl", _weights(mesh, rule), pg, Ag)
    return _scatter(space, local)


assemble_stiffness_cg = assemble_stiffness


def assemble_mass_dg(space: FeSpace, c=1.0) -> sp.csr_matrix:
    """int c phi_j phi_i (c scalar, callable or None for zero)."""
    mesh = space.mesh
    rule = tri_rule(min(2 * space.degree + 2, MAX_DEGREE))
    vals, _, _ = reference_basis(space.degree, rule.points)
    x = mesh.map_points(rule.points)
    cw = scalar_at(c, x[..., 0], x[..., 1]) * _weights(mesh, rule)
    local = np.einsum("mq,qk,ql->mkl", cw, vals, vals)
    return _scatter(space, local)


def assemble_load(space: FeSpace, f, degree: int | None = None) -> np.ndarray:
    """int f phi_i with a rule of degree 2 * degree + 2 (capped)."""
    mesh = space.mesh
    rule = tri_rule(degree or min(2 * space.degree + 2, MAX_DEGREE))
    vals, _, _ = reference_basis(space.degree, rule.points)
    x = mesh.map_points(rule.points)
    fw = scalar_at(f, x[..., 0], x[..., 1]) * _weights(mesh, rule)
    local = fw @ vals
    return np.bincount(space.elem_dofs.ravel(), weights=local.ravel(), minlength=space.ndof)


def rfem_rhs(op: RecoveryOp, b: np.ndarray) -> np.ndarray:
    """E^T b: the load functional evaluated on recovered test functions."""
    return op.E.T @ b


# ------------------------------------------------------------ stabilisations
def assemble_jump_penalty(dg: FeSpace, sigma) -> sp.csr_matrix:
    """int_Gamma sigma [[w]].[[v]], boundary facets included; sigma per facet."""
    ops = facet_operators(dg, 2 * dg.degree + 1)
    J = ops.T[0] - ops.T[1]
    sig = np.repeat(np.broadcast_to(np.asarray(sigma, dtype=float), (dg.mesh.n_facets,)), ops.nq)
    return (J.T @ sp.diags(sig * ops.weights) @ J).tocsr()


def assemble_volume_stab(dg: FeSpace, op: RecoveryOp, sigma_elem) -> sp.csr_matrix:
    """int sigma~ (w - E w)(v - E v); sigma~ element-wise constant."""
    mesh = dg.mesh
    s = op.target.degree
    dgs = build_space(mesh, "DG", s)
    Tk = transition_matrix(dg.degree, s)
    M = mesh.n_elements
    rows = np.repeat(dgs.elem_dofs[:, None, :], dg.nloc, axis=1).ravel()
    cols = np.repeat(dg.elem_dofs[:, :, None], dgs.nloc, axis=2).ravel()
    P = sp.csr_matrix((np.broadcast_to(Tk, (M,) + Tk.shape).ravel(), (rows, cols)), shape=(dgs.ndof, dg.ndof))
    D = (P - embedding(dgs, op.target) @ op.E).tocsr()
    sig = np.broadcast_to(np.asarray(sigma_elem, dtype=float), (M,))
    rule = tri_rule(min(2 * s, MAX_DEGREE))
    vals, _, _ = reference_basis(s, rule.points)
    local = np.einsum("mq,qk,ql->mkl", _weights(mesh, rule) * sig[:, None], vals, vals)
    Ms = _scatter(dgs, local)
    return (D.T @ Ms @ D).tocsr()


def assemble_dg_terms(dg: FeSpace, A, sigma, theta: float) -> sp.csr_matrix:
    """Facet part of interior penalty dG:
    sigma [[w]].[[v]] - {A grad w}.[[v]] - theta {A grad v}.[[w]]."""
    ops = facet_operators(dg, 2 * dg.degree + 1)
    J = ops.T[0] - ops.T[1]
    At = tensor_at(A, ops.points[:, 0], ops.points[:, 1])
    b = np.einsum("qji,qj->qi", At, ops.normals)  # A^T n, so (A grad v).n = grad v . b
    flux = [ops.G[s][0].multiply(b[:, [0]]) + ops.G[s][1].multiply(b[:, [1]]) for s in (0, 1)]
    half = np.where(ops.boundary, 1.0, 0.5)[:, None]
    avg = (flux[0].multiply(half) + flux[1].multiply(half)).tocsr()
    sig = np.repeat(np.broadcast_to(np.asarray(sigma, dtype=float), (dg.mesh.n_facets,)), ops.nq)
    W = sp.diags(ops.weights)
    S = J.T @ sp.diags(sig * ops.weights) @ J - J.T @ W @ avg - theta * (avg.T @ W @ J)
    return S.tocsr()


def assemble_ip_dg(dg: FeSpace, A, sigma, theta: float) -> sp.csr_matrix:
    """Full interior penalty dG matrix K_IP, assembled from local blocks.

    Element blocks and per-facet (test side, trial side) blocks are formed
    directly and scattered; this deliberately avoids the global trace
    operators used by :func:`assemble_dg_terms`.
    """
    mesh = dg.mesh
    nloc = dg.nloc
    # element blocks
    rule = tri_rule(max(2 * dg.degree, 1) + (2 if callable(A) else 0))
    _, rg, _ = reference_basis(dg.degree, rule.points)
    x = mesh.map_points(rule.points)
    At = tensor_at(A, x[..., 0], x[..., 1])
    rows, cols, vals = [], [], []
    for m in range(mesh.n_elements):
        G = rg @ mesh.inv_jac_t[m].T  # (nq, nloc, 2)
        AG = np.einsum("qij,qlj->qli", At[m], G)
        Kloc = np.einsum("q,qki,qli->kl", rule.weights * abs(mesh.det_jac[m]), G, AG)
        d = dg.elem_dofs[m]
        rows.append(np.repeat(d, nloc))
        cols.append(np.tile(d, nloc))
        vals.append(Kloc.ravel())
    # facet blocks
    erule = edge_rule(2 * dg.degree + 1)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (mesh.n_facets,))
    pts = mesh.facet_points(erule.points)
    refs = [mesh.facet_ref_points(s, erule.points) for s in (0, 1)]
    for f in range(mesh.n_facets):
        n = mesh.facet_normals[f]
        wq = erule.weights * mesh.facet_lengths[f]
        Af = tensor_at(A, pts[f, :, 0], pts[f, :, 1])
        sides = [s for s in (0, 1) if mesh.facet_elems[f, s] >= 0]
        avg_w = 1.0 if len(sides) == 1 else 0.5
        phi, flux = {}, {}
        for s in sides:
            el = mesh.facet_elems[f, s]
            v, g, _ = reference_basis(dg.degree, refs[s][f])
            g = g @ mesh.inv_jac_t[el].T
            sign = 1.0 if s == 0 else -1.0
            phi[s] = sign * v  # jump contribution along n
            flux[s] = avg_w * np.einsum("qij,qlj,i->ql", Af, g, n)
        for a in sides:  # test side
            for b in sides:  # trial side
                blk = np.einsum("q,qk,ql->kl", sig[f] * wq, phi[a], phi[b])
                blk -= np.einsum("q,qk,ql->kl", wq, phi[a], flux[b])
                blk -= theta * np.einsum("q,qk,ql->kl", wq, flux[a], phi[b])
                da = dg.elem_dofs[mesh.facet_elems[f, a]]
                db = dg.elem_dofs[mesh.facet_elems[f, b]]
                rows.append(np.repeat(da, nloc))
                cols.append(np.tile(db, nloc))
                vals.append(blk.ravel())
    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dg.ndof, dg.ndof)
    )
    K.sum_duplicates()
    return K


def stabilisation_matrix(dg: FeSpace, op: RecoveryOp, stab: StabSpec, A=None) -> sp.csr_matrix:
    mesh = dg.mesh
    if stab.kind == "jump":
        return assemble_jump_penalty(dg, stab.facet_sigma(mesh, A))
    if stab.kind == "volume":
        return assemble_volume_stab(dg, op, stab.element_sigma(mesh, A))
    return assemble_dg_terms(dg, A, stab.facet_sigma(mesh, A), stab.theta)


def local_stab_energy(dg: FeSpace, op: RecoveryOp, stab: StabSpec, u: np.ndarray, A=None) -> np.ndarray:
    """Element contributions s_{h,T}(u, u); interior facet terms split half/half."""
    mesh = dg.mesh
    if stab.kind == "volume":
        s = op.target.degree
        rule = tri_rule(min(2 * s, MAX_DEGREE))
        vals, _, _ = reference_basis(dg.degree, rule.points)
        cv, _, _ = reference_basis(s, rule.points)
        diff = u[dg.elem_dofs] @ vals.T - (op.E @ u)[op.target.elem_dofs] @ cv.T
        sig = stab.element_sigma(mesh, A)
        return sig * np.sum(_weights(mesh, rule) * diff**2, axis=1)
    # facet jump part (for 'dg' only the penalty part is local and nonnegative)
    ops = facet_operators(dg, 2 * dg.degree + 1)
    jump = (ops.T[0] - ops.T[1]) @ u
    per_facet = (stab.facet_sigma(mesh, A)[:, None] * (ops.weights * jump**2).reshape(-1, ops.nq)).sum(axis=1)
    e = mesh.facet_elems
    share = np.where(e[:, 1] >= 0, 0.5, 1.0) * per_facet
    out = np.bincount(e[:, 0], weights=share, minlength=mesh.n_elements)
    inner = e[:, 1] >= 0
    out += np.bincount(e[inner, 1], weights=share[inner], minlength=mesh.n_elements)
    return out


# ---------------------------------------------------------------- convection
def assemble_upwind(dg: FeSpace, w) -> sp.csr_matrix:
    """sum_T int_T (w.grad u) v - int_{inflow of T} (w.n)(u_in - u_out) v_in.

    The exterior (upwind) value on inflow parts of the domain boundary is 0.
    """
    mesh = dg.mesh
    deg = min(2 * dg.degree + 3, MAX_DEGREE)
    rule = tri_rule(deg)
    vals, pg = dg.phys_basis(rule.points)
    x = mesh.map_points(rule.points)
    wx = np.stack(w(x[..., 0], x[..., 1]), axis=-1) * np.ones(x.shape)
    conv = np.einsum("mqi,mqli->mql", wx, pg)
    local = np.einsum("mq,qk,mql->mkl", _weights(mesh, rule), vals, conv)
    C = _scatter(dg, local)

    ops = facet_operators(dg, deg)
    wf = np.stack(w(ops.points[:, 0], ops.points[:, 1]), axis=-1) * np.ones(ops.points.shape)
    wn = np.sum(wf * ops.normals, axis=1)  # relative to the normal out of side 0
    in0 = np.where(wn < 0.0, -wn, 0.0) * ops.weights
    in1 = np.where((wn > 0.0) & ~ops.boundary, wn, 0.0) * ops.weights
    T0, T1 = ops.T
    D = T0 - T1
    C = C + T0.T @ sp.diags(in0) @ D - T1.T @ sp.diags(in1) @ D
    return C.tocsr()
