"""Lagrange finite element spaces (discontinuous P_r and continuous P_s)."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .mesh import Mesh
from .quadrature import MAX_DEGREE, edge_rule, tri_rule


# ------------------------------------------------------------ reference basis
def local_dim(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def lattice(degree: int) -> np.ndarray:
    """Barycentric multi-indices of the Lagrange nodes, shape (nloc, 3).

    Order: vertices, then the nodes of edge 0, 1, 2 (edge i is opposite vertex
    i and runs from vertex i+1 to vertex i+2), then interior nodes.
    """
    k = degree
    if k == 0:
        return np.zeros((1, 3), dtype=np.int64)
    nodes = [(k, 0, 0), (0, k, 0), (0, 0, k)]
    for i in range(3):
        a, b = (i + 1) % 3, (i + 2) % 3
        for j in range(1, k):
            m = [0, 0, 0]
            m[a], m[b] = k - j, j
            nodes.append(tuple(m))
    for a2 in range(1, k):
        for a1 in range(1, k - a2):
            nodes.append((k - a1 - a2, a1, a2))
    out = np.array(nodes, dtype=np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def reference_nodes(degree: int) -> np.ndarray:
    if degree == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    lam = lattice(degree) / degree
    return lam[:, 1:].copy()


def _monomials(degree):
    return [(i, j) for d in range(degree + 1) for j in range(d + 1) for i in [d - j]]


@lru_cache(maxsize=None)
def _coefficients(degree: int) -> np.ndarray:
    nodes = reference_nodes(degree)
    mons = _monomials(degree)
    V = np.array([[x**i * y**j for (i, j) in mons] for x, y in nodes])
    return np.linalg.inv(V)  # column l holds the monomial coefficients of basis l


def reference_basis(degree: int, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values (nq, nloc), gradients (nq, nloc, 2), hessians (nq, nloc, 2, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    mons = _monomials(degree)
    C = _coefficients(degree)
    nq, nm = len(pts), len(mons)

    def pw(base, e):
        return base**e if e >= 0 else np.zeros_like(base)

    P = np.empty((nq, nm))
    Px = np.empty((nq, nm))
    Py = np.empty((nq, nm))
    Pxx = np.empty((nq, nm))
    Pxy = np.empty((nq, nm))
    Pyy = np.empty((nq, nm))
    for c, (i, j) in enumerate(mons):
        P[:, c] = pw(x, i) * pw(y, j)
        Px[:, c] = i * pw(x, i - 1) * pw(y, j)
        Py[:, c] = j * pw(x, i) * pw(y, j - 1)
        Pxx[:, c] = i * (i - 1) * pw(x, i - 2) * pw(y, j)
        Pxy[:, c] = i * j * pw(x, i - 1) * pw(y, j - 1)
        Pyy[:, c] = j * (j - 1) * pw(x, i) * pw(y, j - 2)
    vals = P @ C
    grads = np.stack([Px @ C, Py @ C], axis=-1)
    hxy = Pxy @ C
    hess = np.stack([np.stack([Pxx @ C, hxy], -1), np.stack([hxy, Pyy @ C], -1)], -2)
    return vals, grads, hess


# ---------------------------------------------------------------------- space
@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: Mesh
    kind: str
    degree: int
    elem_dofs: np.ndarray
    boundary_dofs: np.ndarray
    node_coords: np.ndarray

    @property
    def ndof(self) -> int:
        return len(self.node_coords)

    @property
    def nloc(self) -> int:
        return local_dim(self.degree)

    @property
    def is_dg(self) -> bool:
        return self.kind == "DG"

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_dofs)

    @cached_property
    def node_multiplicity(self) -> np.ndarray:
        """Number of elements sharing each node."""
        return np.bincount(self.elem_dofs.ravel(), minlength=self.ndof)

    def phys_basis(self, ref_points):
        """Basis values (nq, nloc) and physical gradients (M, nq, nloc, 2)."""
        vals, grads, _ = reference_basis(self.degree, ref_points)
        pg = np.einsum("mij,qlj->mqli", self.mesh.inv_jac_t, grads)
        return vals, pg

    def interpolate(self, g) -> "FeFunction":
        """Nodal interpolant of the scalar callable ``g(x, y)``."""
        x = self.node_coords
        return FeFunction(self, np.asarray(g(x[:, 0], x[:, 1]), dtype=float) * np.ones(self.ndof))


def build_space(mesh: Mesh, kind: str, degree: int) -> FeSpace:
    """Lagrange space of ``kind`` 'DG' (degree >= 0) or 'CG' (degree >= 1)."""
    kind = kind.upper()
    degree = int(degree)
    if kind not in ("DG", "CG"):
        raise ValueError(f"unknown space kind {kind!r}")
    if degree < 0 or (kind == "CG" and degree < 1):
        raise ValueError(f"{kind} space needs a larger degree, got {degree}")
    M = mesh.n_elements
    nloc = local_dim(degree)
    coords = mesh.map_points(reference_nodes(degree))
    if kind == "DG":
        elem_dofs = np.arange(M * nloc, dtype=np.int64).reshape(M, nloc)
        return FeSpace(mesh, kind, degree, elem_dofs, np.zeros(M * nloc, dtype=bool), coords.reshape(-1, 2))

    # a node is identified by the global vertices it combines and their weights
    lat = lattice(degree)
    gv = mesh.triangles[:, None, :].repeat(nloc, axis=1)
    mult = np.broadcast_to(lat, (M, nloc, 3))
    gv = np.where(mult > 0, gv, -1)
    order = np.argsort(gv, axis=2)
    gv = np.take_along_axis(gv, order, axis=2)
    mult = np.take_along_axis(mult, order, axis=2)
    keys = np.concatenate([gv, mult], axis=2).reshape(M * nloc, 6)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    elem_dofs = inverse.ravel().reshape(M, nloc)
    node_coords = coords.reshape(-1, 2)[first]

    bnd = np.zeros(len(first), dtype=bool)
    is_vertex = np.count_nonzero(lat, axis=1) == 1
    for l in np.flatnonzero(is_vertex):
        v = mesh.triangles[:, int(np.argmax(lat[l]))]
        bnd[elem_dofs[mesh.boundary_vertices[v], l]] = True
    for l in np.flatnonzero(np.count_nonzero(lat, axis=1) == 2):
        edge = int(np.flatnonzero(lat[l] == 0)[0])
        on_bnd = mesh.is_boundary_facet[mesh.elem_facets[:, edge]]
        bnd[elem_dofs[on_bnd, l]] = True
    return FeSpace(mesh, kind, degree, elem_dofs, bnd, node_coords)


# ------------------------------------------------------------------- function
@dataclass(eq=False)
class FeFunction:
    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndof,):
            raise ValueError(f"expected {self.space.ndof} coefficients, got {self.coeffs.shape}")

    @property
    def local(self) -> np.ndarray:
        return self.coeffs[self.space.elem_dofs]

    def eval_ref(self, ref_points):
        """Values (M, nq) and physical gradients (M, nq, 2) at reference points."""
        vals, pg = self.space.phys_basis(ref_points)
        loc = self.local
        return loc @ vals.T, np.einsum("ml,mqlj->mqj", loc, pg)

    def facet_traces(self, t):
        """Traces on both sides of each facet at parameters ``t``.

        Returns values (F, nq, 2) and gradients (F, nq, 2, 2) with the last
        side axis being (first element, second element); boundary facets get
        zeros on the second side.
        """
        mesh = self.space.mesh
        F, nq = mesh.n_facets, len(t)
        vals = np.zeros((F, nq, 2))
        grads = np.zeros((F, nq, 2, 2))
        loc = self.local
        for side in (0, 1):
            e = mesh.facet_elems[:, side]
            ok = e >= 0
            ref = mesh.facet_ref_points(side, t)[ok]
            ee = e[ok]
            v, g, _ = reference_basis(self.space.degree, ref.reshape(-1, 2))
            v = v.reshape(len(ee), nq, -1)
            g = g.reshape(len(ee), nq, -1, 2)
            g = np.einsum("fij,fqlj->fqli", mesh.inv_jac_t[ee], g)
            vals[ok, :, side] = np.einsum("fl,fql->fq", loc[ee], v)
            grads[ok, :, side] = np.einsum("fl,fqlj->fqj", loc[ee], g)
        return vals, grads

    def __mul__(self, a: float) -> "FeFunction":
        return FeFunction(self.space, a * self.coeffs)

    __rmul__ = __mul__

    def to_csv(self) -> str:
        sp = self.space
        if sp.is_dg:
            lines = ["elem," + ",".join(f"v{l}" for l in range(sp.nloc))]
            for m, row in enumerate(self.local.tolist()):
                lines.append(f"{m}," + ",".join(repr(v) for v in row))
        else:
            lines = ["x,y,value"]
            for (x, y), v in zip(sp.node_coords.tolist(), self.coeffs.tolist()):
                lines.append(f"{x!r},{y!r},{v!r}")
        return "\n".join(lines) + "\n"


def eval_basis(space: FeSpace, element: int, ref_point):
    """Local basis values (nloc,) and physical gradients (nloc, 2) at one point."""
    vals, grads, _ = reference_basis(space.degree, np.atleast_2d(ref_point))
    G = space.mesh.inv_jac_t[element]
    return vals[0], grads[0] @ G.T


def _quad_degree(degree: int) -> int:
    return min(max(2 * degree + 2, 6), MAX_DEGREE)


def l2_project(space: FeSpace, g):
    """Element-wise L2 projection of ``g(x, y)`` onto a DG space.

    Scalar fields give an :class:`FeFunction`; tensor-valued fields (trailing
    shape ``(2, 2)``) give coefficients of shape (M, nloc, 2, 2).
    """
    if not space.is_dg:
        raise ValueError("element-wise projection needs a DG space")
    rule = tri_rule(min(2 * space.degree + 4, MAX_DEGREE))
    vals, _, _ = reference_basis(space.degree, rule.points)
    Mref = (vals * rule.weights[:, None]).T @ vals  # per unit |det J|
    x = space.mesh.map_points(rule.points)
    gx = np.asarray(g(x[..., 0], x[..., 1]), dtype=float)
    M = space.mesh.n_elements
    if gx.ndim == 2:
        gx = np.broadcast_to(gx, (M, len(rule)))
        rhs = np.einsum("mq,q,ql->ml", gx, rule.weights, vals)
        coef = np.linalg.solve(Mref, rhs.T).T
        return FeFunction(space, coef.ravel())
    gx = np.broadcast_to(gx, (M, len(rule)) + gx.shape[2:])
    rhs = np.einsum("mq...,q,ql->ml...", gx, rule.weights, vals)
    shp = rhs.shape
    coef = np.linalg.solve(Mref, rhs.transpose(1, 0, *range(2, rhs.ndim)).reshape(space.nloc, -1))
    return coef.reshape((space.nloc, shp[0]) + shp[2:]).swapaxes(0, 1)


def error_norms(fn: FeFunction, u, grad_u, degree: int | None = None) -> tuple[float, float]:
    """L2 error and (broken) H1-seminorm error of ``fn`` against exact data."""
    mesh = fn.space.mesh
    rule = tri_rule(degree or _quad_degree(fn.space.degree))
    x = mesh.map_points(rule.points)
    vals, grads = fn.eval_ref(rule.points)
    ue = u(x[..., 0], x[..., 1])
    ge = np.stack(grad_u(x[..., 0], x[..., 1]), axis=-1)
    w = rule.weights[None, :] * np.abs(mesh.det_jac)[:, None]
    l2 = np.sum(w * (ue - vals) ** 2)
    h1 = np.sum(w * np.sum((ge - grads) ** 2, axis=-1))
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def element_errors(fn: FeFunction, grad_u, degree: int | None = None) -> np.ndarray:
    """Per-element squared H1-seminorm errors."""
    mesh = fn.space.mesh
    rule = tri_rule(degree or _quad_degree(fn.space.degree))
    x = mesh.map_points(rule.points)
    _, grads = fn.eval_ref(rule.points)
    ge = np.stack(grad_u(x[..., 0], x[..., 1]), axis=-1)
    w = rule.weights[None, :] * np.abs(mesh.det_jac)[:, None]
    return np.sum(w * np.sum((ge - grads) ** 2, axis=-1), axis=1)


def jump_norm_sq(fn: FeFunction, weight=1.0) -> float:
    """||sqrt(weight) [[fn]]||^2 over all facets, boundary included.

    ``weight`` is a scalar or per-facet array.
    """
    mesh = fn.space.mesh
    rule = edge_rule(2 * fn.space.degree + 1)
    vals, _ = fn.facet_traces(rule.points)
    jump = vals[..., 0] - vals[..., 1]
    w = np.broadcast_to(np.asarray(weight, dtype=float), (mesh.n_facets,))
    return float(np.sum(w[:, None] * mesh.facet_lengths[:, None] * rule.weights[None, :] * jump**2))


def dg_norm(fn: FeFunction, sigma) -> float:
    """(sum_T ||grad fn||_T^2 + ||sqrt(sigma) [[fn]]||_Gamma^2)^(1/2)."""
    mesh = fn.space.mesh
    rule = tri_rule(max(2 * fn.space.degree, 1))
    _, grads = fn.eval_ref(rule.points)
    w = rule.weights[None, :] * np.abs(mesh.det_jac)[:, None]
    broken = np.sum(w * np.sum(grads**2, axis=-1))
    return float(np.sqrt(broken + jump_norm_sq(fn, sigma)))
