"""Conforming triangular meshes.

Triangles are stored counter-clockwise with local vertex 0 being the newest
vertex; local edge ``i`` is the edge opposite local vertex ``i``, so edge 0 is
always the refinement edge used by newest-vertex bisection.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

# reference triangle vertices; local edge i runs from vertex i+1 to vertex i+2
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class Facet:
    vertices: tuple[int, int]
    elements: tuple[int, ...]
    normal: np.ndarray
    length: float
    is_boundary: bool


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with facet topology computed on demand.

    Parameters
    ----------
    vertices : (V, 2) array
    triangles : (M, 3) int array, counter-clockwise
    parent : (M,) int array, optional
        Element of the coarser mesh each triangle was produced from.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    parent: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64))
        if np.any(self.areas <= 0.0):
            raise ValueError("triangles must have positive signed area")

    # ------------------------------------------------------------------ sizes
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_facets(self) -> int:
        return len(self.facet_vertices)

    @property
    def refinement_edge(self) -> np.ndarray:
        return np.zeros(self.n_elements, dtype=np.int64)

    # --------------------------------------------------------------- geometry
    @cached_property
    def jacobians(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)

    @cached_property
    def det_jac(self) -> np.ndarray:
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def inv_jac_t(self) -> np.ndarray:
        """Inverse-transpose Jacobians, mapping reference gradients to physical ones."""
        J = self.jacobians
        d = self.det_jac
        out = np.empty_like(J)
        out[:, 0, 0] = J[:, 1, 1] / d
        out[:, 0, 1] = -J[:, 1, 0] / d
        out[:, 1, 0] = -J[:, 0, 1] / d
        out[:, 1, 1] = J[:, 0, 0] / d
        return out

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def elem_diameter(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lengths = [np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return np.max(lengths, axis=0)

    def map_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical images of reference points in every element, shape (M, nq, 2)."""
        ref_points = np.atleast_2d(ref_points)
        v0 = self.vertices[self.triangles[:, 0]]
        return v0[:, None, :] + np.einsum("mij,qj->mqi", self.jacobians, ref_points)

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    # --------------------------------------------------------------- topology
    @cached_property
    def _topology(self):
        t = self.triangles
        M = len(t)
        a = np.concatenate([t[:, (i + 1) % 3] for i in range(3)])
        b = np.concatenate([t[:, (i + 2) % 3] for i in range(3)])
        elem = np.tile(np.arange(M), 3)
        local = np.repeat(np.arange(3), M)
        keys = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: a facet is shared by more than two triangles")
        order = np.lexsort((elem, inverse))
        F = len(counts)
        first = np.zeros(F, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        first = order[starts]
        facet_elems = -np.ones((F, 2), dtype=np.int64)
        facet_local = -np.ones((F, 2), dtype=np.int64)
        facet_elems[:, 0] = elem[first]
        facet_local[:, 0] = local[first]
        interior = counts == 2
        second = order[starts[interior] + 1]
        facet_elems[interior, 1] = elem[second]
        facet_local[interior, 1] = local[second]
        elem_facets = inverse.reshape(3, M).T.copy()
        facet_vertices = np.stack([a[first], b[first]], axis=1)
        return facet_vertices, facet_elems, facet_local, elem_facets

    @property
    def facet_vertices(self) -> np.ndarray:
        """(F, 2) vertex pairs, oriented counter-clockwise w.r.t. the first element."""
        return self._topology[0]

    @property
    def facet_elems(self) -> np.ndarray:
        """(F, 2) adjacent elements, lower index first; -1 marks a boundary side."""
        return self._topology[1]

    @property
    def facet_local(self) -> np.ndarray:
        """(F, 2) local edge index of the facet within each adjacent element."""
        return self._topology[2]

    @property
    def elem_facets(self) -> np.ndarray:
        """(M, 3) facet index of local edge i of each element."""
        return self._topology[3]

    @cached_property
    def is_boundary_facet(self) -> np.ndarray:
        return self.facet_elems[:, 1] < 0

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        p = self.vertices[self.facet_vertices]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Unit normals pointing out of the first adjacent element."""
        p = self.vertices[self.facet_vertices]
        d = p[:, 1] - p[:, 0]
        return np.column_stack([d[:, 1], -d[:, 0]]) / self.facet_lengths[:, None]

    @cached_property
    def facet_h(self) -> np.ndarray:
        h = self.elem_diameter
        e = self.facet_elems
        out = h[e[:, 0]].copy()
        inner = e[:, 1] >= 0
        out[inner] = 0.5 * (h[e[inner, 0]] + h[e[inner, 1]])
        return out

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.facet_vertices[self.is_boundary_facet].ravel()] = True
        return flags

    def facet(self, i: int) -> Facet:
        elems = tuple(int(e) for e in self.facet_elems[i] if e >= 0)
        return Facet(
            vertices=tuple(int(v) for v in self.facet_vertices[i]),
            elements=elems,
            normal=self.facet_normals[i],
            length=float(self.facet_lengths[i]),
            is_boundary=bool(self.is_boundary_facet[i]),
        )

    def facet_ref_points(self, side: int, t: np.ndarray) -> np.ndarray:
        """Reference coordinates of the facet points with parameter ``t``.

        ``t`` runs from ``facet_vertices[:, 0]`` to ``facet_vertices[:, 1]``.
        Returns an (F, nq, 2) array in the reference frame of the element on
        ``side`` (0 or 1); rows of boundary facets are meaningless for side 1.
        """
        t = np.asarray(t, dtype=float)
        e = self.facet_elems[:, side]
        loc = self.facet_local[:, side]
        valid = e >= 0
        e = np.where(valid, e, 0)
        loc = np.where(valid, loc, 0)
        start_local = (loc + 1) % 3
        end_local = (loc + 2) % 3
        start_vertex = self.triangles[e, start_local]
        flipped = start_vertex != self.facet_vertices[:, 0]
        tt = np.where(flipped[:, None], 1.0 - t[None, :], t[None, :])
        A = REF_VERTICES[start_local]
        B = REF_VERTICES[end_local]
        return A[:, None, :] + tt[:, :, None] * (B - A)[:, None, :]

    def facet_points(self, t: np.ndarray) -> np.ndarray:
        """Physical points on every facet, shape (F, nq, 2)."""
        p = self.vertices[self.facet_vertices]
        return p[:, None, 0] + np.asarray(t)[None, :, None] * (p[:, None, 1] - p[:, None, 0])

    def neighbours(self) -> list[np.ndarray]:
        """Facet neighbours of each element."""
        e = self.facet_elems
        inner = e[e[:, 1] >= 0]
        nb: list[list[int]] = [[] for _ in range(self.n_elements)]
        for a, b in inner:
            nb[a].append(int(b))
            nb[b].append(int(a))
        return [np.array(sorted(x), dtype=np.int64) for x in nb]

    # ----------------------------------------------------------------- export
    def to_text(self) -> str:
        lines = [f"{self.n_vertices} {self.n_elements}"]
        lines += [f"{x!r} {y!r}" for x, y in self.vertices.tolist()]
        lines += [f"{i} {j} {k}" for i, j, k in self.triangles.tolist()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def read(cls, path) -> "Mesh":
        with open(path) as fh:
            nv, nt = (int(x) for x in fh.readline().split())
            data = [fh.readline().split() for _ in range(nv + nt)]
        verts = np.array([[float(x) for x in row] for row in data[:nv]])
        tris = np.array([[int(x) for x in row] for row in data[nv:]], dtype=np.int64)
        return cls(verts, tris)


# ------------------------------------------------------------------ builders
def _cell_mesh(cells, x0: float, y0: float, hx: float, hy: float) -> Mesh:
    """Criss-cross triangulation of a set of grid cells ``(i, j)``.

    Vertices live on a half-cell integer lattice, so deduplication is exact.
    """
    index: dict[tuple[int, int], int] = {}
    tris = []

    def vid(key):
        if key not in index:
            index[key] = len(index)
        return index[key]

    for i, j in cells:
        corners = [(2 * i, 2 * j), (2 * i + 2, 2 * j), (2 * i + 2, 2 * j + 2), (2 * i, 2 * j + 2)]
        cid = vid((2 * i + 1, 2 * j + 1))
        ids = [vid(c) for c in corners]
        for k in range(4):
            tris.append((cid, ids[k], ids[(k + 1) % 4]))
    keys = np.array(sorted(index, key=index.get), dtype=float)
    verts = np.column_stack([x0 + 0.5 * hx * keys[:, 0], y0 + 0.5 * hy * keys[:, 1]])
    return Mesh(verts, np.array(tris, dtype=np.int64))


def make_crisscross(n: int, rect=((0.0, 0.0), (1.0, 1.0))) -> Mesh:
    """``n`` x ``n`` cells of ``rect``, each cut into 4 triangles through its centre."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    (xa, ya), (xb, yb) = rect
    cells = [(i, j) for j in range(n) for i in range(n)]
    return _cell_mesh(cells, xa, ya, (xb - xa) / n, (yb - ya) / n)


def make_lshape(n: int) -> Mesh:
    """Criss-cross mesh of (-1,1)^2 minus [0,1)x(-1,0], ``n`` cells per unit length."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    h = 1.0 / n
    cells = [(i, j) for j in range(2 * n) for i in range(2 * n) if not (i >= n and j < n)]
    return _cell_mesh(cells, -1.0, -1.0, h, h)


# ---------------------------------------------------------------- refinement
def refine(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of ``marked`` elements plus conforming closure.

    Each marked element is bisected at least once; neighbours are bisected as
    needed to avoid hanging nodes. The returned mesh carries a ``parent`` map
    into ``mesh``.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64))
    M = mesh.n_elements
    if marked.size and (marked.min() < 0 or marked.max() >= M):
        raise IndexError("marked element index out of range")
    tris = mesh.triangles.copy()
    parent = np.arange(M, dtype=np.int64)
    if marked.size == 0:
        return Mesh(mesh.vertices.copy(), tris, parent)

    V = mesh.n_vertices
    big = np.int64(V + 4 * M + 16)  # upper bound on vertex count after refinement

    def edge_keys(t, i):
        a, b = t[:, (i + 1) % 3], t[:, (i + 2) % 3]
        return np.minimum(a, b) * big + np.maximum(a, b)

    all_keys = np.stack([edge_keys(tris, i) for i in range(3)], axis=1)
    flagged = np.unique(all_keys[marked, 0])
    # closure: any element touching a flagged edge must bisect its refinement edge
    while True:
        touch = np.isin(all_keys, flagged).any(axis=1)
        need = touch & ~np.isin(all_keys[:, 0], flagged)
        if not need.any():
            break
        flagged = np.union1d(flagged, all_keys[need, 0])

    verts = [mesh.vertices]
    nverts = V
    midpoint: dict[int, int] = {}
    while True:
        ref = edge_keys(tris, 0)
        split = np.isin(ref, flagged)
        if not split.any():
            break
        new_keys = [k for k in np.unique(ref[split]).tolist() if k not in midpoint]
        if new_keys:
            ka = np.array(new_keys, dtype=np.int64)
            a, b = ka // big, ka % big
            allv = np.concatenate(verts) if len(verts) > 1 else verts[0]
            verts = [allv, 0.5 * (allv[a] + allv[b])]
            for k in new_keys:
                midpoint[k] = nverts
                nverts += 1
        t = tris[split]
        m = np.array([midpoint[k] for k in ref[split].tolist()], dtype=np.int64)
        c1 = np.column_stack([m, t[:, 0], t[:, 1]])
        c2 = np.column_stack([m, t[:, 2], t[:, 0]])
        keep = ~split
        tris = np.concatenate([tris[keep], c1, c2])
        parent = np.concatenate([parent[keep], parent[split], parent[split]])
    allv = np.concatenate(verts) if len(verts) > 1 else verts[0]
    return Mesh(allv, tris, parent)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Two bisection generations of every element (h halves)."""
    once = refine(mesh, np.arange(mesh.n_elements))
    twice = refine(once, np.arange(once.n_elements))
    return Mesh(twice.vertices, twice.triangles, once.parent[twice.parent])
