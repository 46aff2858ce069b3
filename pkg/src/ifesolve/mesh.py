"""Uniform simplicial meshes of boxes, face tables and nested refinement."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, permutations
from math import factorial
from pathlib import Path

import numpy as np

LOCAL_EDGES = {
    2: [(0, 1), (0, 2), (1, 2)],
    3: [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
}


def local_edge_index(dim: int) -> dict:
    return {pair: k for k, pair in enumerate(LOCAL_EDGES[dim])}


def _box(domain, dim):
    if domain is None:
        domain = [(-1.0, 1.0)] * dim
    box = np.asarray(domain, dtype=float)
    if box.shape != (dim, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError(f"domain must be {dim} (lo, hi) pairs with lo < hi")
    return box


@dataclass
class Mesh:
    """Conforming simplicial mesh with a face table.

    Local face ``k`` of an element is the face opposite its local vertex ``k``.
    Each face stores its adjacent elements ``(T1, T2)`` with ``T1 < T2``;
    boundary faces have ``T2 = -1``. Face normals point from ``T1`` to ``T2``
    (outward on the boundary).
    """

    vertices: np.ndarray
    elements: np.ndarray
    domain: np.ndarray
    level: int = 0
    parent_elements: np.ndarray | None = None
    _faces: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self._faces is None:
            self._faces = _build_faces(self.vertices, self.elements)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def faces(self) -> np.ndarray:
        return self._faces[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def element_faces(self) -> np.ndarray:
        return self._faces[1]

    @property
    def face_elements(self) -> np.ndarray:
        return self._faces[2]

    @property
    def face_local_index(self) -> np.ndarray:
        """Local index of the face inside each adjacent element, (nf, 2)."""
        return self._faces[3]

    @property
    def boundary_faces(self) -> np.ndarray:
        return self.face_elements[:, 1] < 0

    # -- geometry ---------------------------------------------------------
    @cached_property
    def element_coords(self) -> np.ndarray:
        return self.vertices[self.elements]

    @cached_property
    def volumes(self) -> np.ndarray:
        X = self.element_coords
        J = X[:, 1:] - X[:, :1]
        return np.abs(np.linalg.det(J)) / factorial(self.dim)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.element_coords.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        X = self.element_coords
        d = np.zeros(self.n_elements)
        for i, j in LOCAL_EDGES[self.dim]:
            d = np.maximum(d, np.linalg.norm(X[:, i] - X[:, j], axis=1))
        return d

    @cached_property
    def bary_gradients(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, (nel, N + 1, N)."""
        X = self.element_coords
        J = X[:, 1:] - X[:, :1]  # rows are edge vectors
        Jinv = np.linalg.inv(J)  # columns give gradients of lambda_1..N
        g = np.transpose(Jinv, (0, 2, 1))
        g0 = -g.sum(axis=1, keepdims=True)
        return np.concatenate([g0, g], axis=1)

    @cached_property
    def face_coords(self) -> np.ndarray:
        return self.vertices[self.faces]

    @cached_property
    def face_measures(self) -> np.ndarray:
        X = self.face_coords
        if self.dim == 2:
            return np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)

    @cached_property
    def face_diameters(self) -> np.ndarray:
        X = self.face_coords
        d = np.zeros(self.n_faces)
        for i, j in combinations(range(self.dim), 2):
            d = np.maximum(d, np.linalg.norm(X[:, i] - X[:, j], axis=1))
        return d

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.face_coords.mean(axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        X = self.face_coords
        if self.dim == 2:
            e = X[:, 1] - X[:, 0]
            n = np.column_stack([e[:, 1], -e[:, 0]])
        else:
            n = np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        T1 = self.face_elements[:, 0]
        k1 = self.face_local_index[:, 0]
        opposite = self.vertices[self.elements[T1, k1]]
        flip = np.einsum("fa,fa->f", n, self.face_centroids - opposite) < 0
        n[flip] *= -1
        return n

    # -- edges ------------------------------------------------------------
    @cached_property
    def _edge_table(self):
        pairs = LOCAL_EDGES[self.dim]
        E = np.stack([self.elements[:, [i, j]] for i, j in pairs], axis=1)
        E = np.sort(E, axis=2)
        edges, inv = np.unique(E.reshape(-1, 2), axis=0, return_inverse=True)
        return edges, inv.reshape(self.n_elements, len(pairs))

    @property
    def edges(self) -> np.ndarray:
        return self._edge_table[0]

    @property
    def element_edges(self) -> np.ndarray:
        return self._edge_table[1]

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def shape_regularity(self) -> float:
        """min over elements/faces of |F| / h_T^(N-1)."""
        fm = self.face_measures[self.element_faces]
        return float((fm / self.diameters[:, None] ** (self.dim - 1)).min())

    def write_vtk(self, path, cell_data: dict | None = None) -> None:
        """Write the mesh as a legacy ASCII VTK unstructured grid."""
        write_vtk(self, path, cell_data)


def _build_faces(vertices, elements):
    nel, nv = elements.shape
    others = [[j for j in range(nv) if j != k] for k in range(nv)]
    F = np.stack([elements[:, o] for o in others], axis=1)  # (nel, nv, dim)
    F = np.sort(F, axis=2).reshape(nel * nv, nv - 1)
    faces, inv = np.unique(F, axis=0, return_inverse=True)
    inv = inv.ravel()
    element_faces = inv.reshape(nel, nv)
    owner = np.repeat(np.arange(nel), nv)
    local = np.tile(np.arange(nv), nel)
    order = np.lexsort((owner, inv))
    inv_s, own_s, loc_s = inv[order], owner[order], local[order]
    counts = np.bincount(inv_s, minlength=faces.shape[0])
    if np.any(counts > 2):
        raise ValueError("non-manifold mesh: a face has more than two elements")
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    face_elements = -np.ones((faces.shape[0], 2), dtype=np.int64)
    face_local = -np.ones((faces.shape[0], 2), dtype=np.int64)
    face_elements[:, 0] = own_s[start]
    face_local[:, 0] = loc_s[start]
    two = counts == 2
    face_elements[two, 1] = own_s[start[two] + 1]
    face_local[two, 1] = loc_s[start[two] + 1]
    return faces, element_faces, face_elements, face_local


def build_uniform_mesh_2d(M: int, domain=None) -> Mesh:
    """2 M^2 congruent right triangles; every square is cut along the same diagonal."""
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    M = int(M)
    box = _box(domain, 2)
    x = np.linspace(box[0, 0], box[0, 1], M + 1)
    y = np.linspace(box[1, 0], box[1, 1], M + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((M + 1) ** 2).reshape(M + 1, M + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    v01 = idx[:-1, 1:].ravel()
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elems = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(verts, elems, box)


# Kuhn simplices of the unit cube: paths 0 -> e_a -> e_a + e_b -> (1,1,1)
_KUHN = [p for p in permutations(range(3))]


def build_uniform_mesh_3d(M: int, domain=None) -> Mesh:
    """M^3 cubes, each split into the six Kuhn tetrahedra along its main diagonal."""
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    M = int(M)
    box = _box(domain, 3)
    axes = [np.linspace(box[a, 0], box[a, 1], M + 1) for a in range(3)]
    G = np.meshgrid(*axes, indexing="ij")
    verts = np.column_stack([g.ravel() for g in G])
    idx = np.arange((M + 1) ** 3).reshape(M + 1, M + 1, M + 1)
    I, J, K = np.meshgrid(np.arange(M), np.arange(M), np.arange(M), indexing="ij")
    base = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    tets = []
    for perm in _KUHN:
        corner = base.copy()
        ids = [idx[corner[:, 0], corner[:, 1], corner[:, 2]]]
        for a in perm:
            corner = corner.copy()
            corner[:, a] += 1
            ids.append(idx[corner[:, 0], corner[:, 1], corner[:, 2]])
        tets.append(np.column_stack(ids))
    elems = np.stack(tets, axis=1).reshape(-1, 4)
    return Mesh(verts, elems, box)


# Bey's red refinement; vertex labels 0..3 then the edge midpoints
_BEY_CHILDREN = [
    ("0", "01", "02", "03"),
    ("01", "1", "12", "13"),
    ("02", "12", "2", "23"),
    ("03", "13", "23", "3"),
    ("01", "02", "03", "13"),
    ("01", "02", "12", "13"),
    ("02", "03", "13", "23"),
    ("02", "12", "13", "23"),
]
_TRI_CHILDREN = [
    ("0", "01", "02"),
    ("01", "1", "12"),
    ("02", "12", "2"),
    ("01", "12", "02"),
]


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: 4 children per triangle, 8 (Bey) per tetrahedron."""
    dim = mesh.dim
    pairs = LOCAL_EDGES[dim]
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mid])
    nv = mesh.n_vertices
    label = {str(i): mesh.elements[:, i] for i in range(dim + 1)}
    for k, (i, j) in enumerate(pairs):
        label[f"{i}{j}"] = nv + mesh.element_edges[:, k]
    table = _TRI_CHILDREN if dim == 2 else _BEY_CHILDREN
    children = np.stack([np.column_stack([label[s] for s in c]) for c in table], axis=1)
    elems = children.reshape(-1, dim + 1)
    parent = np.repeat(np.arange(mesh.n_elements), len(table))
    return Mesh(verts, elems, mesh.domain, level=mesh.level + 1, parent_elements=parent)


@dataclass
class MeshHierarchy:
    """Nested meshes, coarse to fine, each a uniform refinement of the previous."""

    levels: list

    @classmethod
    def build(cls, base: Mesh, n_refinements: int) -> "MeshHierarchy":
        levels = [base]
        for _ in range(n_refinements):
            levels.append(refine_uniform(levels[-1]))
        return cls(levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    @property
    def finest(self) -> Mesh:
        return self.levels[-1]


def write_vtk(mesh: Mesh, path, cell_data: dict | None = None) -> None:
    path = Path(path)
    dim = mesh.dim
    cell_type = 5 if dim == 2 else 10
    lines = ["# vtk DataFile Version 3.0", "ifesolve mesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    pts = mesh.vertices if dim == 3 else np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    lines.extend(" ".join(f"{c:.17g}" for c in p) for p in pts)
    n = mesh.n_elements
    lines.append(f"CELLS {n} {n * (dim + 2)}")
    lines.extend(f"{dim + 1} " + " ".join(str(v) for v in e) for e in mesh.elements)
    lines.append(f"CELL_TYPES {n}")
    lines.extend([str(cell_type)] * n)
    if cell_data:
        lines.append(f"CELL_DATA {n}")
        for name, values in cell_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{float(v):.17g}" for v in np.asarray(values).ravel())
    path.write_text("\n".join(lines) + "\n")
