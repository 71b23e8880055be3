# src/mesh.py
"""
Conforming triangulations of polygonal domains with the boundary partition
used by the Kolmogorov operator -u_xx + x u_y:

    elliptic  n1 != 0
    inflow    n1 == 0 and x n2 < 0
    outflow   everything else (characteristic pieces included)
"""
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np

from src.logger import log_debug, log_warning

NORMAL_TOL = 1e-12
INTERIOR = -1


class BoundaryClass(IntEnum):
    ELLIPTIC = 0
    INFLOW = 1
    OUTFLOW = 2


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Immutable triangulation. Local edge i of a triangle is the edge opposite
    its local vertex i, i.e. (v[i+1], v[i+2]).
    """

    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), counterclockwise
    edges: np.ndarray             # (ne, 2), sorted vertex ids
    edge_elements: np.ndarray     # (ne, 2), second entry INTERIOR(-1) on the boundary
    edge_local: np.ndarray        # (ne, 2), local edge index inside each owner
    element_edges: np.ndarray     # (nt, 3)
    element_normals: np.ndarray   # (nt, 3, 2) element-outward unit normals
    edge_lengths: np.ndarray      # (ne,)
    boundary_class: np.ndarray    # (ne,), INTERIOR for interior edges
    jacobians: np.ndarray         # (nt, 2, 2), columns v1-v0, v2-v0
    areas: np.ndarray             # (nt,)
    h: np.ndarray                 # (nt,) diameters
    rho: np.ndarray               # (nt,) inradii

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def h_min(self) -> float:
        return float(self.h.min())

    @property
    def h_max(self) -> float:
        return float(self.h.max())

    @property
    def shape_regularity(self) -> float:
        return float(np.max(self.h / self.rho))

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_elements[:, 1] == INTERIOR)

    def edges_of_class(self, cls: BoundaryClass) -> np.ndarray:
        return np.flatnonzero(self.boundary_class == int(cls))

    def inflow_measure(self) -> float:
        return float(self.edge_lengths[self.edges_of_class(BoundaryClass.INFLOW)].sum())

    def element_vertices(self, element: int) -> np.ndarray:
        return self.vertices[self.triangles[element]]

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    # ------------------------------------------------------------------
    @classmethod
    def from_arrays(cls, vertices, triangles) -> "Mesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle vertex index out of range")

        p0 = vertices[triangles[:, 0]]
        d1 = vertices[triangles[:, 1]] - p0
        d2 = vertices[triangles[:, 2]] - p0
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        scale = np.maximum(np.einsum("ij,ij->i", d1, d1), np.einsum("ij,ij->i", d2, d2))
        if np.any(np.abs(signed) <= 1e-14 * scale):
            raise ValueError("degenerate triangle in mesh")
        flipped = signed < 0
        if np.any(flipped):
            log_warning(f"reordering {int(flipped.sum())} clockwise triangle(s)")
            triangles[flipped] = triangles[flipped][:, [0, 2, 1]]
            signed = np.abs(signed)

        nt = len(triangles)
        local_pairs = triangles[:, [[1, 2], [2, 0], [0, 1]]]          # (nt, 3, 2)
        keys = np.sort(local_pairs, axis=2).reshape(-1, 2)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        element_edges = inverse.reshape(nt, 3)

        ne = len(edges)
        edge_elements = np.full((ne, 2), INTERIOR, dtype=np.int64)
        edge_local = np.full((ne, 2), INTERIOR, dtype=np.int64)
        counts = np.zeros(ne, dtype=np.int64)
        for flat, e in enumerate(inverse):
            slot = counts[e]
            if slot > 1:
                raise ValueError(f"edge {tuple(edges[e])} shared by more than two triangles")
            edge_elements[e, slot] = flat // 3
            edge_local[e, slot] = flat % 3
            counts[e] += 1

        tails = vertices[local_pairs[:, :, 0]]
        heads = vertices[local_pairs[:, :, 1]]
        tangent = heads - tails
        lengths = np.linalg.norm(tangent, axis=2)
        normals = np.stack([tangent[:, :, 1], -tangent[:, :, 0]], axis=2) / lengths[:, :, None]
        edge_lengths = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)

        jac = np.stack([d1, d2], axis=2)
        h = lengths.max(axis=1)
        rho = 2.0 * signed / lengths.sum(axis=1)

        boundary_class = _classify(vertices, edges, edge_elements, edge_local, normals)

        mesh = cls(
            vertices=vertices,
            triangles=triangles,
            edges=edges,
            edge_elements=edge_elements,
            edge_local=edge_local,
            element_edges=element_edges,
            element_normals=normals,
            edge_lengths=edge_lengths,
            boundary_class=boundary_class,
            jacobians=jac,
            areas=signed,
            h=h,
            rho=rho,
        )
        if mesh.inflow_measure() <= 0.0:
            log_warning("inflow boundary has zero measure; the problem may be ill-posed")
        log_debug(f"mesh built: {mesh.n_vertices} vertices, {nt} triangles, {ne} edges")
        return mesh


def _classify(vertices, edges, edge_elements, edge_local, normals) -> np.ndarray:
    ne = len(edges)
    classes = np.full(ne, INTERIOR, dtype=np.int64)
    boundary = np.flatnonzero(edge_elements[:, 1] == INTERIOR)
    for e in boundary:
        n1, n2 = normals[edge_elements[e, 0], edge_local[e, 0]]
        if abs(n1) > NORMAL_TOL:
            classes[e] = BoundaryClass.ELLIPTIC
            continue
        # x n2 is affine along a straight edge; endpoints decide its sign
        xa, xb = vertices[edges[e], 0]
        ends = np.array([xa * n2, xb * n2])
        mid = 0.5 * (xa + xb) * n2
        if mid < 0.0 and np.all(ends <= 0.0):
            classes[e] = BoundaryClass.INFLOW
        else:
            if mid < 0.0 or np.any(ends < 0.0):
                log_warning(f"edge {tuple(edges[e])} changes inflow/outflow character; classified as outflow")
            classes[e] = BoundaryClass.OUTFLOW
    return classes


def build_structured_square(n_cells_per_side: int) -> Mesh:
    """
    Uniform triangulation of (0,1)^2 with 2 n^2 triangles; every grid square is
    split along its bottom-left to top-right diagonal.
    """
    n = int(n_cells_per_side)
    if n < 1:
        raise ValueError("n_cells_per_side must be positive")
    coords = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(coords, coords)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return Mesh.from_arrays(vertices, triangles)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children through edge midpoints."""
    nv = mesh.n_vertices
    midpoints = mesh.edge_midpoints()
    vertices = np.vstack([mesh.vertices, midpoints])
    m = nv + mesh.element_edges               # m[:, i] sits opposite local vertex i
    v = mesh.triangles
    children = np.concatenate([
        np.column_stack([v[:, 0], m[:, 2], m[:, 1]]),
        np.column_stack([m[:, 2], v[:, 1], m[:, 0]]),
        np.column_stack([m[:, 1], m[:, 0], v[:, 2]]),
        np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
    ])
    # keep children of one parent adjacent
    nt = mesh.n_elements
    order = np.arange(4 * nt).reshape(4, nt).T.ravel()
    return Mesh.from_arrays(vertices, children[order])


def facet_normal(mesh: Mesh, facet_id: int, element: Optional[int] = None) -> np.ndarray:
    """
    Unit normal of an edge pointing out of `element`. Without an element the
    edge must lie on the boundary and its single owner is used.
    """
    if not 0 <= facet_id < mesh.n_edges:
        raise IndexError(f"invalid facet id {facet_id}")
    owners = mesh.edge_elements[facet_id]
    if element is None:
        if owners[1] != INTERIOR:
            raise ValueError(f"facet {facet_id} is interior; pass the element to orient the normal")
        slot = 0
    else:
        matches = np.flatnonzero(owners == element)
        if len(matches) == 0:
            raise ValueError(f"facet {facet_id} does not belong to element {element}")
        slot = int(matches[0])
    return mesh.element_normals[owners[slot], mesh.edge_local[facet_id, slot]].copy()


def read_mesh(path) -> Mesh:
    """
    ASCII format: line 1 "nv nt", then nv lines "x y", then nt lines "i j k"
    (0-based). Boundary classes are always recomputed.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) < 2:
        raise ValueError(f"{path}: missing header")
    nv, nt = int(tokens[0]), int(tokens[1])
    expected = 2 + 2 * nv + 3 * nt
    if len(tokens) != expected:
        raise ValueError(f"{path}: expected {expected} tokens, found {len(tokens)}")
    body = tokens[2:]
    vertices = np.array(body[:2 * nv], dtype=float).reshape(nv, 2)
    triangles = np.array(body[2 * nv:], dtype=np.int64).reshape(nt, 3)
    return Mesh.from_arrays(vertices, triangles)


def write_mesh(mesh: Mesh, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")
    return path
