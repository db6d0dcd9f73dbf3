"""Structured triangulations of the unit square with tagged boundary edges.

The mesh type is deliberately plain: vertex coordinates, triangle connectivity,
and a list of boundary edges carrying integer side tags.  Side tags follow the
unit-square convention used throughout the package:

    1: right  (x = 1)      2: bottom (y = 0)
    3: left   (x = 0)      4: top    (y = 1)

``build_uniform`` splits every grid square along the lower-right to upper-left
diagonal; ``refine`` performs red (regular) refinement, so refining the uniform
n-mesh reproduces the uniform 2n-mesh up to vertex/triangle ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RIGHT, BOTTOM, LEFT, TOP = 1, 2, 3, 4

# Orientation of the diagonal that splits each grid cell of a uniform mesh;
# recorded in benchmark reports so runs are reproducible from their metadata.
CELL_SPLIT = "lower-right to upper-left"
DIRICHLET_TAGS = (RIGHT, LEFT)
NEUMANN_TAGS = (BOTTOM, TOP)

# Outward unit normal of each tagged side of the unit square.
SIDE_NORMALS = {
    RIGHT: np.array([1.0, 0.0]),
    BOTTOM: np.array([0.0, -1.0]),
    LEFT: np.array([-1.0, 0.0]),
    TOP: np.array([0.0, 1.0]),
}


@dataclass
class TriMesh:
    """Conforming triangle mesh.

    Attributes
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex indices per triangle, counterclockwise.
    boundary_edges : (nb, 2) int array
        Vertex index pairs of boundary edges.
    boundary_tags : (nb,) int array
        Side tag (1-4) per boundary edge.
    level : int
        Number of refinements applied since construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    level: int = 0

    _edges: np.ndarray = field(default=None, repr=False, compare=False)
    _tri_edges: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """Unique mesh edges as sorted vertex pairs, lexicographically ordered."""
        if self._edges is None:
            self._build_edges()
        return self._edges

    @property
    def tri_edges(self) -> np.ndarray:
        """(nt, 3) global edge index per triangle; local edge k is opposite vertex k."""
        if self._tri_edges is None:
            self._build_edges()
        return self._tri_edges

    def _build_edges(self) -> None:
        tri = self.triangles
        # local edge k connects vertices (k+1, k+2) mod 3
        pairs = np.concatenate([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]])
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        self._edges = edges
        self._tri_edges = inverse.reshape(3, -1).T.copy()

    def edge_index(self, a: int, b: int) -> int:
        """Global index of the edge with endpoints a, b."""
        key = (min(a, b), max(a, b))
        lookup = getattr(self, "_edge_lookup", None)
        if lookup is None:
            lookup = {(int(p), int(q)): i for i, (p, q) in enumerate(self.edges)}
            self._edge_lookup = lookup
        return lookup[key]

    @property
    def h(self) -> float:
        """Mesh size: length of the longest edge."""
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return float(np.sqrt((d * d).sum(axis=1)).max())

    def signed_areas(self) -> np.ndarray:
        """Signed area of every triangle (positive for counterclockwise)."""
        p0 = self.vertices[self.triangles[:, 0]]
        p1 = self.vertices[self.triangles[:, 1]]
        p2 = self.vertices[self.triangles[:, 2]]
        a, b = p1 - p0, p2 - p0
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def build_uniform(n: int) -> TriMesh:
    """Uniform triangulation of [0,1]^2 with n cells per side.

    Vertices are numbered row by row (y-major); every square cell is split
    along the diagonal joining its lower-right and upper-left corners,
    giving 2*n^2 triangles.
    """
    if n < 1:
        raise ValueError(f"cells per side must be >= 1, got {n}")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side)  # row index = y
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(ix, iy):
        return iy * (n + 1) + ix

    triangles = []
    for iy in range(n):
        for ix in range(n):
            v00 = vid(ix, iy)
            v10 = vid(ix + 1, iy)
            v01 = vid(ix, iy + 1)
            v11 = vid(ix + 1, iy + 1)
            triangles.append((v00, v10, v01))  # below the diagonal
            triangles.append((v10, v11, v01))  # above the diagonal
    triangles = np.array(triangles, dtype=np.int64)

    bedges, btags = [], []
    for i in range(n):
        bedges.append((vid(n, i), vid(n, i + 1)))
        btags.append(RIGHT)
        bedges.append((vid(i, 0), vid(i + 1, 0)))
        btags.append(BOTTOM)
        bedges.append((vid(0, i), vid(0, i + 1)))
        btags.append(LEFT)
        bedges.append((vid(i, n), vid(i + 1, n)))
        btags.append(TOP)

    return TriMesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=np.array(bedges, dtype=np.int64),
        boundary_tags=np.array(btags, dtype=np.int64),
    )


def refine(mesh: TriMesh) -> TriMesh:
    """Red refinement: each triangle is split into four via edge midpoints.

    Boundary children inherit their parent's side tag, and the refinement
    level is incremented.  New vertices are appended after the parent ones,
    one per parent edge.
    """
    nv = mesh.num_vertices
    edges = mesh.edges
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    tri = mesh.triangles
    m = nv + mesh.tri_edges  # (nt, 3) midpoint vertex ids, m[:,k] opposite vertex k
    children = np.concatenate(
        [
            np.column_stack([tri[:, 0], m[:, 2], m[:, 1]]),
            np.column_stack([tri[:, 1], m[:, 0], m[:, 2]]),
            np.column_stack([tri[:, 2], m[:, 1], m[:, 0]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ]
    )

    bedges, btags = [], []
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        mid = nv + mesh.edge_index(int(a), int(b))
        bedges.append((a, mid))
        bedges.append((mid, b))
        btags.extend((tag, tag))

    return TriMesh(
        vertices=vertices,
        triangles=children,
        boundary_edges=np.array(bedges, dtype=np.int64),
        boundary_tags=np.array(btags, dtype=np.int64),
        level=mesh.level + 1,
    )


def dump_mesh(mesh: TriMesh, stream) -> None:
    """Write a plain-text dump: vertex coordinates, triangles, tagged boundary edges.

    ``stream`` is a writable file object or a path.  Format: a header line per
    section, then one entity per line -- ``v x y``, ``t i j k``, ``b i j tag``.
    """
    if not hasattr(stream, "write"):
        with open(stream, "w") as f:
            dump_mesh(mesh, f)
        return
    stream.write(f"# unit-square triangle mesh, level {mesh.level}\n")
    stream.write(f"# {mesh.num_vertices} vertices, {mesh.num_triangles} triangles, "
                 f"{len(mesh.boundary_edges)} boundary edges\n")
    for x, y in mesh.vertices:
        stream.write(f"v {x!r} {y!r}\n")
    for i, j, k in mesh.triangles:
        stream.write(f"t {i} {j} {k}\n")
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        stream.write(f"b {i} {j} {tag}\n")
