"""Lagrange elements on triangles: P1/P2 scalar spaces and the P2 vector space.

Reference element is the unit right triangle {(0,0), (1,0), (0,1)} with
barycentric coordinates (l0, l1, l2) = (1-x-y, x, y).  Local node order is
vertices first, then edge midpoints, with midpoint k opposite vertex k.
Vector fields use component-major dof blocks: all x-dofs, then all y-dofs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .mesh import TriMesh

P1 = "p1"
P2 = "p2"
P2_VECTOR = "p2-vector"

_SCALAR_KINDS = (P1, P2)
_KINDS = (P1, P2, P2_VECTOR)


class QuadratureRule(NamedTuple):
    """Reference-triangle quadrature; weights include the triangle area 1/2."""

    points: np.ndarray   # (nq, 2)
    weights: np.ndarray  # (nq,)
    degree: int


def _rule_centroid() -> QuadratureRule:
    return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)


def _rule_three_point() -> QuadratureRule:
    # edge-midpoint rule, exact to degree 2
    pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    return QuadratureRule(pts, np.full(3, 1 / 6), 2)


def _rule_seven_point() -> QuadratureRule:
    # Symmetric degree-5 rule: centroid (weight 9/40) plus two 3-point orbits
    # at (9 +/- 2*sqrt(15))/21 with weights (155 +/- sqrt(15))/1200.
    s15 = math.sqrt(15.0)
    pts = [(1 / 3, 1 / 3)]
    wts = [9 / 40]
    for a, w in (((9 - 2 * s15) / 21, (155 + s15) / 1200),
                 ((9 + 2 * s15) / 21, (155 - s15) / 1200)):
        b = (1 - a) / 2
        pts += [(a, b), (b, a), (b, b)]
        wts += [w, w, w]
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), 5)


_RULES = {1: _rule_centroid, 2: _rule_three_point, 3: _rule_seven_point,
          4: _rule_seven_point, 5: _rule_seven_point}

#: Rule used for every volume integral in the package (mass, stiffness,
#: loads, error norms alike): one degree-5 rule keeps all terms consistent.
DEFAULT_DEGREE = 5


def quadrature(min_degree: int) -> QuadratureRule:
    """Symmetric triangle rule exact for polynomials of degree >= min_degree."""
    if not 1 <= min_degree <= 5:
        raise ValueError(f"quadrature degree {min_degree} not supported (1..5)")
    return _RULES[min_degree]()


def edge_quadrature() -> tuple[np.ndarray, np.ndarray]:
    """5-point Gauss rule on the parameter interval [0, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(5)
    return (nodes + 1.0) / 2.0, weights / 2.0


def eval_basis(kind: str, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate local shape functions at reference points.

    Parameters
    ----------
    kind : "p1" or "p2"
        Scalar element kind (vector fields reuse the scalar basis per
        component).
    points : (nq, 2) array
        Reference coordinates.

    Returns
    -------
    values : (nb, nq) array
    grads : (nb, nq, 2) array
        Gradients with respect to reference coordinates.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = points[:, 0], points[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    one, zero = np.ones_like(x), np.zeros_like(x)
    if kind == P1:
        values = np.stack([l0, l1, l2])
        grads = np.stack([
            np.stack([-one, -one], axis=-1),
            np.stack([one, zero], axis=-1),
            np.stack([zero, one], axis=-1),
        ])
        return values, grads
    if kind == P2:
        values = np.stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
        ])
        # d/dx, d/dy of the six shape functions
        gl = {0: (-one, -one), 1: (one, zero), 2: (zero, one)}
        g = []
        for i, li in enumerate((l0, l1, l2)):
            gx, gy = gl[i]
            g.append(np.stack([(4 * li - 1) * gx, (4 * li - 1) * gy], axis=-1))
        for i, j in ((1, 2), (2, 0), (0, 1)):
            li, lj = (l0, l1, l2)[i], (l0, l1, l2)[j]
            gix, giy = gl[i]
            gjx, gjy = gl[j]
            g.append(np.stack([4 * (li * gjx + lj * gix),
                               4 * (li * gjy + lj * giy)], axis=-1))
        return values, np.stack(g)
    raise ValueError(f"unknown element kind {kind!r}")


@dataclass
class Space:
    """A finite-element space over a mesh, with optional Dirichlet sides."""

    mesh: TriMesh
    kind: str
    dirichlet_tags: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        for tag in self.dirichlet_tags:
            if tag not in (1, 2, 3, 4):
                raise ValueError(f"unknown boundary tag {tag}")

    @property
    def scalar_kind(self) -> str:
        return P1 if self.kind == P1 else P2

    @property
    def components(self) -> int:
        return 2 if self.kind == P2_VECTOR else 1

    @property
    def num_scalar_dofs(self) -> int:
        if self.scalar_kind == P1:
            return self.mesh.num_vertices
        return self.mesh.num_vertices + self.mesh.num_edges

    @property
    def num_dofs(self) -> int:
        return self.components * self.num_scalar_dofs

    def cell_dofs(self) -> np.ndarray:
        """(nt, nb) global scalar dof indices per triangle.

        Vector spaces share the scalar layout; component c adds the offset
        c * num_scalar_dofs.
        """
        mesh = self.mesh
        if self.scalar_kind == P1:
            return mesh.triangles
        return np.hstack([mesh.triangles, mesh.num_vertices + mesh.tri_edges])

    def dof_coords(self) -> np.ndarray:
        """(num_scalar_dofs, 2) coordinates of the Lagrange nodes."""
        mesh = self.mesh
        if self.scalar_kind == P1:
            return mesh.vertices
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        return np.vstack([mesh.vertices, mids])

    def boundary_scalar_dofs(self, tags) -> np.ndarray:
        """Sorted scalar dofs whose nodes lie on boundary edges with the given tags."""
        mesh = self.mesh
        dofs = set()
        for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            if tag in tags:
                dofs.add(int(a))
                dofs.add(int(b))
                if self.scalar_kind == P2:
                    dofs.add(mesh.num_vertices + mesh.edge_index(int(a), int(b)))
        return np.array(sorted(dofs), dtype=np.int64)

    def dirichlet_dofs(self) -> np.ndarray:
        """Constrained dof indices (all components) for this space's Dirichlet sides."""
        if not self.dirichlet_tags:
            return np.array([], dtype=np.int64)
        scalar = self.boundary_scalar_dofs(self.dirichlet_tags)
        if self.components == 1:
            return scalar
        n = self.num_scalar_dofs
        return np.concatenate([scalar + c * n for c in range(self.components)])


def affine_maps(mesh: TriMesh):
    """Per-triangle affine geometry: Jacobians, inverse-transpose, determinants.

    Returns
    -------
    jac : (nt, 2, 2), inv_t : (nt, 2, 2), det : (nt,)
        det is twice the (positive) triangle area.
    """
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    p1 = mesh.vertices[mesh.triangles[:, 1]]
    p2 = mesh.vertices[mesh.triangles[:, 2]]
    jac = np.stack([p1 - p0, p2 - p0], axis=-1)  # columns are edge vectors
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv /= det[:, None, None]
    inv_t = np.transpose(inv, (0, 2, 1))
    return jac, inv_t, det


def interpolate(space: Space, f: Callable) -> "FieldVector":
    """Nodal interpolation onto the space.

    ``f(x, y)`` receives coordinate arrays; scalar spaces expect an array of
    values, the vector space a pair/stack ``(f_x, f_y)``.
    """
    coords = space.dof_coords()
    out = f(coords[:, 0], coords[:, 1])
    if space.components == 1:
        values = np.broadcast_to(np.asarray(out, dtype=float), (space.num_dofs,)).copy()
    else:
        fx, fy = out
        n = space.num_scalar_dofs
        values = np.empty(2 * n)
        values[:n] = np.broadcast_to(np.asarray(fx, dtype=float), (n,))
        values[n:] = np.broadcast_to(np.asarray(fy, dtype=float), (n,))
    return FieldVector(space, values)


@dataclass
class FieldVector:
    """Coefficient vector of a finite-element function."""

    space: Space
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.num_dofs,):
            raise ValueError(
                f"coefficient vector has shape {self.values.shape}, "
                f"space has {self.space.num_dofs} dofs")

    def copy(self) -> "FieldVector":
        return FieldVector(self.space, self.values.copy())

    def component(self, c: int) -> np.ndarray:
        n = self.space.num_scalar_dofs
        return self.values[c * n:(c + 1) * n]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at physical points (brute-force element search).

        Returns an array of shape (npts,) for scalar fields and (npts, 2)
        for vector fields.  Intended for verification at modest sizes, not
        for bulk postprocessing.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        mesh = self.space.mesh
        jac, inv_t, _ = affine_maps(mesh)
        inv = np.transpose(inv_t, (0, 2, 1))
        p0 = mesh.vertices[mesh.triangles[:, 0]]
        cell_dofs = self.space.cell_dofs()
        nsc = self.space.num_scalar_dofs

        out = np.empty((len(points), self.space.components))
        for ip, pt in enumerate(points):
            local = np.einsum("tij,tj->ti", inv, pt[None, :] - p0)
            bary_min = np.minimum(local.min(axis=1), 1.0 - local.sum(axis=1))
            it = int(np.argmax(bary_min))
            if bary_min[it] < -1e-10:
                raise ValueError(f"point {pt} lies outside the mesh")
            values, _ = eval_basis(self.space.scalar_kind, local[it])
            dofs = cell_dofs[it]
            for c in range(self.space.components):
                coeff = self.values[dofs + c * nsc]
                out[ip, c] = coeff @ values[:, 0]
        return out[:, 0] if self.space.components == 1 else out
