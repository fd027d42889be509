"""
Nested simplicial meshes of the unit box in one to three dimensions.

The coarse mesh is the Kuhn (Freudenthal) subdivision of a uniform grid of
cubes: every subcube is split into ``dim!`` simplices, one per permutation of
the coordinate axes. In 2D this is the classical diagonal split. Red
refinement uses Bey's ordering-consistent rule, which maps Kuhn simplices to
Kuhn simplices, so refined meshes remain in a single congruence class and all
shape quantities are exactly level independent.

Box domains stand in for the smooth convex domains of the analysis: the
boundary is resolved exactly and the polyhedral approximation terms of the
Ritz projection analysis vanish.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, GeometryError

__all__ = [
    "SimplicialMesh",
    "ShapeMetrics",
    "build_box_mesh",
    "refine_uniform",
    "refine_to",
    "mesh_hierarchy",
    "shape_metrics",
    "cell_volumes",
    "check_conforming",
    "dump_mesh",
]


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Conforming simplicial partition of ``[0, 1]**dim``.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1, 2 or 3.
    vertices : ndarray, shape (n_vert, dim)
        Vertex coordinates, sorted lexicographically.
    cells : ndarray, shape (n_cell, dim + 1)
        Vertex indices of each simplex, positively oriented.
    boundary_vertex : ndarray of bool, shape (n_vert,)
        True for vertices on the box boundary.
    level : int
        Number of refinements applied to the coarse mesh.
    n : int
        Cells per axis of the underlying cube grid.
    parent : SimplicialMesh or None
        The mesh this one was refined from.
    vertex_origin : ndarray, shape (n_vert, 2), optional
        For refined meshes, the parent vertices ``(a, b)`` whose midpoint is
        this vertex (``a == b`` for inherited vertices).
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_vertex: np.ndarray
    level: int = 0
    n: int = 1
    parent: Optional["SimplicialMesh"] = field(default=None, repr=False)
    vertex_origin: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_vert(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cell(self) -> int:
        return self.cells.shape[0]

    @property
    def h(self) -> float:
        """Maximal cell diameter."""
        return float(_diameters(self).max())

    def ancestors(self):
        """Yield ``self`` and then each parent mesh, finest first."""
        m = self
        while m is not None:
            yield m
            m = m.parent

    def __repr__(self):
        return (f"SimplicialMesh(dim={self.dim}, n={self.n}, level={self.level}, "
                f"n_vert={self.n_vert}, n_cell={self.n_cell})")


@dataclass(frozen=True)
class ShapeMetrics:
    """Mesh size and shape regularity quantities.

    ``rho1`` is the largest ratio of cell diameter to inradius and ``rho2``
    the ratio of the largest to the smallest cell diameter.
    """

    h_max: float
    h_min: float
    rho1: float
    rho2: float


def _lex_order(vertices):
    # np.lexsort uses the last key as primary, so pass columns reversed
    return np.lexsort(vertices.T[::-1])


def _signed_volumes(vertices, cells):
    x = vertices[cells]                       # (nc, d+1, d)
    edges = x[:, 1:, :] - x[:, :1, :]         # (nc, d, d)
    d = vertices.shape[1]
    return np.linalg.det(edges) / math.factorial(d)


def _orient(vertices, cells):
    vol = _signed_volumes(vertices, cells)
    if np.any(np.abs(vol) <= 1e-300):
        raise GeometryError("degenerate cell with zero volume")
    cells = cells.copy()
    neg = vol < 0
    # swapping the last two vertices flips orientation in every dimension
    cells[neg, -2], cells[neg, -1] = cells[neg, -1], cells[neg, -2].copy()
    return cells


def _finalize(dim, vertices, cells, level, n, parent=None, origin=None):
    order = _lex_order(vertices)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    vertices = vertices[order]
    cells = inv[cells]
    if origin is not None:
        origin = origin[order]
    cells = _orient(vertices, cells)
    # canonical cell order keeps assembly deterministic
    cells = cells[np.lexsort(np.sort(cells, axis=1).T[::-1])]
    bnd = np.any((vertices <= 0.0) | (vertices >= 1.0), axis=1)
    for a in (vertices, cells, bnd):
        a.setflags(write=False)
    if origin is not None:
        origin.setflags(write=False)
    return SimplicialMesh(dim, vertices, cells, bnd, level, n, parent, origin)


def build_box_mesh(dim: int, n: int) -> SimplicialMesh:
    """Uniform Kuhn mesh of the unit box with ``n`` cells per axis.

    Parameters
    ----------
    dim : {1, 2, 3}
        Spatial dimension.
    n : int
        Number of cube cells per axis, ``n >= 1``.

    Returns
    -------
    SimplicialMesh
        ``n`` intervals, ``2 n**2`` triangles or ``6 n**3`` tetrahedra.

    Examples
    --------
    >>> m = build_box_mesh(1, 4)
    >>> m.vertices.ravel().tolist()
    [0.0, 0.25, 0.5, 0.75, 1.0]
    """
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"dim must be 1, 2 or 3, got {dim!r}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    grid = np.array(list(itertools.product(range(n + 1), repeat=dim)), dtype=np.int64)
    stride = (n + 1) ** np.arange(dim - 1, -1, -1)

    def index(ijk):
        return ijk @ stride

    corners = np.array(list(itertools.product(range(n), repeat=dim)), dtype=np.int64)
    cells = []
    eye = np.eye(dim, dtype=np.int64)
    for perm in itertools.permutations(range(dim)):
        path = [corners]
        for axis in perm:
            path.append(path[-1] + eye[axis])
        cells.append(np.stack([index(p) for p in path], axis=1))
    cells = np.concatenate(cells, axis=0)
    vertices = grid.astype(float) / n
    return _finalize(dim, vertices, cells, 0, n)


# Bey's red refinement, written for vertices in path order x0..xd with
# local point labels: i for xi, and (i, j) for the midpoint of xi, xj.
_BEY = {
    1: [[0, (0, 1)], [(0, 1), 1]],
    2: [[0, (0, 1), (0, 2)], [(0, 1), 1, (1, 2)], [(0, 2), (1, 2), 2],
        [(0, 1), (0, 2), (1, 2)]],
    3: [[0, (0, 1), (0, 2), (0, 3)], [(0, 1), 1, (1, 2), (1, 3)],
        [(0, 2), (1, 2), 2, (2, 3)], [(0, 3), (1, 3), (2, 3), 3],
        [(0, 1), (0, 2), (0, 3), (1, 3)], [(0, 1), (0, 2), (1, 2), (1, 3)],
        [(0, 2), (0, 3), (1, 3), (2, 3)], [(0, 2), (1, 2), (1, 3), (2, 3)]],
}


def refine_uniform(m: SimplicialMesh) -> SimplicialMesh:
    """Red refinement by edge midpoints.

    Each interval splits into 2, each triangle into 4 and each tetrahedron
    into 8 children. Parent vertices keep their coordinates, so the P1
    spaces are nested.
    """
    d = m.dim
    # path order of a Kuhn simplex is the order of increasing coordinate sum
    key = m.vertices.sum(axis=1)[m.cells]
    cells = np.take_along_axis(m.cells, np.argsort(key, axis=1, kind="stable"), axis=1)
    pairs = [(i, j) for i in range(d + 1) for j in range(i + 1, d + 1)]
    ends = np.stack([np.sort(cells[:, [i, j]], axis=1) for i, j in pairs], axis=1)
    flat = ends.reshape(-1, 2)
    edges, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = inverse.reshape(cells.shape[0], len(pairs))
    nv = m.n_vert
    mid = 0.5 * (m.vertices[edges[:, 0]] + m.vertices[edges[:, 1]])
    vertices = np.vstack([m.vertices, mid])
    origin = np.vstack([np.repeat(np.arange(nv)[:, None], 2, axis=1), edges])

    def local(label):
        if isinstance(label, tuple):
            return nv + inverse[:, pairs.index(label)]
        return cells[:, label]

    children = [np.stack([local(lab) for lab in child], axis=1) for child in _BEY[d]]
    new_cells = np.concatenate(children, axis=0)
    return _finalize(d, vertices, new_cells, m.level + 1, 2 * m.n, m, origin)


def refine_to(m: SimplicialMesh, level: int) -> SimplicialMesh:
    """Refine ``m`` until its level equals ``level``."""
    while m.level < level:
        m = refine_uniform(m)
    return m


def mesh_hierarchy(dim: int, max_level: int, n0: int = 1):
    """List of nested meshes for levels ``0..max_level`` (``h = 2**-level / n0``)."""
    meshes = [build_box_mesh(dim, n0)]
    for _ in range(max_level):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def cell_volumes(m: SimplicialMesh) -> np.ndarray:
    """Positive cell volumes."""
    return _signed_volumes(m.vertices, m.cells)


def _diameters(m):
    x = m.vertices[m.cells]
    d = m.dim
    dmax = np.zeros(m.n_cell)
    for i in range(d + 1):
        for j in range(i + 1, d + 1):
            dmax = np.maximum(dmax, np.linalg.norm(x[:, i] - x[:, j], axis=1))
    return dmax


def _facet_measures(m):
    x = m.vertices[m.cells]
    d = m.dim
    out = np.zeros(m.n_cell)
    if d == 1:
        return out + 2.0          # two point facets of unit counting measure
    for omit in range(d + 1):
        keep = [k for k in range(d + 1) if k != omit]
        e = x[:, keep[1:], :] - x[:, keep[:1], :]     # (nc, d-1, d)
        gram = np.einsum("cik,cjk->cij", e, e)
        out += np.sqrt(np.linalg.det(gram)) / math.factorial(d - 1)
    return out


def shape_metrics(m: SimplicialMesh) -> ShapeMetrics:
    """Diameters and diameter/inradius ratios of all cells.

    The inradius of a simplex is ``d |K| / sum_F |F|``.
    """
    vol = cell_volumes(m)
    if np.any(vol <= 0):
        raise GeometryError("mesh contains a cell with nonpositive volume")
    diam = _diameters(m)
    inradius = m.dim * vol / _facet_measures(m)
    return ShapeMetrics(
        h_max=float(diam.max()),
        h_min=float(diam.min()),
        rho1=float(np.max(diam / inradius)),
        rho2=float(diam.max() / diam.min()),
    )


def check_conforming(m: SimplicialMesh, tol: float = 1e-12) -> bool:
    """Face-hash audit of conformity.

    Every facet must be shared by at most two cells, facets owned by a single
    cell must lie on the box boundary, and the cell volumes must add up to
    one.
    """
    d = m.dim
    faces = np.concatenate(
        [np.sort(np.delete(m.cells, k, axis=1), axis=1) for k in range(d + 1)], axis=0)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    if np.any(counts > 2):
        return False
    lone = uniq[counts == 1]
    coords = m.vertices[lone]                       # (nf, d, d)
    on_plane = np.zeros(lone.shape[0], dtype=bool)
    for axis in range(d):
        c = coords[:, :, axis]
        on_plane |= np.all(c <= 0.0, axis=1) | np.all(c >= 1.0, axis=1)
    if not np.all(on_plane):
        return False
    vol = cell_volumes(m)
    return bool(np.all(vol > 0) and abs(vol.sum() - 1.0) <= tol)


def dump_mesh(m: SimplicialMesh, path) -> None:
    """Write the plain-text debug format.

    Header line ``dim n_vert n_cell``, then one line per vertex and one line
    per cell (0-based indices).
    """
    with open(path, "w") as fh:
        fh.write(f"{m.dim} {m.n_vert} {m.n_cell}\n")
        for v in m.vertices:
            fh.write(" ".join(repr(float(c)) for c in v) + "\n")
        for c in m.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")
