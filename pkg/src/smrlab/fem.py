"""
P1 finite elements with homogeneous Dirichlet conditions.

Functions of ``X_h`` are stored as coefficient vectors over the interior
vertices. The discrete Laplacian ``A_h`` acts on coefficients as
``M^{-1} S`` where ``M`` and ``S`` are the mass and stiffness matrices with
boundary rows and columns deleted.

Most routines accept either a :class:`FeFunction` or a raw coefficient array.
Arrays of shape ``(n_dof, k)`` are treated as ``k`` functions at once.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GeometryError, DomainError, UnsupportedInputError
from .fields import Field
from .mesh import SimplicialMesh, cell_volumes
from .quadrature import simplex_rule

__all__ = [
    "FeSpace",
    "FeFunction",
    "DiscreteOperators",
    "assemble",
    "assemble_full",
    "lq_norm",
    "lq_integral",
    "l2_project",
    "ritz_project",
    "prolongate",
    "prolongation_matrix",
    "apply_Ah",
    "quadrature_evaluator",
    "interpolate",
]

PROJECTION_DEGREE = 12
NORM_DEGREE = 10
NORM_RTOL = 1e-9
QUAD_BLOCK = 2 ** 22          # point values held at once by batched norms


class FeSpace:
    """P1 space on ``mesh`` vanishing on the boundary.

    Attributes
    ----------
    mesh : SimplicialMesh
    interior_dofs : ndarray of int
        Interior vertex indices in (lexicographic) vertex order.
    dof_of_vertex : ndarray of int
        Inverse map, ``-1`` on boundary vertices.
    """

    def __init__(self, mesh: SimplicialMesh):
        self.mesh = mesh
        self.interior_dofs = np.flatnonzero(~mesh.boundary_vertex)
        dof = np.full(mesh.n_vert, -1, dtype=np.int64)
        dof[self.interior_dofs] = np.arange(self.interior_dofs.size)
        self.dof_of_vertex = dof
        self._ops = None
        self._evaluators = {}

    @property
    def n_dof(self) -> int:
        return int(self.interior_dofs.size)

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def dim(self) -> int:
        return self.mesh.dim

    def zeros(self):
        return FeFunction(self, np.zeros(self.n_dof))

    def __repr__(self):
        return f"FeSpace(dim={self.dim}, level={self.mesh.level}, n_dof={self.n_dof})"


@dataclass(frozen=True, eq=False)
class FeFunction:
    """Element of ``X_h`` given by its interior coefficients."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.shape[0] != self.space.n_dof:
            raise ValueError(f"expected {self.space.n_dof} coefficients, got {c.shape[0]}")
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other):
        return FeFunction(self.space, self.coeffs + _coeffs(other))

    def __sub__(self, other):
        return FeFunction(self.space, self.coeffs - _coeffs(other))

    def __mul__(self, s):
        return FeFunction(self.space, s * self.coeffs)

    __rmul__ = __mul__

    def vertex_values(self):
        """Values at all vertices (zero on the boundary)."""
        out = np.zeros((self.space.mesh.n_vert,) + self.coeffs.shape[1:], dtype=self.coeffs.dtype)
        out[self.space.interior_dofs] = self.coeffs
        return out


def _coeffs(f):
    return f.coeffs if isinstance(f, FeFunction) else np.asarray(f)


def _space(f, space=None):
    if isinstance(f, FeFunction):
        return f.space
    if space is None:
        raise UnsupportedInputError("raw coefficient arrays need an explicit space")
    return space


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    """Mass/stiffness pair on one space, with optional eigendecomposition.

    Attributes
    ----------
    space : FeSpace
    M, S : scipy.sparse.csc_matrix
        Symmetric positive definite mass and stiffness matrices.
    eigen : tuple (lam, V) or None
        Ascending eigenvalues of ``S v = lam M v`` and the ``M``-orthonormal
        eigenvector matrix.
    """

    space: FeSpace
    M: sp.csc_matrix
    S: sp.csc_matrix
    eigen: Optional[tuple] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_dof(self) -> int:
        return self.space.n_dof

    @property
    def h(self) -> float:
        return self.space.h

    def with_eigen(self, lam, V):
        # share the factorization cache with the parent object
        return replace(self, eigen=(lam, V), _cache=self._cache)

    def _lu(self, key, build):
        lu = self._cache.get(key)
        if lu is None:
            lu = spla.splu(build().tocsc())
            self._cache[key] = lu
        return lu

    def solve_M(self, b):
        return _lu_solve(self._lu("M", lambda: self.M), b)

    def solve_S(self, b):
        return _lu_solve(self._lu("S", lambda: self.S), b)

    def solve_shifted(self, z, b):
        """Solve ``(z M - S) x = b``; factorizations are cached per shift."""
        z = complex(z)
        if z.imag == 0.0:
            key = ("shift", z.real)
            lu = self._lu(key, lambda: z.real * self.M - self.S)
        else:
            key = ("shift", z)
            lu = self._lu(key, lambda: (z * self.M - self.S).astype(complex))
        return _lu_solve(lu, b)

    def solve_mass_shift(self, a, b):
        """Solve ``(M + a S) x = b`` for real ``a >= 0`` (implicit Euler)."""
        return _lu_solve(self._lu(("ie", float(a)), lambda: self.M + a * self.S), b)

    def clear_cache(self):
        self._cache.clear()


def _lu_solve(lu, b):
    b = np.asarray(b)
    if np.iscomplexobj(b) and lu.L.dtype.kind != "c":
        return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
    return lu.solve(b.astype(np.result_type(b.dtype, lu.L.dtype), copy=False))


def _local_geometry(mesh):
    x = mesh.vertices[mesh.cells]                         # (nc, d+1, d)
    jac = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))   # columns are edges
    vol = np.abs(np.linalg.det(jac)) / math.factorial(mesh.dim)
    if np.any(vol <= 1e-300):
        raise GeometryError("degenerate cell with zero volume")
    inv = np.linalg.inv(jac)                              # rows: grad of lambda_1..d
    grads = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
    return vol, grads                                     # grads (nc, d+1, d)


def assemble_full(mesh: SimplicialMesh):
    """Mass and stiffness matrices over all vertices (boundary included)."""
    d = mesh.dim
    vol, grads = _local_geometry(mesh)
    kloc = vol[:, None, None] * np.einsum("cik,cjk->cij", grads, grads)
    mref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    mloc = vol[:, None, None] * mref[None]
    rows = np.repeat(mesh.cells, d + 1, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, d + 1)).ravel()
    shape = (mesh.n_vert, mesh.n_vert)
    M = sp.coo_matrix((mloc.ravel(), (rows, cols)), shape=shape).tocsc()
    S = sp.coo_matrix((kloc.ravel(), (rows, cols)), shape=shape).tocsc()
    return M, S


def assemble(space: FeSpace) -> DiscreteOperators:
    """Exact P1 mass and stiffness matrices with Dirichlet elimination.

    The result is cached on the space, so repeated calls are cheap.

    Examples
    --------
    >>> from smrlab.mesh import build_box_mesh
    >>> ops = assemble(FeSpace(build_box_mesh(1, 4)))
    >>> (ops.S.toarray() / 4).round(12).tolist()[0]
    [2.0, -1.0, 0.0]
    """
    if space._ops is None:
        M, S = assemble_full(space.mesh)
        idx = space.interior_dofs
        M = M[idx][:, idx].tocsc()
        S = S[idx][:, idx].tocsc()
        # symmetrize exactly so that dense eigensolvers see symmetric input
        M = ((M + M.T) * 0.5).tocsc()
        S = ((S + S.T) * 0.5).tocsc()
        space._ops = DiscreteOperators(space, M, S)
    return space._ops


class QuadratureEvaluator:
    """Point evaluation of P1 functions at the nodes of a simplex rule.

    Attributes
    ----------
    E : scipy.sparse.csr_matrix, shape (n_pts, n_dof)
        Evaluation matrix (boundary vertices dropped).
    weights : ndarray, shape (n_pts,)
        Physical quadrature weights.
    points : ndarray, shape (n_pts, dim)
    """

    def __init__(self, space: FeSpace, degree: int):
        mesh = space.mesh
        bary, w = simplex_rule(mesh.dim, degree)
        vol = cell_volumes(mesh)
        nc, npts, d1 = mesh.n_cell, bary.shape[0], mesh.dim + 1
        x = mesh.vertices[mesh.cells]
        self.points = np.einsum("pk,ckd->cpd", bary, x).reshape(-1, mesh.dim)
        self.weights = (vol[:, None] * w[None, :]).ravel()
        dof = space.dof_of_vertex[mesh.cells]              # (nc, d+1)
        rows = np.broadcast_to(np.arange(nc * npts).reshape(nc, npts, 1), (nc, npts, d1))
        cols = np.broadcast_to(dof[:, None, :], (nc, npts, d1))
        vals = np.broadcast_to(bary[None], (nc, npts, d1))
        keep = cols >= 0
        self.E = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                               shape=(nc * npts, space.n_dof))
        self.degree = degree
        self.bary = bary
        self.cell_of_point = np.repeat(np.arange(nc), npts)

    def values(self, c):
        return self.E @ c


def quadrature_evaluator(space: FeSpace, degree: int) -> QuadratureEvaluator:
    """Cached :class:`QuadratureEvaluator` for ``space``."""
    ev = space._evaluators.get(degree)
    if ev is None:
        ev = QuadratureEvaluator(space, degree)
        space._evaluators[degree] = ev
    return ev


def _is_even_integer(q):
    return float(q).is_integer() and int(q) % 2 == 0


def _power_sum(ev, c, q):
    # sum_k w_k |f(x_k)|^q, in column blocks of at most QUAD_BLOCK point values
    if c.ndim == 1:
        return ev.weights @ (np.abs(ev.E @ c) ** q)
    step = max(1, QUAD_BLOCK // max(ev.weights.size, 1))
    out = np.empty(c.shape[1])
    for s in range(0, c.shape[1], step):
        out[s:s + step] = ev.weights @ (np.abs(ev.E @ c[:, s:s + step]) ** q)
    return out


def lq_integral(f, q: float, space: FeSpace | None = None):
    """``int |f|**q dx`` for one or several P1 functions.

    Even integer exponents use a rule of degree ``q``, which is exact. Other
    exponents use a degree-10 rule checked against a degree-20 rule; if the
    two differ by more than ``1e-9`` relative the finer value is returned and
    a warning is issued.
    """
    space = _space(f, space)
    c = _coeffs(f)
    if q == 2:
        ops = assemble(space)
        if np.iscomplexobj(c):
            return np.real(np.sum(np.conj(c) * (ops.M @ c), axis=0))
        return np.sum(c * (ops.M @ c), axis=0)
    if _is_even_integer(q):
        return _power_sum(quadrature_evaluator(space, int(q)), c, q)
    vals = []
    for degree in (NORM_DEGREE, 2 * NORM_DEGREE):
        vals.append(_power_sum(quadrature_evaluator(space, degree), c, q))
    coarse, fine = vals
    err = np.max(np.abs(coarse - fine) / np.maximum(np.abs(fine), 1e-300))
    if err > NORM_RTOL:
        warnings.warn(f"L^{q} quadrature check failed (rel. diff {err:.2e}); "
                      "using the doubled-order value", RuntimeWarning, stacklevel=2)
        return fine
    return coarse


def lq_norm(f, q: float, space: FeSpace | None = None):
    """``L^q`` norm of P1 function(s); ``q = inf`` gives the max of vertex values.

    Parameters
    ----------
    f : FeFunction or ndarray
        One function, or several as columns of an ``(n_dof, k)`` array.
    q : float
        Exponent, ``q >= 1`` or ``numpy.inf``.

    Returns
    -------
    float or ndarray of shape (k,)
    """
    if not (q >= 1):
        raise DomainError(f"lq_norm needs q >= 1, got {q}")
    c = _coeffs(f)
    if np.isinf(q):
        return np.max(np.abs(c), axis=0) if c.size else 0.0
    val = lq_integral(f, q, space)
    val = np.maximum(val, 0.0)
    return val ** (1.0 / q)


def _descends(fine: SimplicialMesh, coarse: SimplicialMesh) -> bool:
    return any(m is coarse for m in fine.ancestors())


def _one_step_prolongation(child: SimplicialMesh):
    org = child.vertex_origin
    n = child.n_vert
    rows = np.repeat(np.arange(n), 2)
    return sp.csr_matrix((np.full(2 * n, 0.5), (rows, org.ravel())),
                         shape=(n, child.parent.n_vert))


def prolongation_matrix(coarse: FeSpace, fine: FeSpace) -> sp.csr_matrix:
    """Interpolation of ``X_coarse`` into ``X_fine`` on interior coefficients."""
    if not _descends(fine.mesh, coarse.mesh):
        raise UnsupportedInputError("target mesh does not descend from the source mesh")
    key = ("prol", id(coarse))
    P = fine._evaluators.get(key)
    if P is not None:
        return P
    full = sp.identity(fine.mesh.n_vert, format="csr")
    m = fine.mesh
    while m is not coarse.mesh:
        full = full @ _one_step_prolongation(m)
        m = m.parent
    P = full[fine.interior_dofs][:, coarse.interior_dofs].tocsr()
    fine._evaluators[key] = P
    return P


def prolongate(f: FeFunction, fine: FeSpace) -> FeFunction:
    """Exact P1 interpolation of ``f`` onto a descendant space."""
    if fine is f.space:
        return FeFunction(fine, f.coeffs.copy())
    return FeFunction(fine, prolongation_matrix(f.space, fine) @ f.coeffs)


def interpolate(space: FeSpace, g: Field) -> FeFunction:
    """Nodal interpolant of a closed-form field."""
    return FeFunction(space, g.value(space.mesh.vertices[space.interior_dofs]))


def _load_vector(space, g: Field, degree=PROJECTION_DEGREE):
    ev = quadrature_evaluator(space, degree)
    return ev.E.T @ (ev.weights * g.value(ev.points))


def l2_project(space: FeSpace, g) -> FeFunction:
    """``L^2`` orthogonal projection ``P_h`` onto ``space``.

    ``g`` is a catalog :class:`~smrlab.fields.Field` or an FeFunction on a
    nested (finer or coarser) level.
    """
    ops = assemble(space)
    if isinstance(g, Field):
        b = _load_vector(space, g)
    elif isinstance(g, FeFunction):
        if g.space is space:
            return FeFunction(space, g.coeffs.copy())
        if _descends(space.mesh, g.space.mesh):
            return prolongate(g, space)
        if _descends(g.space.mesh, space.mesh):
            P = prolongation_matrix(space, g.space)
            b = P.T @ (assemble(g.space).M @ g.coeffs)
        else:
            raise UnsupportedInputError("FeFunction lives on a non-nested mesh")
    else:
        raise UnsupportedInputError(f"cannot project object of type {type(g).__name__}")
    return FeFunction(space, ops.solve_M(b))


def ritz_project(ops: DiscreteOperators, g) -> FeFunction:
    """Ritz (energy) projection ``R_h``: ``S c = (grad g, grad phi_i)``."""
    space = ops.space
    if isinstance(g, Field):
        mesh = space.mesh
        ev = quadrature_evaluator(space, PROJECTION_DEGREE)
        _, grads = _local_geometry(mesh)
        gg = g.grad(ev.points) * ev.weights[:, None]          # (n_pts, d)
        cell = ev.cell_of_point
        contrib = np.einsum("pd,pkd->pk", gg, grads[cell])    # (n_pts, d+1)
        dof = space.dof_of_vertex[mesh.cells][cell]
        keep = dof >= 0
        b = np.bincount(dof[keep], weights=contrib[keep], minlength=space.n_dof)
    elif isinstance(g, FeFunction):
        if g.space is space:
            return FeFunction(space, g.coeffs.copy())
        if _descends(space.mesh, g.space.mesh):
            return prolongate(g, space)
        if _descends(g.space.mesh, space.mesh):
            P = prolongation_matrix(space, g.space)
            b = P.T @ (assemble(g.space).S @ g.coeffs)
        else:
            raise UnsupportedInputError("FeFunction lives on a non-nested mesh")
    else:
        raise UnsupportedInputError(f"cannot project object of type {type(g).__name__}")
    return FeFunction(space, ops.solve_S(b))


def apply_Ah(ops: DiscreteOperators, f):
    """Discrete Laplacian ``A_h f = M^{-1} S f``."""
    c = _coeffs(f)
    out = ops.solve_M(ops.S @ c)
    return FeFunction(ops.space, out) if isinstance(f, FeFunction) else out
