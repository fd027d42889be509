"""Gauss rules on simplices and log-spaced rules on the half line."""
from __future__ import annotations

import functools
import math

import numpy as np
from scipy.special import roots_jacobi

__all__ = ["simplex_rule", "gauss_legendre"]


@functools.lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int):
    """Collapsed (Stroud conical product) Gauss rule on the reference simplex.

    Parameters
    ----------
    dim : int
        Simplex dimension.
    degree : int
        Polynomial degree integrated exactly.

    Returns
    -------
    bary : ndarray, shape (n_pts, dim + 1)
        Barycentric coordinates of the nodes.
    weights : ndarray, shape (n_pts,)
        Weights normalised to sum to one, i.e. the integral over a cell ``K``
        is ``|K| * sum(w * f(x))``.
    """
    npts = max(1, math.ceil((degree + 1) / 2))
    if dim == 0:
        return np.ones((1, 1)), np.ones(1)
    nodes, wts = [], []
    for k in range(dim):
        a = dim - 1 - k       # weight (1 - t)**a from the Duffy Jacobian
        x, w = roots_jacobi(npts, a, 0.0)
        nodes.append(0.5 * (1.0 + x))
        wts.append(w / 2.0 ** (a + 1))
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrid = functools.reduce(np.multiply.outer, wts).ravel()
    t = np.stack([g.ravel() for g in grids], axis=1)
    x = np.empty_like(t)
    rest = np.ones(t.shape[0])
    for k in range(dim):
        x[:, k] = rest * t[:, k]
        rest = rest * (1.0 - t[:, k])
    bary = np.column_stack([1.0 - x.sum(axis=1), x])
    w = wgrid / wgrid.sum()
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w


@functools.lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Gauss-Legendre nodes and weights on ``[-1, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w
