"""
Eigenbasis functional calculus for ``A_h`` and ``L^q`` operator norm estimates.

Because ``A_h`` is self-adjoint and positive definite with respect to the
``M`` inner product, ``phi(A_h) u = V phi(Lambda) V^T M u`` for the
``M``-orthonormal eigenvectors ``V``. This is the reference ("spectral")
path against which the contour quadrature of :mod:`smrlab.dunford` is checked.

Operator norms on ``L^q`` are estimated from below by a nonlinear power
iteration of Boyd type. One iteration maps a unit vector ``c`` to the
maximiser of the linear functional ``x -> <B^* J(B c), x>`` over the unit ball
of ``L^q``, where ``J`` is the duality map of ``L^q``. By convexity of the
norm the iterates increase ``||B c||_q`` monotonically.
"""
from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .errors import CapacityError, DomainError, PoleError
from .fem import (DiscreteOperators, FeFunction, FeSpace, _coeffs, lq_norm,
                  quadrature_evaluator)

__all__ = [
    "HolomorphicSymbol",
    "power",
    "power_imag",
    "semigroup",
    "resolvent",
    "hinf_test",
    "rational",
    "HINF_CATALOG",
    "eigendecompose",
    "apply_symbol",
    "LinearMap",
    "symbol_map",
    "matrix_map",
    "OperatorNormEstimate",
    "operator_qnorm",
    "rademacher_rbound_lower",
    "DENSE_EIGEN_LIMIT",
]

DENSE_EIGEN_LIMIT = 20000
THETA_DEFAULT = math.pi / 4


@dataclass(frozen=True)
class HolomorphicSymbol:
    """Declarative description of a holomorphic function on a sector.

    Use the constructor functions :func:`power`, :func:`power_imag`,
    :func:`semigroup`, :func:`resolvent`, :func:`hinf_test` and
    :func:`rational` rather than instantiating directly.
    """

    kind: str
    params: tuple

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        k, p = self.kind, self.params
        if k == "power":
            (a,) = p
            return np.exp(a * np.log(z)) if a != 0 else np.ones_like(z)
        if k == "power_imag":
            (t,) = p
            return np.exp(1j * t * np.log(z))
        if k == "semigroup":
            (t,) = p
            return np.exp(-t * z)
        if k == "resolvent":
            (w,) = p
            return 1.0 / (w - z)
        if k == "hinf_test":
            a, m = p
            return np.exp(m * (a * np.log(z) - 2 * a * np.log1p(z)))
        if k == "rational":
            num, den = p
            return np.polyval(num, z) / np.polyval(den, z)
        raise ValueError(f"unknown symbol kind {k!r}")

    def eval_real(self, lam):
        """Values on the positive real axis, real-typed when possible."""
        v = self(np.asarray(lam, dtype=float))
        if self.is_real() and np.all(np.isfinite(v)):
            return v.real
        return v

    def is_real(self) -> bool:
        """True when ``phi(conj z) = conj phi(z)`` (real on the real axis)."""
        k, p = self.kind, self.params
        if k == "power_imag":
            return p[0] == 0
        if k == "resolvent":
            return complex(p[0]).imag == 0
        if k == "rational":
            return all(np.isrealobj(np.asarray(c)) for c in p)
        return True

    def conj(self) -> "HolomorphicSymbol":
        """The symbol ``z -> conj(phi(conj z))``, whose operator is the adjoint."""
        k, p = self.kind, self.params
        if k == "power_imag":
            return HolomorphicSymbol(k, (-p[0],))
        if k == "resolvent":
            return HolomorphicSymbol(k, (complex(p[0]).conjugate(),))
        if k == "rational":
            return HolomorphicSymbol(k, tuple(np.conj(np.asarray(c)) for c in p))
        return self

    def in_h0_infinity(self) -> bool:
        """Membership in the decaying class (``|phi| <= C min(|z|, 1/|z|)**eps``)."""
        if self.kind == "hinf_test":
            return True
        if self.kind == "rational":
            num, den = (np.trim_zeros(np.atleast_1d(c), "f") for c in self.params)
            return (len(num) < len(den) and num[-1] == 0 and den[-1] != 0)
        return False

    def sup_on_sector(self, theta: float = THETA_DEFAULT, r_range=(1e-8, 1e8)) -> float:
        """``sup |phi|`` over the sector, searched on the boundary rays.

        For bounded holomorphic symbols the supremum is attained on the
        boundary (maximum modulus principle). A log-grid scan is refined by a
        bounded scalar search on the best bracket.
        """
        s = np.linspace(math.log(r_range[0]), math.log(r_range[1]), 4001)
        best = 0.0
        for sign in (1, -1):
            e = cmath.exp(1j * sign * theta)

            def f(x):
                return -abs(complex(self(math.exp(x) * e)))

            vals = np.array([f(x) for x in s])
            i = int(np.argmin(vals))
            lo, hi = s[max(i - 1, 0)], s[min(i + 1, s.size - 1)]
            res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
            best = max(best, -vals[i], -res.fun)
        return best

    def __repr__(self):
        return f"{self.kind}{self.params}"


def power(alpha: float) -> HolomorphicSymbol:
    """``z**alpha`` (principal branch)."""
    return HolomorphicSymbol("power", (float(alpha),))


def power_imag(t: float) -> HolomorphicSymbol:
    """``z**(i t) = exp(i t log z)``."""
    return HolomorphicSymbol("power_imag", (float(t),))


def semigroup(t: float) -> HolomorphicSymbol:
    """``exp(-t z)`` for ``t >= 0``."""
    if t < 0:
        raise DomainError("semigroup time must be nonnegative")
    return HolomorphicSymbol("semigroup", (float(t),))


def resolvent(z: complex) -> HolomorphicSymbol:
    """``(z - w)**-1`` as a function of ``w``; ``phi(A) = (z - A)^{-1}``."""
    z = complex(z)
    return HolomorphicSymbol("resolvent", (z if z.imag else z.real,))


def hinf_test(alpha: float, k: int = 1) -> HolomorphicSymbol:
    """Decaying test symbol ``(z**alpha / (1 + z)**(2 alpha))**k``.

    ``alpha`` lies in ``(0, 1]``; the decay exponent at ``0`` and ``infinity``
    is ``k * alpha``.
    """
    if not (0 < alpha <= 1) or k < 1:
        raise DomainError("hinf_test needs 0 < alpha <= 1 and k >= 1")
    return HolomorphicSymbol("hinf_test", (float(alpha), int(k)))


def rational(num, den) -> HolomorphicSymbol:
    """``p(z) / q(z)`` with coefficient lists, highest degree first."""
    return HolomorphicSymbol("rational", (tuple(num), tuple(den)))


HINF_CATALOG = (hinf_test(0.5), hinf_test(1.0), hinf_test(0.25))
"""``z^{1/2}/(1+z)``, ``z/(1+z)^2`` and ``z^{1/4}/(1+z)^{1/2}``."""


# ----------------------------------------------------------------------------
# eigen path


def eigendecompose(ops: DiscreteOperators, check: bool = True) -> DiscreteOperators:
    """Dense generalized eigendecomposition ``S V = M V diag(lam)``.

    Returns a new operator object with ``eigen`` filled in. Above
    ``DENSE_EIGEN_LIMIT`` degrees of freedom a :class:`CapacityError` is
    raised; use the contour routines instead.
    """
    if ops.eigen is not None:
        return ops
    n = ops.n_dof
    if n > DENSE_EIGEN_LIMIT:
        raise CapacityError(f"{n} dofs exceed the dense eigen limit {DENSE_EIGEN_LIMIT}; "
                            "use the contour path (smrlab.dunford)")
    S = ops.S.toarray()
    M = ops.M.toarray()
    lam, V = sl.eigh(S, M)
    if check:
        res = np.abs(S @ V - (M @ V) * lam).max()
        if res > 1e-10 * np.abs(S).max() * max(1.0, math.sqrt(n) * 1e-2):
            raise ArithmeticError(f"eigen residual {res:.3e} too large")
    lam.setflags(write=False)
    V.setflags(write=False)
    return ops.with_eigen(lam, V)


def _require_eigen(ops):
    if ops.eigen is None:
        raise CapacityError("eigendecomposition required; call eigendecompose(ops) first")
    return ops.eigen


def _symbol_values(phi: HolomorphicSymbol, lam):
    if phi.kind == "resolvent":
        z = complex(phi.params[0])
        gap = np.min(np.abs(z - lam))
        if gap <= 1e-12 * max(1.0, abs(z)):
            raise PoleError(f"resolvent point {z} lies on the spectrum")
    if phi.kind == "rational":
        den = np.atleast_1d(np.asarray(phi.params[1]))
        lam_arr = np.asarray(lam, dtype=float)
        scale = np.polyval(np.abs(den), np.abs(lam_arr))
        if np.any(np.abs(np.polyval(den, lam_arr)) <= 1e-12 * scale):
            raise PoleError(f"symbol {phi} has a pole on the spectrum")
    with np.errstate(all="ignore"):
        vals = phi.eval_real(lam)
    if not np.all(np.isfinite(vals)):
        raise PoleError(f"symbol {phi} is singular on the spectrum")
    return vals


def apply_symbol(ops: DiscreteOperators, phi: HolomorphicSymbol, u):
    """``phi(A_h) u = V phi(Lambda) V^T M u``.

    Accepts an FeFunction or coefficient array(s); the return type follows
    the input. Coefficients are complex when ``phi`` is not real.
    """
    lam, V = _require_eigen(ops)
    c = _coeffs(u)
    vals = _symbol_values(phi, lam)
    w = V.T @ (ops.M @ c)
    w = (vals * w.T).T if c.ndim == 2 else vals * w
    out = V @ w
    return FeFunction(ops.space, out) if isinstance(u, FeFunction) else out


@dataclass
class LinearMap:
    """Linear map on coefficient vectors together with its adjoint.

    ``adjoint`` must satisfy ``<r, apply(c)> = <adjoint(r), c>`` for the
    Euclidean pairing ``<a, b> = sum(conj(a) * b)`` of coefficient vectors;
    for a matrix ``B`` it is ``B^H``.
    """

    apply: Callable
    adjoint: Callable
    n_in: int
    n_out: int
    complex_input: bool = False

    def __call__(self, c):
        return self.apply(c)


def symbol_map(ops: DiscreteOperators, phi: HolomorphicSymbol) -> LinearMap:
    """``phi(A_h)`` as a :class:`LinearMap` (eigen path)."""
    lam, V = _require_eigen(ops)
    vals = _symbol_values(phi, lam)
    cvals = np.conj(vals)
    M = ops.M

    def fwd(c):
        w = V.T @ (M @ c)
        return V @ ((vals * w.T).T if np.ndim(c) == 2 else vals * w)

    def adj(r):
        w = V.T @ r
        return M @ (V @ ((cvals * w.T).T if np.ndim(r) == 2 else cvals * w))

    return LinearMap(fwd, adj, ops.n_dof, ops.n_dof, complex_input=not phi.is_real())


def matrix_map(B, complex_input: Optional[bool] = None) -> LinearMap:
    """Wrap a dense or sparse matrix as a :class:`LinearMap`."""
    BH = B.conj().T
    if complex_input is None:
        complex_input = np.iscomplexobj(B.data if sp.issparse(B) else B)
    return LinearMap(lambda c: B @ c, lambda r: BH @ r, B.shape[1], B.shape[0],
                     complex_input=bool(complex_input))


def _self_adjoint_map(ops, apply, complex_input=False):
    # adjoint of an M-self-adjoint coefficient map: B^T = M B M^{-1}
    return LinearMap(apply, lambda r: ops.M @ apply(ops.solve_M(r)),
                     ops.n_dof, ops.n_dof, complex_input)


# ----------------------------------------------------------------------------
# L^q operator norms


@dataclass(frozen=True)
class OperatorNormEstimate:
    """Lower bound for an ``L^q -> L^q`` operator norm.

    Attributes
    ----------
    value : float
        Best ratio found over all restarts.
    restarts : int
    converged_fraction : float
        Fraction of restarts that converged to within ``tol`` of ``value``.
    history : tuple
        Final value of each restart.
    """

    value: float
    restarts: int
    converged_fraction: float
    history: tuple = ()


class _QNorm:
    """Quadrature-weighted point-value representation of the ``L^q`` norm."""

    def __init__(self, space: FeSpace, q: float):
        degree = int(q) if float(q).is_integer() and int(q) % 2 == 0 else 10
        ev = quadrature_evaluator(space, degree)
        self.E = ev.E.tocsr()
        self.ET = self.E.T.tocsr()
        self.w = ev.weights
        self.q = float(q)
        self.M = None

    def power(self, c):
        u = self.E @ c
        return float(self.w @ np.abs(u) ** self.q)

    def norm(self, c):
        return self.power(c) ** (1.0 / self.q)

    def dual(self, y):
        """Coefficient functional of ``|y|^{q-2} y`` (gradient of ``1/q ||y||^q``)."""
        u = self.E @ y
        return self.ET @ (self.w * np.abs(u) ** (self.q - 2) * u)

    def ball_argmax(self, s, c0, iters=60):
        """Maximiser of ``Re <s, c>`` over ``||c||_q <= 1``.

        Solves ``grad (1/q) ||c||^q = s`` by damped Newton on the convex
        function ``F(c) = (1/q) ||c||^q - Re <s, c>`` and normalises.
        """
        q = self.q
        cplx = np.iscomplexobj(s) or np.iscomplexobj(c0)
        n = s.size

        def F(c):
            return self.power(c) / q - float(np.real(np.vdot(s, c)))

        # best multiple of the previous iterate as the Newton start
        sc = float(np.real(np.vdot(s, c0)))
        nq = self.power(c0)
        c = c0 * (sc / nq) ** (1.0 / (q - 1.0)) if sc > 0 and nq > 0 else (
            s / max(np.linalg.norm(s), 1e-300))
        fc = F(c)
        snorm = np.linalg.norm(s)
        for _ in range(iters):
            u = self.E @ c
            au = np.abs(u)
            g = self.ET @ (self.w * au ** (q - 2) * u) - s
            if np.linalg.norm(g) <= 1e-13 * snorm:
                break
            floor = 1e-14 * max(au.max(), 1e-300)
            wq = self.w * np.maximum(au, floor) ** (q - 2)
            if not cplx:
                H = self.ET @ sp.diags((q - 1.0) * wq) @ self.E
                step = -spla.spsolve(H.tocsc(), g)
            else:
                uh = u / np.maximum(au, floor)
                a, b = uh.real, uh.imag
                daa = wq * (1 + (q - 2) * a * a)
                dbb = wq * (1 + (q - 2) * b * b)
                dab = wq * (q - 2) * a * b
                blk = [[self.ET @ sp.diags(daa) @ self.E, self.ET @ sp.diags(dab) @ self.E],
                       [self.ET @ sp.diags(dab) @ self.E, self.ET @ sp.diags(dbb) @ self.E]]
                H = sp.bmat(blk).tocsc()
                st = -spla.spsolve(H, np.concatenate([g.real, g.imag]))
                step = st[:n] + 1j * st[n:]
            t = 1.0
            while True:
                cn = c + t * step
                fn = F(cn)
                if fn <= fc or t < 1e-8:
                    break
                t *= 0.5
            if fn > fc:
                break
            converged = fc - fn <= 1e-15 * abs(fc)
            c, fc = cn, fn
            if converged:
                break
        return c / self.norm(c)


def _as_linear_map(apply, space, complex_input):
    if isinstance(apply, LinearMap):
        return apply
    if isinstance(apply, np.ndarray) or sp.issparse(apply):
        return matrix_map(apply, complex_input)
    from .fem import assemble
    return _self_adjoint_map(assemble(space), apply, bool(complex_input))


def operator_qnorm(apply, space: FeSpace, q: float, restarts: int = 8, tol: float = 1e-4,
                   seed: int = 0, max_iter: int = 300, complex_input: Optional[bool] = None,
                   out_space: Optional[FeSpace] = None) -> OperatorNormEstimate:
    """Lower-bound estimate of ``sup ||B c||_q / ||c||_q``.

    Parameters
    ----------
    apply : LinearMap, matrix or callable
        The map ``B`` on coefficient vectors of ``space``. A bare callable is
        assumed ``M``-self-adjoint so that ``B^T = M B M^{-1}``; pass a
        :class:`LinearMap` otherwise.
    space : FeSpace
        Domain space; also the range space unless ``out_space`` is given.
    q : float
        Exponent in ``(1, inf)``.
    restarts : int
        Number of random starting vectors. Restart ``i`` draws from
        ``numpy.random.default_rng([seed, i])`` so results do not depend on
        scheduling.
    tol : float
        Relative tolerance for restart agreement; iterations stop when the
        relative increase falls below ``tol / 100``.

    Returns
    -------
    OperatorNormEstimate
    """
    if not (1 < q < np.inf):
        raise DomainError(f"q must lie in (1, inf), got {q}")
    if restarts < 1:
        raise DomainError("restarts must be >= 1")
    out_space = out_space or space
    B = _as_linear_map(apply, space, complex_input)
    cplx = B.complex_input if complex_input is None else bool(complex_input)
    norm_in = _QNorm(space, q)
    norm_out = norm_in if out_space is space else _QNorm(out_space, q)
    finals = []
    for i in range(restarts):
        rng = np.random.default_rng([int(seed), i])
        c = rng.standard_normal(space.n_dof)
        if cplx:
            c = c + 1j * rng.standard_normal(space.n_dof)
        c = c / norm_in.norm(c)
        val = norm_out.norm(B.apply(c))
        for _ in range(max_iter):
            y = B.apply(c)
            r = norm_out.dual(y)
            s = B.adjoint(r)
            if not cplx:
                s = np.real(s)
            if np.linalg.norm(s) == 0:
                break
            c_new = norm_in.ball_argmax(s, c)
            new = norm_out.norm(B.apply(c_new))
            if new < val * (1 - 1e-12):
                break          # numerical stagnation; keep the previous iterate
            c, inc, val = c_new, new - val, new
            if inc <= 1e-2 * tol * val:
                break
        exact = lq_norm(B.apply(c), q, out_space) / lq_norm(c, q, space)
        finals.append(float(np.real(exact)))
    best = max(finals)
    agree = sum(v >= best * (1 - tol) for v in finals) / restarts if best > 0 else 0.0
    return OperatorNormEstimate(best, restarts, float(agree), tuple(finals))


def rademacher_rbound_lower(ops: DiscreteOperators, q: float, zs, trials: int = 8,
                            theta: float = THETA_DEFAULT, seed: int = 0,
                            return_history: bool = False):
    """Random-sign lower bound for the R-bound of ``{z (z - A_h)^{-1}}``.

    Each trial draws vectors ``x_n`` and compares the sign averages
    ``(E ||sum r_n B_n x_n||_q^2)^{1/2}`` and ``(E ||sum r_n x_n||_q^2)^{1/2}``
    with ``B_n = z_n (z_n - A_h)^{-1}``. The expectation over signs is exact
    (all ``2**N`` sign patterns) for ``N <= 10`` and sampled with 1024 draws
    otherwise. The running maximum over trials is returned.
    """
    zs = [complex(z) for z in zs]
    for z in zs:
        if z == 0 or abs(cmath.phase(z)) <= theta:
            raise DomainError(f"z = {z} lies in the closed sector of angle {theta}")
    N = len(zs)
    space = ops.space
    rng = np.random.default_rng([int(seed), 7])
    if N <= 10:
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=N)))
    else:
        signs = rng.choice((1.0, -1.0), size=(1024, N))
    best, hist = 0.0, []
    for _ in range(trials):
        X = rng.standard_normal((space.n_dof, N))
        Y = np.column_stack([z * apply_symbol(ops, resolvent(z), X[:, k]) for k, z in enumerate(zs)])
        num = lq_norm(Y @ signs.T, q, space)
        den = lq_norm(X @ signs.T, q, space)
        ratio = math.sqrt(np.mean(num ** 2) / max(np.mean(den ** 2), 1e-300))
        best = max(best, ratio)
        hist.append(best)
    return (best, hist) if return_history else best
