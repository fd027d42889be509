"""
Norm estimators over trajectory sets and log-log rate fits.

Trajectory data are arrays of shape ``(M_paths, n_times, n_dof)`` on one
space. Most estimators first reduce each snapshot to a scalar norm and then
aggregate over time (trapezoid rule or maximum over nodes) and over paths
(``p``-th moment). The ``*_from_norms`` variants take those per-snapshot
norms directly so that large runs can stream.

Monte Carlo standard errors use the delta method on the per-path ``p``-th
powers: if ``X_m`` are i.i.d. with mean ``mu`` then ``mu**(1/p)`` has standard
error ``(1/p) mu**(1/p - 1) sd(X) / sqrt(M)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, DomainError, UsageError
from .fem import DiscreteOperators, FeFunction, FeSpace, _coeffs, lq_norm, quadrature_evaluator
from .quadrature import gauss_legendre
from .spectral import apply_symbol, power

__all__ = [
    "NormEstimate",
    "RateFit",
    "trapezoid_weights",
    "snapshot_norms",
    "bochner_from_norms",
    "sup_from_norms",
    "bochner_norm",
    "pathwise_sup_norm",
    "interpolation_norm",
    "square_function_norm",
    "SmrReport",
    "smr_ratio",
    "EulerSmrReport",
    "discrete_smr_euler",
    "MrReport",
    "deterministic_mr_ratio",
    "fit_rate",
]

INTERP_NODES = 64
INTERP_RANGE = (1e-10, 1.0)


@dataclass(frozen=True)
class NormEstimate:
    """Monte Carlo norm estimate with delta-method standard error."""

    value: float
    mc_stderr: float
    M_paths: int


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through ``(ln h, ln value)``."""

    slope: float
    intercept: float
    max_residual: float
    points: tuple


def trapezoid_weights(times) -> np.ndarray:
    """Trapezoid weights on a (possibly nonuniform) time grid."""
    t = np.asarray(times, dtype=float)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def _moment_estimate(X, p):
    X = np.asarray(X, dtype=float)
    M = X.size
    mu = float(X.mean())
    if mu <= 0:
        return NormEstimate(0.0, 0.0, M)
    sd = float(X.std(ddof=1)) if M > 1 else 0.0
    val = mu ** (1.0 / p)
    return NormEstimate(val, val / (p * mu) * sd / math.sqrt(M), M)


def snapshot_norms(traj, space: FeSpace, q: float, batch: int = 4096) -> np.ndarray:
    """``L^q`` norm of every snapshot, shape ``(M_paths, n_times)``."""
    X = np.asarray(traj)
    P, J, n = X.shape
    flat = X.reshape(P * J, n).T
    out = np.empty(P * J)
    for s in range(0, P * J, batch):
        out[s:s + batch] = lq_norm(flat[:, s:s + batch], q, space)
    return out.reshape(P, J)


def bochner_from_norms(norms, times, p: float) -> NormEstimate:
    """``(E int_0^T n(t)**p dt)**(1/p)`` from per-snapshot norms."""
    w = trapezoid_weights(times)
    return _moment_estimate((np.asarray(norms) ** p) @ w, p)


def sup_from_norms(norms, p: float) -> NormEstimate:
    """``(E max_t n(t)**p)**(1/p)`` from per-snapshot norms."""
    return _moment_estimate(np.max(np.asarray(norms), axis=1) ** p, p)


def _check_p(p):
    if not (p >= 1):
        raise DomainError(f"p must be >= 1, got {p}")


def bochner_norm(diff, times, p: float, q: float, space: FeSpace) -> NormEstimate:
    """``L^p(Omega x [0, T]; L^q)`` norm of a trajectory difference.

    Parameters
    ----------
    diff : ndarray, shape (M_paths, n_times, n_dof)
        Differences on one common space.
    times : ndarray, shape (n_times,)
    """
    _check_p(p)
    diff = np.asarray(diff)
    if diff.ndim != 3 or diff.shape[2] != space.n_dof:
        raise UsageError("trajectory difference does not live on the given space")
    return bochner_from_norms(snapshot_norms(diff, space, q), times, p)


def pathwise_sup_norm(diff, p: float, norm_kind, space: FeSpace,
                      ops: Optional[DiscreteOperators] = None) -> NormEstimate:
    """``(E max_j ||e(t_j)||**p)**(1/p)``.

    ``norm_kind`` is ``("lq", q)`` or ``("neg_frac", alpha, q)``; the latter
    measures ``||A^{-alpha} e||_{L^q}`` with ``A`` the operator of ``ops``
    (normally the reference level).
    """
    _check_p(p)
    diff = np.asarray(diff)
    if diff.ndim != 3 or diff.shape[2] != space.n_dof:
        raise UsageError("trajectory difference does not live on the given space")
    kind = norm_kind[0]
    if kind == "lq":
        norms = snapshot_norms(diff, space, norm_kind[1])
    elif kind == "neg_frac":
        alpha, q = norm_kind[1], norm_kind[2]
        if not (0 <= alpha <= 1):
            raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
        if ops is None or ops.space is not space:
            raise UsageError("neg_frac needs the operators of the trajectory space")
        if alpha == 0:
            norms = snapshot_norms(diff, space, q)
        else:
            P, J, n = diff.shape
            g = apply_symbol(ops, power(-alpha), diff.reshape(P * J, n).T).T
            norms = snapshot_norms(g.reshape(P, J, n), space, q)
    else:
        raise DomainError(f"unknown norm kind {kind!r}")
    return sup_from_norms(norms, p)


def interpolation_norm(v, theta: float, p: float, q: float, ops: DiscreteOperators):
    """Semigroup equivalent norm of ``(X_0^q, X_1^q)_{theta, p}``.

    ``||v||_q + (int_0^1 ||t^{1-theta} A e^{-tA} v||_q^p dt / t)^{1/p}``, with
    the integral discretised by the trapezoid rule in ``ln t`` on 64 nodes
    spanning ``[1e-10, 1]``. Accepts one function or an ``(n_dof, k)`` batch.
    """
    if not (0 < theta < 1):
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    _check_p(p)
    if ops.eigen is None:
        raise CapacityError("interpolation_norm needs the eigendecomposition")
    c = _coeffs(v)
    single = c.ndim == 1
    C = c[:, None] if single else c
    lam, V = ops.eigen
    space = ops.space
    s = np.linspace(math.log(INTERP_RANGE[0]), math.log(INTERP_RANGE[1]), INTERP_NODES)
    ws = trapezoid_weights(s)
    t = np.exp(s)
    chat = V.T @ (ops.M @ C)                                   # (n, k)
    base = lq_norm(C, q, space)
    acc = np.zeros(C.shape[1])
    for ti, wi in zip(t, ws):
        mult = ti ** (1 - theta) * lam * np.exp(-ti * lam)
        vals = lq_norm(V @ (mult[:, None] * chat), q, space)
        acc += wi * vals ** p
    out = base + acc ** (1.0 / p)
    return float(out[0]) if single else out


def square_function_norm(W, q: float, space: FeSpace) -> float:
    """``|| (sum_n |w_n|^2)^{1/2} ||_{L^q}`` for P1 functions ``w_n`` (columns)."""
    W = np.asarray(W)
    if W.ndim == 1:
        W = W[:, None]
    even = float(q).is_integer() and int(q) % 2 == 0
    ev = quadrature_evaluator(space, int(q) if even else 10)
    vals = ev.E @ W
    sf = np.sqrt(np.sum(np.abs(vals) ** 2, axis=1))
    return float(ev.weights @ sf ** q) ** (1.0 / q)


@dataclass(frozen=True)
class SmrReport:
    """LHS/RHS of the stochastic maximal regularity estimate on one level.

    ``undefined`` is set when the right-hand side vanishes (zero noise).
    """

    lhs_sup: NormEstimate
    lhs_halfpow: NormEstimate
    rhs: float
    ratio_sup: float
    ratio_halfpow: float
    stderr_sup: float
    stderr_halfpow: float
    undefined: bool = False


def _ratio(a: NormEstimate, rhs):
    if rhs <= 0:
        return math.nan, math.nan
    return a.value / rhs, a.mc_stderr / rhs


def _psi_lp(noise, times, p):
    # psi is piecewise constant on the step grid, so the step sum is exact
    times = np.asarray(times)
    tau = np.diff(times)
    return float(np.sum(tau * np.abs(noise.psi(times[:-1])) ** p)) ** (1.0 / p)


def smr_ratio(paths, times, noise, p: float, q: float, ops: DiscreteOperators) -> SmrReport:
    """Stochastic maximal ``L^p`` regularity ratios on one level.

    ``lhs_sup`` is ``(E sup_t ||y_h(t)||^p_{theta,p})^{1/p}`` with the
    interpolation norm of :func:`interpolation_norm`,
    ``theta = 1/2 - 1/p``; ``lhs_halfpow`` is the Bochner norm of
    ``A_h^{1/2} y_h``; the right-hand side is
    ``(int_0^T ||(sum_n |psi P_h g_n|^2)^{1/2}||_q^p dt)^{1/p}``.
    """
    space = ops.space
    X = np.asarray(paths)
    P, J, n = X.shape
    theta = 0.5 - 1.0 / p
    if theta <= 0:
        raise DomainError("the sup-norm variant needs p > 2")
    flat = X.reshape(P * J, n).T
    interp = interpolation_norm(flat, theta, p, q, ops).reshape(P, J)
    lhs_sup = sup_from_norms(interp, p)
    half = apply_symbol(ops, power(0.5), flat).T.reshape(P, J, n)
    lhs_half = bochner_from_norms(snapshot_norms(half, space, q), times, p)
    W = noise.projected(space)
    rhs = _psi_lp(noise, times, p) * square_function_norm(W, q, space)
    r1, s1 = _ratio(lhs_sup, rhs)
    r2, s2 = _ratio(lhs_half, rhs)
    return SmrReport(lhs_sup, lhs_half, rhs, r1, r2, s1, s2, undefined=not rhs > 0)


@dataclass(frozen=True)
class EulerSmrReport:
    """Discrete maximal regularity ratios of the implicit Euler scheme."""

    lhs: NormEstimate
    rhs: float
    ratio: float
    stderr: float
    max_lhs: NormEstimate
    max_rhs: float
    max_ratio: float
    max_stderr: float
    alpha: float
    undefined: bool = False


def discrete_smr_euler(traj, noise, p: float, q: float, tau: float, level: int,
                       alpha: Optional[float] = None) -> EulerSmrReport:
    """Discrete stochastic maximal regularity of implicit Euler trajectories.

    LHS ``(E tau sum_{j>=1} ||A_h^{1/2} Y_j||_q^p)^{1/p}`` against
    ``(tau sum_j ||(sum_n |psi(t_j) P_h g_n|^2)^{1/2}||_q^p)^{1/p}``, and the
    maximal inequality ``(E max_j ||Y_j||_q^p)^{1/p}`` against
    ``||A_h^{-alpha} f|| + tau^{1/2 - 1/p} ||f||`` in the same square-function
    norm, with ``alpha`` in ``(0, 1/2 - 1/p)`` (default: the midpoint).
    """
    if traj.schemes.get(level) != "implicit_euler":
        raise UsageError("discrete_smr_euler needs implicit Euler trajectories")
    if alpha is None:
        alpha = 0.5 * (0.5 - 1.0 / p)
    if not (0 < alpha < 0.5 - 1.0 / p):
        raise DomainError("alpha must lie in (0, 1/2 - 1/p)")
    space = traj.spaces[level]
    ops = space._ops
    X = np.asarray(traj.paths[level])[:, 1:, :]
    P, J, n = X.shape
    flat = X.reshape(P * J, n).T
    half = apply_symbol(ops, power(0.5), flat).T.reshape(P, J, n)
    lhs = _moment_estimate(tau * np.sum(snapshot_norms(half, space, q) ** p, axis=1), p)
    times = traj.times
    psi_norm = _psi_lp(noise, times, p)
    W = noise.projected(space)
    fnorm = psi_norm * square_function_norm(W, q, space)
    max_lhs = sup_from_norms(snapshot_norms(X, space, q), p)
    Wa = apply_symbol(ops, power(-alpha), W)
    max_rhs = psi_norm * square_function_norm(Wa, q, space) + tau ** (0.5 - 1.0 / p) * fnorm
    r1, s1 = _ratio(lhs, fnorm)
    r2, s2 = _ratio(max_lhs, max_rhs)
    return EulerSmrReport(lhs, fnorm, r1, s1, max_lhs, max_rhs, r2, s2, alpha,
                          undefined=not fnorm > 0)


@dataclass(frozen=True)
class MrReport:
    """Deterministic maximal regularity ratio."""

    lhs: float
    rhs: float
    ratio: float


def _graded_nodes(length, lam_max, per_panel=8):
    # geometric panels resolve the boundary layers exp(-lam s) near s = 0
    G = max(4, int(math.ceil(math.log2(max(length * lam_max, 2.0)))) + 6)
    edges = np.concatenate([[0.0], length * 2.0 ** -np.arange(G, -1, -1)])
    x, w = gauss_legendre(per_panel)
    s, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        s.append(0.5 * (a + b) + 0.5 * (b - a) * x)
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(s), np.concatenate(ws)


def deterministic_mr_ratio(ops: DiscreteOperators, breaks: Sequence[float], values,
                           T: float, p: float, q: float) -> MrReport:
    """Ratio for ``u' + A_h u = f_h``, ``u(0) = 0``, with piecewise constant ``f_h``.

    LHS ``(int_0^T ||A_h u(t)||_q^p dt)^{1/p}`` is evaluated with the exact
    modal solution on each piece and graded Gauss quadrature in time; RHS
    ``(sum_k tau_k ||f_k||_q^p)^{1/p}`` is exact.

    Parameters
    ----------
    breaks : sequence of float
        Left endpoints ``0 = t_0 < t_1 < ...`` of the pieces (``< T``).
    values : ndarray, shape (n_dof, n_pieces)
        Coefficients of ``f_k``.
    """
    if ops.eigen is None:
        raise CapacityError("deterministic_mr_ratio needs the eigendecomposition")
    lam, V = ops.eigen
    space = ops.space
    F = np.asarray(values, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    edges = list(breaks) + [T]
    if len(edges) - 1 != F.shape[1]:
        raise ConfigurationError("one value per piece required")
    fhat = V.T @ (ops.M @ F)
    uhat = np.zeros(lam.size)
    lhs_p, rhs_p = 0.0, 0.0
    for k in range(F.shape[1]):
        length = edges[k + 1] - edges[k]
        s, ws = _graded_nodes(length, lam[-1])
        E = np.exp(-np.outer(lam, s))                            # (n, ns)
        # A u(t_k + s) in modal form
        Au = lam[:, None] * (E * uhat[:, None] + (-np.expm1(-np.outer(lam, s)))
                             / lam[:, None] * fhat[:, k:k + 1])
        lhs_p += ws @ lq_norm(V @ Au, q, space) ** p
        rhs_p += length * lq_norm(F[:, k], q, space) ** p
        uhat = np.exp(-lam * length) * uhat + (-np.expm1(-lam * length)) / lam * fhat[:, k]
    lhs, rhs = lhs_p ** (1.0 / p), rhs_p ** (1.0 / p)
    return MrReport(float(lhs), float(rhs), float(lhs / rhs) if rhs > 0 else math.nan)


def fit_rate(points, log_correction: Optional[float] = None) -> RateFit:
    """Ordinary least squares fit of ``ln value`` against ``ln h``.

    With ``log_correction = kappa`` the values are first divided by
    ``1 + |ln h|**kappa``.

    Examples
    --------
    >>> hs = [2.0 ** -k for k in range(3, 7)]
    >>> round(fit_rate([(h, h ** 2) for h in hs]).slope, 12)
    2.0
    """
    pts = [(float(h), float(v)) for h, v in points]
    if len(pts) < 3:
        raise ConfigurationError("fit_rate needs at least 3 points")
    h = np.array([a for a, _ in pts])
    v = np.array([b for _, b in pts])
    if np.any(h <= 0) or np.any(v <= 0):
        raise DomainError("rate fit needs positive h and values")
    if np.unique(h).size != h.size:
        raise ConfigurationError("rate fit needs distinct h")
    if log_correction:
        v = v / (1.0 + np.abs(np.log(h)) ** log_correction)
    x, y = np.log(h), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    return RateFit(float(slope), float(intercept), float(np.max(np.abs(res))), tuple(pts))
