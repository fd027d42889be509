"""
Coupled sample paths of the semidiscrete stochastic heat equation

    dY + A_h Y dt = sum_n psi(t) P_h g_n d beta_n,    Y(0) = 0,

on several nested levels driven by the same scalar Brownian motions.

The exponential Euler scheme reads ``Y_{j+1} = exp(-tau A_h)(Y_j + xi_j)``
and the implicit Euler scheme ``(I + tau A_h) Y_{j+1} = Y_j + xi_j`` with
``xi_j = sum_n psi(t_j) P_h g_n Delta beta_n(j)``. For piecewise constant
``psi`` aligned with the time grid the noise integral over a step is exact.

Brownian increments come from a counter-based generator (Philox) keyed by
``(seed, path, n)``, so every increment is a fixed function of its key and
does not depend on evaluation order or on the number of workers.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError
from .fem import DiscreteOperators, FeSpace, assemble, l2_project
from .fields import Field
from .mesh import mesh_hierarchy
from .spectral import DENSE_EIGEN_LIMIT, eigendecompose

__all__ = [
    "NoiseModel",
    "SimConfig",
    "Level",
    "build_levels",
    "TrajectorySet",
    "brownian_increments",
    "step_implicit_euler",
    "step_exp_euler",
    "Propagator",
    "make_propagator",
    "simulate",
    "iterate_paths",
    "exact_ou_paths",
    "MAX_STORED_COEFFS",
]

MAX_STORED_COEFFS = 10 ** 7
EXP_EULER = "exp_euler"
IMPLICIT_EULER = "implicit_euler"


@dataclass(frozen=True)
class NoiseModel:
    """Finite-rank noise ``f(t) h_n = psi(t) g_n``.

    Attributes
    ----------
    profiles : tuple of Field
        Spatial profiles ``g_1..g_N``.
    psi_breaks : tuple of float, optional
        Left endpoints ``t_0 = 0 < t_1 < ...`` of a piecewise constant time
        modulation; ``None`` means ``psi = 1``.
    psi_values : tuple of float, optional
        Value of ``psi`` on ``[t_k, t_{k+1})``.
    """

    profiles: tuple
    psi_breaks: Optional[tuple] = None
    psi_values: Optional[tuple] = None

    def __post_init__(self):
        if len(self.profiles) < 1:
            raise ConfigurationError("noise needs at least one profile")
        if (self.psi_breaks is None) != (self.psi_values is None):
            raise ConfigurationError("psi_breaks and psi_values go together")
        if self.psi_breaks is not None:
            if len(self.psi_breaks) != len(self.psi_values) or self.psi_breaks[0] != 0:
                raise ConfigurationError("psi schedule must start at t = 0")
            if any(b <= a for a, b in zip(self.psi_breaks, self.psi_breaks[1:])):
                raise ConfigurationError("psi breakpoints must increase")

    @property
    def rank(self) -> int:
        return len(self.profiles)

    @property
    def constant_psi(self) -> bool:
        return self.psi_breaks is None or len(set(self.psi_values)) == 1

    def psi(self, t):
        """Time modulation at times ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        if self.psi_breaks is None:
            return np.ones_like(t)
        idx = np.searchsorted(np.asarray(self.psi_breaks), t, side="right") - 1
        return np.asarray(self.psi_values, dtype=float)[np.clip(idx, 0, None)]

    def scaled(self, s: float) -> "NoiseModel":
        return NoiseModel(tuple(s * g for g in self.profiles), self.psi_breaks, self.psi_values)

    def projected(self, space: FeSpace) -> np.ndarray:
        """``P_h g_n`` as the columns of an ``(n_dof, N)`` array."""
        return np.column_stack([l2_project(space, g).coeffs for g in self.profiles])


@dataclass(frozen=True)
class SimConfig:
    """Time grid, levels and Monte Carlo parameters."""

    T: float = 1.0
    n_steps: int = 512
    levels: tuple = (3, 4, 5, 6)
    reference_level: int = 8
    M_paths: int = 64
    master_seed: int = 20240611
    scheme: str = EXP_EULER
    dim: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if self.T <= 0:
            raise ConfigurationError("T must be positive")
        if self.M_paths < 1:
            raise ConfigurationError("M_paths must be >= 1")
        if self.scheme not in (EXP_EULER, IMPLICIT_EULER):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not self.levels:
            raise ConfigurationError("need at least one level")
        if self.reference_level < max(self.levels):
            raise ConfigurationError("reference_level must be >= max(levels)")
        if self.dim not in (1, 2, 3):
            raise ConfigurationError("dim must be 1, 2 or 3")

    @property
    def tau(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def digest(self) -> str:
        d = asdict(self)
        d.pop("threads")          # results do not depend on the worker count
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Level:
    """Space and operators of one mesh level."""

    level: int
    space: FeSpace
    ops: DiscreteOperators

    @property
    def h(self) -> float:
        return self.space.h


def build_levels(dim: int, levels: Sequence[int], eigen: bool = True,
                 eigen_limit: int = DENSE_EIGEN_LIMIT):
    """Nested levels (``h = 2**-level``) keyed by level index.

    Eigendecompositions are attached when ``eigen`` is true and the level is
    within ``eigen_limit`` degrees of freedom.
    """
    meshes = mesh_hierarchy(dim, max(levels))
    out = {}
    for lev in sorted(set(levels)):
        space = FeSpace(meshes[lev])
        ops = assemble(space)
        if eigen and ops.n_dof <= eigen_limit:
            ops = eigendecompose(ops)
            space._ops = ops
        out[lev] = Level(lev, space, ops)
    return out


def brownian_increments(seed: int, N: int, n_steps: int, path_index: int,
                        tau: float = 1.0) -> np.ndarray:
    """Increments ``Delta beta_n(j) ~ N(0, tau)``, shape ``(N, n_steps)``.

    Row ``n`` is generated by a Philox stream keyed by
    ``(seed, path_index, n)`` and entry ``j`` is its ``j``-th normal, so the
    value attached to ``(seed, path_index, n, j)`` never changes.
    """
    out = np.empty((N, n_steps))
    for n in range(N):
        key = np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(path_index), n])
        rng = np.random.Generator(np.random.Philox(key))
        out[n] = rng.standard_normal(n_steps)
    return out * math.sqrt(tau)


def step_implicit_euler(ops: DiscreteOperators, Y, noise_increment, tau: float):
    """``(M + tau S) Y_{j+1} = M (Y_j + xi_j)``."""
    return ops.solve_mass_shift(tau, ops.M @ (Y + noise_increment))


def step_exp_euler(ops: DiscreteOperators, Y, noise_increment, tau: float):
    """``Y_{j+1} = exp(-tau A_h)(Y_j + xi_j)`` in the eigenbasis."""
    if ops.eigen is None:
        raise CapacityError("exponential Euler needs the eigendecomposition")
    lam, V = ops.eigen
    w = V.T @ (ops.M @ (Y + noise_increment))
    decay = np.exp(-tau * lam)
    return V @ ((decay * w.T).T if np.ndim(w) == 2 else decay * w)


class Propagator:
    """One-step map ``R`` of a scheme, applied to coefficient batches.

    ``step(Y)`` returns ``R Y``. When ``powers`` is set it holds
    ``R**m W`` for ``m = 1..n_steps`` (shape ``(n_steps, n_dof, N)``) and
    trajectories are formed by discrete convolution instead of stepping.
    """

    def __init__(self, ops, tau, scheme, matrix=None, powers=None):
        self.ops, self.tau, self.scheme = ops, tau, scheme
        self.matrix, self.powers = matrix, powers

    def step(self, Y):
        if self.matrix is not None:
            return self.matrix @ Y
        if self.scheme == IMPLICIT_EULER:
            return self.ops.solve_mass_shift(self.tau, self.ops.M @ Y)
        return step_exp_euler(self.ops, Y, 0.0, self.tau)


def _contour_semigroup_powers(ops, tau, n_steps, W):
    # exp(-m tau A) W for all m with one set of shifted solves
    from .dunford import ContourSpec, dunford_apply
    from .spectral import semigroup
    spec = ContourSpec(nodes_per_segment=128, reg_inner=2, reg_outer=2)
    syms = [semigroup(m * tau) for m in range(1, n_steps + 1)]
    out = np.empty((n_steps,) + W.shape)
    res = dunford_apply(ops, syms, spec, W, strict=False)
    for m, r in enumerate(res):
        out[m] = np.real(r)
    return out


def make_propagator(ops: DiscreteOperators, tau: float, scheme: str,
                    n_steps: Optional[int] = None, W: Optional[np.ndarray] = None,
                    dense_limit: int = 4000) -> Propagator:
    """Build the one-step propagator of ``scheme`` on one level.

    Exponential Euler uses the eigendecomposition when present (a dense
    matrix up to ``dense_limit`` dofs). Without eigen data, the powers
    ``exp(-m tau A_h) W`` are computed by contour quadrature; ``n_steps``
    and ``W`` are then required.
    """
    if scheme == IMPLICIT_EULER:
        return Propagator(ops, tau, scheme)
    if ops.eigen is not None:
        lam, V = ops.eigen
        if ops.n_dof <= dense_limit:
            mat = (V * np.exp(-tau * lam)) @ (V.T @ ops.M.toarray())
            return Propagator(ops, tau, scheme, matrix=mat)
        return Propagator(ops, tau, scheme)
    if n_steps is None or W is None:
        raise CapacityError("exponential Euler without eigen data needs the convolution path")
    return Propagator(ops, tau, scheme, powers=_contour_semigroup_powers(ops, tau, n_steps, W))


@dataclass
class TrajectorySet:
    """Coupled snapshots ``paths[level]`` of shape ``(M_paths, n_steps+1, n_dof)``."""

    paths: dict
    times: np.ndarray
    spaces: dict
    config: SimConfig
    schemes: dict
    increment_digests: list = field(default_factory=list)

    @property
    def provenance(self):
        return (self.config.digest(), self.config.master_seed)


def _level_schemes(config, levels):
    # a reference level outside config.levels is always exponential Euler
    ref = config.reference_level
    own = set(config.levels)
    return {lev: (EXP_EULER if lev == ref and lev not in own else config.scheme)
            for lev in levels}


def _path_states(props, Ws, psi, incs_all, n_steps, tau):
    """Trajectories for a batch of paths on every level.

    ``incs_all`` has shape ``(P, N, n_steps)``. Returns level -> array
    ``(P, n_steps + 1, n_dof)``.
    """
    P = incs_all.shape[0]
    out = {}
    for lev, prop in props.items():
        W = Ws[lev]
        n = W.shape[0]
        Y = np.zeros((P, n_steps + 1, n))
        weighted = incs_all * psi[None, None, :]               # (P, N, J)
        if prop.powers is not None:
            U = prop.powers                                    # (J, n, N)
            Uf = U.transpose(0, 2, 1).reshape(-1, n)           # (J*N, n), row m*N + k
            for p in range(P):
                B = np.zeros((n_steps + 1, n_steps, W.shape[1]))
                for j in range(1, n_steps + 1):
                    # Y_j = sum_{m=1..j} U_m dB(j - m)
                    B[j, :j] = weighted[p, :, j - 1::-1].T
                Y[p] = B.reshape(n_steps + 1, -1) @ Uf
        else:
            xi = np.einsum("nk,pkj->jnp", W, weighted)          # (J, n, P)
            y = np.zeros((n, P))
            for j in range(n_steps):
                y = prop.step(y + xi[j])
                Y[:, j + 1, :] = y.T
        out[lev] = Y
    return out


def _increments(config, N, path_indices):
    return np.stack([brownian_increments(config.master_seed, N, config.n_steps, i, config.tau)
                     for i in path_indices])


def _setup(config: SimConfig, noise: NoiseModel, levels: dict):
    all_levels = sorted(set(config.levels) | {config.reference_level})
    missing = [l for l in all_levels if l not in levels]
    if missing:
        raise ConfigurationError(f"levels {missing} are not available")
    schemes = _level_schemes(config, all_levels)
    Ws = {l: noise.projected(levels[l].space) for l in all_levels}
    props = {l: make_propagator(levels[l].ops, config.tau, schemes[l], config.n_steps, Ws[l])
             for l in all_levels}
    psi = noise.psi(config.times[:-1])
    return all_levels, schemes, Ws, props, psi


def iterate_paths(config: SimConfig, noise: NoiseModel, levels: dict, chunk: int = 8):
    """Yield ``(path_indices, states)`` chunk by chunk.

    ``states`` maps level to an array ``(P_chunk, n_steps + 1, n_dof)``.
    Used by streaming estimators that cannot hold every snapshot.
    """
    _, _, Ws, props, psi = _setup(config, noise, levels)
    for start in range(0, config.M_paths, chunk):
        idx = list(range(start, min(start + chunk, config.M_paths)))
        incs = _increments(config, noise.rank, idx)
        yield idx, _path_states(props, Ws, psi, incs, config.n_steps, config.tau)


def simulate(config: SimConfig, noise: NoiseModel, levels: dict) -> TrajectorySet:
    """Coupled trajectories on ``config.levels`` and the reference level.

    The reference level uses exponential Euler unless it is one of
    ``config.levels``; those use ``config.scheme``. All levels consume the same increments. Snapshots at
    every time node are stored; more than ``MAX_STORED_COEFFS`` stored
    coefficients on one level is a configuration error (use
    :func:`iterate_paths` instead).
    """
    all_levels, schemes, Ws, props, psi = _setup(config, noise, levels)
    for l in all_levels:
        size = config.M_paths * (config.n_steps + 1) * levels[l].space.n_dof
        if size > MAX_STORED_COEFFS:
            raise ConfigurationError(f"level {l} would store {size} coefficients "
                                     f"(cap {MAX_STORED_COEFFS})")
    N = noise.rank
    chunks = [list(range(s, min(s + 16, config.M_paths))) for s in range(0, config.M_paths, 16)]

    def work(idx):
        incs = _increments(config, N, idx)
        return incs, _path_states(props, Ws, psi, incs, config.n_steps, config.tau)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(work, chunks))        # map keeps chunk order
    else:
        results = [work(idx) for idx in chunks]
    paths = {l: np.concatenate([r[1][l] for r in results], axis=0) for l in all_levels}
    digests = [hashlib.sha256(np.ascontiguousarray(inc).tobytes()).hexdigest()[:16]
               for r in results for inc in r[0]]
    return TrajectorySet(paths, config.times, {l: levels[l].space for l in all_levels},
                         config, schemes, digests)


def exact_ou_paths(ops: DiscreteOperators, W: np.ndarray, T: float, n_steps: int,
                   M_paths: int, seed: int) -> np.ndarray:
    """Exact-in-law single-level sampler of the semidiscrete solution.

    Uses the transition ``Y_{j+1} = exp(-tau A) Y_j + eta_j`` with the exact
    step covariance, in eigen coordinates
    ``C_kl = sum_n w_nk w_nl (1 - exp(-(lam_k + lam_l) tau)) / (lam_k + lam_l)``.
    Serves as an oracle; returns ``(M_paths, n_steps + 1, n_dof)``.
    """
    if ops.eigen is None:
        raise CapacityError("exact sampler needs the eigendecomposition")
    lam, V = ops.eigen
    tau = T / n_steps
    what = V.T @ (ops.M @ W)                         # (n, N) modal weights
    s = lam[:, None] + lam[None, :]
    C = (what @ what.T) * (-np.expm1(-s * tau) / s)
    d, Q = np.linalg.eigh(C)
    L = Q * np.sqrt(np.clip(d, 0, None))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 991])))
    decay = np.exp(-tau * lam)
    out = np.zeros((M_paths, n_steps + 1, lam.size))
    y = np.zeros((M_paths, lam.size))
    for j in range(n_steps):
        y = y * decay + rng.standard_normal((M_paths, lam.size)) @ L.T
        out[:, j + 1] = y @ V.T
    return out
