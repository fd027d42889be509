import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from smrlab.errors import ConfigurationError, DomainError, UsageError
from smrlab.fem import FeSpace, assemble, lq_norm
from smrlab.fields import sine
from smrlab.metrics import (bochner_norm, deterministic_mr_ratio, discrete_smr_euler, fit_rate,
                            interpolation_norm, pathwise_sup_norm, smr_ratio,
                            square_function_norm, trapezoid_weights)
from smrlab.spde import IMPLICIT_EULER, NoiseModel, SimConfig, build_levels, simulate
from smrlab.spectral import apply_symbol, power

NOISE = NoiseModel((sine(1, 1), sine(1, 2), sine(1, 3)))


@pytest.fixture(scope="module")
def lv():
    return build_levels(1, [3, 4])


@pytest.fixture(scope="module")
def ops(lv):
    return lv[4].ops


def _const_path(c, J, P=1):
    return np.broadcast_to(c, (P, J, c.size)).copy()


def test_trapezoid_weights():
    w = trapezoid_weights([0.0, 0.5, 1.5])
    np.testing.assert_allclose(w, [0.25, 0.75, 0.5])


def test_bochner_zero_and_constant(ops):
    t = np.linspace(0, 2.0, 11)
    z = np.zeros((3, 11, ops.n_dof))
    assert bochner_norm(z, t, 4, 4, ops.space).value == 0.0
    c = ops.eigen[1][:, 0]
    est = bochner_norm(_const_path(c, 11), t, 4.0, 3.0, ops.space)
    assert est.value == pytest.approx(lq_norm(c, 3.0, ops.space) * 2.0 ** 0.25, rel=1e-12)
    assert est.mc_stderr == 0.0 and est.M_paths == 1


def test_bochner_l2_closed_form(ops):
    # e(t) = t v with ||v||_2 = 1: int_0^1 t^2 dt = 1/3 ; trapezoid on 2001 nodes
    v = ops.eigen[1][:, 2]
    t = np.linspace(0, 1, 2001)
    diff = (t[:, None] * v[None, :])[None]
    est = bochner_norm(diff, t, 2, 2, ops.space)
    # trapezoid error for t^2 is h^2/6 exactly
    dt = t[1]
    assert est.value == pytest.approx(math.sqrt(1 / 3 + dt ** 2 / 6), rel=1e-8)


def test_bochner_shape_mismatch(ops, lv):
    with pytest.raises(UsageError):
        bochner_norm(np.zeros((1, 3, lv[3].space.n_dof)), [0, 1, 2], 4, 4, ops.space)
    with pytest.raises(DomainError):
        bochner_norm(np.zeros((1, 3, ops.n_dof)), [0, 1, 2], 0.5, 4, ops.space)


def test_bochner_mc_consistency(lv):
    cfg = SimConfig(T=0.5, n_steps=64, levels=(3,), reference_level=3, M_paths=256)
    ts = simulate(cfg, NOISE, lv)
    sp = lv[3].space
    a = bochner_norm(ts.paths[3][:128], ts.times, 4, 4, sp)
    b = bochner_norm(ts.paths[3], ts.times, 4, 4, sp)
    assert abs(a.value - b.value) <= 2 * math.hypot(a.mc_stderr, b.mc_stderr)
    assert b.mc_stderr < a.mc_stderr


def test_sup_norm_variants(ops, rng):
    X = rng.standard_normal((3, 7, ops.n_dof))
    a = pathwise_sup_norm(X, 4, ("lq", 4), ops.space)
    b = pathwise_sup_norm(X, 4, ("neg_frac", 0.0, 4), ops.space, ops)
    assert a.value == pytest.approx(b.value, rel=1e-14)
    norms = np.array([[lq_norm(X[p, j], 4, ops.space) for j in range(7)] for p in range(3)])
    assert a.value == pytest.approx(np.mean(norms.max(axis=1) ** 4) ** 0.25, rel=1e-12)


def test_sup_norm_single_path_known_max(ops):
    v = ops.eigen[1][:, 0]
    s = np.array([0.1, 0.9, -1.7, 0.4])
    X = (s[:, None] * v[None, :])[None]
    est = pathwise_sup_norm(X, 3, ("lq", 2), ops.space)
    assert est.value == pytest.approx(1.7, rel=1e-12)


def test_neg_frac_eigenvector(ops):
    lam, V = ops.eigen
    k = 3
    est = pathwise_sup_norm(_const_path(V[:, k], 5), 4, ("neg_frac", 0.5, 4), ops.space, ops)
    assert est.value == pytest.approx(lam[k] ** -0.5 * lq_norm(V[:, k], 4, ops.space), rel=1e-10)


def test_neg_frac_errors(ops, lv):
    X = np.zeros((1, 2, ops.n_dof))
    with pytest.raises(DomainError):
        pathwise_sup_norm(X, 4, ("neg_frac", 1.5, 4), ops.space, ops)
    with pytest.raises(DomainError):
        pathwise_sup_norm(X, 4, ("neg_frac", -0.1, 4), ops.space, ops)
    with pytest.raises(UsageError):
        pathwise_sup_norm(X, 4, ("neg_frac", 0.5, 4), ops.space, lv[3].ops)


def test_interpolation_zero_and_domain(ops):
    assert interpolation_norm(np.zeros(ops.n_dof), 0.25, 4, 4, ops) == 0.0
    for bad in (0.0, 1.0):
        with pytest.raises(DomainError):
            interpolation_norm(np.ones(ops.n_dof), bad, 4, 4, ops)


@pytest.mark.parametrize("k,theta", [(0, 0.25), (5, 0.25), (14, 0.4)])
def test_interpolation_eigenvector_oracle(ops, k, theta):
    lam, V = ops.eigen
    p = 4.0
    L = lam[k]
    f = lambda s: (math.exp((1 - theta) * s) * L * math.exp(-math.exp(s) * L)) ** p
    integral = quad(f, math.log(1e-10), 0.0, limit=400, epsabs=0, epsrel=1e-12)[0]
    expected = 1.0 + integral ** (1 / p)            # ||v_k||_2 = 1
    assert interpolation_norm(V[:, k], theta, p, 2.0, ops) == pytest.approx(expected, rel=1e-6)


def test_interpolation_homogeneous_and_batched(ops, rng):
    v = rng.standard_normal(ops.n_dof)
    a = interpolation_norm(v, 0.25, 4, 4, ops)
    assert interpolation_norm(2 * v, 0.25, 4, 4, ops) == pytest.approx(2 * a, rel=1e-13)
    B = np.column_stack([v, -3 * v])
    np.testing.assert_allclose(interpolation_norm(B, 0.25, 4, 4, ops), [a, 3 * a], rtol=1e-12)


def test_square_function_single_profile(ops):
    w = ops.eigen[1][:, 1]
    assert square_function_norm(w, 4, ops.space) == pytest.approx(lq_norm(w, 4, ops.space),
                                                                  rel=1e-12)
    W = np.column_stack([w, w])
    assert square_function_norm(W, 4, ops.space) == pytest.approx(
        math.sqrt(2) * lq_norm(w, 4, ops.space), rel=1e-12)


def _sim(lv, noise, **kw):
    base = dict(T=0.5, n_steps=64, levels=(3,), reference_level=3, M_paths=32)
    base.update(kw)
    return simulate(SimConfig(**base), noise, lv)


def test_smr_zero_noise_undefined(lv):
    zero = NOISE.scaled(0.0)
    ts = _sim(lv, zero)
    rep = smr_ratio(ts.paths[3], ts.times, zero, 4, 4, lv[3].ops)
    assert rep.undefined and math.isnan(rep.ratio_sup) and math.isnan(rep.ratio_halfpow)
    assert rep.lhs_sup.value == 0.0


def test_smr_needs_p_above_two(lv):
    ts = _sim(lv, NOISE, M_paths=2)
    with pytest.raises(DomainError):
        smr_ratio(ts.paths[3], ts.times, NOISE, 2.0, 4, lv[3].ops)


def test_smr_scale_invariance(lv):
    a = _sim(lv, NOISE)
    b = _sim(lv, NOISE.scaled(7.0))
    ra = smr_ratio(a.paths[3], a.times, NOISE, 4, 4, lv[3].ops)
    rb = smr_ratio(b.paths[3], b.times, NOISE.scaled(7.0), 4, 4, lv[3].ops)
    assert rb.ratio_sup == pytest.approx(ra.ratio_sup, rel=1e-10)
    assert rb.ratio_halfpow == pytest.approx(ra.ratio_halfpow, rel=1e-10)


def test_smr_halfpow_ou_moment(lv):
    # one eigenmode: y = Y_t v_1 with Y an exponential-Euler OU chain, q = 2, p = 4:
    # lhs^4 = lambda^2 int 3 sigma(t)^4 dt
    ops = lv[3].ops
    lam, V = ops.eigen
    from smrlab.fields import Field
    g = sine(1, 1)
    noise = NoiseModel((g,))
    ts = _sim(lv, noise, M_paths=4000, n_steps=128, T=0.5)
    rep = smr_ratio(ts.paths[3], ts.times, noise, 4.0, 2.0, ops)
    w = (V.T @ (ops.M @ noise.projected(ops.space)))[:, 0]
    # P_h sin(pi x) is not exactly v_1; keep the dominant mode, others are < 1e-3 relative
    assert np.abs(w[1:]).max() < 1e-3 * abs(w[0])
    tau, L = ts.config.tau, lam[0]
    j = np.arange(ts.times.size)
    var = w[0] ** 2 * tau * np.array([np.sum(np.exp(-2 * L * tau * np.arange(1, k + 1)))
                                      for k in j])
    target = (trapezoid_weights(ts.times) @ (3 * L ** 2 * var ** 2)) ** 0.25
    assert abs(rep.lhs_halfpow.value - target) <= 3 * rep.lhs_halfpow.mc_stderr


def test_euler_smr(lv):
    ts = _sim(lv, NOISE, scheme=IMPLICIT_EULER, levels=(3,), reference_level=3)
    rep = discrete_smr_euler(ts, NOISE, 4, 4, ts.config.tau, 3)
    assert rep.alpha == pytest.approx(0.125)
    assert rep.ratio > 0 and rep.max_ratio > 0
    b = _sim(lv, NOISE.scaled(7.0), scheme=IMPLICIT_EULER)
    rb = discrete_smr_euler(b, NOISE.scaled(7.0), 4, 4, b.config.tau, 3)
    assert rb.ratio == pytest.approx(rep.ratio, rel=1e-10)
    assert rb.max_ratio == pytest.approx(rep.max_ratio, rel=1e-10)
    zero = NOISE.scaled(0.0)
    z = _sim(lv, zero, scheme=IMPLICIT_EULER)
    rz = discrete_smr_euler(z, zero, 4, 4, z.config.tau, 3)
    assert rz.lhs.value == 0.0 and rz.undefined


def test_euler_smr_errors(lv):
    ts = _sim(lv, NOISE, M_paths=2)
    with pytest.raises(UsageError):
        discrete_smr_euler(ts, NOISE, 4, 4, ts.config.tau, 3)
    ts = _sim(lv, NOISE, M_paths=2, scheme=IMPLICIT_EULER)
    with pytest.raises(DomainError):
        discrete_smr_euler(ts, NOISE, 4, 4, ts.config.tau, 3, alpha=0.3)


def test_deterministic_mr_zero(ops):
    rep = deterministic_mr_ratio(ops, [0.0], np.zeros((ops.n_dof, 1)), 1.0, 4, 4)
    assert rep.lhs == 0.0 and math.isnan(rep.ratio)


def test_deterministic_mr_single_mode(ops):
    lam, V = ops.eigen
    k, T, p, q = 2, 0.7, 4.0, 4.0
    L = lam[k]
    rep = deterministic_mr_ratio(ops, [0.0], V[:, k:k + 1], T, p, q)
    integral = quad(lambda t: (-math.expm1(-L * t)) ** p, 0, T, epsabs=0, epsrel=1e-13,
                    points=[1 / L], limit=200)[0]
    vq = lq_norm(V[:, k], q, ops.space)
    assert rep.lhs == pytest.approx(integral ** (1 / p) * vq, rel=1e-8)
    assert rep.rhs == pytest.approx(T ** (1 / p) * vq, rel=1e-13)


def test_deterministic_mr_two_pieces(ops):
    # piece 2 switches the forcing off: A u(t) = (1 - e^{-L t1}) e^{-L (t - t1)} v
    lam, V = ops.eigen
    L, t1, T = lam[0], 0.3, 1.0
    F = np.column_stack([V[:, 0], np.zeros(ops.n_dof)])
    rep = deterministic_mr_ratio(ops, [0.0, t1], F, T, 2.0, 2.0)
    a = quad(lambda t: (-math.expm1(-L * t)) ** 2, 0, t1, epsrel=1e-13)[0]
    b = (-math.expm1(-L * t1)) ** 2 * (-math.expm1(-2 * L * (T - t1))) / (2 * L)
    assert rep.lhs == pytest.approx(math.sqrt(a + b), rel=1e-8)
    with pytest.raises(ConfigurationError):
        deterministic_mr_ratio(ops, [0.0], F, T, 2.0, 2.0)


HS = [2.0 ** -k for k in range(3, 7)]


def test_fit_rate_exact():
    f = fit_rate([(h, h ** 2) for h in HS])
    assert abs(f.slope - 2.0) <= 1e-12 and f.max_residual <= 1e-12


def test_fit_rate_log_correction():
    pts = [(h, h * (1 + abs(math.log(h)) ** 0.75)) for h in HS]
    assert abs(fit_rate(pts, 0.75).slope - 1.0) <= 1e-12
    assert fit_rate(pts).slope < 1.0
    assert fit_rate(pts, 0).slope == fit_rate(pts).slope


def test_fit_rate_errors():
    with pytest.raises(ConfigurationError):
        fit_rate([(0.5, 1.0), (0.25, 0.5)])
    with pytest.raises(DomainError):
        fit_rate([(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)])
    with pytest.raises(DomainError):
        fit_rate([(0.5, 1.0), (-0.25, 0.5), (0.125, 0.1)])
    with pytest.raises(ConfigurationError):
        fit_rate([(0.5, 1.0), (0.5, 0.5), (0.125, 0.1)])


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(0.0, 1.0))
def test_fit_rate_recovers_power_laws(slope, logc, kappa):
    pts = [(h, math.exp(logc) * h ** slope * (1 + abs(math.log(h)) ** kappa)) for h in HS]
    f = fit_rate(pts, kappa if kappa > 0 else None)
    if kappa > 0:
        assert f.slope == pytest.approx(slope, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(1.5, 8.0), st.floats(1.5, 8.0))
def test_bochner_homogeneity(scale, p, q):
    ops = _OPS()
    X = np.sin(np.arange(2 * 5 * ops.n_dof).reshape(2, 5, ops.n_dof))
    t = np.linspace(0, 1, 5)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = bochner_norm(X, t, p, q, ops.space).value
        b = bochner_norm(scale * X, t, p, q, ops.space).value
    assert b == pytest.approx(scale * a, rel=1e-9)


_CACHE = {}


def _OPS():
    if "o" not in _CACHE:
        _CACHE["o"] = build_levels(1, [3])[3].ops
    return _CACHE["o"]
