"""
Acceptance criteria 1-10.

Each experiment runs once per session with its standard configuration; the
tests recompute the acceptance quantities from the emitted tables, with the
windows written out here rather than taken from the runners.
"""
import math
import time
from collections import defaultdict

import numpy as np
import pytest

from smrlab.config import default_config
from smrlab.experiments import run
from smrlab.fem import FeSpace, assemble, lq_norm
from smrlab.mesh import build_box_mesh
from smrlab.metrics import fit_rate
from smrlab.report import write_outputs
from smrlab.spectral import eigendecompose, operator_qnorm, semigroup, symbol_map

pytestmark = pytest.mark.slow

CATALOG = ("hinf_test(0.5)", "hinf_test(1)", "hinf_test(0.25)")


def _timed(cfg):
    t0 = time.perf_counter()
    res = run(cfg)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def converge_1d():
    return _timed(default_config("converge"))


@pytest.fixture(scope="module")
def converge_2d():
    return _timed(default_config("converge", dim=2, levels=(2, 3, 4, 5), reference_level=7,
                                 M_paths=32))


@pytest.fixture(scope="module")
def uniformity():
    return _timed(default_config("uniformity"))


@pytest.fixture(scope="module")
def calculus():
    return run(default_config("calculus_check"))


@pytest.fixture(scope="module")
def smr():
    return run(default_config("smr"))


@pytest.fixture(scope="module")
def oracle():
    return run(default_config("oracle"))


def _errors(res, kind):
    return [(h, e) for _, h, e, _, k in res.table("rates.csv").rows if k == kind]


def _ratio(vals):
    return max(vals) / min(vals)


def _norms(res):
    out = defaultdict(list)
    for level, name, q, value, frac in res.table("uniformity.csv").rows:
        out[(name, float(q))].append((level, value, frac))
    return out


# ---------------------------------------------------------------------------
# 1-2: strong convergence rates


def test_criterion_1_conv1_rate_1d(converge_1d):
    res, secs = converge_1d
    pts = _errors(res, "bochner")
    assert [round(h, 12) for h, _ in pts] == [2.0 ** -l for l in (3, 4, 5, 6)]
    slope = fit_rate(pts).slope
    assert secs < 300
    assert 0.8 <= slope <= 1.2, f"conv1 slope {slope:.4f} outside [0.8, 1.2]"


def test_criterion_1_conv1_rate_2d(converge_2d):
    res, secs = converge_2d
    pts = _errors(res, "bochner")
    assert len(pts) == 4
    slope = fit_rate(pts).slope
    assert secs < 1200
    assert 0.75 <= slope <= 1.25, f"2D conv1 slope {slope:.4f} outside [0.75, 1.25]"


def test_criterion_2_conv2_alpha_one_over_p(converge_1d):
    res, _ = converge_1d
    p = res.config["p"]
    slope = fit_rate(_errors(res, f"sup_neg_frac({1 / p:g})"), log_correction=1 - 1 / p).slope
    assert 0.75 <= slope <= 1.25, f"corrected slope {slope:.4f} outside [0.75, 1.25]"


def test_criterion_2_conv2_alpha_zero(converge_1d):
    res, _ = converge_1d
    p = res.config["p"]
    slope = fit_rate(_errors(res, "sup_neg_frac(0)"), log_correction=1 - 1 / p).slope
    assert 0.35 <= slope <= 0.65, f"corrected slope {slope:.4f} outside [0.35, 0.65]"


# ---------------------------------------------------------------------------
# 3-5: h-uniform operator bounds


def test_criterion_3_hinf_uniformity(uniformity):
    res, secs = uniformity
    norms = _norms(res)
    assert secs < 600
    for name in CATALOG:
        for q in (2.0, 4.0):
            rows = norms[(name, q)]
            assert [r[0] for r in rows] == [3, 4, 5, 6, 7]
            assert _ratio([r[1] for r in rows]) <= 2.0
            assert min(r[2] for r in rows) >= 0.5


def test_criterion_4_bip_uniformity(uniformity):
    res, _ = uniformity
    norms = _norms(res)
    for t in (1, 2, 4):
        rows4 = norms[(f"bip({t})", 4.0)]
        assert len(rows4) == 5
        assert _ratio([r[1] for r in rows4]) <= 2.0
        assert max(r[1] for r in rows4) <= 10 * math.exp(math.pi / 4 * t)
        for _, v, _ in norms[(f"bip({t})", 2.0)]:
            assert abs(v - 1.0) <= 1e-10


def test_criterion_5_resolvent_uniformity(uniformity):
    res, _ = uniformity
    rows = _norms(res)[("resolvent_sup", 4.0)]
    assert [r[0] for r in rows] == [3, 4, 5, 6, 7]
    assert _ratio([r[1] for r in rows]) <= 2.0


# ---------------------------------------------------------------------------
# 6: consistency slopes


def _consistency(res):
    out = defaultdict(list)
    for level, h, name, value in res.table("consistency.csv").rows:
        out[name].append((h, value))
    return out


def test_criterion_6_fractional_powers(calculus):
    series = _consistency(calculus)
    for a in (0.25, 0.5, 1.0):
        slope = fit_rate(series[f"power({-a:g})"]).slope
        tol = max(0.2 * 2 * a, 0.2)
        assert abs(slope - 2 * a) <= tol, f"alpha={a}: slope {slope:.4f}"


def test_criterion_6_resolvents(calculus):
    series = _consistency(calculus)
    names = sorted(k for k in series if k.startswith("resolvent("))
    assert len(names) == 2
    for name in names:
        slope = fit_rate(series[name]).slope
        assert abs(slope - 2.0) <= 0.3, f"{name}: slope {slope:.4f}"


def test_criterion_6_ritz(calculus):
    series = _consistency(calculus)
    s2 = fit_rate(series["ritz_L2(A^-1)"]).slope
    s4 = fit_rate(series["ritz_L4(A^-1/2)"]).slope
    assert abs(s2 - 2.0) <= 0.15
    assert abs(s4 - 1.0) <= 0.2


# ---------------------------------------------------------------------------
# 7: maximal regularity


def test_criterion_7_smr_uniformity(smr):
    groups = defaultdict(list)
    for level, tau, lhs, rhs, ratio, stderr, name in smr.table("smr.csv").rows:
        groups[name].append((level, tau, ratio))
    for name in ("smr_sup", "smr_halfpow"):
        assert sorted(r[0] for r in groups[name]) == [3, 4, 5]
        assert _ratio([r[2] for r in groups[name]]) <= 2.0
    taus = {1 / 64, 1 / 128, 1 / 256}
    for name in ("euler_smr", "euler_max(alpha=0.125)"):
        rows = groups[name]
        assert {r[1] for r in rows} == taus and {r[0] for r in rows} == {3, 4, 5}
        assert _ratio([r[2] for r in rows]) <= 2.0
    det = groups["deterministic_mr"]
    assert sorted(r[0] for r in det) == [3, 4, 5, 6]
    assert _ratio([r[2] for r in det]) <= 2.0


# ---------------------------------------------------------------------------
# 8: contour quadrature


def test_criterion_8_dunford_oracle(calculus):
    rows = calculus.table("dunford.csv").rows
    top = [r for r in rows if r[2] == 64]
    assert {r[1] for r in top} == set(CATALOG)
    assert max(r[0] for r in top) <= 6
    assert {r[3] for r in top} == {"sector_boundary", "truncated_gamma123"}
    assert max(r[4] for r in top) <= 1e-6


def test_criterion_8_contour_agreement(calculus):
    t = next(t for t in calculus.tables if t.title.startswith("Sector versus truncated"))
    top = [r for r in t.rows if r[2] == 64]
    assert {r[1] for r in top} == set(CATALOG)
    assert max(r[3] for r in top) <= 1e-6


def test_criterion_8_scalar_cauchy(calculus):
    t = next(t for t in calculus.tables if t.title.startswith("Scalar Cauchy test"))
    top = [r for r in t.rows if r[1] == 64 and r[2] == "truncated_gamma123"]
    assert len(top) >= 3
    assert max(r[3] for r in top) <= 1e-8


# ---------------------------------------------------------------------------
# 9-10: oracles


def _oracle_row(res, prefix):
    return next(r for r in res.table("oracle.csv").rows if r[0].startswith(prefix))


def test_criterion_9_ou_variance(oracle):
    assert oracle.config["M_paths"] == 10000
    assert _oracle_row(oracle, "OU terminal variance")[1] <= 3.0


def test_criterion_9_rng_determinism(oracle):
    assert _oracle_row(oracle, "RNG determinism")[3] == "pass"


def test_criterion_9_reports_byte_identical(smr, tmp_path):
    again = run(default_config("smr"))
    a = write_outputs(smr, tmp_path / "a")
    b = write_outputs(again, tmp_path / "b")
    assert sorted(a) == sorted(b) and "report.md" in a and "smr.csv" in a
    for name in a:
        assert a[name] == b[name], name


def test_criterion_10_bruteforce_qnorm(oracle):
    space = FeSpace(build_box_mesh(1, 4))
    ops = eigendecompose(assemble(space))
    B = symbol_map(ops, semigroup(0.01))
    est = operator_qnorm(B, space, 4.0, restarts=8)
    g = np.linspace(-1.0, 1.0, 41)
    C = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3).T
    C = C[:, np.abs(C).sum(axis=0) > 0]
    brute = float(np.max(lq_norm(B(C), 4.0, space) / lq_norm(C, 4.0, space)))
    assert abs(est.value - brute) <= 0.02 * brute
    assert _oracle_row(oracle, "3-dof q=4 semigroup norm")[1] <= 0.02
