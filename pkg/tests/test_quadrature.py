import math

import numpy as np
import pytest

from smrlab.quadrature import gauss_legendre, simplex_rule


def _monomial_exact(alpha):
    # int over the unit simplex of prod x_i^a_i = prod a_i! / (d + sum a)!
    d = len(alpha)
    return math.prod(math.factorial(a) for a in alpha) / math.factorial(d + sum(alpha))


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", [1, 2, 4, 7, 10])
def test_simplex_rule_exact_for_monomials(dim, degree):
    bary, w = simplex_rule(dim, degree)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(bary >= -1e-15) and np.allclose(bary.sum(axis=1), 1.0)
    pts = bary[:, 1:]                       # Cartesian coordinates on the reference simplex
    vol = 1.0 / math.factorial(dim)
    rng = np.random.default_rng(degree)
    for _ in range(5):
        alpha = rng.multinomial(degree, np.ones(dim + 1) / (dim + 1))[:dim]
        approx = vol * np.sum(w * np.prod(pts ** alpha, axis=1))
        assert approx == pytest.approx(_monomial_exact(tuple(alpha)), rel=1e-12)


def test_gauss_legendre():
    x, w = gauss_legendre(5)
    assert w.sum() == pytest.approx(2.0)
    assert np.sum(w * x ** 8) == pytest.approx(2 / 9)
