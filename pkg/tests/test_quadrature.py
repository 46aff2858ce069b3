from math import factorial

import numpy as np
import pytest

from ifesolve.quadrature import QuadratureSet, simplex_rule


def _monomial_exact(exps):
    # integral of prod x_i^a_i over the reference simplex
    return np.prod([factorial(a) for a in exps]) / factorial(sum(exps) + len(exps))


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("order", [1, 2, 4, 6])
def test_rule_exact_on_monomials(dim, order):
    rule = simplex_rule(dim, order)
    x = rule.bary[:, 1:]
    vol = 1.0 / factorial(dim)
    assert np.all(rule.weights > 0)
    for exps in np.ndindex(*(order + 1,) * dim):
        if sum(exps) > order:
            continue
        got = vol * rule.weights @ np.prod(x ** np.array(exps), axis=1)
        assert got == pytest.approx(_monomial_exact(exps), rel=1e-12, abs=1e-15)


def test_quadrature_set_from_simplices():
    tri = [np.array([[0, 0], [2, 0], [0, 1]], float), np.array([[2, 0], [2, 1], [0, 1]], float)]
    q = QuadratureSet.from_simplices(tri, 2, 2)
    assert q.integrate(np.ones(len(q.weights))) == pytest.approx(2.0)
    assert q.integrate(q.points[:, 0]) == pytest.approx(2.0)
