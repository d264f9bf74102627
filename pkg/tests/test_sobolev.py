import numpy as np
import pytest
from numpy.polynomial import Polynomial, legendre
from numpy.testing import assert_allclose

from services.sobolev import (
    GramBreakdownError,
    SobolevInnerProduct,
    gauss_rule,
    lebesgue_moments,
    moments_to_recurrence,
    sobolev_orthonormal,
    sobolev_pack,
)

N_MAX = 9


def _legendre_a(n):
    return n / np.sqrt(4 * n * n - 1)


@pytest.fixture
def lebesgue():
    return lebesgue_moments(2 * (N_MAX + 3))


def test_lebesgue_moments():
    assert lebesgue_moments(5) == [2.0, 0.0, 2 / 3, 0.0, 0.4]


def test_recurrence_from_moments(lebesgue):
    alpha, beta = moments_to_recurrence(lebesgue, 6)
    assert_allclose(alpha, 0.0, atol=1e-10)
    assert beta[0] == pytest.approx(2.0)
    assert_allclose(beta[1:], [_legendre_a(n) ** 2 for n in range(1, 6)], rtol=1e-8)
    with pytest.raises(ValueError):
        moments_to_recurrence(lebesgue[:5], 3)


def test_gauss_rule_matches_legendre(lebesgue):
    nodes, weights = gauss_rule(lebesgue, 5)
    expected_nodes, expected_weights = legendre.leggauss(5)
    assert_allclose(nodes, expected_nodes, atol=1e-10)
    assert_allclose(weights, expected_weights, atol=1e-10)


def test_gauss_rule_rejects_signed_moments():
    with pytest.raises(GramBreakdownError):
        gauss_rule([1.0, 0.0, -1.0, 0.0], 2)


def test_inner_product_derivative_term(lebesgue):
    inner = SobolevInnerProduct(*gauss_rule(lebesgue, 4), lam=2.0)
    x = Polynomial([0.0, 1.0])
    assert inner(x, x) == pytest.approx(2 / 3 + 2.0)
    assert inner(Polynomial([1.0]), x) == pytest.approx(0.0, abs=1e-10)


def test_orthonormal_basis(lebesgue):
    inner = SobolevInnerProduct(*gauss_rule(lebesgue, N_MAX + 3), lam=1.0)
    polys = sobolev_orthonormal(inner, 8)
    gram = np.array([[inner(p, q) for q in polys] for p in polys])
    assert_allclose(gram, np.eye(9), atol=1e-10)
    assert [p.degree() for p in polys] == list(range(9))


def test_breakdown_for_negative_weight(lebesgue):
    inner = SobolevInnerProduct(*gauss_rule(lebesgue, 6), lam=-100.0)
    with pytest.raises(GramBreakdownError):
        sobolev_orthonormal(inner, 3)


def test_legendre_limit(lebesgue):
    pack = sobolev_pack(lebesgue, 0.0, n_max=N_MAX)
    c = pack.coefficients
    for n in range(N_MAX + 1):
        assert c[n, 0] == pytest.approx(_legendre_a(n + 1) ** 2 + _legendre_a(n) ** 2, abs=1e-5)
        if n >= 1:
            assert c[n, 1] == pytest.approx(0.0, abs=1e-5)
        if n >= 2:
            assert c[n, 2] == pytest.approx(_legendre_a(n) * _legendre_a(n - 1), abs=1e-5)


def test_pack_report_gates(lebesgue):
    pack = sobolev_pack(lebesgue, 1.0, n_max=N_MAX)
    report = pack.report
    assert report['five_term_residual'] < 1e-9
    assert report['symmetry_error'] < 1e-9
    assert report['block_symmetry_error'] < 1e-12
    assert report['packing_error'] < 1e-9
    assert report['vector_orthogonality_error'] < 1e-9
    assert len(pack.A) == len(pack.B) == len(pack.C) == (N_MAX - 1) // 2 + 1
    assert pack.family.dim == 2
    assert_allclose(pack.C[1], pack.A[0].T)


def test_pack_needs_enough_moments():
    with pytest.raises(ValueError):
        sobolev_pack(lebesgue_moments(10), 1.0, n_max=N_MAX)
