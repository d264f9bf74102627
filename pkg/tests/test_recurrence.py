import numpy as np
import pytest
from numpy.testing import assert_allclose

from services.polymat import MatrixPolynomial, VerificationError
from services.recurrence import (
    ConvergenceError,
    FamilyValidationError,
    InitialTriple,
    RecurrenceFamily,
    generate_B1,
    generate_G,
    generate_G1,
    generate_V,
    iterate_values,
    leading_coefficients,
    liouville_residual,
    remark_leading_products,
    transfer_matrix,
    transfer_state,
    transform_initial_conditions,
    values_at,
)


class TestValidation:

    def test_upper_triangular_A_is_rejected(self):
        family = RecurrenceFamily.constant_family([[1, 1], [0, 1]], np.zeros((2, 2)), np.eye(2), name='bad')
        with pytest.raises(FamilyValidationError, match='A_0 of bad is not lower triangular'):
            family.validate()

    def test_lower_triangular_C_is_rejected(self):
        family = RecurrenceFamily.constant_family(np.eye(2), np.zeros((2, 2)), [[1, 0], [1, 1]], name='bad')
        with pytest.raises(FamilyValidationError, match='C_0'):
            family.validate()

    def test_singular_C_is_rejected_from_m_one(self):
        table = [(np.eye(2), np.zeros((2, 2)), np.zeros((2, 2))),
                 (np.eye(2), np.zeros((2, 2)), np.diag([1.0, 0.0]))]
        family = RecurrenceFamily.tabulated_family(table, name='tab')
        with pytest.raises(FamilyValidationError, match='C_1 is singular'):
            family.validate()

    def test_nevai_family_validates(self, nevai):
        assert nevai.validate(m_check=200) is nevai

    def test_non_monotone_family_is_rejected(self):
        def coefficients(m):
            return 1.0, (1.0 / (m + 1) if m % 2 == 0 else 0.9), 1.0

        family = RecurrenceFamily(1, coefficients, limits=(1.0, 0.0, 1.0), name='wobbly')
        with pytest.raises(FamilyValidationError, match='monotonically at m=3'):
            family.validate()

    def test_tabulated_family_index_out_of_range(self):
        family = RecurrenceFamily.tabulated_family([(1.0, 0.0, 1.0)])
        with pytest.raises(FamilyValidationError):
            family.coefficients(1)
        with pytest.raises(FamilyValidationError):
            family.coefficients(-1)


def test_chebyshev_polynomials(chebyshev):
    V = generate_V(chebyshev, 4)
    assert [p.degree for p in V] == [0, 1, 2, 3, 4]
    assert_allclose(V[2].entry(0, 0).coef, [-1, 0, 1])
    assert_allclose(V[3].entry(0, 0).coef, [0, -2, 0, 1])
    G = generate_G(chebyshev, 4)
    for left, right in zip(V, G):
        assert left.allclose(right, 1e-14)
    B1 = generate_B1(chebyshev, 3)
    assert_allclose(B1[0].coeffs, [[[1.0]]])
    assert_allclose(B1[2].entry(0, 0).coef, [-1, 0, 1])
    assert_allclose(generate_G1(chebyshev, 2)[1].entry(0, 0).coef, [0, 1])


@pytest.mark.parametrize("theta", [0.3, 1.0, np.pi / 2, 2.2, 3.0])
def test_half_coefficients_give_chebyshev_u(theta):
    family = RecurrenceFamily.constant_family(0.5, 0.0, 0.5, name='chebyshev_u')
    x = np.cos(theta)
    for kind, polys in (('V', generate_V(family, 30)), ('G', generate_G(family, 30))):
        for m, p in enumerate(polys):
            expected = np.sin((m + 1) * theta) / np.sin(theta)
            assert p(x)[0, 0] == pytest.approx(expected, abs=1e-11 * (m + 1)), (kind, m)
            assert p.leading[0, 0] == pytest.approx(2.0 ** m)


def test_values_match_polynomials(example1, rng):
    z = rng.normal(size=4) + 1j * rng.normal(size=4)
    for kind, generator in (('V', generate_V), ('B1', generate_B1), ('G', generate_G), ('G1', generate_G1)):
        polys = generator(example1, 8)
        values = values_at(example1, z, 8, kind, order=2)
        assert values.shape == (3, 9, 4, 2, 2)
        for m, p in enumerate(polys):
            assert_allclose(values[0, m], p(z), rtol=1e-10, atol=1e-10)
            assert_allclose(values[1, m], p.derivative(1)(z), rtol=1e-10, atol=1e-10)
            assert_allclose(values[2, m], p.derivative(2)(z), rtol=1e-10, atol=1e-10)


def test_rescaled_iteration_keeps_ratios(chebyshev):
    steps = list(iterate_values(chebyshev, 3.0, 'V', m_max=400))
    last = steps[-1]
    assert last.log_scale > 0
    ratio = last.previous[0] @ np.linalg.inv(last.current[0])
    assert ratio[0, 0] == pytest.approx((3 - np.sqrt(5)) / 2, rel=1e-12)


def test_unscaled_values_overflow(chebyshev):
    with pytest.raises(ConvergenceError):
        values_at(chebyshev, 1e10, 60)


def test_transfer_state(example1):
    z = 0.7 + 0.2j
    V = values_at(example1, z, 6, 'V')[0]
    B1 = values_at(example1, z, 6, 'B1')[0]
    for m in range(1, 6):
        state = transfer_state(example1, z, m)
        assert_allclose(state[:2, :2], V[m + 1], atol=1e-10)
        assert_allclose(state[:2, 2:], B1[m], atol=1e-10)
        assert_allclose(state[2:, :2], V[m], atol=1e-10)
        assert_allclose(state[2:, 2:], B1[m - 1], atol=1e-10)


def test_transfer_eigenvalues(example1):
    z = 2.0
    eigenvalues = np.sort_complex(np.linalg.eigvals(transfer_matrix(example1, z)))
    a = 1 + z
    expected = np.sort_complex(np.array([
        (a + np.sqrt(a ** 2 - 4 + 0j)) / 2, (a - np.sqrt(a ** 2 - 4 + 0j)) / 2,
        (a + np.sqrt(a ** 2 + 4 + 0j)) / 2, (a - np.sqrt(a ** 2 + 4 + 0j)) / 2,
    ]))
    assert_allclose(eigenvalues, expected, atol=1e-10)


def test_transfer_needs_constant_family(nevai):
    with pytest.raises(FamilyValidationError):
        transfer_matrix(nevai, 1.0)


def test_initial_condition_transform(example1):
    triple = InitialTriple(P=np.array([[2.0, 0.0], [1.0, 1.0]]), M=np.eye(2), Q=np.array([[1.0, 0.5], [0.0, 1.0]]))
    V_hat, B_hat = transform_initial_conditions(example1, triple, 6)
    assert len(V_hat) == 7
    assert_allclose(V_hat[0].coeffs[0], triple.P)
    assert V_hat[1].allclose(MatrixPolynomial.linear(triple.M, triple.Q), 1e-14)
    assert B_hat[0].is_zero()
    assert_allclose(B_hat[1].coeffs[0], triple.Q)


def test_initial_condition_transform_rejects_singular_P(example1):
    triple = InitialTriple(P=np.zeros((2, 2)), M=np.eye(2), Q=np.eye(2))
    with pytest.raises(FamilyValidationError):
        transform_initial_conditions(example1, triple, 3)


def test_leading_coefficient_products(example1, three_by_three):
    for family in (example1, three_by_three):
        report = remark_leading_products(family, 8)
        assert report.alpha_error < 1e-12
        assert report.beta_error < 1e-12
    assert len(leading_coefficients(generate_V(example1, 3))) == 4


def test_liouville_identity(chebyshev, example1, rng):
    points = 5 * np.sqrt(rng.random(10)) * np.exp(2j * np.pi * rng.random(10))
    for family in (chebyshev, example1):
        for m in range(16):
            for z in points:
                assert liouville_residual(family, m, z) < 1e-10


def test_liouville_with_general_G0(example1):
    family = RecurrenceFamily.constant_family(example1.A(0), example1.B(0), example1.C(0),
                                              G0=[[2.0, 0.0], [1.0, 1.0]])
    assert max(liouville_residual(family, m, 1.3 - 0.4j) for m in range(10)) < 1e-10
