import numpy as np
import pytest
from numpy.polynomial import Polynomial
from numpy.testing import assert_allclose

from services.dirac import (
    DeltaSpec,
    PerturbedFamily,
    RegularityError,
    cd_residual,
    confluent_residual,
    delta_on_P0,
    delta_values,
    kernel_at_zero,
    kernel_eval,
    lift,
    moment_invariance,
    perturbed_biorthogonality,
    perturbed_G,
    perturbed_recurrence,
    perturbed_V,
    phi_closed_form,
    phi_from_leading,
    regularity_check,
    reproducing_residual,
)
from services.polymat import MatrixPolynomial, norm

# moments of the semicircle law on [-2, 2]
CATALAN = [1, 1, 2, 5, 14, 42, 132]
SIGN_FLIP = np.diag([1.0, -1.0])


def _semicircle_moment(k):
    return 0.0 if k % 2 else float(CATALAN[k // 2])


@pytest.fixture
def origin():
    return DeltaSpec(((0.0, 0),))


@pytest.fixture
def chebyshev_delta(chebyshev, origin):
    return PerturbedFamily(chebyshev, origin, [[1.0]])


@pytest.fixture
def example1_delta(shifted_example1):
    return PerturbedFamily(shifted_example1, DeltaSpec(((0.0, 1),)), SIGN_FLIP)


class TestDeltaSpec:

    def test_validation(self):
        with pytest.raises(ValueError):
            DeltaSpec(((0.0, -1),))
        with pytest.raises(ValueError):
            DeltaSpec(())
        assert DeltaSpec(((1.0, 1), (2.0, 0))).dim == 3

    def test_h_vanishes_to_order(self):
        spec = DeltaSpec(((1.0, 1), (2.0, 0)))
        expected = Polynomial([-2.0, 5.0, -4.0, 1.0])
        assert_allclose(spec.h().coef, expected.coef)
        assert_allclose(delta_values(spec, spec.h()), 0.0, atol=1e-12)

    def test_values_use_distributional_sign(self):
        spec = DeltaSpec(((2.0, 1),))
        assert_allclose(delta_values(spec, [0.0, 0.0, 1.0]), [4.0, -4.0])

    def test_moment_matrix_matches_values(self):
        spec = DeltaSpec(((1.0, 0), (2.0, 1)))
        matrix = delta_on_P0(spec)
        for i in range(3):
            monomial = Polynomial([0.0] * i + [1.0])
            assert_allclose(matrix[i], delta_values(spec, monomial))
        assert_allclose(delta_on_P0(DeltaSpec(((0.0, 1),))), SIGN_FLIP)
        with pytest.raises(ValueError):
            delta_on_P0(spec, 2)

    def test_lift(self):
        spec = DeltaSpec(((0.0, 1),))
        entries = lift(MatrixPolynomial.identity(2), spec)
        assert_allclose(entries[0].coef, [1.0])
        assert_allclose(entries[1].coef, [0.0, 1.0])
        shifted = lift(MatrixPolynomial.linear(np.zeros((2, 2)), np.eye(2)), spec)
        assert [entry.degree() for entry in shifted] == [2, 3]
        for entry in shifted:
            assert_allclose(delta_values(spec, entry), 0.0, atol=1e-12)


class TestKernels:

    @pytest.mark.parametrize('m', range(8))
    def test_chebyshev_kernel_at_zero(self, chebyshev, m):
        assert kernel_at_zero(chebyshev, m)[0, 0] == pytest.approx(m // 2 + 1)

    @pytest.mark.parametrize('name', ['example1', 'nevai', 'three_by_three'])
    def test_christoffel_darboux(self, request, name, rng):
        family = request.getfixturevalue(name)
        for m in range(1, 11):
            x, z = rng.normal(size=2) + 1j * rng.normal(size=2)
            assert cd_residual(family, m, x, z) < 1e-10
            assert confluent_residual(family, m) < 1e-9

    def test_kernel_eval(self, chebyshev):
        assert_allclose(kernel_eval(chebyshev, 0, 1.0, 2.0), [[0.0]])
        # 1 + x y + (x^2 - 1)(y^2 - 1)
        assert kernel_eval(chebyshev, 3, 1.5, 0.5)[0, 0] == pytest.approx(1 + 0.75 + 1.25 * -0.75)

    def test_reproducing(self, chebyshev, example1):
        assert reproducing_residual(chebyshev, 3, 5) < 1e-8
        assert reproducing_residual(example1, 2, 4) < 1e-8


class TestRegularity:

    def test_dimension_mismatch(self, example1, origin):
        with pytest.raises(ValueError):
            PerturbedFamily(example1, origin, np.eye(2))

    def test_singular_indices(self, chebyshev, origin):
        pf = PerturbedFamily(chebyshev, origin, [[-0.5]])
        singular = [m for m in range(8) if not regularity_check(pf, m).regular]
        assert singular == [2, 3]
        assert regularity_check(pf, 2).condition == np.inf
        with pytest.raises(RegularityError):
            perturbed_V(pf, 3)

    def test_regular_for_positive_mass(self, chebyshev_delta):
        assert all(regularity_check(chebyshev_delta, m).regular for m in range(20))


class TestPerturbedPolynomials:

    def test_first_polynomial(self, chebyshev_delta):
        assert_allclose(perturbed_V(chebyshev_delta, 0).coeffs, [[[0.5]]])
        assert_allclose(perturbed_V(chebyshev_delta, 1).coeffs, [[[0.0]], [[1.0]]], atol=1e-15)

    @pytest.mark.parametrize('m', range(1, 7))
    def test_orthogonal_to_lower_degrees(self, chebyshev_delta, m):
        # the functional is the semicircle law plus a unit mass at the origin
        coefficients = perturbed_V(chebyshev_delta, m).coeffs[:, 0, 0]
        assert len(coefficients) == m + 1
        for k in range(m):
            pairing = sum(c * (_semicircle_moment(j + k) + (j + k == 0)) for j, c in enumerate(coefficients))
            assert abs(pairing) < 1e-9

    @pytest.mark.parametrize('m', range(1, 6))
    def test_recurrence_chebyshev(self, chebyshev_delta, m):
        a1, a2, a3 = perturbed_recurrence(chebyshev_delta, m)
        assert_allclose(a3, [[1.0]])

    @pytest.mark.parametrize('m', range(1, 5))
    def test_recurrence_example1(self, example1_delta, shifted_example1, m):
        a1, a2, a3 = perturbed_recurrence(example1_delta, m)
        assert_allclose(a3, shifted_example1.C(m))

    @pytest.mark.parametrize('m', range(1, 5))
    def test_phi_forms_agree(self, chebyshev_delta, example1_delta, m):
        for pf in (chebyshev_delta, example1_delta):
            closed = phi_closed_form(pf, m)
            assert norm(closed - phi_from_leading(pf, m)) < 1e-9 * max(1.0, norm(closed))

    def test_right_family_degree(self, example1_delta):
        assert perturbed_G(example1_delta, 3).degree == 3


class TestPerturbedFunctional:

    def test_biorthogonality_scalar(self, chebyshev_delta):
        for m in range(6):
            for n in range(6):
                value = perturbed_biorthogonality(chebyshev_delta, m, n)
                assert abs(value[0, 0] - (m == n)) < 1e-7

    def test_biorthogonality_matrix(self, example1_delta):
        for m in range(3):
            for n in range(3):
                value = perturbed_biorthogonality(example1_delta, m, n)
                expected = np.eye(2) if m == n else np.zeros((2, 2))
                assert norm(value - expected) < 1e-7

    def test_only_zeroth_moment_moves(self, chebyshev_delta, example1_delta):
        for pf in (chebyshev_delta, example1_delta):
            report = moment_invariance(pf)
            assert report.zeroth < 1e-10
            assert report.higher < 1e-9
