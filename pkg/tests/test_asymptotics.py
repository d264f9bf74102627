import numpy as np
import pytest
from numpy.testing import assert_allclose

import services.asymptotics as asymptotics
from services.asymptotics import (
    ConvergenceTable,
    ExperimentRefusedError,
    default_points,
    derivative_ratio_experiment,
    inverse_decay_experiment,
    psi_estimate,
    ratio_experiment,
    relative_asymptotics_experiment,
    xi_limit_experiment,
    xi_matrix,
)
from services.dirac import DeltaSpec, PerturbedFamily, RegularityReport, regularity_check
from services.experiment_runner import ExperimentRunner, build_job
from services.polymat import norm
from services.recurrence import RecurrenceFamily

GOLDEN = (3 - np.sqrt(5)) / 2
SHIFTED_XI = 0.145898
SHIFTED_TARGET_AT_6 = 0.254644


@pytest.fixture
def shifted_delta(shifted_chebyshev):
    return PerturbedFamily(shifted_chebyshev, DeltaSpec(((0.0, 0),)), [[1.0]])


@pytest.fixture
def shifted_example1_delta(shifted_example1):
    return PerturbedFamily(shifted_example1, DeltaSpec(((0.0, 1),)), np.diag([1.0, -1.0]))


class TestConvergenceTable:

    def test_empty_table_fails(self):
        table = ConvergenceTable('empty', 1.0)
        assert table.final_error is None
        assert not table.passed

    def test_gate_and_tail(self):
        table = ConvergenceTable('t', 1.0, rows=[(m, 10.0 ** -m) for m in range(1, 31)], gate=1e-6)
        assert table.passed
        assert table.error_at(3) == pytest.approx(1e-3)
        table.rows.append((31, 1e-7))
        assert not table.monotone_tail()
        assert not table.passed

    def test_roundoff_wobble_after_convergence_passes(self):
        errors = [10.0 ** -m for m in range(1, 13)] + [2e-13, 6e-12, 8e-14, 6e-12] * 5
        table = ConvergenceTable('t', 1.0, rows=list(enumerate(errors, start=1)), gate=1e-3)
        assert table.final_error == pytest.approx(6e-12)
        assert table.monotone_tail()
        assert table.passed
        ungated = ConvergenceTable('t', 1.0, rows=table.rows)
        assert not ungated.monotone_tail()

    def test_checks_decide(self):
        table = ConvergenceTable('t', 1.0, rows=[(1, 0.0)], checks={'identity': False})
        assert not table.passed


class TestRatioExperiments:

    def test_chebyshev_ratio(self, chebyshev):
        table = ratio_experiment(chebyshev, 3.0, gate=1e-8)
        assert table.rows[0][0] == 1
        assert len(table.rows) == 200
        assert table.final_error < 1e-8
        assert table.notes['limit'][0, 0] == pytest.approx(GOLDEN)
        assert table.notes['markov_gap'] < 1e-12
        assert table.passed

    def test_chebyshev_derivative(self, chebyshev):
        table = derivative_ratio_experiment(chebyshev, 3.0, k=1, m_max=100, gate=1e-8)
        assert table.notes['limit'][0, 0] == pytest.approx(-0.1708204, rel=1e-6)
        assert table.passed

    def test_inverse_decay(self, chebyshev):
        table = inverse_decay_experiment(chebyshev, 3.0, m_max=60)
        assert table.rows[0] == (0, 1.0)
        assert table.final_error < 1e-20
        assert table.passed

    def test_inverse_decay_survives_rescaling(self, chebyshev):
        table = inverse_decay_experiment(chebyshev, 3.0, m_max=800)
        assert len(table.rows) == 801
        assert all(np.isfinite(error) for _, error in table.rows)
        assert table.error_at(60) < 1e-20
        assert table.final_error < 1e-300
        assert table.passed

    def test_nevai_sequence(self, nevai):
        table = ratio_experiment(nevai, 5.0, gate=1e-4)
        assert table.final_error < 1e-4
        assert table.error_at(200) < table.error_at(20)

    def test_example1_ratio_limit(self, example1):
        table = ratio_experiment(example1, 5.0, m_max=200, target='ratio_limit', gate=1e-6)
        assert table.passed
        # F and the ratio limit differ off the diagonal
        assert table.notes['markov_gap'] > 1e-6
        assert table.notes['markov_discrepancy']

    def test_refuses_interior_point(self, chebyshev):
        with pytest.raises(ExperimentRefusedError):
            ratio_experiment(chebyshev, 1.0)
        with pytest.raises(ExperimentRefusedError):
            inverse_decay_experiment(chebyshev, 0.5j)

    def test_refuses_family_without_limits(self):
        family = RecurrenceFamily.tabulated_family([(1.0, 0.0, 1.0)] * 5)
        with pytest.raises(ExperimentRefusedError):
            ratio_experiment(family, 10.0, m_max=3)

    def test_bad_derivative_order(self, chebyshev):
        with pytest.raises(ValueError):
            derivative_ratio_experiment(chebyshev, 3.0, k=3)

    def test_default_points_are_exterior(self, example1):
        for z in default_points(example1):
            ratio_experiment(example1, z, m_max=5)


class TestPerturbedLimits:

    def test_xi_scalar(self, shifted_delta):
        assert xi_matrix(shifted_delta)[0, 0].real == pytest.approx(SHIFTED_XI, abs=1e-6)
        table = xi_limit_experiment(shifted_delta, m_max=200)
        assert table.z == 'coefficient-level'
        assert table.final_error < 1e-3
        assert table.checks['leading_identity']
        assert table.passed

    def test_xi_needs_exterior_origin(self, chebyshev):
        pf = PerturbedFamily(chebyshev, DeltaSpec(((0.0, 0),)), [[1.0]])
        with pytest.raises(ExperimentRefusedError):
            xi_matrix(pf)

    def test_relative_scalar(self, shifted_delta):
        table = relative_asymptotics_experiment(shifted_delta, 6.0, m_max=200)
        assert table.notes['target'][0, 0].real == pytest.approx(SHIFTED_TARGET_AT_6, abs=1e-6)
        assert_allclose(table.notes['psi_inverse'], [[1.0]], atol=1e-8)
        assert table.checks['ratio_formula']
        assert table.final_error < 1e-3
        assert 'alternate_target_error' in table.notes

    def test_relative_without_mass(self, shifted_chebyshev):
        pf = PerturbedFamily(shifted_chebyshev, DeltaSpec(((0.0, 0),)), [[0.0]])
        table = relative_asymptotics_experiment(pf, 6.0, m_max=30)
        assert table.notes['identity_gap'] < 1e-12
        assert table.final_error < 1e-12
        assert table.passed

    def test_relative_refuses_origin(self, shifted_delta):
        with pytest.raises(ExperimentRefusedError):
            relative_asymptotics_experiment(shifted_delta, 0.0, m_max=10)

    def test_matrix_family_to_last_regular_index(self, shifted_example1_delta):
        pf = shifted_example1_delta
        xi = xi_limit_experiment(pf, m_max=200)
        assert xi.notes['xi'].shape == (2, 2)
        last = xi.notes['last_regular_m']
        assert last == xi.rows[-1][0]
        assert 100 <= last < 200
        assert xi.notes['skipped_indices'].endswith('200')
        assert all(regularity_check(pf, m).regular for m, _ in xi.rows)
        assert not regularity_check(pf, 200).regular
        assert xi.final_error < 1e-3
        assert xi.notes['leading_identity_error'] <= 1e-9
        assert xi.checks['leading_identity']
        assert xi.passed

        relative = relative_asymptotics_experiment(pf, 8.0, m_max=200)
        assert relative.rows[-1][0] == relative.notes['last_regular_m']
        assert relative.checks['ratio_formula']
        assert relative.final_error < 1e-3
        assert relative.passed
        assert_allclose(psi_estimate(pf, 10), np.eye(2), atol=1e-8)

    def test_leading_identity_is_not_scaled_by_conditioning(self, shifted_example1_delta, monkeypatch):
        closed = asymptotics.phi_closed_form

        def shifted_leading(pf, m):
            phi = closed(pf, m)
            return phi + max(1.0, norm(phi)) * np.eye(2)

        monkeypatch.setattr(asymptotics, 'phi_from_leading', shifted_leading)
        table = xi_limit_experiment(shifted_example1_delta, m_max=20)
        assert table.notes['leading_identity_error'] > 0.5
        assert not table.checks['leading_identity']
        assert not table.passed

    def test_refuses_when_no_index_is_regular(self, shifted_example1_delta, monkeypatch):
        monkeypatch.setattr(asymptotics, 'regularity_check', lambda pf, m: RegularityReport(False, np.inf, None))
        with pytest.raises(ExperimentRefusedError):
            xi_limit_experiment(shifted_example1_delta, m_max=5)


class TestRunner:

    def test_outcomes_keep_order(self, chebyshev):
        jobs = [
            ('a', build_job('ratio', chebyshev, z=3.0, m_max=20, experiment_id='a')),
            ('b', build_job('ratio', chebyshev, z=1.0, m_max=20, experiment_id='b')),
            ('c', build_job('inverse_decay', chebyshev, z=3.0, m_max=20, experiment_id='c')),
        ]
        outcomes = ExperimentRunner(max_workers=2).run(jobs)
        assert [o.experiment_id for o in outcomes] == ['a', 'b', 'c']
        assert outcomes[0].table.experiment_id == 'a'
        assert outcomes[1].table is None
        assert isinstance(outcomes[1].error, ExperimentRefusedError)
        assert outcomes[2].error is None

    def test_build_job_validation(self, chebyshev):
        with pytest.raises(ValueError):
            build_job('xi_limit', chebyshev)
        with pytest.raises(ValueError):
            build_job('ratio', chebyshev)
        with pytest.raises(ValueError):
            build_job('unknown', chebyshev, z=3.0)
