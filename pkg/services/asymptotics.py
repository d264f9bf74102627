import logging
from dataclasses import dataclass, field

import numpy as np

from config import Config
from services.dirac import (
    RegularityError,
    perturbed_G,
    perturbed_V,
    perturbed_value_at_zero,
    phi_closed_form,
    phi_from_leading,
    regularity_check,
)
from services.markov import MarkovEvaluator
from services.polymat import MopnlError, norm
from services.recurrence import iterate_values
from services.spectral import exterior_point, gershgorin_bound

logger = logging.getLogger(__name__)


class ExperimentRefusedError(MopnlError):
    """
    Raised when an experiment's preconditions do not hold for the family or point.
    """
    pass


@dataclass
class ConvergenceTable:
    """
    Errors of a limit experiment tabulated against m.

    Attributes:
        experiment_id: Name used for the output file.
        z: Evaluation point, or 'coefficient-level' for leading-coefficient limits.
        rows: (m, error) pairs with strictly increasing m.
        gate: Bound the final error must satisfy.
        notes: Reported values that do not decide the verdict.
        checks: Named boolean checks that do.
    """
    experiment_id: str
    z: object
    rows: list = field(default_factory=list)
    gate: float = None
    notes: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def final_error(self):
        return self.rows[-1][1] if self.rows else None

    def error_at(self, m):
        return dict(self.rows).get(m)

    def monotone_tail(self, start=20):
        """
        Final error within 10x of the best error seen from m = start on.

        Errors below 1e-6 of the gate count as converged, so roundoff wobble
        after convergence does not fail the table.
        """
        tail = [error for m, error in self.rows if m >= start]
        if not tail:
            return True
        floor = 1e-12 if self.gate is None else 1e-6 * self.gate
        return tail[-1] <= max(10 * min(tail), floor)

    @property
    def passed(self):
        if not self.rows:
            return False
        within = self.gate is None or self.final_error < self.gate
        return bool(within and self.monotone_tail() and all(self.checks.values()))


def default_points(fam):
    """Exterior points M + 1, 2M and i(M + 1) for the Gershgorin bound M."""
    bound = gershgorin_bound(fam)
    return [complex(bound + 1), complex(2 * bound), 1j * (bound + 1)]


def _evaluator(fam):
    if fam.limits is None:
        raise ExperimentRefusedError(f"{fam.name} has no Nevai limits to converge to")
    return MarkovEvaluator.from_family(fam)


def _require_exterior(fam, z):
    if not exterior_point(fam, z):
        raise ExperimentRefusedError(f"z={z} is not outside the Gershgorin hull of {fam.name}")


def _target(ev, z, k, target):
    if target not in ('markov', 'ratio_limit'):
        raise ValueError(f"Unknown target {target!r}")
    source = ev if target == 'markov' else ev.swapped()
    value = source(z) if k == 0 else source.derivative(z, k)
    markov = ev(z) if k == 0 else ev.derivative(z, k)
    limit = ev.swapped()(z) if k == 0 else ev.swapped().derivative(z, k)
    return value, norm(limit - markov)


def _ratio_derivatives(previous, current, k):
    # (P W)^(k) with W = Q^-1, W' = -W Q' W, W'' = 2 W Q' W Q' W - W Q'' W
    W = np.linalg.inv(current[0])
    if k == 0:
        return previous[0] @ W
    W1 = -W @ current[1] @ W
    if k == 1:
        return previous[1] @ W + previous[0] @ W1
    W2 = 2 * W @ current[1] @ W @ current[1] @ W - W @ current[2] @ W
    return previous[2] @ W + 2 * previous[1] @ W1 + previous[0] @ W2


def derivative_ratio_experiment(fam, z, k=1, m_max=None, target='markov', gate=None, experiment_id=None):
    """
    k-th z-derivative of V_{m-1}(z) V_m(z)^-1 A_{m-1}^-1 against the limit's derivative.

    Args:
        fam: Family with Nevai limits.
        z: Exterior evaluation point.
        k: Derivative order, 0, 1 or 2.
        m_max: Last index, Config.DEFAULT_M_MAX by default.
        target: 'markov' for F, 'ratio_limit' for H.
        gate: Bound for the final error.
        experiment_id: Output name.

    Returns:
        ConvergenceTable; notes carry the gap between F and H.

    Raises:
        ExperimentRefusedError: If z is not exterior or the family has no limits.
    """
    if k not in (0, 1, 2):
        raise ValueError(f"Derivative order must be 0, 1 or 2, got {k}")
    m_max = Config.DEFAULT_M_MAX if m_max is None else m_max
    ev = _evaluator(fam)
    _require_exterior(fam, z)
    value, gap = _target(ev, z, k, target)
    table = ConvergenceTable(experiment_id or f"ratio_k{k}_{fam.name}", complex(z), gate=gate)
    table.notes.update(target=target, markov_gap=gap, limit=value)
    if gate is not None:
        table.notes['markov_discrepancy'] = bool(gap > gate)
    for step in iterate_values(fam, z, 'V', order=k, m_max=m_max):
        if step.m == 0:
            continue
        ratio = _ratio_derivatives(step.previous, step.current, k) @ fam.A_inverse(step.m - 1)
        table.rows.append((step.m, norm(ratio - value)))
    logger.info(f"{table.experiment_id}: final error {table.final_error:.3e}, F-H gap {gap:.3e}")
    return table


def ratio_experiment(fam, z, m_max=None, target='markov', gate=None, experiment_id=None):
    """Error of V_{m-1}(z) V_m(z)^-1 A_{m-1}^-1 against F (or the ratio limit H)."""
    return derivative_ratio_experiment(fam, z, 0, m_max, target, gate, experiment_id or f"ratio_{fam.name}")


def inverse_decay_experiment(fam, z, m_max=None, gate=1e-6, experiment_id=None):
    """
    max(||V_m(z)^-1||, ||G_m(z)^-1||) against m; both must tend to zero at exterior z.

    Values come from the rescaled iteration, so the inverse of the true value is
    the inverse of the scaled one times exp(-log_scale) and nothing overflows.
    """
    m_max = Config.DEFAULT_M_MAX if m_max is None else m_max
    _require_exterior(fam, z)
    table = ConvergenceTable(experiment_id or f"inverse_decay_{fam.name}", complex(z), gate=gate)
    left = iterate_values(fam, z, 'V', m_max=m_max)
    right = iterate_values(fam, z, 'G', m_max=m_max)
    V_error = G_error = None
    for V_step, G_step in zip(left, right):
        V_error = norm(np.linalg.inv(V_step.current[0])) * np.exp(-V_step.log_scale)
        G_error = norm(np.linalg.inv(G_step.current[0])) * np.exp(-G_step.log_scale)
        table.rows.append((V_step.m, max(V_error, G_error)))
    table.notes.update(V_inverse=V_error, G_inverse=G_error)
    return table


def _is_unperturbed(pf):
    return not np.any(pf.S)


def _index_ranges(indices):
    """Compact 'a-b' text for runs of consecutive indices."""
    runs = []
    for index in indices:
        if runs and index == runs[-1][1] + 1:
            runs[-1][1] = index
        else:
            runs.append([index, index])
    return ', '.join(str(a) if a == b else f"{a}-{b}" for a, b in runs)


def _record_skipped(table, skipped):
    table.notes['skipped_indices'] = _index_ranges(skipped)
    if skipped:
        logger.info(f"{table.experiment_id}: skipped non-regular m = {table.notes['skipped_indices']}")


def xi_matrix(pf, ev=None):
    """
    Xi = I + H(0) H'(0)^-1 H(0), with H the ratio limit of the base family.

    Raises:
        ExperimentRefusedError: If 0 is not exterior or S is singular.
    """
    fam = pf.family
    ev = _evaluator(fam) if ev is None else ev
    if _is_unperturbed(pf):
        return pf.identity
    if np.linalg.cond(pf.S) > pf.cond_max:
        raise ExperimentRefusedError("delta(P_0) Lambda^T is singular, the Xi limit is not defined")
    if not exterior_point(fam, 0.0):
        raise ExperimentRefusedError(f"0 lies in the Gershgorin hull of {fam.name}, H(0) is not defined")
    limit = ev.swapped()
    H0 = limit(0.0)
    return pf.identity + H0 @ np.linalg.solve(limit.derivative(0.0, 1), H0)


def xi_limit_experiment(pf, m_max=None, gate=1e-3, identity_max=100, tol=None, experiment_id=None):
    """
    Leading-coefficient ratio Phi_m against its limit Xi.

    Phi_m is taken from the closed kernel form; for m <= identity_max it is
    also recomputed from the leading coefficients of V, G, V~ and G~. The two
    must agree to tol in the relative error |leading - closed| / max(1, |closed|).

    Indices where the regularity matrix is singular to working precision are
    skipped and listed in the notes; the table ends at the last regular m.

    Returns:
        ConvergenceTable at the coefficient level.
    """
    m_max = Config.DEFAULT_M_MAX if m_max is None else m_max
    tol = Config.VERIFY_TOL if tol is None else tol
    xi = xi_matrix(pf)
    table = ConvergenceTable(experiment_id or f"xi_{pf.family.name}", 'coefficient-level', gate=gate)
    identity_error = 0.0
    phi = None
    skipped = []
    for m in range(1, m_max + 1):
        if not regularity_check(pf, m).regular:
            skipped.append(m)
            continue
        try:
            phi = phi_closed_form(pf, m)
            if m <= identity_max:
                leading = phi_from_leading(pf, m)
                identity_error = max(identity_error, norm(leading - phi) / max(1.0, norm(phi)))
        except RegularityError:
            skipped.append(m)
            continue
        table.rows.append((m, norm(phi - xi)))
    if not table.rows:
        raise ExperimentRefusedError(f"The perturbation of {pf.family.name} is singular at every m <= {m_max}")
    _record_skipped(table, skipped)
    table.checks['leading_identity'] = identity_error <= tol
    table.notes.update(xi=xi, phi_final=phi, leading_identity_error=identity_error,
                       last_regular_m=table.rows[-1][0],
                       unperturbed=_is_unperturbed(pf))
    logger.info(f"{table.experiment_id}: |Phi - Xi| = {table.final_error:.3e}, identity error {identity_error:.3e}")
    return table


def psi_estimate(pf, order=None):
    """(beta_m)^-1 beta~_m at a finite order m."""
    order = Config.PSI_ORDER if order is None else order
    beta = pf.base_G(order)[order].leading
    return np.linalg.solve(beta, perturbed_G(pf, order).leading)


def relative_asymptotics_experiment(pf, z, m_max=None, gate=1e-3, psi_order=None, experiment_id=None):
    """
    V~_m(z) V_m(z)^-1 against Psi^-1 [I + (1/z)(I - Xi)(H(0)^-1 - H(z)^-1)].

    The ratio is evaluated without expanding polynomials:
    V~_m V_m^-1 = D_m - L_m [G_m(0) A_m V_{m+1}(z) V_m(z)^-1 - G_{m+1}(0) C_{m+1}] / z
    with L_m = V~_m(0) S. The alternate form
    Psi^-1 [I - (1/z) I - Xi (F(0)^-1 - F(z)^-1)] is evaluated for comparison.

    Raises:
        ExperimentRefusedError: If z = 0, z is not exterior, or Xi is undefined.
    """
    m_max = Config.DEFAULT_M_MAX if m_max is None else m_max
    fam = pf.family
    if z == 0:
        raise ExperimentRefusedError("Relative asymptotics are undefined at the perturbation point z = 0")
    _require_exterior(fam, z)
    ev = _evaluator(fam)
    identity = pf.identity
    xi = xi_matrix(pf, ev)
    psi_order = min(m_max, Config.PSI_ORDER if psi_order is None else psi_order)
    psi_inv = np.linalg.inv(psi_estimate(pf, psi_order))
    unperturbed = _is_unperturbed(pf)

    limit = ev.swapped()
    if unperturbed:
        target = psi_inv
    else:
        correction = (identity - xi) @ (np.linalg.inv(limit(0.0)) - np.linalg.inv(limit(z))) / z
        target = psi_inv @ (identity + correction)
    alternate = None
    if exterior_point(fam, 0.0):
        alternate = psi_inv @ (identity - identity / z - xi @ (np.linalg.inv(ev(0.0)) - np.linalg.inv(ev(z))))

    table = ConvergenceTable(experiment_id or f"relative_{fam.name}", complex(z), gate=gate)
    _, G0, _ = pf.zero_values(m_max + 1)
    ratio = None
    skipped = []
    for step in iterate_values(fam, z, 'V', m_max=m_max + 1):
        m = step.m - 1
        if m < 1:
            continue
        if not regularity_check(pf, m).regular:
            skipped.append(m)
            continue
        forward = step.current[0] @ np.linalg.inv(step.previous[0])
        L = perturbed_value_at_zero(pf, m) @ pf.S
        bracket = G0[m] @ fam.A(m) @ forward - G0[m + 1] @ fam.C(m + 1)
        ratio = pf.normalization(m) - L @ bracket / z
        table.rows.append((m, norm(ratio - target)))
    if not table.rows:
        raise ExperimentRefusedError(f"The perturbation of {fam.name} is singular at every m <= {m_max}")
    _record_skipped(table, skipped)

    check_m = min(m_max, 5)
    direct = perturbed_V(pf, check_m)(z) @ np.linalg.inv(pf.base_V(check_m)[check_m](z))
    _, G0_check, _ = pf.zero_values(check_m + 1)
    steps = list(iterate_values(fam, z, 'V', m_max=check_m + 1, rescale=False))
    forward = steps[check_m + 1].current[0] @ np.linalg.inv(steps[check_m].current[0])
    bracket = G0_check[check_m] @ fam.A(check_m) @ forward - G0_check[check_m + 1] @ fam.C(check_m + 1)
    formula = pf.normalization(check_m) - perturbed_value_at_zero(pf, check_m) @ pf.S @ bracket / z
    formula_error = norm(direct - formula) / max(1.0, norm(direct))
    table.checks['ratio_formula'] = formula_error <= Config.VERIFY_TOL

    half = table.error_at(table.rows[-1][0] // 2)
    table.notes.update(xi=xi, psi_order=psi_order, psi_inverse=psi_inv, target=target,
                       ratio_formula_error=formula_error, last_regular_m=table.rows[-1][0],
                       tail_contraction=None if not half or not table.final_error else half / table.final_error)
    if alternate is not None and ratio is not None:
        table.notes['alternate_target_error'] = norm(ratio - alternate)
    if unperturbed and ratio is not None:
        table.notes['identity_gap'] = norm(ratio - identity)
    logger.info(f"{table.experiment_id}: final error {table.final_error:.3e}")
    return table
