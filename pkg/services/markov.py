import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from config import Config
from services.polymat import MopnlError, VerificationError, as_matrix, norm
from services.recurrence import ConvergenceError, RecurrenceFamily, values_at
from services.spectral import gershgorin_bound

logger = logging.getLogger(__name__)


class ContourError(MopnlError):
    """
    Raised when a contour does not enclose the spectrum or is badly discretized.
    """
    pass


class MarkovValue(NamedTuple):
    value: np.ndarray
    residual: float
    iterations: int
    method: str


class MarkovEvaluator:
    """
    Fixed point F = ((zI - B) - A F C)^-1 of the matrix continued fraction.

    This is the Markov function of the generalized Chebyshev family with
    constant coefficients (A, B, C).
    """

    def __init__(self, A, B, C, tol=None, max_iter=None, newton_max_iter=None, residual_tol=None):
        self.A, self.B, self.C = (as_matrix(x) for x in (A, B, C))
        self.dim = self.A.shape[0]
        self.tol = Config.FIXED_POINT_TOL if tol is None else tol
        self.max_iter = Config.FIXED_POINT_MAX_ITER if max_iter is None else max_iter
        self.newton_max_iter = Config.NEWTON_MAX_ITER if newton_max_iter is None else newton_max_iter
        self.residual_tol = Config.RESIDUAL_TOL if residual_tol is None else residual_tol
        self.bound = float(np.max(np.abs(self.C).sum(axis=1) + np.abs(self.B).sum(axis=1) + np.abs(self.A).sum(axis=1)))

    @classmethod
    def from_family(cls, fam, **kwargs):
        if fam.limits is None:
            raise ValueError(f"{fam.name} has no Nevai limits")
        A, B, C = fam.limits
        return cls(A, B, C, **kwargs)

    def swapped(self):
        """Evaluator for H = ((zI - B) - C H A)^-1, the limit of V_{m-1} V_m^-1 A_{m-1}^-1."""
        return MarkovEvaluator(self.C, self.B, self.A, tol=self.tol, max_iter=self.max_iter,
                               newton_max_iter=self.newton_max_iter, residual_tol=self.residual_tol)

    def _shifted(self, z):
        return z[..., np.newaxis, np.newaxis] * np.eye(self.dim) - self.B

    def residual(self, z, F):
        z = np.asarray(z, dtype=complex)
        defect = F @ (self._shifted(z) - self.A @ F @ self.C) - np.eye(self.dim)
        return np.linalg.norm(defect, ord=2, axis=(-2, -1))

    def _newton(self, z, F):
        # Newton on (zI - B) - A F C - F^-1 = 0, vectorized column-major
        shifted = self._shifted(np.asarray(z, dtype=complex))
        operator = np.kron(self.C.T, self.A)
        best, best_defect, last_step = F, np.inf, np.inf
        for iteration in range(self.newton_max_iter):
            F_inv = np.linalg.inv(F)
            defect = shifted - self.A @ F @ self.C - F_inv
            size = norm(defect)
            if size < best_defect:
                best, best_defect = F, size
            if size <= np.finfo(float).eps * max(1.0, norm(shifted)):
                break
            jacobian = np.kron(F_inv.T, F_inv) - operator
            try:
                delta = np.linalg.solve(jacobian, -defect.ravel(order='F')).reshape(F.shape, order='F')
            except np.linalg.LinAlgError:
                break
            step = norm(delta)
            if iteration >= 3 and step >= last_step:
                break
            F, last_step = F + delta, step
        logger.debug(f"Newton fallback at z={complex(z):.6g} stopped after {iteration + 1} steps")
        return best

    def evaluate(self, z):
        """
        Fixed point at a scalar or array z with a residual certificate.

        Plain iteration runs first; points where it has not settled after
        max_iter steps are polished by Newton's method.

        Returns:
            MarkovValue, whose value has shape z.shape + (N, N).

        Raises:
            ConvergenceError: If the residual certificate fails at some point.
        """
        z = np.asarray(z, dtype=complex)
        shifted = self._shifted(z)
        try:
            F = np.linalg.inv(shifted)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"zI - B is singular at z={z}") from e
        settled = np.zeros(z.shape, dtype=bool)
        iterations = 0
        for iterations in range(1, self.max_iter + 1):
            try:
                new = np.linalg.inv(shifted - self.A @ F @ self.C)
            except np.linalg.LinAlgError as e:
                raise ConvergenceError(f"Singular continued-fraction step {iterations} at z={z}") from e
            change = np.linalg.norm(new - F, ord=2, axis=(-2, -1))
            settled = change <= self.tol * np.maximum(1.0, np.linalg.norm(new, ord=2, axis=(-2, -1)))
            F = new
            if np.all(settled):
                break
        method = 'iteration'
        if not np.all(settled):
            method = 'newton'
            F = F.copy()
            for index in zip(*np.nonzero(~settled)) if z.ndim else [()]:
                F[index] = self._newton(z[index], F[index])
        residual = self.residual(z, F)
        worst = float(np.max(residual))
        if not np.isfinite(worst) or worst > self.residual_tol:
            raise ConvergenceError(f"Continued fraction did not converge, residual {worst:.3e}")
        return MarkovValue(F, worst, iterations, method)

    def __call__(self, z, order=None):
        return self.evaluate(z).value

    def derivative(self, z, k=1, verify=True, rel_tol=None):
        """
        k-th derivative (k = 1 or 2) of the fixed point at a scalar z.

        F' solves F^-1 F' F^-1 - A F' C = -I and F'' solves the same operator
        with right-hand side 2 F^-1 F' F^-1 F' F^-1.

        Raises:
            ConvergenceError: If the linear operator is singular (branch point).
            VerificationError: If a central finite difference disagrees.
        """
        if k not in (1, 2):
            raise ValueError(f"Derivative order must be 1 or 2, got {k}")
        rel_tol = Config.FD_REL_TOL if rel_tol is None else rel_tol
        F = self(z)
        F_inv = np.linalg.inv(F)
        operator = np.kron(F_inv.T, F_inv) - np.kron(self.C.T, self.A)
        if np.linalg.cond(operator) > 1e14:
            raise ConvergenceError(f"Derivative operator is singular at z={z}, a branch point")

        def solve(rhs):
            return np.linalg.solve(operator, rhs.ravel(order='F')).reshape(F.shape, order='F')

        result = solve(-np.eye(self.dim, dtype=complex))
        if k == 2:
            result = solve(2 * F_inv @ result @ F_inv @ result @ F_inv)
        if verify:
            h = 1e-5 * (1 + abs(z))
            if k == 1:
                estimate = (self(z + h) - self(z - h)) / (2 * h)
            else:
                estimate = (self.derivative(z + h, 1, verify=False) - self.derivative(z - h, 1, verify=False)) / (2 * h)
            if norm(estimate - result) > rel_tol * max(norm(result), np.finfo(float).tiny):
                raise VerificationError(f"Derivative of order {k} at z={z} disagrees with finite differences")
        return result


def fixed_point_F(ev, z):
    return ev.evaluate(z)


def derivative_F(ev, z, k=1):
    return ev.derivative(z, k)


def ratio_limit(ev, z):
    """Limit of V_{m-1}(z) V_m(z)^-1 A_{m-1}^-1, the fixed point with A and C exchanged."""
    return ev.swapped()(z)


def ratio_limit_derivative(ev, z, k=1):
    return ev.swapped().derivative(z, k)


def approximant_F(fam, m, z):
    """
    Rational approximant V_m(z)^-1 B1_{m-1}(z), zero for m = 0.

    Raises:
        ConvergenceError: If V_m(z) is singular (z is a zero of V_m).
    """
    z = np.asarray(z, dtype=complex)
    if m == 0:
        return np.zeros(z.shape + (fam.dim, fam.dim), dtype=complex)
    V = values_at(fam, z, m, 'V')[0][m]
    B1 = values_at(fam, z, m - 1, 'B1')[0][m - 1]
    if np.any(np.linalg.cond(V) > 1.0 / np.finfo(float).eps):
        raise ConvergenceError(f"V_{m} is singular at a requested point, which is a zero of the family")
    return np.linalg.solve(V, B1)


class FamilyMarkov:
    """
    Markov function of a recurrence family, normalized by G0^-1.

    Constant families use the continued fraction; other families use the
    rational approximant of the requested order.
    """

    def __init__(self, fam, order=None):
        self.fam = fam
        self.order = order
        self.bound = gershgorin_bound(fam)
        self.evaluator = MarkovEvaluator.from_family(fam) if fam.constant else None

    def __call__(self, z, order=None):
        if self.evaluator is not None:
            value = self.evaluator(z)
        else:
            value = approximant_F(self.fam, order or self.order or Config.DEFAULT_M_MAX, z)
        return value @ self.fam.G0_inverse


def family_markov(fam, z, order=None):
    return FamilyMarkov(fam, order=order)(z)


class PerturbedMarkov:
    """
    F~(z) = F(z) + S/z with S = delta(P_0) Lambda^T.
    """

    def __init__(self, base, S):
        self.base = base
        self.S = as_matrix(S)
        self.bound = base.bound

    def __call__(self, z, order=None):
        z = np.asarray(z, dtype=complex)
        if np.any(z == 0):
            raise ValueError("The perturbed Markov function has a pole at z = 0")
        return self.base(z, order=order) + self.S / z[..., np.newaxis, np.newaxis]


def perturbed_markov(markov, delta_moment, lam, z):
    """
    Markov function of the functional perturbed by Lambda delta.

    Args:
        markov: A RecurrenceFamily, MarkovEvaluator or FamilyMarkov.
        delta_moment: The matrix delta(P_0).
        lam: The matrix Lambda.
        z: Non-zero evaluation point.

    Returns:
        F(z) + (1/z) delta(P_0) Lambda^T.
    """
    if isinstance(markov, RecurrenceFamily):
        markov = FamilyMarkov(markov)
    S = as_matrix(delta_moment) @ as_matrix(lam).T
    return PerturbedMarkov(markov, S)(z)


@dataclass(frozen=True)
class ContourSpec:
    """
    Circle |z| = radius discretized by `nodes` equispaced points.
    """
    radius: float
    nodes: int = Config.CONTOUR_NODES

    def __post_init__(self):
        if self.radius <= 0:
            raise ContourError(f"Contour radius must be positive, got {self.radius}")
        if self.nodes < 64 or self.nodes % 2:
            raise ContourError(f"Contour needs an even node count of at least 64, got {self.nodes}")

    @classmethod
    def around(cls, bound, margin=None, nodes=None):
        margin = Config.CONTOUR_MARGIN if margin is None else margin
        return cls(bound + margin, Config.CONTOUR_NODES if nodes is None else nodes)

    def points(self):
        return self.radius * np.exp(2j * np.pi * np.arange(self.nodes) / self.nodes)

    def integrate(self, values):
        """Trapezoidal value of (1/2 pi i) of the contour integral."""
        z = self.points()
        return np.mean(values * z[:, np.newaxis, np.newaxis], axis=0)

    def doubled(self):
        return ContourSpec(self.radius, 2 * self.nodes)


def _checked_spec(markov, spec):
    spec = ContourSpec.around(markov.bound) if spec is None else spec
    if spec.radius <= markov.bound:
        raise ContourError(f"Contour radius {spec.radius} does not exceed the spectral bound {markov.bound}")
    return spec


def contour_pairing(Vm, markov, Gn, spec=None):
    """
    Trapezoidal approximation of (1/2 pi i) of the integral of V_m F G_n over a circle.

    Args:
        Vm: Left MatrixPolynomial.
        markov: Callable Markov function with a `bound` attribute.
        Gn: Right MatrixPolynomial.
        spec: ContourSpec, by default a circle just outside the bound.

    Returns:
        The N x N pairing matrix.

    Raises:
        ContourError: If the radius does not exceed the bound.
    """
    spec = _checked_spec(markov, spec)
    z = spec.points()
    F = markov(z, order=Vm.degree + Gn.degree + Config.APPROXIMANT_MARGIN)
    return spec.integrate(Vm(z) @ F @ Gn(z))


def contour_moments(markov, spec=None, k_max=4, order=None):
    """Moments (1/2 pi i) of the integral of z^k F(z), k = 0..k_max."""
    spec = _checked_spec(markov, spec)
    z = spec.points()
    F = markov(z, order=order or k_max + Config.APPROXIMANT_MARGIN)
    return [spec.integrate(F * z[:, np.newaxis, np.newaxis] ** k) for k in range(k_max + 1)]


EXAMPLE1_B = np.array([[-1.0, 0.0], [1.0, -1.0]])
EXAMPLE1_C = np.diag([-1.0, 1.0])


def example1_family(shift=0.0):
    """
    Constant family A = I, B = [[-1, 0], [1, -1]], C = diag(-1, 1), with B shifted by shift*I.
    """
    return RecurrenceFamily.constant_family(np.eye(2), EXAMPLE1_B + shift * np.eye(2), EXAMPLE1_C,
                                            name='example1' if shift == 0 else f'example1+{shift:g}')


def _decaying_root(a, d):
    # branch of sqrt(a^2 + d) with |a + s| >= |a - s|, so 2/(a + s) decays at infinity
    s = np.sqrt(complex(a * a + d))
    return s if abs(a + s) >= abs(a - s) else -s


def _chebyshev_like(a, s, m):
    if m == 0:
        return 0.0
    if abs(s) <= 1e-12 * (1 + abs(a)):
        return m * (a / 2) ** (m - 1)
    return ((a + s) ** m - (a - s) ** m) / (s * 2 ** m)


class Example1Forms(NamedTuple):
    V: np.ndarray
    B1: np.ndarray
    F: np.ndarray


def example1_closed_forms(m, z):
    """
    Closed forms of V_m, B1_{m-1} and F for the example family.

    E_m and F_m are even in the square root, so they do not depend on the
    branch; F uses the decaying branch.
    """
    a = 1 + z
    s_plus, s_minus = _decaying_root(a, 4), _decaying_root(a, -4)

    def E(k):
        return _chebyshev_like(a, s_plus, k)

    def F(k):
        return _chebyshev_like(a, s_minus, k)

    V = (-0.5 * E(m + 2) * np.array([[0, 0], [a, 0]])
         + E(m + 1) * np.array([[a, 0], [-0.5, 0]])
         + E(m) * np.array([[1, 0], [0, 0]])
         + F(m + 1) * np.array([[0, 0], [0.5 * (2 + z) * z, a]])
         - F(m) * np.array([[0, 0], [a, 1]]))
    B1 = (E(m + 2) * np.array([[0, 0], [-0.5, 0]])
          + E(m + 1) * np.array([[1, 0], [0, 0]])
          + F(m + 1) * np.array([[0, 0], [0.5 * a, 1]]))
    off_diagonal = (4 + (a - s_plus) * (a - s_minus - s_plus)) / ((a + s_minus) * (a + s_plus))
    markov = np.array([[2 / (a + s_plus), 0], [off_diagonal, 2 / (a + s_minus)]], dtype=complex)
    return Example1Forms(np.asarray(V, dtype=complex), np.asarray(B1, dtype=complex), markov)


def example1_reconciliation(z, m_max=8, tol=1e-9):
    """
    Compares the closed forms with the recurrence entry by entry.

    Returns:
        A dict with, for 'V' and 'B1', the index offsets in {-1, 0, 1} at which
        each entry of the closed form at m equals the recurrence at m + offset
        for all 1 <= m <= m_max, plus the closed-form and fixed-point (2,1) entries of F.
    """
    fam = example1_family()
    V = values_at(fam, z, m_max + 1, 'V')[0]
    B1 = values_at(fam, z, m_max + 1, 'B1')[0]
    closed = [example1_closed_forms(m, z) for m in range(m_max + 1)]
    report = {}
    for kind, actual in (('V', V), ('B1', B1)):
        entries = {}
        for i in range(2):
            for j in range(2):
                offsets = []
                for offset in (-1, 0, 1):
                    pairs = [(getattr(closed[m], kind)[i, j], actual[m + offset][i, j])
                             for m in range(1, m_max + 1) if m + offset >= 0]
                    if all(abs(p - q) <= tol * (1 + abs(q)) for p, q in pairs):
                        offsets.append(offset)
                entries[(i, j)] = offsets
        report[kind] = entries
    report['F21_closed_form'] = complex(closed[0].F[1, 0])
    report['F21_fixed_point'] = complex(MarkovEvaluator.from_family(fam)(z)[1, 0])
    mismatched = [(kind, entry) for kind in ('V', 'B1') for entry, offsets in report[kind].items() if not offsets]
    if mismatched:
        logger.warning(f"Closed forms match the recurrence at no offset for {mismatched}")
    return report
