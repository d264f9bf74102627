import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from config import Config
from services.polymat import (
    MatrixPolynomial,
    MopnlError,
    PolynomialError,
    VerificationError,
    as_matrix,
    norm,
)

logger = logging.getLogger(__name__)

KINDS = ('V', 'B1', 'G', 'G1')


class FamilyValidationError(MopnlError):
    """
    Raised when recurrence coefficients violate a structural invariant.
    """
    pass


class SingularCoefficientError(MopnlError):
    """
    Raised when a recurrence coefficient that must be inverted is singular.
    """
    pass


class ConvergenceError(MopnlError):
    """
    Raised when an iteration fails to converge or a value recurrence overflows.
    """
    pass


def inverse(matrix, label, m):
    """
    Inverts a recurrence coefficient, naming it in the error on failure.

    Raises:
        SingularCoefficientError: If the matrix is singular to working precision.
    """
    if np.linalg.cond(matrix) > 1.0 / np.finfo(float).eps:
        raise SingularCoefficientError(f"{label}_{m} is singular")
    return np.linalg.inv(matrix)


class RecurrenceFamily:
    """
    Coefficient provider m -> (A_m, B_m, C_m) of a non-symmetric three-term recurrence.

    zV_m = A_m V_{m+1} + B_m V_m + C_m V_{m-1} on the left and
    zG_n = G_{n+1} C_{n+1} + G_n B_n + G_{n-1} A_{n-1} on the right.
    Coefficients are computed lazily and cached.
    """

    def __init__(self, dim, coefficients: Callable[[int], tuple], limits=None, G0=None,
                 delta0=None, theta0=None, name='family', constant=False, size=None):
        """
        Args:
            dim: Matrix dimension N.
            coefficients: Function of m returning (A_m, B_m, C_m).
            limits: Optional (A, B, C) Nevai limits.
            G0: Initial value of the right family, identity by default.
            delta0: Normalizer of the right leading coefficients, G0^-1 by default.
            theta0: Normalizer of the left leading coefficients, identity by default.
            name: Label used in logs and reports.
            constant: True when the coefficients do not depend on m.
            size: Number of available indices for tabulated families.
        """
        self.dim = int(dim)
        self.name = name
        self.constant = constant
        self.size = size
        self._coefficients = coefficients
        self._cache = {}
        self.limits = None if limits is None else tuple(as_matrix(x, self.dim) for x in limits)
        self.G0 = np.eye(self.dim, dtype=complex) if G0 is None else as_matrix(G0, self.dim)
        self.G0_inverse = inverse(self.G0, 'G', 0)
        self.delta0 = self.G0_inverse if delta0 is None else as_matrix(delta0, self.dim)
        self.theta0 = np.eye(self.dim, dtype=complex) if theta0 is None else as_matrix(theta0, self.dim)

    @classmethod
    def constant_family(cls, A, B, C, G0=None, name='constant'):
        A, B, C = (as_matrix(x) for x in (A, B, C))
        triple = (A, B, C)
        return cls(A.shape[0], lambda m: triple, limits=triple, G0=G0, name=name, constant=True)

    @classmethod
    def sequence_family(cls, A, B, C, dA=None, dB=None, dC=None, power=2.0, G0=None, name='sequence'):
        """
        Nevai family X_m = X + dX/(m+1)^power for X in (A, B, C).
        """
        A, B, C = (as_matrix(x) for x in (A, B, C))
        zero = np.zeros_like(A)
        dA, dB, dC = (zero if d is None else as_matrix(d, A.shape[0]) for d in (dA, dB, dC))

        def coefficients(m):
            decay = 1.0 / (m + 1) ** power
            return A + decay * dA, B + decay * dB, C + decay * dC

        return cls(A.shape[0], coefficients, limits=(A, B, C), G0=G0, name=name)

    @classmethod
    def tabulated_family(cls, table, limits=None, G0=None, name='tabulated'):
        """
        Family read from an explicit list of (A_m, B_m, C_m) triples.
        """
        table = [tuple(as_matrix(x) for x in triple) for triple in table]
        if not table:
            raise FamilyValidationError("A tabulated family needs at least one coefficient triple")

        def coefficients(m):
            if m >= len(table):
                raise FamilyValidationError(f"Index m={m} is beyond the {len(table)} tabulated triples of {name}")
            return table[m]

        return cls(table[0][0].shape[0], coefficients, limits=limits, G0=G0, name=name, size=len(table))

    def coefficients(self, m):
        if m < 0:
            raise FamilyValidationError(f"Negative recurrence index m={m}")
        if m not in self._cache:
            self._cache[m] = tuple(as_matrix(x, self.dim) for x in self._coefficients(m))
        return self._cache[m]

    def A(self, m):
        return self.coefficients(m)[0]

    def B(self, m):
        return self.coefficients(m)[1]

    def C(self, m):
        return self.coefficients(m)[2]

    def A_inverse(self, m):
        key = ('A_inv', m)
        if key not in self._cache:
            self._cache[key] = inverse(self.A(m), 'A', m)
        return self._cache[key]

    def C_inverse(self, m):
        key = ('C_inv', m)
        if key not in self._cache:
            self._cache[key] = inverse(self.C(m), 'C', m)
        return self._cache[key]

    def validate(self, m_check=None, tol=1e-12):
        """
        Checks triangularity, non-singularity and Nevai monotonicity.

        Args:
            m_check: Largest index inspected, Config.NEVAI_CHECK_MAX by default.
            tol: Absolute tolerance for the triangularity test.

        Returns:
            The family itself, for chaining.

        Raises:
            FamilyValidationError: Naming the failing invariant and index m.
        """
        m_check = Config.NEVAI_CHECK_MAX if m_check is None else m_check
        if self.constant:
            m_check = 1
        elif self.size is not None:
            m_check = min(m_check, self.size - 1)
        previous = None
        for m in range(m_check + 1):
            A, B, C = self.coefficients(m)
            if np.max(np.abs(np.triu(A, 1)), initial=0.0) > tol:
                raise FamilyValidationError(f"A_{m} of {self.name} is not lower triangular")
            if np.max(np.abs(np.tril(C, -1)), initial=0.0) > tol:
                raise FamilyValidationError(f"C_{m} of {self.name} is not upper triangular")
            try:
                self.A_inverse(m)
                if m >= 1:
                    self.C_inverse(m)
            except SingularCoefficientError as e:
                raise FamilyValidationError(f"{e} in {self.name}") from e
            if self.limits is not None and not self.constant:
                gaps = [norm(x - limit) for x, limit in zip((A, B, C), self.limits)]
                if previous is not None and any(g > p * (1 + 1e-12) + 1e-15 for g, p in zip(gaps, previous)):
                    raise FamilyValidationError(f"Coefficients of {self.name} do not approach their limits monotonically at m={m}")
                previous = gaps
        logger.debug(f"Validated {self.name} up to m={m_check}")
        return self

    def __repr__(self):
        return f"RecurrenceFamily(name={self.name!r}, dim={self.dim})"


@dataclass(frozen=True)
class InitialTriple:
    P: np.ndarray
    M: np.ndarray
    Q: np.ndarray


def _left_polynomials(fam, first, second, start, m_max):
    # P_{k+1} = A_k^-1((z - B_k) P_k - C_k P_{k-1}) from P_{start-1}, P_start
    sequence = [first, second]
    for k in range(start, start + m_max - 1):
        previous, current = sequence[-2], sequence[-1]
        step = current.shift() - fam.B(k) @ current - fam.C(k) @ previous
        sequence.append(fam.A_inverse(k) @ step)
    return sequence


def _right_polynomials(fam, first, second, start, m_max):
    # Q_{n+1} = (Q_n (z - B_n) - Q_{n-1} A_{n-1}) C_{n+1}^-1
    sequence = [first, second]
    for n in range(start, start + m_max - 1):
        previous, current = sequence[-2], sequence[-1]
        step = current.shift() - current @ fam.B(n)
        if n >= 1:
            step = step - previous @ fam.A(n - 1)
        sequence.append(step @ fam.C_inverse(n + 1))
    return sequence


def generate_V(fam, m_max):
    """
    Left family V_0..V_{m_max} with V_0 = I.

    Returns:
        A list of MatrixPolynomial, deg V_m = m.
    """
    identity = MatrixPolynomial.identity(fam.dim)
    return _left_polynomials(fam, MatrixPolynomial.zero(fam.dim), identity, 0, m_max + 1)[1:]


def generate_B1(fam, m_max):
    """
    Associated polynomials of the first kind B1_0..B1_{m_max}, B1_0 = A_0^-1.
    """
    first = MatrixPolynomial.constant(fam.A_inverse(0))
    return _left_polynomials(fam, MatrixPolynomial.zero(fam.dim), first, 1, m_max + 1)[1:]


def generate_G(fam, m_max):
    """
    Right family G_0..G_{m_max} with G_0 = fam.G0.
    """
    first = MatrixPolynomial.constant(fam.G0)
    return _right_polynomials(fam, MatrixPolynomial.zero(fam.dim), first, 0, m_max + 1)[1:]


def generate_G1(fam, m_max):
    """
    Right associated polynomials G1_0..G1_{m_max}, G1_0 = C_1^-1.
    """
    first = MatrixPolynomial.constant(fam.C_inverse(1))
    return _right_polynomials(fam, MatrixPolynomial.zero(fam.dim), first, 1, m_max + 1)[1:]


GENERATORS = {'V': generate_V, 'B1': generate_B1, 'G': generate_G, 'G1': generate_G1}


class ValueStep(NamedTuple):
    """
    One step of a value recurrence.

    `current[j]` and `previous[j]` hold the j-th z-derivative at indices m and
    m-1, all multiplied by the common factor exp(-log_scale).
    """
    m: int
    current: tuple
    previous: tuple
    log_scale: float


def _initial_values(fam, kind, shape):
    dim = fam.dim
    zero = np.zeros(shape + (dim, dim), dtype=complex)
    if kind == 'V':
        return zero, np.broadcast_to(np.eye(dim, dtype=complex), zero.shape).copy(), 0
    if kind == 'B1':
        return zero, np.broadcast_to(fam.A_inverse(0), zero.shape).copy(), 1
    if kind == 'G':
        return zero, np.broadcast_to(fam.G0, zero.shape).copy(), 0
    if kind == 'G1':
        return zero, np.broadcast_to(fam.C_inverse(1), zero.shape).copy(), 1
    raise ValueError(f"Unknown polynomial kind {kind!r}, expected one of {KINDS}")


def iterate_values(fam, z, kind='V', order=0, m_max=None, rescale=True):
    """
    Runs a recurrence on values (and z-derivatives) at z instead of coefficients.

    With rescale=True the pair (previous, current) is divided by a common
    factor whenever it grows, which leaves ratios such as V_{m-1} V_m^-1
    unchanged and keeps long runs finite.

    Args:
        fam: The RecurrenceFamily.
        z: Complex scalar or array of points.
        kind: One of 'V', 'B1', 'G', 'G1'.
        order: Number of z-derivatives carried (0, 1 or 2).
        m_max: Last index produced, Config.DEFAULT_M_MAX by default.
        rescale: Whether to apply the common rescaling.

    Yields:
        ValueStep for m = 0..m_max (index m of the family, e.g. B1_m).

    Raises:
        ConvergenceError: If values overflow.
    """
    m_max = Config.DEFAULT_M_MAX if m_max is None else m_max
    z = np.asarray(z, dtype=complex)
    zz = z[..., np.newaxis, np.newaxis]
    previous_value, current_value, start = _initial_values(fam, kind, z.shape)
    zero = np.zeros_like(current_value)
    previous = (previous_value,) + (zero,) * order
    current = (current_value,) + (zero,) * order
    log_scale = 0.0
    right = kind in ('G', 'G1')
    yield ValueStep(0, current, previous, log_scale)
    for m in range(1, m_max + 1):
        k = start + m - 1
        new = []
        for j in range(order + 1):
            if right:
                step = current[j] * zz - current[j] @ fam.B(k)
                if k >= 1:
                    step = step - previous[j] @ fam.A(k - 1)
                if j >= 1:
                    step = step + j * current[j - 1]
                new.append(step @ fam.C_inverse(k + 1))
            else:
                step = zz * current[j] - fam.B(k) @ current[j] - fam.C(k) @ previous[j]
                if j >= 1:
                    step = step + j * current[j - 1]
                new.append(fam.A_inverse(k) @ step)
        previous, current = current, tuple(new)
        size = max(float(np.max(np.abs(c), initial=0.0)) for c in current)
        if not np.isfinite(size):
            raise ConvergenceError(f"{kind} values overflow at m={m} for {fam.name}")
        if rescale and size > 1e100:
            previous = tuple(p / size for p in previous)
            current = tuple(c / size for c in current)
            log_scale += float(np.log(size))
        yield ValueStep(m, current, previous, log_scale)


def values_at(fam, z, m_max, kind='V', order=0):
    """
    Unscaled values of a polynomial family and its derivatives at z.

    Returns:
        Array of shape (order+1, m_max+1) + z.shape + (N, N).

    Raises:
        ConvergenceError: If values overflow.
    """
    steps = list(iterate_values(fam, z, kind=kind, order=order, m_max=m_max, rescale=False))
    return np.stack([np.stack([step.current[j] for step in steps]) for j in range(order + 1)])


def transfer_matrix(fam, z):
    """
    Block transfer matrix [[A^-1(zI-B), -A^-1 C], [I, 0]] of a constant family.

    Raises:
        FamilyValidationError: If the family is not constant.
    """
    if not fam.constant:
        raise FamilyValidationError(f"Transfer matrices need a constant family, {fam.name} is not")
    A_inv = fam.A_inverse(0)
    B, C = fam.B(0), fam.C(0)
    dim = fam.dim
    identity = np.eye(dim, dtype=complex)
    return np.block([[A_inv @ (z * identity - B), -A_inv @ C], [identity, np.zeros((dim, dim))]])


def transfer_state(fam, z, m):
    """
    L_m = T^m L_0 = [[V_{m+1}, B1_m], [V_m, B1_{m-1}]] for a constant family.
    """
    T = transfer_matrix(fam, z)
    dim = fam.dim
    A_inv = fam.A_inverse(0)
    L0 = np.block([[T[:dim, :dim], A_inv], [np.eye(dim), np.zeros((dim, dim))]])
    return np.linalg.matrix_power(T, m) @ L0


def transform_initial_conditions(fam, t: InitialTriple, m_max, tol=1e-8):
    """
    Polynomials with initial conditions V^_0 = P, V^_1 = M + Qz, B^_{-1} = 0, B^_0 = Q.

    Computes the family by the direct recurrence and by the closed combination
    V^_m = V_m P + B1_{m-1}(AM + BP + (AQ - P)z), B^_{m-1} = B1_{m-1} A Q,
    and checks that both agree.

    Args:
        fam: A constant RecurrenceFamily.
        t: The InitialTriple (P, M, Q).
        m_max: Last index.
        tol: Agreement tolerance relative to the coefficient size.

    Returns:
        A tuple (V_hat, B_hat) of lists, B_hat[m] holding B^_{m-1}.

    Raises:
        FamilyValidationError: If the family is not constant or P, Q are singular.
        VerificationError: If the two routes disagree, naming m.
    """
    if not fam.constant:
        raise FamilyValidationError(f"Initial-condition transforms need a constant family, {fam.name} is not")
    P, M, Q = (as_matrix(x, fam.dim) for x in (t.P, t.M, t.Q))
    for label, matrix in (('P', P), ('Q', Q)):
        if np.linalg.cond(matrix) > 1.0 / np.finfo(float).eps:
            raise FamilyValidationError(f"{label} must be non-singular")
    A, B, _ = fam.coefficients(0)
    zero = MatrixPolynomial.zero(fam.dim)

    direct_V = _left_polynomials(fam, MatrixPolynomial.constant(P), MatrixPolynomial.linear(M, Q), 1, m_max)
    direct_B = _left_polynomials(fam, zero, MatrixPolynomial.constant(Q), 1, m_max)

    V = generate_V(fam, m_max)
    B1 = [zero] + generate_B1(fam, max(m_max - 1, 0))
    correction = MatrixPolynomial.linear(A @ M + B @ P, A @ Q - P)
    closed_V = [V[m] @ P + B1[m] @ correction for m in range(m_max + 1)]
    closed_B = [B1[m] @ (A @ Q) for m in range(m_max + 1)]

    for m in range(m_max + 1):
        for label, first, second in (('V', direct_V[m], closed_V[m]), ('B1', direct_B[m], closed_B[m])):
            scale = max(1.0, float(np.max(np.abs(first.coeffs))))
            if not first.allclose(second, tol * scale):
                raise VerificationError(f"Initial-condition routes disagree for {label} at m={m}")
    return direct_V[:m_max + 1], direct_B[:m_max + 1]


def leading_coefficients(polys):
    """
    Top coefficient matrix of each polynomial of a degree-graded list.

    Raises:
        PolynomialError: If p_m does not have degree m.
    """
    leading = []
    for m, p in enumerate(polys):
        if p.degree != m:
            raise PolynomialError(f"Expected degree {m}, got {p.degree}")
        if np.linalg.cond(p.leading) > 1.0 / np.finfo(float).eps:
            logger.warning(f"Leading coefficient of degree {m} is singular")
        leading.append(p.leading)
    return leading


class LeadingReport(NamedTuple):
    alpha: list
    beta: list
    alpha_error: float
    beta_error: float


def remark_leading_products(fam, m_max):
    """
    Predicted leading coefficients alpha_m = (Theta_0 A_0 ... A_{m-1})^-1 and
    beta_m = (C_m ... C_1 Delta_0)^-1, compared with the generated families.

    Returns:
        LeadingReport with the predicted matrices and the largest relative errors.
    """
    alpha_actual = leading_coefficients(generate_V(fam, m_max))
    beta_actual = leading_coefficients(generate_G(fam, m_max))
    left = fam.theta0.copy()
    right = fam.delta0.copy()
    alpha, beta = [np.linalg.inv(left)], [np.linalg.inv(right)]
    for m in range(1, m_max + 1):
        left = left @ fam.A(m - 1)
        right = fam.C(m) @ right
        alpha.append(np.linalg.inv(left))
        beta.append(np.linalg.inv(right))
    alpha_error = max(norm(a - b) / max(1.0, norm(b)) for a, b in zip(alpha, alpha_actual))
    beta_error = max(norm(a - b) / max(1.0, norm(b)) for a, b in zip(beta, beta_actual))
    return LeadingReport(alpha, beta, alpha_error, beta_error)


def liouville_residual(fam, m, z):
    """
    Relative residual of B1_m G0^-1 G_m - V_{m+1} G1_{m-1} = A_m^-1 at z.

    The residual is scaled by the size of the two terms that cancel.
    """
    V = values_at(fam, z, m + 1, 'V')[0]
    B1 = values_at(fam, z, m, 'B1')[0]
    G = values_at(fam, z, m, 'G')[0]
    first = B1[m] @ fam.G0_inverse @ G[m]
    second = np.zeros_like(first) if m == 0 else V[m + 1] @ values_at(fam, z, m - 1, 'G1')[0][m - 1]
    scale = max(1.0, norm(first) + norm(second))
    return norm(first - second - fam.A_inverse(m)) / scale
