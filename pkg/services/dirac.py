import logging
from dataclasses import dataclass
from math import factorial
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P

from config import Config
from services.markov import FamilyMarkov, PerturbedMarkov, contour_moments, contour_pairing
from services.polymat import MatrixPolynomial, MopnlError, VerificationError, as_matrix, norm
from services.recurrence import ConvergenceError, generate_G, generate_V, values_at

logger = logging.getLogger(__name__)


class RegularityError(MopnlError):
    """
    Raised when the perturbed functional is not quasi-definite at some index.
    """
    pass


@dataclass(frozen=True)
class DeltaSpec:
    """
    Point functionals delta_c, delta'_c, ..., delta^(M)_c for each (c, M).

    The distributional sign convention <delta^(o)_c, p> = (-1)^o p^(o)(c) is used.
    """
    points: tuple

    def __post_init__(self):
        points = tuple((complex(c), int(M)) for c, M in self.points)
        for c, M in points:
            if M < 0:
                raise ValueError(f"Derivative order M must be non-negative at c={c}, got {M}")
        if not points:
            raise ValueError("A DeltaSpec needs at least one point")
        object.__setattr__(self, 'points', points)

    @property
    def dim(self):
        return sum(M + 1 for _, M in self.points)

    def functionals(self):
        return [(c, order) for c, M in self.points for order in range(M + 1)]

    def h(self):
        """h(x) = prod (x - c_j)^(M_j + 1)."""
        roots = [c for c, M in self.points for _ in range(M + 1)]
        return Polynomial(P.polyfromroots(roots))

    def check_dimension(self, dim):
        if self.dim != dim:
            raise ValueError(f"Delta functionals count {self.dim} but the family dimension is {dim}")


def delta_values(spec, p):
    """Values <delta^(o)_c, p> of every functional on a scalar polynomial p."""
    p = p if isinstance(p, Polynomial) else Polynomial(p)
    return np.array([(-1) ** order * p.deriv(order)(c) for c, order in spec.functionals()], dtype=complex)


def delta_on_P0(spec, dim=None):
    """
    Moment matrix delta(P_0): row i is the monomial x^i, column j the j-th functional.

    Returns:
        The N x N complex matrix.
    """
    dim = spec.dim if dim is None else dim
    spec.check_dimension(dim)
    matrix = np.zeros((dim, dim), dtype=complex)
    for j, (c, order) in enumerate(spec.functionals()):
        for i in range(order, dim):
            matrix[i, j] = (-1) ** order * factorial(i) // factorial(i - order) * c ** (i - order)
    return matrix


def lift(p, spec):
    """
    Vector polynomial p(h(x)) P_0(x) with P_0(x) = [1, x, ..., x^(N-1)]^T.

    Args:
        p: MatrixPolynomial in the h-variable.
        spec: DeltaSpec providing h.

    Returns:
        A list of N numpy Polynomials in x.
    """
    h = spec.h()
    powers = [Polynomial([1.0])]
    for _ in range(p.degree):
        powers.append(powers[-1] * h)
    entries = []
    for i in range(p.dim):
        total = Polynomial([0.0])
        for k in range(p.dim):
            monomial = Polynomial([0.0] * k + [1.0])
            for j, hj in enumerate(powers):
                total = total + p.coeffs[j][i, k] * hj * monomial
        entries.append(total.trim(0))
    return entries


def _kernel_routes(fam, m, point=0.0):
    V = values_at(fam, point, m + 1, 'V', order=1)
    G = values_at(fam, point, m + 1, 'G')[0]
    direct = sum(G[k] @ V[0][k] for k in range(m + 1))
    confluent = G[m] @ fam.A(m) @ V[1][m + 1] - G[m + 1] @ fam.C(m + 1) @ V[1][m]
    return direct, confluent


def kernel_at_zero(fam, m, tol=None):
    """
    K_{m+1}(0, 0) = sum_{k<=m} G_k(0) V_k(0), checked against the confluent
    Christoffel-Darboux form G_m(0) A_m V'_{m+1}(0) - G_{m+1}(0) C_{m+1} V'_m(0).

    Raises:
        VerificationError: If the two routes disagree.
    """
    tol = Config.VERIFY_TOL if tol is None else tol
    direct, confluent = _kernel_routes(fam, m)
    if norm(direct - confluent) > tol * max(1.0, norm(direct)):
        raise VerificationError(f"Kernel at zero disagrees with its confluent form at m={m}")
    return direct


def kernel_eval(fam, m, x, y):
    """K_m(x, y) = sum_{k<m} G_k(y) V_k(x)."""
    if m == 0:
        return np.zeros((fam.dim, fam.dim), dtype=complex)
    V = values_at(fam, x, m - 1, 'V')[0]
    G = values_at(fam, y, m - 1, 'G')[0]
    return sum(G[k] @ V[k] for k in range(m))


def cd_residual(fam, m, x, z):
    """
    Relative residual of the Christoffel-Darboux identity
    (x - z) sum_{k<=m} G_k(z) V_k(x) = G_m(z) A_m V_{m+1}(x) - G_{m+1}(z) C_{m+1} V_m(x).
    """
    V = values_at(fam, x, m + 1, 'V')[0]
    G = values_at(fam, z, m + 1, 'G')[0]
    left = (x - z) * sum(G[k] @ V[k] for k in range(m + 1))
    first = G[m] @ fam.A(m) @ V[m + 1]
    second = G[m + 1] @ fam.C(m + 1) @ V[m]
    return norm(left - first + second) / max(1.0, norm(first) + norm(second))


def confluent_residual(fam, m):
    direct, confluent = _kernel_routes(fam, m)
    return norm(direct - confluent) / max(1.0, norm(direct))


def reproducing_residual(fam, j, m, spec=None):
    """
    Largest coefficient error of sum_{k<=m} <V_j, G_k> V_k - V_j, the pairing taken on a contour.
    """
    V = generate_V(fam, max(j, m))
    G = generate_G(fam, m)
    markov = FamilyMarkov(fam)
    total = MatrixPolynomial.zero(fam.dim)
    for k in range(m + 1):
        total = total + contour_pairing(V[j], markov, G[k], spec) @ V[k]
    return float(np.max(np.abs((total - V[j]).coeffs)))


class RegularityReport(NamedTuple):
    regular: bool
    condition: float
    matrix: np.ndarray


class PerturbedFamily:
    """
    Family bi-orthogonal to the functional U + Lambda delta.

    Values of the base family at the zero locus are computed once and reused
    for every index.
    """

    def __init__(self, family, delta, lam, normalization=None, cond_max=None):
        """
        Args:
            family: The base RecurrenceFamily.
            delta: DeltaSpec whose functional count equals the dimension.
            lam: The matrix Lambda.
            normalization: Function of m returning D_m, identity by default.
            cond_max: Regularity threshold, Config.REGULARITY_COND_MAX by default.
        """
        delta.check_dimension(family.dim)
        self.family = family
        self.delta = delta
        self.lam = as_matrix(lam, family.dim)
        self.delta_moment = delta_on_P0(delta)
        self.S = self.delta_moment @ self.lam.T
        self.normalization = normalization or (lambda m: np.eye(family.dim, dtype=complex))
        self.cond_max = Config.REGULARITY_COND_MAX if cond_max is None else cond_max
        self._zero_values = None
        self._V = []
        self._G = []

    @property
    def identity(self):
        return np.eye(self.family.dim, dtype=complex)

    def zero_values(self, m):
        """
        (V_k(0), G_k(0), K_{k+1}(0, 0)) stacked for k = 0..m+1.
        """
        if self._zero_values is None or self._zero_values[0].shape[0] < m + 2:
            size = max(m + 1, 2 * (0 if self._zero_values is None else self._zero_values[0].shape[0]))
            V = values_at(self.family, 0.0, size, 'V')[0]
            G = values_at(self.family, 0.0, size, 'G')[0]
            K = np.cumsum(G @ V, axis=0)
            if not np.all(np.isfinite(K)):
                raise ConvergenceError(f"Kernel at zero overflows before m={size} for {self.family.name}")
            self._zero_values = (V, G, K)
        return self._zero_values

    def base_V(self, m):
        if len(self._V) <= m:
            self._V = generate_V(self.family, max(m, 2 * len(self._V)))
        return self._V

    def base_G(self, m):
        if len(self._G) <= m:
            self._G = generate_G(self.family, max(m, 2 * len(self._G)))
        return self._G

    def kernel(self, m):
        return self.zero_values(m)[2][m]

    def __repr__(self):
        return f"PerturbedFamily(base={self.family.name!r}, points={self.delta.points})"


def regularity_check(pf, m):
    """
    Quasi-definiteness test of I + delta(P_0) Lambda^T K_{m+1}(0, 0).

    Returns:
        RegularityReport with the condition number (inf when exactly singular).
    """
    matrix = pf.identity + pf.S @ pf.kernel(m)
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    condition = np.inf if singular_values[-1] == 0 else float(singular_values[0] / singular_values[-1])
    regular = condition <= pf.cond_max
    if not regular:
        logger.info(f"Perturbation of {pf.family.name} is singular at m={m}, condition {condition:.3e}")
    return RegularityReport(regular, condition, matrix)


def _regular_matrix(pf, m):
    report = regularity_check(pf, m)
    if not report.regular:
        raise RegularityError(f"I + delta(P_0) Lambda^T K_{m + 1}(0, 0) is singular at m={m}")
    return report.matrix


def perturbed_value_at_zero(pf, m):
    """V~_m(0) = D_m V_m(0) (I + S K_{m+1}(0, 0))^-1."""
    V, _, _ = pf.zero_values(m)
    return pf.normalization(m) @ V[m] @ np.linalg.inv(_regular_matrix(pf, m))


def perturbed_V(pf, m):
    """
    Left perturbed polynomial V~_m = D_m V_m - V~_m(0) S K_{m+1}(z, 0).

    Raises:
        RegularityError: If the regularity matrix is singular at m.
    """
    V0, G0, _ = pf.zero_values(m)
    V = pf.base_V(m)
    kernel = MatrixPolynomial.zero(pf.family.dim)
    for k in range(m + 1):
        kernel = kernel + G0[k] @ V[k]
    correction = perturbed_value_at_zero(pf, m) @ pf.S
    return pf.normalization(m) @ V[m] - correction @ kernel


def _phi(pf, m):
    V0, G0, K = pf.zero_values(m)
    inner = np.linalg.inv(_regular_matrix(pf, m))
    return pf.identity - V0[m] @ inner @ pf.S @ G0[m]


def perturbed_G(pf, m):
    """
    Right perturbed polynomial, the mirror image of `perturbed_V`.

    G~_m = (G_m - sum_{k<=m} G_k(z) V_k(0) S G^_m(0)) Phi_m^-1 D_m^-1 with
    G^_m(0) = (I + K S)^-1 G_m(0), so that the perturbed pairing is I delta_mn.
    """
    V0, G0, K = pf.zero_values(m)
    G = pf.base_G(m)
    _regular_matrix(pf, m)
    mirror = MatrixPolynomial.zero(pf.family.dim)
    for k in range(m + 1):
        mirror = mirror + G[k] @ V0[k]
    at_zero = np.linalg.solve(pf.identity + K[m] @ pf.S, G0[m])
    raw = G[m] - mirror @ (pf.S @ at_zero)
    phi = _phi(pf, m)
    if np.linalg.cond(phi) > pf.cond_max:
        raise RegularityError(f"Leading-coefficient ratio is singular at m={m}")
    return raw @ np.linalg.inv(pf.normalization(m) @ phi)


def phi_closed_form(pf, m):
    """I - V_m(0) (I + S K_{m+1}(0, 0))^-1 S G_m(0)."""
    return _phi(pf, m)


def phi_from_leading(pf, m):
    """(beta_m)^-1 beta~_m alpha~_m (alpha_m)^-1 from the leading coefficients."""
    alpha = pf.base_V(m)[m].leading
    beta = pf.base_G(m)[m].leading
    alpha_tilde = perturbed_V(pf, m).leading
    beta_tilde = perturbed_G(pf, m).leading
    return np.linalg.solve(beta, beta_tilde) @ alpha_tilde @ np.linalg.inv(alpha)


def perturbed_recurrence(pf, m, points=None, tol=None):
    """
    Coefficients with z V~_m = a1 V_{m+1} + a2 V_m + a3 V_{m-1}.

    a1 = D_m A_m - L_m G_m(0) A_m, a2 = D_m B_m + L_m G_{m+1}(0) C_{m+1},
    a3 = D_m C_m, where L_m = V~_m(0) S.

    Args:
        pf: The PerturbedFamily.
        m: Index, at least 1.
        points: Sample points for the residual check, random by default.
        tol: Relative residual tolerance, Config.VERIFY_TOL by default.

    Returns:
        The tuple (a1, a2, a3).

    Raises:
        VerificationError: If the residual check fails, with m and the matrices.
    """
    tol = Config.VERIFY_TOL if tol is None else tol
    fam = pf.family
    _, G0, _ = pf.zero_values(m + 1)
    D = pf.normalization(m)
    L = perturbed_value_at_zero(pf, m) @ pf.S
    a1 = D @ fam.A(m) - L @ G0[m] @ fam.A(m)
    a2 = D @ fam.B(m) + L @ G0[m + 1] @ fam.C(m + 1)
    a3 = D @ fam.C(m)
    if points is None:
        rng = np.random.default_rng(Config.SEED)
        points = 2 * rng.random(5) * np.exp(2j * np.pi * rng.random(5))
    points = np.asarray(points, dtype=complex)
    V = values_at(fam, points, m + 1, 'V')[0]
    left = points[:, np.newaxis, np.newaxis] * perturbed_V(pf, m)(points)
    right = a1 @ V[m + 1] + a2 @ V[m] + (a3 @ V[m - 1] if m >= 1 else 0)
    scale = max(1.0, float(np.max(np.linalg.norm(left, ord=2, axis=(-2, -1)))))
    residual = float(np.max(np.linalg.norm(left - right, ord=2, axis=(-2, -1)))) / scale
    if residual > tol:
        raise VerificationError(f"Perturbed recurrence residual {residual:.3e} at m={m}: a1={a1}, a2={a2}, a3={a3}")
    return a1, a2, a3


def perturbed_biorthogonality(pf, m, n, spec=None):
    """Contour pairing of V~_m and G~_n against F~ = F + S/z."""
    markov = PerturbedMarkov(FamilyMarkov(pf.family), pf.S)
    return contour_pairing(perturbed_V(pf, m), markov, perturbed_G(pf, n), spec)


class MomentReport(NamedTuple):
    zeroth: float
    higher: float


def moment_invariance(pf, spec=None, k_max=4):
    """
    Contour moments of F~ against F: the zeroth differs by S, the others agree.

    Returns:
        MomentReport with the error of the zeroth moment shift and the largest
        difference among moments 1..k_max.
    """
    base = FamilyMarkov(pf.family)
    perturbed = PerturbedMarkov(base, pf.S)
    first = contour_moments(base, spec, k_max)
    second = contour_moments(perturbed, spec, k_max)
    zeroth = norm(second[0] - first[0] - pf.S)
    higher = max((norm(b - a) for a, b in zip(first[1:], second[1:])), default=0.0)
    return MomentReport(zeroth, higher)
