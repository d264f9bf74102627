import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.linalg import eig_banded

from services.dirac import DeltaSpec, delta_values, lift
from services.polymat import MopnlError
from services.recurrence import RecurrenceFamily, generate_V

logger = logging.getLogger(__name__)


class GramBreakdownError(MopnlError):
    """
    Raised when the Sobolev inner product is not positive on a new direction.
    """
    pass


def lebesgue_moments(count):
    """Moments of dx on [-1, 1]: 2/(k+1) for even k, 0 for odd k."""
    return [2.0 / (k + 1) if k % 2 == 0 else 0.0 for k in range(count)]


def moments_to_recurrence(moments, n):
    """
    Three-term coefficients of the monic orthogonal polynomials from monomial moments.

    Modified Chebyshev algorithm with the monomial basis.

    Args:
        moments: At least 2n moments of a positive measure.
        n: Number of coefficient pairs.

    Returns:
        (alpha, beta) arrays of length n, beta[0] the total mass.
    """
    mom = np.asarray(moments, dtype=float)
    if mom.size < 2 * n:
        raise ValueError(f"{2 * n} moments are needed for {n} recurrence coefficients, got {mom.size}")
    alpha = np.zeros(n)
    beta = np.zeros(n)
    sig = np.zeros((n + 1, 2 * n))
    alpha[0] = mom[1] / mom[0]
    beta[0] = mom[0]
    sig[1, :] = mom[:2 * n]
    for k in range(2, n + 1):
        for l in range(k - 1, 2 * n - k + 1):
            sig[k, l] = sig[k - 1, l + 1] - alpha[k - 2] * sig[k - 1, l] - beta[k - 2] * sig[k - 2, l]
        alpha[k - 1] = sig[k, k] / sig[k, k - 1] - sig[k - 1, k - 1] / sig[k - 1, k - 2]
        beta[k - 1] = sig[k, k - 1] / sig[k - 1, k - 2]
    return alpha, beta


def gauss_rule(moments, n):
    """
    n-point Gauss rule of the measure with the given moments.

    Returns:
        (nodes, weights), exact for polynomials of degree 2n - 1.
    """
    alpha, beta = moments_to_recurrence(moments, n)
    if np.any(beta <= 0):
        raise GramBreakdownError("Moments do not come from a positive measure")
    banded = np.vstack((np.sqrt(np.concatenate(([0.0], beta[1:]))), alpha))
    nodes, vectors = eig_banded(banded, lower=False)
    weights = beta[0] * vectors[0, :] ** 2
    return nodes, weights


class SobolevInnerProduct:
    """
    <f, g>_S = sum_k w_k f(x_k) g(x_k) + lam f'(0) g'(0) for numpy Polynomials.
    """

    def __init__(self, nodes, weights, lam):
        self.nodes = np.asarray(nodes, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.lam = float(lam)

    def __call__(self, f, g):
        discrete = float(np.sum(self.weights * f(self.nodes) * g(self.nodes)))
        return discrete + self.lam * float(f.deriv()(0.0)) * float(g.deriv()(0.0))

    def vector_functional(self, f, spec):
        """
        (u1(f), u2(f)) with u1(f) = sum w f and u2(f) = sum w x f + lam f'(0).

        The point part comes from the derivative functional at 0, whose sign
        convention is absorbed by Lambda = diag(0, -lam).
        """
        base = np.array([np.sum(self.weights * f(self.nodes)),
                         np.sum(self.weights * self.nodes * f(self.nodes))])
        lam = np.diag([0.0, -self.lam])
        return base + (lam @ delta_values(spec, f)).real


def sobolev_orthonormal(inner, degree):
    """
    Orthonormal p~_0..p~_degree by Arnoldi with reorthogonalization (x p~_{n-1} projected twice).

    Raises:
        GramBreakdownError: If a new direction has non-positive Sobolev norm.
    """
    x = Polynomial([0.0, 1.0])
    first = inner(Polynomial([1.0]), Polynomial([1.0]))
    if first <= 0:
        raise GramBreakdownError("Constant polynomial has non-positive Sobolev norm")
    polys = [Polynomial([1.0 / np.sqrt(first)])]
    for n in range(1, degree + 1):
        q = x * polys[-1]
        start = inner(q, q)
        for _ in range(2):
            q = q - sum((inner(q, p) * p for p in polys), Polynomial([0.0]))
        size = inner(q, q)
        if size <= 1e-12 * max(1.0, start):
            raise GramBreakdownError(f"Sobolev Gram-Schmidt breaks down at degree {n}")
        polys.append((q / np.sqrt(size)).trim(0))
    return polys


@dataclass
class SobolevPack:
    polynomials: list
    coefficients: np.ndarray
    A: list
    B: list
    C: list
    family: RecurrenceFamily
    initial: np.ndarray
    report: dict = field(default_factory=dict)


def _blocks(inner, polys, m_blocks):
    x2 = Polynomial([0.0, 0.0, 1.0])
    A, B = [], []
    for m in range(m_blocks + 1):
        A.append(np.array([[inner(x2 * polys[2 * m + i], polys[2 * m + 2 + j]) for j in range(2)]
                           for i in range(2)]))
        B.append(np.array([[inner(x2 * polys[2 * m + i], polys[2 * m + j]) for j in range(2)]
                           for i in range(2)]))
    C = [A[0].T] + [A[m - 1].T for m in range(1, m_blocks + 1)]
    return A, B, C


def sobolev_pack(moments, lam, n_max=9):
    """
    Five-term Sobolev recurrence and its 2 x 2 block packing.

    Args:
        moments: Monomial moments of the measure.
        lam: Weight of the derivative term at 0.
        n_max: Largest degree whose five-term relation is verified.

    Returns:
        SobolevPack with the polynomials, c[n, i] = <x^2 p~_n, p~_{n-i}>_S,
        the blocks and a report of residuals.

    Raises:
        ValueError: If there are too few moments.
        GramBreakdownError: If the inner product is not positive definite.
    """
    top = n_max + 2
    rule_size = top + 1
    nodes, weights = gauss_rule(moments, rule_size)
    inner = SobolevInnerProduct(nodes, weights, lam)
    polys = sobolev_orthonormal(inner, top)
    x2 = Polynomial([0.0, 0.0, 1.0])

    coefficients = np.zeros((top + 1, 3))
    for n in range(top + 1):
        for i in range(3):
            if n - i >= 0:
                coefficients[n, i] = inner(x2 * polys[n], polys[n - i])

    five_term = 0.0
    for n in range(n_max + 1):
        r = x2 * polys[n]
        for j in range(max(0, n - 2), n + 3):
            r = r - inner(x2 * polys[n], polys[j]) * polys[j]
        five_term = max(five_term, np.sqrt(max(inner(r, r), 0.0)))
    symmetry = max(abs(inner(x2 * polys[n], polys[n + i]) - coefficients[n + i, i])
                   for n in range(top - 1) for i in range(3) if n + i <= top)

    m_blocks = (top - 3) // 2
    A, B, C = _blocks(inner, polys, m_blocks)
    family = RecurrenceFamily.tabulated_family(list(zip(A, B, C)), name=f"sobolev(lam={lam})")
    initial = np.array([[polys[0].coef[0], 0.0],
                        [polys[1].coef[0], polys[1].coef[1] if polys[1].degree() >= 1 else 0.0]])

    spec = DeltaSpec(((0.0, 1),))
    V = generate_V(family, m_blocks)
    packing = 0.0
    for m in range(m_blocks + 1):
        lifted = lift(V[m] @ initial, spec)
        for i in range(2):
            difference = (lifted[i] - polys[2 * m + i]).coef
            scale = max(1.0, float(np.max(np.abs(polys[2 * m + i].coef))))
            packing = max(packing, float(np.max(np.abs(difference))) / scale)

    orthogonality = 0.0
    for m in range(1, m_blocks + 1):
        for k in range(m):
            for i in range(2):
                values = inner.vector_functional(x2 ** k * polys[2 * m + i], spec)
                orthogonality = max(orthogonality, float(np.max(np.abs(values))))

    report = {
        'five_term_residual': float(five_term),
        'symmetry_error': float(symmetry),
        'block_symmetry_error': max(float(np.max(np.abs(b - b.T))) for b in B),
        'packing_error': packing,
        'vector_orthogonality_error': orthogonality,
    }
    logger.info(f"Sobolev pack lam={lam}: {report}")
    return SobolevPack(polys, coefficients, A, B, C, family, initial, report)
