import logging
from dataclasses import dataclass, field

import numpy as np

from config import Config
from services.polymat import MopnlError, cluster, companion_roots, det_and_adjugate, match_multisets
from services.recurrence import generate_B1, generate_V

logger = logging.getLogger(__name__)


class SpectralMismatchError(MopnlError):
    """
    Raised when the eigenvalues of J_m and the roots of det V_m disagree.
    """
    pass


class QuadratureError(MopnlError):
    """
    Raised when a quadrature weight cannot be formed at a zero.
    """
    pass


def truncated_jacobi(fam, m):
    """
    The mN x mN truncation of the block Jacobi matrix.

    Block row k holds C_k, B_k, A_k in columns k-1, k, k+1.
    """
    if m < 1:
        raise ValueError(f"Truncation order must be at least 1, got {m}")
    dim = fam.dim
    J = np.zeros((m * dim, m * dim), dtype=complex)
    for k in range(m):
        rows = slice(k * dim, (k + 1) * dim)
        J[rows, rows] = fam.B(k)
        if k + 1 < m:
            J[rows, (k + 1) * dim:(k + 2) * dim] = fam.A(k)
            J[(k + 1) * dim:(k + 2) * dim, rows] = fam.C(k + 1)
    return J


def _block_rows(fam, m_horizon):
    # (C_k, B_k, A_k) blocks of the infinite matrix for k < m_horizon, plus the limits
    blocks = []
    for k in range(m_horizon):
        C = np.zeros((fam.dim, fam.dim)) if k == 0 else fam.C(k)
        blocks.append((C, fam.B(k), fam.A(k)))
    if fam.limits is not None:
        A, B, C = fam.limits
        blocks.append((C, B, A))
    return blocks


def _horizon(fam, m_horizon):
    if m_horizon is None:
        m_horizon = 2 if fam.constant else Config.DEFAULT_M_MAX
    if fam.size is not None:
        m_horizon = min(m_horizon, fam.size)
    return m_horizon


def gershgorin_bound(fam, m_horizon=None):
    """
    Radius M of a disk |z| <= M holding the eigenvalues of every J_m.

    Args:
        fam: The RecurrenceFamily.
        m_horizon: Number of block rows inspected; with m_horizon=0 only the
            limit blocks count.

    Returns:
        The largest absolute row sum over the inspected block rows.
    """
    blocks = _block_rows(fam, _horizon(fam, m_horizon))
    if not blocks:
        raise ValueError(f"{fam.name} has neither coefficients in range nor limits")
    return max(float(np.max(np.abs(C).sum(axis=1) + np.abs(B).sum(axis=1) + np.abs(A).sum(axis=1)))
               for C, B, A in blocks)


def exterior_point(fam, z, m_horizon=None):
    """
    True when z lies outside every Gershgorin disc of the block Jacobi matrix.
    """
    for C, B, A in _block_rows(fam, _horizon(fam, m_horizon)):
        radii = np.abs(C).sum(axis=1) + np.abs(B).sum(axis=1) + np.abs(A).sum(axis=1) - np.abs(np.diag(B))
        if np.any(np.abs(z - np.diag(B)) <= radii):
            return False
    return True


def zeros_of_V(fam, m, tol=None, match_tol=None):
    """
    Zeros of V_m as clustered eigenvalues of J_m.

    The eigenvalues are cross-checked against the roots of det V_m, taken from
    the block companion matrix of V_m. A V_m with singular leading coefficient
    falls back to the determinant interpolated on a circle of the Gershgorin
    radius.

    Args:
        fam: The RecurrenceFamily.
        m: Polynomial index, at least 1.
        tol: Clustering tolerance, Config.CLUSTER_TOL by default.
        match_tol: Pairing tolerance, Config.MATCH_TOL by default.

    Returns:
        A list of (zero, multiplicity) tuples.

    Raises:
        SpectralMismatchError: If the two node sets differ, with both lists.
    """
    match_tol = Config.MATCH_TOL if match_tol is None else match_tol
    eigenvalues = np.linalg.eigvals(truncated_jacobi(fam, m))
    V_m = generate_V(fam, m)[m]
    roots = companion_roots(V_m)
    if roots is None:
        det, _ = det_and_adjugate(V_m, radius=max(Config.INTERP_RADIUS, gershgorin_bound(fam, m)))
        roots = det.roots()
    unmatched = match_multisets(eigenvalues, roots, match_tol)
    if unmatched:
        raise SpectralMismatchError(
            f"Zeros of V_{m} disagree: eigenvalues {sorted(eigenvalues, key=abs)} vs roots {sorted(roots, key=abs)}")
    return cluster(eigenvalues, tol)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: list
    weights: list = field(repr=False)

    @property
    def total_multiplicity(self):
        return sum(count for _, count in self.nodes)

    def moment0(self):
        return sum(self.weights)


def _nullity(matrix, rank_tol):
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    return int(np.sum(singular_values <= rank_tol * max(1.0, singular_values[0])))


def quadrature_weights(fam, m, tol=None, rank_tol=None):
    """
    Matrix quadrature rule at the zeros of V_m.

    The weight at a zero x of multiplicity l is
    l Adj(V_m)^(l-1)(x) B1_{m-1}(x) / det(V_m)^(l)(x), right-multiplied by G0^-1.

    Returns:
        The QuadratureRule.

    Raises:
        QuadratureError: If a multiple zero is not semisimple or the determinant
            derivative vanishes.
    """
    rank_tol = Config.MATCH_TOL if rank_tol is None else rank_tol
    nodes = zeros_of_V(fam, m, tol=tol)
    V_m = generate_V(fam, m)[m]
    B1 = generate_B1(fam, m - 1)[m - 1]
    det, adj = det_and_adjugate(V_m, radius=max(Config.INTERP_RADIUS, gershgorin_bound(fam, m)))
    weights = []
    for x, l in nodes:
        nullity = _nullity(V_m(x), rank_tol)
        if nullity != l:
            raise QuadratureError(f"Zero {x:.6g} of V_{m} has multiplicity {l} but nullity {nullity}")
        denominator = det.deriv(l)(x)
        if abs(denominator) <= np.finfo(float).eps * max(1.0, float(np.max(np.abs(det.coef)))):
            raise QuadratureError(f"Derivative of det V_{m} of order {l} vanishes at {x:.6g}")
        numerator = l * adj.derivative(l - 1)(x) @ B1(x)
        weights.append(numerator / denominator @ fam.G0_inverse)
    logger.debug(f"Quadrature rule of order {m} with {len(nodes)} distinct nodes")
    return QuadratureRule(nodes, weights)


def quadrature_apply(rule, p):
    """Sum of p(x_k) Gamma_k over the nodes."""
    return sum(p(x) @ weight for (x, _), weight in zip(rule.nodes, rule.weights))
