import logging
from math import factorial

import numpy as np
from numpy.polynomial import Polynomial

from config import Config

logger = logging.getLogger(__name__)


class MopnlError(Exception):
    """
    Base exception for every error raised by the mopnl services.
    """
    pass


class PolynomialError(MopnlError):
    """
    Raised when a polynomial operation receives unusable input.
    """
    pass


class VerificationError(MopnlError):
    """
    Raised when two independent computations of the same quantity disagree.
    """
    pass


def as_matrix(value, dim=None):
    """
    Converts a scalar, nested list or array into a square complex matrix.

    Args:
        value: Scalar or array-like with two dimensions.
        dim: Expected dimension, checked when given.

    Returns:
        A complex numpy array of shape (N, N).

    Raises:
        PolynomialError: If the value is not square or has the wrong dimension.
    """
    matrix = np.array(value, dtype=complex)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise PolynomialError(f"Expected a square matrix, got shape {matrix.shape}")
    if dim is not None and matrix.shape[0] != dim:
        raise PolynomialError(f"Expected a {dim}x{dim} matrix, got {matrix.shape[0]}x{matrix.shape[0]}")
    return matrix


def matrices_close(a, b, atol):
    """Entrywise comparison with an explicit absolute tolerance."""
    return bool(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0) <= atol)


def norm(matrix):
    # spectral norm, the norm used by every reported error
    return float(np.linalg.norm(matrix, 2))


class MatrixPolynomial:
    """
    Polynomial in z with N x N complex matrix coefficients.

    Coefficients are stored by power, index j holding the coefficient of z^j.
    Exact-zero leading coefficients are trimmed on construction, so the stored
    degree is the true degree except for the zero polynomial (degree 0).
    Instances are immutable.
    """

    __array_ufunc__ = None

    def __init__(self, coeffs):
        array = np.array(coeffs, dtype=complex)
        if array.ndim == 2:
            array = array[np.newaxis]
        if array.ndim != 3 or array.shape[1] != array.shape[2] or array.shape[0] == 0:
            raise PolynomialError(f"Coefficients must have shape (deg+1, N, N), got {array.shape}")
        while array.shape[0] > 1 and not array[-1].any():
            array = array[:-1]
        array.setflags(write=False)
        self._coeffs = array

    @classmethod
    def constant(cls, matrix):
        return cls(as_matrix(matrix)[np.newaxis])

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim)[np.newaxis])

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((1, dim, dim)))

    @classmethod
    def linear(cls, constant, slope):
        """Builds constant + slope*z."""
        return cls(np.stack([as_matrix(constant), as_matrix(slope)]))

    @property
    def coeffs(self):
        return self._coeffs

    @property
    def dim(self):
        return self._coeffs.shape[1]

    @property
    def degree(self):
        return self._coeffs.shape[0] - 1

    @property
    def leading(self):
        return self._coeffs[-1]

    def is_zero(self):
        return not self._coeffs.any()

    def __call__(self, z):
        """
        Horner evaluation at a scalar or an array of points.

        Returns:
            An array of shape z.shape + (N, N).
        """
        z = np.asarray(z, dtype=complex)[..., np.newaxis, np.newaxis]
        result = np.broadcast_to(self._coeffs[-1], z.shape[:-2] + self._coeffs.shape[1:]).copy()
        for coefficient in self._coeffs[-2::-1]:
            result = result * z + coefficient
        return result

    def derivative(self, k=1):
        if k < 0:
            raise PolynomialError(f"Derivative order must be non-negative, got {k}")
        if k == 0:
            return self
        if k > self.degree:
            return MatrixPolynomial.zero(self.dim)
        powers = np.arange(k, self.degree + 1)
        factors = np.array([factorial(j) // factorial(j - k) for j in powers], dtype=float)
        return MatrixPolynomial(self._coeffs[k:] * factors[:, np.newaxis, np.newaxis])

    def _padded(self, degree):
        pad = degree - self.degree
        if pad <= 0:
            return self._coeffs
        return np.concatenate([self._coeffs, np.zeros((pad,) + self._coeffs.shape[1:], dtype=complex)])

    def __add__(self, other):
        if not isinstance(other, MatrixPolynomial):
            other = MatrixPolynomial.constant(other)
        degree = max(self.degree, other.degree)
        return MatrixPolynomial(self._padded(degree) + other._padded(degree))

    def __neg__(self):
        return MatrixPolynomial(-self._coeffs)

    def __sub__(self, other):
        if not isinstance(other, MatrixPolynomial):
            other = MatrixPolynomial.constant(other)
        return self + (-other)

    def __mul__(self, scalar):
        return MatrixPolynomial(self._coeffs * complex(scalar))

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, MatrixPolynomial):
            product = np.zeros((self.degree + other.degree + 1, self.dim, other.dim), dtype=complex)
            for i, left in enumerate(self._coeffs):
                for j, right in enumerate(other.coeffs):
                    product[i + j] += left @ right
            return MatrixPolynomial(product)
        return MatrixPolynomial(self._coeffs @ as_matrix(other))

    def __rmatmul__(self, other):
        return MatrixPolynomial(as_matrix(other) @ self._coeffs)

    def shift(self):
        """Multiplies by z."""
        return MatrixPolynomial(np.concatenate([np.zeros((1,) + self._coeffs.shape[1:]), self._coeffs]))

    def allclose(self, other, atol):
        degree = max(self.degree, other.degree)
        return matrices_close(self._padded(degree), other._padded(degree), atol)

    def entry(self, i, j):
        """The (i, j) entry as a scalar polynomial."""
        return Polynomial(self._coeffs[:, i, j])

    def __repr__(self):
        return f"MatrixPolynomial(dim={self.dim}, degree={self.degree})"


def evaluate(p, z):
    """
    Evaluates a matrix polynomial at z by Horner's rule.

    Args:
        p: The MatrixPolynomial.
        z: A complex scalar or array of points.

    Returns:
        The value(s) p(z).
    """
    return p(z)


def derivative(p, k=1):
    return p.derivative(k)


def adjugate(matrix):
    """
    Adjugate of a (stack of) square matrices by cofactor expansion.

    Args:
        matrix: Array of shape (..., N, N).

    Returns:
        Array of the same shape holding Adj(matrix).
    """
    matrix = np.asarray(matrix, dtype=complex)
    dim = matrix.shape[-1]
    if dim == 1:
        return np.ones_like(matrix)
    result = np.empty_like(matrix)
    for i in range(dim):
        for j in range(dim):
            minor = np.delete(np.delete(matrix, j, axis=-2), i, axis=-1)
            result[..., i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return result


def companion_roots(p, cond_max=1e12):
    """
    Roots of det p as eigenvalues of the block companion matrix of L^-1 p.

    This avoids expanding det p, whose monomial coefficients lose the roots once
    N * deg grows past a dozen or so.

    Args:
        p: Square MatrixPolynomial.
        cond_max: Largest condition number accepted for the leading coefficient L.

    Returns:
        A numpy array of N * deg roots, or None when p is constant or L is
        numerically singular.
    """
    degree, dim = p.degree, p.dim
    if degree == 0 or np.linalg.cond(p.leading) > cond_max:
        return None
    monic = np.linalg.solve(p.leading, p.coeffs[:degree].transpose(1, 0, 2).reshape(dim, dim * degree))
    companion = np.zeros((dim * degree, dim * degree), dtype=complex)
    companion[:-dim, dim:] = np.eye(dim * (degree - 1))
    companion[-dim:, :] = -monic
    return np.linalg.eigvals(companion)


def root_radius(p, cond_max=1e12):
    """Largest root modulus of det p, None when `companion_roots` has no answer."""
    roots = companion_roots(p, cond_max)
    return None if roots is None else float(np.max(np.abs(roots)))


def det_and_adjugate(p, radius=None):
    """
    Determinant and adjugate of a matrix polynomial by evaluation and interpolation.

    The polynomial is sampled at deg*N + 1 equispaced points on a circle; the
    coefficients follow from a discrete Fourier transform of the samples.

    Args:
        p: Square MatrixPolynomial.
        radius: Radius of the sampling circle. Defaults to the larger of
            Config.INTERP_RADIUS and the root radius of the block companion matrix.

    Returns:
        A tuple (det, adj) with det a numpy Polynomial and adj a MatrixPolynomial
        such that p(z) Adj(z) = det(z) I.

    Raises:
        PolynomialError: If p is not a MatrixPolynomial.
    """
    if not isinstance(p, MatrixPolynomial):
        raise PolynomialError(f"Expected a MatrixPolynomial, got {type(p).__name__}")
    if radius is None:
        radius = max(Config.INTERP_RADIUS, root_radius(p) or 0.0)
    radius = float(radius)
    dim, degree = p.dim, p.degree
    samples = degree * dim + 1
    scale = radius ** np.arange(samples)
    points = radius * np.exp(2j * np.pi * np.arange(samples) / samples)
    values = p(points)

    det_coeffs = np.fft.fft(np.linalg.det(values)) / samples / scale
    det = Polynomial(det_coeffs).trim(0)

    adj_degree = degree * (dim - 1)
    adj_coeffs = np.fft.fft(adjugate(values), axis=0) / samples / scale[:, np.newaxis, np.newaxis]
    adj = MatrixPolynomial(adj_coeffs[:adj_degree + 1])
    return det, adj


def cluster(values, tol=None):
    """
    Greedy clustering of complex numbers.

    A value joins the first cluster whose centre lies within tol*(1+|value|);
    the centre is the running mean of its members.

    Args:
        values: Iterable of complex numbers.
        tol: Relative clustering tolerance, Config.CLUSTER_TOL by default.

    Returns:
        A list of (centre, count) tuples ordered by real then imaginary part.
    """
    tol = Config.CLUSTER_TOL if tol is None else tol
    ordered = sorted((complex(v) for v in values), key=lambda v: (v.real, v.imag))
    clusters = []
    for value in ordered:
        for members in clusters:
            centre = sum(members) / len(members)
            if abs(value - centre) <= tol * (1.0 + abs(value)):
                members.append(value)
                break
        else:
            clusters.append([value])
    return [(sum(members) / len(members), len(members)) for members in clusters]


def expand(clustered):
    """Expands (value, multiplicity) pairs back into a flat list."""
    return [value for value, count in clustered for _ in range(count)]


def match_multisets(first, second, tol):
    """
    Nearest-neighbour matching of two multisets of complex numbers.

    Args:
        first: Sequence of complex numbers.
        second: Sequence of complex numbers.
        tol: Relative tolerance, a pair matches when |a-b| <= tol*(1+|a|).

    Returns:
        The list of values of `first` that found no partner (empty on success,
        all of them when the sizes differ).
    """
    first = [complex(v) for v in first]
    remaining = [complex(v) for v in second]
    if len(first) != len(remaining):
        return first
    unmatched = []
    for value in first:
        distances = [abs(value - other) for other in remaining]
        best = int(np.argmin(distances))
        if distances[best] <= tol * (1.0 + abs(value)):
            remaining.pop(best)
        else:
            unmatched.append(value)
    return unmatched


def scalar_roots(q, tol=None):
    """
    Roots of a scalar polynomial with multiplicities.

    Roots come from the eigenvalues of the companion matrix and are merged by
    `cluster`.

    Args:
        q: A numpy Polynomial or a coefficient sequence indexed by power.
        tol: Relative clustering tolerance, Config.CLUSTER_TOL by default.

    Returns:
        A list of (root, multiplicity) tuples.

    Raises:
        PolynomialError: If q is the zero polynomial.
    """
    q = q if isinstance(q, Polynomial) else Polynomial(np.asarray(q, dtype=complex))
    q = q.trim(0)
    if not np.any(q.coef):
        raise PolynomialError("Cannot compute the roots of the zero polynomial")
    if q.degree() < 1:
        return []
    roots = q.roots()
    logger.debug(f"Computed {len(roots)} roots of a degree {q.degree()} polynomial")
    return cluster(roots, tol)
