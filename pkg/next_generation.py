"""
Integral operators of a finite SIS model, the effective next-generation matrix and its
spectral radius (the effective reproduction number).
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from model import make_strategy

logger = logging.getLogger(__name__)

SPECTRAL_TOL = 1e-10
SHIFT_FRACTION = 0.1  # power iteration runs on M + SHIFT_FRACTION * ||M||_inf * I
DENSE_CERTIFICATE_TOL = 1e-6  # residual allowed for Perron vectors taken from the dense eigensolver

KERNEL_CHOICES = ("k", "ngo")


class SpectralConvergenceError(RuntimeError):
    """Raised when power iteration does not meet its stopping criteria within the iteration cap."""


@dataclass(frozen=True, eq=False)
class SpectralRadius:
    """Spectral radius with its certificate: nonnegative right and left Perron vectors summing to 1."""
    rho: float
    right: np.ndarray
    left: np.ndarray
    iterations: int
    method: str = "power"


def _check_dims(model, *vectors):
    for v in vectors:
        if len(v) != model.n:
            raise ValueError("vector has length %d, model has %d features" % (len(v), model.n))


def apply_kernel(model, g, eta=None, kernel="k"):
    """
    Discrete integral operator: T(g)(i) = sum_j K(i, j) * eta[j] * g[j] * weights[j].
    :param model: Model.
    :param g: Vector of length n.
    :param eta: Strategy (default: no vaccination).
    :param kernel: "k" for the transmission kernel, "ngo" for the next-generation kernel k / gamma.
    :return: Vector of length n.
    """
    if kernel not in KERNEL_CHOICES:
        raise ValueError("kernel must be one of %s" % (KERNEL_CHOICES,))
    g = np.asarray(g, dtype=np.float64)
    eta = np.ones(model.n) if eta is None else np.asarray(eta, dtype=np.float64)
    _check_dims(model, g, eta)
    k = model.kernel if kernel == "k" else model.ngo_kernel
    return k @ (eta * g * model.weights)


def next_gen_matrix(model, eta=None):
    """
    Effective next-generation matrix M[i][j] = k(i, j) * eta[j] * weights[j] / gamma[j].
    """
    eta = np.ones(model.n) if eta is None else make_strategy(eta, model.n)
    return model.kernel * (eta * model.weights / model.gamma)[np.newaxis, :]


def _perron(a, shift, tol, max_iter):
    n = a.shape[0]
    v = np.full(n, 1.0 / n)
    av = a @ v
    rho = av.sum()
    for it in range(1, max_iter + 1):
        w = av + shift * v
        v = w / w.sum()
        av = a @ v
        rho_new = av.sum()
        residual = np.abs(av - rho_new * v).max()
        scale = max(1.0, rho_new)
        if abs(rho_new - rho) <= tol * scale and residual <= tol * scale:
            return max(rho_new, 0.0), v, it
        rho = rho_new
    raise SpectralConvergenceError("power iteration did not converge in %d iterations (residual %.3g)"
                                   % (max_iter, residual))


def spectral_radius(matrix, tol=SPECTRAL_TOL, max_iter=None):
    """
    Spectral radius of a nonnegative square matrix by shifted power iteration.
    The positive shift makes periodic matrices aperiodic; reducible matrices need no special care.
    Convergence requires both a stable eigenvalue estimate and a small residual |Mv - rho v|.
    When the iteration cap is reached (defective Perron root), the dense eigensolver takes over and
    the result is flagged with method="dense".
    :param matrix: Nonnegative square matrix.
    :param tol: Tolerance on eigenvalue increments and residuals (relative to max(1, rho)).
    :param max_iter: Iteration cap, defaults to 100 * n * ceil(-log10(tol)).
    :return: SpectralRadius.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square, got shape %s" % (m.shape,))
    if np.any(m < 0):
        raise ValueError("matrix must be nonnegative")
    n = m.shape[0]
    if max_iter is None:
        max_iter = 100 * n * max(1, math.ceil(-math.log10(tol)))

    norm = m.sum(axis=1).max()
    if norm == 0:
        uniform = np.full(n, 1.0 / n)
        return SpectralRadius(0.0, uniform, uniform.copy(), 0)

    shift = SHIFT_FRACTION * norm
    try:
        rho, right, it_right = _perron(m, shift, tol, max_iter)
        _, left, it_left = _perron(m.T, shift, tol, max_iter)
    except SpectralConvergenceError as e:
        # defective Perron eigenvalues (Jordan blocks) make power iteration converge like 1/k
        logger.warning("%s, using the dense eigensolver", e)
        rho, right, left = _dense_perron(m)
        return SpectralRadius(rho, right, left, max_iter, method="dense")
    logger.debug("Power iteration converged: rho=%.17g after %d/%d iterations", rho, it_right, it_left)
    return SpectralRadius(rho, right, left, max(it_right, it_left))


def _perron_vector(eigenvectors, i):
    v = np.real(eigenvectors[:, i])
    if v.sum() < 0:
        v = -v
    v = np.clip(v, 0.0, None)
    total = v.sum()
    if total <= 0:
        raise SpectralConvergenceError("dense eigensolver returned no nonnegative Perron vector")
    return v / total


def _dense_perron(m):
    """
    Perron root and vectors from scipy.linalg.eig, checked by their residuals |Mv - rho v|.
    Among eigenvalues of maximal modulus the one with the largest real part is the Perron root.
    """
    eigenvalues, left_vectors, right_vectors = scipy.linalg.eig(m, left=True, right=True)
    moduli = np.abs(eigenvalues)
    top = moduli.max()
    candidates = np.flatnonzero(moduli >= top - DENSE_CERTIFICATE_TOL * max(1.0, top))
    i = candidates[np.argmax(np.real(eigenvalues[candidates]))]
    rho = max(float(np.real(eigenvalues[i])), 0.0)
    right = _perron_vector(right_vectors, i)
    left = _perron_vector(left_vectors, i)
    scale = max(1.0, rho)
    residual = max(np.abs(m @ right - rho * right).max(), np.abs(m.T @ left - rho * left).max())
    if residual > DENSE_CERTIFICATE_TOL * scale:
        raise SpectralConvergenceError("dense Perron vectors fail the residual check (residual %.3g)" % residual)
    return rho, right, left


def dense_spectral_radius(matrix):
    """Spectral radius from a dense eigensolver (oracle for the power iteration)."""
    eigenvalues = scipy.linalg.eigvals(np.asarray(matrix, dtype=np.float64))
    return float(np.abs(eigenvalues).max())


def r_e(model, eta, tol=SPECTRAL_TOL):
    """
    Effective reproduction number R_e(eta): spectral radius of the effective next-generation matrix.
    """
    return spectral_radius(next_gen_matrix(model, eta), tol=tol).rho


def r0(model, tol=SPECTRAL_TOL):
    """Basic reproduction number R_0 = R_e(1)."""
    return r_e(model, np.ones(model.n), tol=tol)
