"""Small dense linear-algebra helpers shared by the model modules."""

import numpy as np
from scipy import linalg

from .errors import NumericalError

#: Reciprocal condition number below which an SPD matrix is treated as singular.
RCOND_MIN = 1e-12

_LOG_2PI = np.log(2.0 * np.pi)


def sym(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def rcond_spd(a):
    """Reciprocal 2-norm condition number of a symmetric matrix (0 if not PD)."""
    a = np.atleast_2d(a)
    if a.size == 0:
        return 1.0
    w = np.linalg.eigvalsh(sym(a))
    if not np.all(np.isfinite(w)) or w[-1] <= 0.0:
        return 0.0
    return max(w[0], 0.0) / w[-1]


def cholesky(a, what="matrix"):
    """Lower Cholesky factor of an SPD matrix, refusing near-singular input."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    rc = rcond_spd(a)
    if rc < RCOND_MIN:
        raise NumericalError(f"{what} is singular or not positive definite (rcond={rc:.3g})")
    try:
        return linalg.cholesky(sym(a), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite") from exc


def spd_solve(a, b, what="matrix"):
    """Solve ``a @ x = b`` for SPD ``a``."""
    c = cholesky(a, what)
    return linalg.cho_solve((c, True), b)


def spd_inv(a, what="matrix"):
    a = np.atleast_2d(a)
    return sym(spd_solve(a, np.eye(a.shape[0]), what))


def is_psd(a, tol=1e-12):
    a = np.atleast_2d(a)
    if a.size == 0:
        return True
    w = np.linalg.eigvalsh(sym(a))
    return bool(w[0] >= -tol * max(1.0, abs(w[-1])))


def mvn_logpdf(x, mean, cov, chol=None):
    """Row-wise multivariate normal log density.

    ``x`` has shape (n, p); returns an (n,) array.
    """
    x = np.atleast_2d(x)
    p = x.shape[1]
    if chol is None:
        chol = cholesky(cov, "covariance")
    diff = x - mean
    z = linalg.solve_triangular(chol, diff.T, lower=True)
    maha = np.einsum("ij,ij->j", z, z)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (p * _LOG_2PI + logdet + maha)


def floor_eigenvalues(a, rel=1e-8):
    """Clip eigenvalues of a symmetric matrix at ``rel * trace / p``.

    Returns the (possibly) modified matrix and whether clipping happened.
    """
    a = sym(a)
    p = a.shape[0]
    floor = rel * max(np.trace(a), 0.0) / p
    w, v = np.linalg.eigh(a)
    if np.all(w >= floor) and floor > 0:
        return a, False
    if floor <= 0:
        floor = rel
    w = np.maximum(w, floor)
    return sym((v * w) @ v.T), True
