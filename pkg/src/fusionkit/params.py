"""Parameter bundles for the joint models and the regression reparameterisation.

``theta`` is the joint (mu, Sigma[, delta]) form, partitioned into X, Y, Z
blocks. ``eta`` is the regression form: the X marginal plus the Y|X and Z|X
regressions. Mapping eta back to theta fixes the non-identified cross block
to ``Sigma_YZ = Sigma_YX Sigma_XX^{-1} Sigma_XZ``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import cholesky, is_psd, spd_solve, sym
from .errors import DataError, NumericalError


def _blocks(dims):
    dx, dy, dz = dims
    return slice(0, dx), slice(dx, dx + dy), slice(dx + dy, dx + dy + dz)


def marginal_index(dims, tag):
    """Column indices of the observed block of file A (X, Y) or B (X, Z)."""
    sx, sy, sz = _blocks(dims)
    other = sy if tag == "A" else sz
    return np.r_[np.arange(sx.start, sx.stop), np.arange(other.start, other.stop)]


class _Partitioned:
    """Block accessors shared by the Gaussian and skew-normal bundles."""

    dims: tuple
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def d(self):
        return sum(self.dims)

    @property
    def slices(self):
        return _blocks(self.dims)

    def block(self, a, b):
        s = dict(zip("XYZ", self.slices))
        return self.sigma[s[a], s[b]]

    def mean(self, a):
        return self.mu[dict(zip("XYZ", self.slices))[a]]

    def _check_common(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        dims = tuple(int(v) for v in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise DataError(f"invalid block dimensions {dims}")
        d = sum(dims)
        if mu.shape != (d,) or sigma.shape != (d, d):
            raise DataError(f"parameter shapes {mu.shape}, {sigma.shape} do not match d={d}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise NumericalError("non-finite parameter values")
        if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(sigma).max())):
            raise DataError("sigma must be symmetric")
        sigma = sym(sigma)
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True, eq=False)
class GaussianParams(_Partitioned):
    mu: np.ndarray
    sigma: np.ndarray
    dims: tuple

    def __post_init__(self):
        self._check_common()

    family = "gaussian"

    def marginal(self, tag):
        idx = marginal_index(self.dims, tag)
        return self.mu[idx], self.sigma[np.ix_(idx, idx)]


@dataclass(frozen=True, eq=False)
class SkewNormalParams(_Partitioned):
    """Skew-normal W = mu + delta U + V, U ~ TN(0, 1, 0), V ~ N(0, sigma)."""

    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    dims: tuple

    family = "skew_normal"

    def __post_init__(self):
        self._check_common()
        delta = np.asarray(self.delta, dtype=float).reshape(-1)
        if delta.shape != self.mu.shape:
            raise DataError("delta must have the same length as mu")
        if not np.all(np.isfinite(delta)):
            raise NumericalError("non-finite skewness vector")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    def skew(self, a):
        return self.delta[dict(zip("XYZ", self.slices))[a]]

    def marginal(self, tag):
        idx = marginal_index(self.dims, tag)
        return self.mu[idx], self.sigma[np.ix_(idx, idx)], self.delta[idx]

    @property
    def lam(self):
        """Lambda = Sigma + delta delta^T (covariance of the Gaussian part of the density)."""
        return self.sigma + np.outer(self.delta, self.delta)

    def skew_quadratic(self):
        """delta^T Lambda^{-1} delta, which must lie in [0, 1)."""
        return float(self.delta @ spd_solve(self.lam, self.delta, "Lambda"))

    @property
    def alpha(self):
        """Direct shape vector Lambda^{-1} delta / sqrt(1 - delta^T Lambda^{-1} delta)."""
        li = spd_solve(self.lam, self.delta, "Lambda")
        q = float(self.delta @ li)
        if not q < 1.0:
            raise NumericalError("delta^T Lambda^{-1} delta >= 1")
        return li / np.sqrt(1.0 - q)

    def moments(self):
        """Mean and covariance of the distribution."""
        b = np.sqrt(2.0 / np.pi)
        return self.mu + b * self.delta, self.sigma + (1.0 - b * b) * np.outer(self.delta, self.delta)


@dataclass(frozen=True, eq=False)
class XBlock:
    """Parameters of the X marginal: mean, scale and (skew models) skewness."""

    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class RegressionBlock:
    """Response | X (and latent u): alpha + lam * u + beta @ x + N(0, omega)."""

    alpha: np.ndarray
    beta: np.ndarray
    omega: np.ndarray
    lam: np.ndarray | None = None

    def mean(self, x, u=None):
        out = self.alpha + np.atleast_2d(x) @ self.beta.T
        if self.lam is not None and u is not None:
            out = out + np.asarray(u).reshape(-1, 1) * self.lam
        return out


@dataclass(frozen=True, eq=False)
class EtaParams:
    x: XBlock
    y: RegressionBlock
    z: RegressionBlock

    @property
    def dims(self):
        return len(self.x.mu), len(self.y.alpha), len(self.z.alpha)

    @property
    def skewed(self):
        return self.x.delta is not None


def theta_to_eta(theta):
    """Regression reparameterisation of a Gaussian or skew-normal bundle."""
    s_xx = theta.block("X", "X")
    cholesky(s_xx, "Sigma_XX")
    beta_y = spd_solve(s_xx, theta.block("X", "Y")).T
    beta_z = spd_solve(s_xx, theta.block("X", "Z")).T
    mu_x = theta.mean("X")
    ry = RegressionBlock(
        theta.mean("Y") - beta_y @ mu_x, beta_y, sym(theta.block("Y", "Y") - beta_y @ theta.block("X", "Y"))
    )
    rz = RegressionBlock(
        theta.mean("Z") - beta_z @ mu_x, beta_z, sym(theta.block("Z", "Z") - beta_z @ theta.block("X", "Z"))
    )
    delta_x = None
    if isinstance(theta, SkewNormalParams):
        delta_x = theta.skew("X")
        ry = RegressionBlock(ry.alpha, ry.beta, ry.omega, theta.skew("Y") - beta_y @ delta_x)
        rz = RegressionBlock(rz.alpha, rz.beta, rz.omega, theta.skew("Z") - beta_z @ delta_x)
    return EtaParams(XBlock(mu_x, s_xx, delta_x), ry, rz)


def eta_to_theta(eta):
    """Invert the reparameterisation with Sigma_YZ set by the identification constraint."""
    dx, dy, dz = eta.dims
    s = sym(np.atleast_2d(eta.x.sigma))
    by = np.asarray(eta.y.beta, dtype=float).reshape(dy, dx)
    bz = np.asarray(eta.z.beta, dtype=float).reshape(dz, dx)
    if s.shape != (dx, dx):
        raise DataError("Sigma_XX has the wrong shape")
    for name, om, k in (("Omega_Y", eta.y.omega, dy), ("Omega_Z", eta.z.omega, dz)):
        if np.shape(om) != (k, k):
            raise DataError(f"{name} has the wrong shape")
    d = dx + dy + dz
    sx, sy, sz = _blocks((dx, dy, dz))
    sig = np.zeros((d, d))
    sig[sx, sx] = s
    syx = by @ s
    szx = bz @ s
    sig[sy, sx] = syx
    sig[sx, sy] = syx.T
    sig[sz, sx] = szx
    sig[sx, sz] = szx.T
    sig[sy, sy] = sym(eta.y.omega) + sym(by @ s @ by.T)
    sig[sz, sz] = sym(eta.z.omega) + sym(bz @ s @ bz.T)
    syz = by @ s @ bz.T
    sig[sy, sz] = syz
    sig[sz, sy] = syz.T
    mu = np.empty(d)
    mu[sx] = eta.x.mu
    mu[sy] = eta.y.alpha + by @ eta.x.mu
    mu[sz] = eta.z.alpha + bz @ eta.x.mu
    if eta.x.delta is None:
        return GaussianParams(mu, sig, (dx, dy, dz))
    delta = np.empty(d)
    delta[sx] = eta.x.delta
    delta[sy] = eta.y.lam + by @ eta.x.delta
    delta[sz] = eta.z.lam + bz @ eta.x.delta
    return SkewNormalParams(mu, sig, delta, (dx, dy, dz))


def constraint_residual(theta):
    """Relative Frobenius size of Sigma_YZ - Sigma_YX Sigma_XX^{-1} Sigma_XZ.

    Scaled by sqrt(|Sigma_YY|_F |Sigma_ZZ|_F), which bounds |Sigma_YZ|_F for a
    PSD matrix, so a zero cross block does not blow the ratio up.
    """
    s_xx = theta.block("X", "X")
    implied = theta.block("Y", "X") @ linalg.solve(s_xx, theta.block("X", "Z"), assume_a="pos")
    resid = np.linalg.norm(theta.block("Y", "Z") - implied)
    scale = np.sqrt(np.linalg.norm(theta.block("Y", "Y")) * np.linalg.norm(theta.block("Z", "Z")))
    return float(resid / max(scale, np.finfo(float).tiny))


def check_valid(theta):
    """Raise unless sigma is PSD (and, for skew-normal, delta^T Lambda^{-1} delta < 1)."""
    if not is_psd(theta.sigma):
        raise NumericalError("sigma is not positive semi-definite")
    if isinstance(theta, SkewNormalParams):
        q = theta.skew_quadratic()
        if not q < 1.0:
            raise NumericalError(f"invalid skewness: delta^T Lambda^-1 delta = {q:.6g} >= 1")


# -- JSON -----------------------------------------------------------------

def _named_blocks(theta):
    out = {}
    for a in "XYZ":
        out[f"mu_{a}"] = theta.mean(a).tolist()
    for a, b in ("XX", "XY", "XZ", "YY", "YZ", "ZZ"):
        out[f"Sigma_{a}{b}"] = np.atleast_2d(theta.block(a, b)).tolist()
    if isinstance(theta, SkewNormalParams):
        for a in "XYZ":
            out[f"delta_{a}"] = theta.skew(a).tolist()
    return out


def _from_named(d, dims, skew):
    dx, dy, dz = dims
    sx, sy, sz = _blocks(dims)
    s = dict(zip("XYZ", (sx, sy, sz)))
    n = dx + dy + dz
    mu = np.empty(n)
    sig = np.empty((n, n))
    for a in "XYZ":
        mu[s[a]] = d[f"mu_{a}"]
    for a, b in ("XX", "XY", "XZ", "YY", "YZ", "ZZ"):
        blk = np.asarray(d[f"Sigma_{a}{b}"], dtype=float)
        sig[s[a], s[b]] = blk
        sig[s[b], s[a]] = blk.T
    if not skew:
        return GaussianParams(mu, sig, dims)
    delta = np.empty(n)
    for a in "XYZ":
        delta[s[a]] = d[f"delta_{a}"]
    return SkewNormalParams(mu, sig, delta, dims)


def params_to_dict(theta, spec=None):
    out = {"family": theta.family, "dims": list(theta.dims)}
    if spec is not None:
        out["columns"] = spec.to_dict()
    out.update(_named_blocks(theta))
    return out


def params_from_dict(d):
    dims = tuple(d["dims"])
    return _from_named(d, dims, d["family"] == "skew_normal")
