"""EM configuration, fit reports and the weighted regression M-step.

Every M-step in this package is a (weighted) multiple-response regression
whose design row is ``[1, u_i, x_i]`` with the latent ``u_i`` known only
through E[u_i] and Var[u_i]. The Gaussian models simply omit the ``u`` column.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._linalg import RCOND_MIN, rcond_spd, sym
from .errors import DataError, NumericalError


@dataclass(frozen=True)
class EMConfig:
    tol: float = 1e-8
    max_iters: int = 2000
    n_restarts: int = 10
    seed: int = 0
    init_strategy: str = "default"

    def __post_init__(self):
        if not self.tol > 0:
            raise DataError("EM tol must be positive")
        if self.max_iters < 1:
            raise DataError("EM max_iters must be >= 1")
        if self.n_restarts < 1:
            raise DataError("EM n_restarts must be >= 1")
        if self.init_strategy not in ("default", "moments", "kmeans", "random"):
            raise DataError(f"unknown init_strategy {self.init_strategy!r}")

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in ("tol", "max_iters", "n_restarts", "seed", "init_strategy") if k in d}
        return cls(**known)

    def to_dict(self):
        return asdict(self)


@dataclass
class FitReport:
    family: str
    loglik: float = float("nan")
    n_iter: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)
    events: list = field(default_factory=list)
    conventions: dict = field(default_factory=dict)
    restarts: list = field(default_factory=list)
    chosen_restart: int | None = None

    def event(self, iteration, kind, detail):
        self.events.append({"iteration": iteration, "kind": kind, "detail": detail})

    def to_dict(self):
        return asdict(self)


def converged(prev, cur, tol):
    return abs(cur - prev) <= tol * max(abs(prev), 1.0)


@dataclass(frozen=True)
class RegressionFit:
    coef: np.ndarray  # (p, q): rows intercept, [u], x ...
    omega: np.ndarray
    weight: float


def expected_regression(w, design, resp, u_var=None, u_col=1, what="design"):
    """Weighted least squares with an expected design matrix.

    Solves ``(sum_i w_i E[b_i b_i^T]) Gamma = sum_i w_i E[b_i] r_i^T`` where the
    design row ``b_i`` is ``design[i]`` plus, if ``u_var`` is given, latent
    variance ``u_var[i]`` on column ``u_col`` (intercept in column 0). The
    residual covariance is the weighted expected residual cross-product divided
    by ``sum_i w_i``.

    Statistics are centred at the weighted means before accumulation; this is
    an exact affine reparameterisation of the same normal equations.
    """
    w = np.asarray(w, dtype=float)
    sw = float(w.sum())
    if not sw > 0:
        raise NumericalError(f"{what}: zero total weight")
    b = np.asarray(design, dtype=float)[:, 1:]
    r = np.asarray(resp, dtype=float)
    bbar = w @ b / sw
    rbar = w @ r / sw
    bc = b - bbar
    rc = r - rbar
    wb = bc * w[:, None]
    m = wb.T @ bc
    if u_var is not None:
        m[u_col - 1, u_col - 1] += float(w @ u_var)
    c = wb.T @ rc
    syy = (rc * w[:, None]).T @ rc
    m = sym(m)
    rc_ = rcond_spd(m) if m.size else 1.0
    if rc_ < RCOND_MIN:
        raise NumericalError(f"{what}: rank-deficient design matrix (rcond={rc_:.3g})")
    slopes = np.linalg.solve(m, c) if m.size else np.zeros((0, r.shape[1]))
    intercept = rbar - bbar @ slopes
    omega = sym(syy - c.T @ slopes) / sw
    coef = np.vstack([intercept[None, :], slopes])
    return RegressionFit(coef, omega, sw)
