"""Lower-truncated normal TN(mean, variance, lower): moments and sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, ndtr, ndtri

from .errors import DataError

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_SQRT1_2 = np.sqrt(0.5)

#: Below this standardised argument the moments switch to the asymptotic series.
ASYMPTOTIC_BELOW = -20.0
_N_TERMS = 12


@dataclass(frozen=True)
class TruncatedNormalSpec:
    mean: float
    variance: float
    lower_bound: float = 0.0

    def __post_init__(self):
        if not self.variance > 0:
            raise DataError("truncated normal variance must be positive")


def mills(t):
    """Inverse Mills ratio phi(t) / Phi(t), stable for large negative t."""
    t = np.asarray(t, dtype=float)
    return _SQRT_2_OVER_PI / erfcx(-t * _SQRT1_2)


def _series(t):
    """Asymptotic pieces for t << 0.

    With S = Phi(t) |t| / phi(t) = sum_k (-1)^k (2k-1)!! / t^(2k):
    returns (S, 1 - S, (S - t^2 (1 - S))) computed term-wise so that no
    cancellation occurs.
    """
    inv = 1.0 / (t * t)
    s = np.ones_like(t)
    one_minus_s = np.zeros_like(t)
    var_num = np.zeros_like(t)
    dfact = 1.0  # (2k-1)!!
    p = np.ones_like(t)
    for k in range(1, _N_TERMS + 1):
        dfact *= 2 * k - 1
        p = p * inv
        term = dfact * p
        sign = -1.0 if k % 2 else 1.0
        s = s + sign * term
        one_minus_s = one_minus_s - sign * term
        var_num = var_num - sign * 2 * k * term
    return s, one_minus_s, var_num


def tn_moments(m, c):
    """First two raw moments of TN(m, c^2, 0): (E[U], E[U^2]).

    ``c`` is the standard deviation of the untruncated normal. Vectorised in
    ``m`` and ``c``.
    """
    m = np.asarray(m, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise DataError("truncated normal scale must be positive")
    t = m / c
    t, c = np.broadcast_arrays(t, c)
    e1 = np.empty(t.shape)
    e2 = np.empty(t.shape)
    far = t < ASYMPTOTIC_BELOW
    near = ~far
    if near.any():
        tn, cn = t[near], c[near]
        g = tn + mills(tn)  # E[U] / c
        e1[near] = cn * g
        e2[near] = cn * cn * (1.0 + tn * g)
    if far.any():
        tf, cf = t[far], c[far]
        s, oms, vnum = _series(tf)
        e1[far] = cf * (-tf) * oms / s
        e2[far] = cf * cf * vnum / s
    if e1.ndim == 0:
        return float(e1), float(e2)
    return e1, e2


def _std_tail(alpha, rng):
    """Standard normal draws conditioned on Z > alpha (vectorised)."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty(alpha.shape)
    inv = alpha <= 5.0
    if inv.any():
        # Z = -Phi^{-1}(V), V ~ U(0, Phi(-alpha)) keeps precision for moderate tails
        v = rng.random(int(inv.sum())) * ndtr(-alpha[inv])
        v = np.maximum(v, np.finfo(float).tiny)
        out[inv] = -ndtri(v)
    idx = np.flatnonzero(~inv)
    a_all = alpha[idx]
    lam_all = 0.5 * (a_all + np.sqrt(a_all * a_all + 4.0))
    pending = np.arange(len(idx))
    while pending.size:
        a = a_all[pending]
        lam = lam_all[pending]
        z = a + rng.exponential(1.0, pending.size) / lam
        accept = rng.random(pending.size) <= np.exp(-0.5 * (z - lam) ** 2)
        out[idx[pending[accept]]] = z[accept]
        pending = pending[~accept]
    return np.maximum(out, alpha)


def tn_sample_array(mean, sd, lower, rng):
    """Vectorised TN draws: one per broadcast element of (mean, sd, lower)."""
    mean, sd, lower = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(sd, dtype=float), np.asarray(lower, dtype=float)
    )
    alpha = (lower - mean) / sd
    z = _std_tail(alpha.reshape(-1), rng).reshape(alpha.shape)
    return np.maximum(mean + sd * z, lower)


def tn_sample(spec, rng, size=None):
    """Draw from TN(spec.mean, spec.variance, spec.lower_bound).

    Inverse-CDF for bounds up to five standard deviations above the mean,
    exponential-proposal rejection beyond that.
    """
    rng = np.random.default_rng(rng)
    sd = np.sqrt(spec.variance)
    n = 1 if size is None else size
    draws = tn_sample_array(np.full(n, spec.mean), sd, spec.lower_bound, rng)
    return float(draws[0]) if size is None else draws
