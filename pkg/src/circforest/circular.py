"""Von Mises primitives: density, likelihood, scores, CDF, sampling and MLE.

All angles are radians. Functions broadcast over numpy arrays of
observations; distribution parameters are passed as :class:`VonMisesParams`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import EstimationError

TWO_PI = 2.0 * np.pi
LOG_TWO_PI = math.log(TWO_PI)

#: Upper bound for fitted concentrations (zero-dispersion samples).
KAPPA_CAP = 1e5
#: Mean resultant lengths at or below this are treated as exactly zero.
ZERO_RESULTANT = 1e-12

__all__ = [
    "KAPPA_CAP",
    "VonMisesParams",
    "wrap_angle",
    "angular_distance",
    "circular_mean",
    "mean_resultant_length",
    "bessel_i",
    "a1",
    "a1inv",
    "density",
    "log_likelihood",
    "score",
    "cdf",
    "sample",
    "fit_mle",
    "fit_moments",
]


def wrap_angle(x):
    """Map any finite real (or array) onto ``[0, 2*pi)``."""
    out = np.mod(x, TWO_PI)
    # np.mod of a tiny negative number can round up to exactly 2*pi
    out = np.where(out >= TWO_PI, 0.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def angular_distance(a, b):
    """Shortest arc length between angles, in ``[0, pi]``."""
    d = np.abs(np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), TWO_PI))
    d = np.minimum(d, TWO_PI - d)
    if np.ndim(d) == 0:
        return float(d)
    return d


def _resultant(ys, weights=None):
    ys = np.asarray(ys, dtype=float)
    # unit weights take the same summation path so both fits agree bitwise
    w = np.ones_like(ys) if weights is None else np.asarray(weights, dtype=float)
    return float(w @ np.cos(ys)), float(w @ np.sin(ys)), float(w.sum())


def circular_mean(ys, weights=None):
    c, s, _ = _resultant(ys, weights)
    return wrap_angle(math.atan2(s, c))


def mean_resultant_length(ys, weights=None):
    c, s, w = _resultant(ys, weights)
    return math.hypot(c, s) / w


@dataclass(frozen=True)
class VonMisesParams:
    """Location ``mu`` (radians) and concentration ``kappa`` of a von Mises law.

    ``degenerate`` marks fits that hit a boundary: a zero resultant
    (``kappa == 0``) or a zero-dispersion sample (``kappa == KAPPA_CAP``).
    """

    mu: float
    kappa: float
    degenerate: bool = False

    def __post_init__(self):
        kappa = float(self.kappa)
        if not math.isfinite(kappa) or kappa < 0:
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa!r}")
        mu = float(self.mu)
        if not math.isfinite(mu):
            raise ValueError(f"mu must be finite, got {self.mu!r}")
        object.__setattr__(self, "mu", 0.0 if kappa == 0.0 else wrap_angle(mu))
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "degenerate", bool(self.degenerate))

    @property
    def capped(self) -> bool:
        return self.kappa >= KAPPA_CAP

    @property
    def mu_deg(self) -> float:
        return math.degrees(self.mu)

    def rotate(self, delta: float) -> "VonMisesParams":
        return VonMisesParams(self.mu + delta, self.kappa, self.degenerate)


def _check_kappa(kappa):
    k = np.asarray(kappa, dtype=float)
    if not np.all(np.isfinite(k)):
        raise ValueError("kappa must be finite")
    if np.any(k < 0):
        raise ValueError("kappa must be non-negative")
    return k


def bessel_i(order, kappa, scaled=False):
    """Modified Bessel function of the first kind, order 0 or 1.

    With ``scaled=True`` returns ``exp(-kappa) * I_order(kappa)``, which stays
    finite for arbitrarily large ``kappa``.
    """
    k = _check_kappa(kappa)
    if order == 0:
        out = special.i0e(k) if scaled else special.i0(k)
    elif order == 1:
        out = special.i1e(k) if scaled else special.i1(k)
    else:
        raise ValueError(f"order must be 0 or 1, got {order!r}")
    if np.ndim(out) == 0:
        return float(out)
    return out


def a1(kappa):
    """Ratio ``I_1(kappa) / I_0(kappa)`` (mean resultant length of vM(., kappa))."""
    k = np.asarray(kappa, dtype=float)
    out = special.i1e(k) / special.i0e(k)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _a1_prime(k, a):
    # d/dk A(k) = 1 - A/k - A^2, with limit 1/2 at k = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 - a / k - a * a
    return np.where(k > 0, d, 0.5)


_A1_CAP = None


def _a1_at_cap():
    global _A1_CAP
    if _A1_CAP is None:
        _A1_CAP = a1(KAPPA_CAP)
    return _A1_CAP


def _a1inv_scalar(r, tol, maxiter):
    if r >= _a1_at_cap():
        return KAPPA_CAP
    if r <= 0.0:
        return 0.0
    k = min(r * (2.0 - r * r) / (1.0 - r * r), KAPPA_CAP)
    lo, hi = 0.0, KAPPA_CAP
    eps = 4 * np.finfo(float).eps
    for _ in range(maxiter):
        a = float(special.i1e(k) / special.i0e(k))
        f = a - r
        if abs(f) <= tol:
            break
        if f < 0:
            lo = k
        else:
            hi = k
        if hi - lo <= eps * max(k, 1.0):
            break
        deriv = 1.0 - a / k - a * a if k > 0 else 0.5
        k_new = k - f / deriv if deriv > 0 else 0.5 * (lo + hi)
        if not lo < k_new < hi:
            k_new = 0.5 * (lo + hi)
        k = k_new
    return k


def a1inv(r, tol=1e-14, maxiter=100):
    """Invert :func:`a1`; returns ``kappa`` with ``A(kappa) = r``.

    Newton iterations from a Banerjee-type closed-form start, safeguarded by
    bisection on the bracket ``[0, KAPPA_CAP]``. Values of ``r`` at or above
    ``A(KAPPA_CAP)`` map to the cap; ``r <= 0`` maps to zero.
    """
    if np.ndim(r) == 0:
        r = float(r)
        if not math.isfinite(r):
            raise ValueError("resultant length must be finite")
        return _a1inv_scalar(r, tol, maxiter)
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(~np.isfinite(r_arr)):
        raise ValueError("resultant length must be finite")
    out = np.zeros_like(r_arr)
    cap_mask = r_arr >= _a1_at_cap()
    out[cap_mask] = KAPPA_CAP
    todo = (r_arr > 0) & ~cap_mask
    if np.any(todo):
        rr = r_arr[todo]
        k = rr * (2.0 - rr * rr) / (1.0 - rr * rr)
        k = np.clip(k, 0.0, KAPPA_CAP)
        lo = np.zeros_like(rr)
        hi = np.full_like(rr, KAPPA_CAP)
        active = np.ones(rr.shape, dtype=bool)
        for _ in range(maxiter):
            a = a1(k)
            f = a - rr
            active &= np.abs(f) > tol
            if not active.any():
                break
            lo = np.where(active & (f < 0), k, lo)
            hi = np.where(active & (f > 0), k, hi)
            step = f / _a1_prime(k, a)
            k_new = k - step
            bad = (k_new <= lo) | (k_new >= hi) | ~np.isfinite(k_new)
            k_new = np.where(bad, 0.5 * (lo + hi), k_new)
            # bracket collapsed to machine precision: accept
            active &= (hi - lo) > 4 * np.finfo(float).eps * np.maximum(k, 1.0)
            k = np.where(active, k_new, k)
        out[todo] = k
    if np.ndim(r) == 0:
        return float(out[0])
    return out


def density(y, params: VonMisesParams):
    """Von Mises density at ``y``."""
    k = params.kappa
    y = np.asarray(y, dtype=float)
    # exp(k cos - k) / (2 pi i0e(k)) avoids overflow for large k
    out = np.exp(k * (np.cos(y - params.mu) - 1.0)) / (TWO_PI * special.i0e(k))
    if np.ndim(out) == 0:
        return float(out)
    return out


def _log_norm(kappa):
    # log(2 pi I0(k)) computed through the scaled Bessel function
    return LOG_TWO_PI + np.log(special.i0e(kappa)) + kappa


def log_likelihood(y, params: VonMisesParams):
    """Per-observation log-likelihood ``-log(2 pi I0(kappa)) + kappa cos(y - mu)``."""
    y = np.asarray(y, dtype=float)
    out = -_log_norm(params.kappa) + params.kappa * np.cos(y - params.mu)
    if np.ndim(out) == 0:
        return float(out)
    return out


def score(y, params: VonMisesParams):
    """Gradient of the log-likelihood in ``(mu, kappa)``.

    Returns an array of shape ``y.shape + (2,)`` holding
    ``kappa * sin(y - mu)`` and ``cos(y - mu) - A(kappa)``.
    """
    y = np.asarray(y, dtype=float)
    d = y - params.mu
    out = np.stack([params.kappa * np.sin(d), np.cos(d) - a1(params.kappa)], axis=-1)
    return out


def cdf(y, params: VonMisesParams, origin: float = 0.0, epsabs: float = 1e-10):
    """Probability of the counterclockwise arc from ``origin`` to ``y``.

    ``y - origin`` in ``[0, 2*pi]`` is used as the arc length directly, so
    ``cdf(origin + 2*pi, ...) == 1``; other values are reduced modulo 2*pi.
    """
    y = float(y)
    arc = y - origin
    if not 0.0 <= arc <= TWO_PI:
        arc = float(np.mod(arc, TWO_PI))
    if arc == 0.0:
        return 0.0
    if params.kappa == 0.0:
        return arc / TWO_PI

    def f(u):
        return density(origin + u, params)

    # split at the mode and antimode so quad sees smooth pieces
    pts = sorted(
        {float(np.mod(m - origin, TWO_PI)) for m in (params.mu, params.mu + np.pi)}
    )
    pts = [p for p in pts if 0.0 < p < arc]
    val, _ = integrate.quad(
        f, 0.0, arc, points=pts or None, epsabs=epsabs, epsrel=0.0, limit=200
    )
    return float(min(max(val, 0.0), 1.0))


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample(params: VonMisesParams, n: int, seed=None):
    """Draw ``n`` angles in ``[0, 2*pi)``.

    ``seed`` is an int, ``None`` or a caller-owned ``numpy.random.Generator``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _as_rng(seed)
    if params.kappa == 0.0:
        return rng.uniform(0.0, TWO_PI, size=n)
    return wrap_angle(rng.vonmises(params.mu, params.kappa, size=n))


def fit_moments(c, s, w):
    """Vectorised weighted MLE from resultant sums.

    Parameters
    ----------
    c, s : array_like
        Weighted sums of ``cos(y)`` and ``sin(y)``.
    w : array_like
        Total weights (must be positive).

    Returns
    -------
    mu, kappa, degenerate : ndarray
    """
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(~(w > 0)):
        raise EstimationError("total weight must be positive")
    rbar = np.minimum(np.hypot(c, s) / w, 1.0)
    zero = rbar <= ZERO_RESULTANT
    mu = np.where(zero, 0.0, wrap_angle(np.arctan2(s, c)))
    kappa = np.where(zero, 0.0, a1inv(np.where(zero, 0.0, rbar)))
    degenerate = zero | (kappa >= KAPPA_CAP)
    return mu, kappa, degenerate


def fit_mle(ys, weights=None) -> VonMisesParams:
    """(Weighted) maximum likelihood estimate of ``(mu, kappa)``."""
    ys = np.asarray(ys, dtype=float)
    if ys.size == 0:
        raise EstimationError("cannot fit a distribution to an empty sample")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != ys.shape:
            raise ValueError("weights and angles must have the same shape")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        if not weights.sum() > 0:
            raise EstimationError("all weights are zero")
    c, s, w = _resultant(ys, weights)
    rbar = min(math.hypot(c, s) / w, 1.0)
    if rbar <= ZERO_RESULTANT:
        return VonMisesParams(0.0, 0.0, True)
    kappa = a1inv(rbar)
    return VonMisesParams(math.atan2(s, c), kappa, kappa >= KAPPA_CAP)
