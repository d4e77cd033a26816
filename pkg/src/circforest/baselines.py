"""Reference forecasters: seasonal-hourly climatology and smoothed persistence."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .circular import VonMisesParams, fit_mle, fit_moments
from .errors import InsufficientDataError

WINDOW_DAYS = 31
N_LAGS = 6
SMOOTHING = 0.5
#: Raw exponential-smoothing weights, most recent lag first (sum 0.984375).
RAW_PERSISTENCE_WEIGHTS = SMOOTHING ** np.arange(1, N_LAGS + 1)
PERSISTENCE_WEIGHTS = RAW_PERSISTENCE_WEIGHTS / RAW_PERSISTENCE_WEIGHTS.sum()

_HOUR = np.timedelta64(1, "h")


def _dt(times):
    return pd.DatetimeIndex(np.asarray(times, dtype="datetime64[ns]"))


def day_of_year_365(times) -> np.ndarray:
    """Day of year on a 365-day calendar (1..365); 29 February maps to day 59."""
    idx = _dt(times)
    doy = idx.dayofyear.to_numpy().astype(np.int64)
    # in leap years 29 Feb shares day 59 with 28 Feb and later days shift back
    shift = idx.is_leap_year & (doy >= 60)
    doy = doy - shift.astype(np.int64)
    return doy


def _doy_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 365
    return np.minimum(d, 365 - d)


def climatology_rows(times, target, window=WINDOW_DAYS) -> np.ndarray:
    """Indices of training rows at the target's hour within the centred window
    of ``window`` days (wrapping across years), excluding the target itself."""
    times = np.asarray(times, dtype="datetime64[ns]")
    target = np.datetime64(target, "ns")
    idx = _dt(times)
    t = _dt([target])
    half = window // 2
    same_hour = idx.hour.to_numpy() == t.hour[0]
    near = _doy_distance(day_of_year_365(times), day_of_year_365([target])[0]) <= half
    not_self = times != target
    return np.flatnonzero(same_hour & near & not_self)


def climatology_fit(times, ys, target, window=WINDOW_DAYS) -> VonMisesParams:
    """Von Mises MLE of all same-hour observations within the seasonal window."""
    ys = np.asarray(ys, dtype=float)
    rows = climatology_rows(times, target, window)
    rows = rows[~np.isnan(ys[rows])]
    if rows.size < 2:
        raise InsufficientDataError(
            f"climatology for {target} has {rows.size} qualifying observations (need 2)"
        )
    return fit_mle(ys[rows])


def climatology_predict(train_times, train_ys, target_times, window=WINDOW_DAYS):
    """Climatology for many targets at once.

    Returns ``(mu, kappa, n_used)``; entries with fewer than two qualifying
    observations are NaN. A target that also appears in the training set is
    left out of its own window.
    """
    train_times = np.asarray(train_times, dtype="datetime64[ns]")
    target_times = np.asarray(target_times, dtype="datetime64[ns]")
    ys = np.asarray(train_ys, dtype=float)
    ok = ~np.isnan(ys)
    train_times, ys = train_times[ok], ys[ok]
    order = np.argsort(train_times, kind="stable")
    train_times, ys = train_times[order], ys[order]
    hours = _dt(train_times).hour.to_numpy()
    doy = day_of_year_365(train_times) - 1
    C = np.zeros((24, 365))
    S = np.zeros((24, 365))
    N = np.zeros((24, 365))
    np.add.at(C, (hours, doy), np.cos(ys))
    np.add.at(S, (hours, doy), np.sin(ys))
    np.add.at(N, (hours, doy), 1.0)
    half = window // 2
    Cw = sum(np.roll(C, k, axis=1) for k in range(-half, half + 1))
    Sw = sum(np.roll(S, k, axis=1) for k in range(-half, half + 1))
    Nw = sum(np.roll(N, k, axis=1) for k in range(-half, half + 1))
    th = _dt(target_times).hour.to_numpy()
    td = day_of_year_365(target_times) - 1
    c, s, nn = Cw[th, td].copy(), Sw[th, td].copy(), Nw[th, td].copy()
    # leave-target-out
    pos = np.searchsorted(train_times, target_times)
    pos = np.minimum(pos, max(train_times.size - 1, 0))
    if train_times.size:
        self_hit = train_times[pos] == target_times
        c[self_hit] -= np.cos(ys[pos[self_hit]])
        s[self_hit] -= np.sin(ys[pos[self_hit]])
        nn[self_hit] -= 1
    mu = np.full(target_times.size, np.nan)
    kappa = np.full(target_times.size, np.nan)
    good = nn >= 2
    if good.any():
        m, k, _ = fit_moments(c[good], s[good], nn[good])
        mu[good], kappa[good] = m, k
    return mu, kappa, nn.astype(np.int64)


def persistence_fit(history) -> VonMisesParams:
    """Exponentially weighted MLE of the six most recent hourly angles.

    ``history`` is in chronological order; the last element is the most
    recent observation available at forecast time.
    """
    h = np.asarray(history, dtype=float)
    if h.size < N_LAGS:
        raise InsufficientDataError(f"persistence needs {N_LAGS} lagged values, got {h.size}")
    recent_first = h[-N_LAGS:][::-1]
    if np.any(np.isnan(recent_first)):
        raise InsufficientDataError("gap in the persistence history")
    return fit_mle(recent_first, PERSISTENCE_WEIGHTS)


def persistence_predict(times, ys, target_times, lead_hours=1):
    """Persistence forecasts from an hourly series.

    For a target at ``t`` the history is ``t - lead - 5h, ..., t - lead``;
    every one of those hours must be observed. Returns ``(mu, kappa, ok)``
    with NaN where the history is incomplete.
    """
    times = np.asarray(times, dtype="datetime64[ns]")
    target_times = np.asarray(target_times, dtype="datetime64[ns]")
    series = pd.Series(np.asarray(ys, dtype=float), index=_dt(times))
    c = np.zeros(target_times.size)
    s = np.zeros(target_times.size)
    ok = np.ones(target_times.size, dtype=bool)
    for k in range(N_LAGS):
        lag = lead_hours + k
        when = _dt(target_times - lag * _HOUR)
        vals = series.reindex(when).to_numpy()
        ok &= ~np.isnan(vals)
        w = PERSISTENCE_WEIGHTS[k]
        c += w * np.cos(np.nan_to_num(vals))
        s += w * np.sin(np.nan_to_num(vals))
    mu = np.full(target_times.size, np.nan)
    kappa = np.full(target_times.size, np.nan)
    if ok.any():
        m, kk, _ = fit_moments(c[ok], s[ok], np.full(ok.sum(), PERSISTENCE_WEIGHTS.sum()))
        mu[ok], kappa[ok] = m, kk
    return mu, kappa, ok
