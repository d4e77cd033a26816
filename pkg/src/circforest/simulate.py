"""Synthetic data-generating processes used by the tests and the CLI."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .circular import wrap_angle
from .dataset import Dataset
from .partition import Covariate

DGPS = ("two-regime", "smooth", "seasonal")
START = "2014-01-01"


def _hourly(n):
    return pd.date_range(START, periods=n, freq="h").to_numpy(dtype="datetime64[ns]")


def _vm(rng, mu, kappa):
    return wrap_angle(rng.vonmises(mu, kappa))


def two_regime(n, seed=0, kappa=5.0, jump=np.pi, cut=0.5, noise=True) -> Dataset:
    """``mu = 0`` for ``x <= cut`` and ``mu = jump`` above; one optional noise covariate."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    mu = np.where(x <= cut, 0.0, jump)
    y = _vm(rng, mu, kappa)
    covs = [Covariate("x", x)]
    if noise:
        covs.append(Covariate("noise", rng.normal(size=n)))
    return Dataset(y, covs, _hourly(n), "y", {"dgp": "two-regime", "seed": seed})


def smooth(n, seed=0, kappa=5.0) -> Dataset:
    """``mu(x) = x`` for ``x ~ U(0, pi)``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, np.pi, n)
    y = _vm(rng, x, kappa)
    return Dataset(y, [Covariate("x", x)], _hourly(n), "y", {"dgp": "smooth", "seed": seed})


def seasonal_mean(times) -> np.ndarray:
    idx = pd.DatetimeIndex(times)
    season = 2 * np.pi * (idx.dayofyear.to_numpy() - 1) / 365.0
    day = 2 * np.pi * idx.hour.to_numpy() / 24.0
    return wrap_angle(1.0 + 0.8 * np.sin(season) + 0.6 * np.sin(day))


def seasonal(n, seed=0, kappa=3.0) -> Dataset:
    """Hourly series whose mean direction cycles with season and time of day.

    ``signal`` is a noisy indicator of the current regime, ``hour`` and
    ``doy`` describe the calendar.
    """
    rng = np.random.default_rng(seed)
    t = _hourly(n)
    mu = seasonal_mean(t)
    shift = rng.random(n) < 0.3
    mu = wrap_angle(mu + np.where(shift, np.pi / 2, 0.0))
    y = _vm(rng, mu, kappa)
    idx = pd.DatetimeIndex(t)
    covs = [
        Covariate("signal", shift + rng.normal(scale=0.3, size=n)),
        Covariate("hour", idx.hour.to_numpy().astype(float)),
        Covariate("doy", idx.dayofyear.to_numpy().astype(float)),
    ]
    return Dataset(y, covs, t, "y", {"dgp": "seasonal", "seed": seed})


def simulate(dgp: str, n: int, seed: int = 0) -> Dataset:
    if n < 1:
        raise ValueError("n must be positive")
    if dgp == "two-regime":
        return two_regime(n, seed)
    if dgp == "smooth":
        return smooth(n, seed)
    if dgp == "seasonal":
        return seasonal(n, seed)
    raise ValueError(f"unknown dgp {dgp!r}; choose from {DGPS}")
