"""In-memory dataset: circular response, typed covariates and a time index."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .circular import wrap_angle
from .errors import DataError
from .partition import Covariate


@dataclass(eq=False)
class Dataset:
    """Response angles (radians, NaN = missing) with aligned covariates.

    ``time`` is an optional ``datetime64[ns]`` array, strictly increasing when
    present.
    """

    response: np.ndarray
    covariates: list = field(default_factory=list)
    time: Optional[np.ndarray] = None
    response_name: str = "y"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.response, dtype=np.float64)
        if np.any(np.isinf(y)):
            raise DataError("response contains infinite values")
        ok = ~np.isnan(y)
        y = y.copy()
        y[ok] = wrap_angle(y[ok])
        self.response = y
        self.covariates = list(self.covariates)
        for cov in self.covariates:
            if len(cov) != y.shape[0]:
                raise DataError(f"covariate {cov.name!r} has {len(cov)} rows, expected {y.shape[0]}")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names")
        if self.time is not None:
            t = np.asarray(self.time, dtype="datetime64[ns]")
            if t.shape[0] != y.shape[0]:
                raise DataError("time index length does not match the response")
            if t.size > 1 and not np.all(t[1:] > t[:-1]):
                raise DataError("time index must be strictly increasing")
            self.time = t

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def names(self) -> list:
        return [c.name for c in self.covariates]

    def covariate(self, name) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    def matrix(self) -> np.ndarray:
        """Covariates as an ``(n, m)`` float matrix (categorical as codes)."""
        if not self.covariates:
            return np.empty((self.n, 0))
        return np.column_stack([c.values for c in self.covariates])

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.response[rows],
            [c.take(rows) for c in self.covariates],
            None if self.time is None else self.time[rows],
            self.response_name,
            dict(self.meta),
        )

    def with_covariates(self, covariates) -> "Dataset":
        return Dataset(self.response, covariates, self.time, self.response_name, dict(self.meta))

    def rotate(self, delta) -> "Dataset":
        """Copy with every response angle shifted by ``delta``."""
        return Dataset(self.response + delta, self.covariates, self.time,
                       self.response_name, dict(self.meta))
